"""End-to-end sequence inference.

Frame 0 initializes one target model and sample memory per object id from
the given mask (augmented first-frame dataset, full GN optimization). Every
later frame: extract or load features once, score all objects, fuse the
upsampled scores with softmax aggregation into a label mask, extend each
object's memory with its own binarized channel of that mask, and every
``update_interval`` frames re-optimize the scoring layer.

Per-frame feature maps are shared across objects; per-object work may run
in worker threads (capped by the FRTM_THREADS environment variable) since
objects share nothing mutable.
"""

from __future__ import annotations

import os
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .augmentation import AugmentationParams, generate_initial_set
from .features_io import extract_handcrafted_features, feature_file_name, read_feature_map
from .memory import SampleMemory, extend, init_memory
from .ops import FeatureMap, ScoreMap, bilinear_upsample
from .optimizer import FREE_BOTH, FREE_W2, OptimizerSchedule, optimize, schedule_preset
from .target_model import TargetWeights, forward, init_weights

PHASES = ("feature", "predict", "decode", "memory", "update")


@dataclass
class PipelineConfig:
    update_interval: int = 8
    eta: float = 0.1
    k_max: int = 80
    n_initial_samples: int = 5
    preset: str = "default"
    feature_source: str = "builtin"  # "builtin" | "files"
    feature_stride: int = 16         # builtin extractor stride
    feature_dir: str | None = None   # .frtm directory for the "files" source
    threshold: float = 0.5
    rng_seed: int = 0
    model_channels: int = 96
    kappa_min: float = 0.1
    lambda1: float = 1e-3
    lambda2: float = 1e-3
    update_free_set: str = FREE_W2   # FREE_BOTH re-optimizes both layers online
    max_rotation: float = 20.0
    scale_range: tuple[float, float] = (0.8, 1.25)
    max_translation: float = 0.1
    blur_sigma_range: tuple[float, float] = (0.0, 2.0)

    def __post_init__(self):
        if self.update_interval < 1:
            raise ValueError("update_interval must be >= 1")
        if self.n_initial_samples < 1:
            raise ValueError("n_initial_samples must be >= 1")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must be in (0, 1)")
        if self.feature_source not in ("builtin", "files"):
            raise ValueError(f"unknown feature source {self.feature_source!r}")
        if self.feature_source == "files" and not self.feature_dir:
            raise ValueError("feature_dir is required with the files feature source")

    def schedule(self) -> OptimizerSchedule:
        return schedule_preset(self.preset, lambda1=self.lambda1, lambda2=self.lambda2,
                               kappa_min=self.kappa_min)

    def augmentation_params(self, rng_seed: int) -> AugmentationParams:
        return AugmentationParams(
            n_augmented=self.n_initial_samples - 1,
            max_rotation=self.max_rotation,
            scale_range=self.scale_range,
            max_translation=self.max_translation,
            blur_sigma_range=self.blur_sigma_range,
            rng_seed=rng_seed,
        )


@dataclass
class RunStats:
    """Wall-clock breakdown and instrumentation of one sequence run."""

    phase_ms: dict[str, float] = field(default_factory=lambda: dict.fromkeys(PHASES, 0.0))
    init_ms: float = 0.0
    update_frames: list[int] = field(default_factory=list)
    memory_sizes: dict[int, list[int]] = field(default_factory=dict)

    @contextmanager
    def phase(self, name: str):
        t0 = time.perf_counter()
        yield
        self.phase_ms[name] += (time.perf_counter() - t0) * 1e3


@dataclass
class TargetState:
    object_id: int
    weights: TargetWeights
    memory: SampleMemory


def _object_seed(rng_seed: int, object_id: int, salt: int) -> int:
    return int(np.random.SeedSequence([rng_seed, object_id, salt]).generate_state(1)[0])


def make_feature_provider(config: PipelineConfig):
    """Per-frame feature source: builtin extractor or .frtm files by index."""
    if config.feature_source == "builtin":
        return lambda index, frame: extract_handcrafted_features(frame, config.feature_stride)
    base = Path(config.feature_dir)
    return lambda index, frame: read_feature_map(base / feature_file_name(index))


def _worker_count(n_tasks: int) -> int:
    env = os.environ.get("FRTM_THREADS")
    cap = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(cap, n_tasks))


def _map_objects(fn, items):
    workers = _worker_count(len(items))
    if workers == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def upsample_scores(s: ScoreMap, image_h: int, image_w: int) -> np.ndarray:
    """Full-resolution score plane (bilinear by the stride, cropped)."""
    factor = int(s.stride)
    if factor != s.stride or factor < 1:
        raise ValueError(f"score stride must be a positive integer, got {s.stride}")
    if s.height * factor < image_h or s.width * factor < image_w:
        raise ValueError(
            f"scores of {s.height}x{s.width} cells at stride {factor} "
            f"do not cover a {image_h}x{image_w} image"
        )
    return bilinear_upsample(s, factor).data[:image_h, :image_w]


def _logit_stack(score_maps, image_size, threshold) -> np.ndarray:
    if not score_maps:
        raise ValueError("at least one score map is required")
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    first = score_maps[0]
    for s in score_maps[1:]:
        if (s.height, s.width) != (first.height, first.width) or s.stride != first.stride:
            raise ValueError("score maps must share geometry")
    h, w = image_size
    stack = np.empty((len(score_maps) + 1, h, w), dtype=np.float32)
    stack[0] = threshold
    for i, s in enumerate(score_maps):
        stack[i + 1] = upsample_scores(s, h, w)
    return stack


def aggregate_multi_object(score_maps, image_size, threshold: float = 0.5) -> np.ndarray:
    """Fuse per-object score maps into one label mask.

    Scores enter a per-pixel softmax as logits together with a constant
    background logit equal to the decision threshold, so single-object
    decoding matches ``predict_mask`` at the same threshold. The label is
    the argmax, ties resolved toward the lowest id, background first.
    """
    stack = _logit_stack(score_maps, image_size, threshold)
    return np.argmax(stack, axis=0).astype(np.uint8)


def aggregate_probabilities(score_maps, image_size, threshold: float = 0.5) -> np.ndarray:
    """Per-pixel softmax probabilities, shape (n_objects + 1, H, W), sum to 1."""
    stack = _logit_stack(score_maps, image_size, threshold).astype(np.float64)
    stack -= stack.max(axis=0, keepdims=True)
    np.exp(stack, out=stack)
    stack /= stack.sum(axis=0, keepdims=True)
    return stack


def initialize_targets(frame0: np.ndarray, first_mask: np.ndarray,
                       config: PipelineConfig, features0: FeatureMap | None = None,
                       provider=None) -> list[TargetState]:
    """Build and optimize one target model per object id in the first mask."""
    if first_mask.shape != frame0.shape[:2]:
        raise ValueError(
            f"first mask {first_mask.shape} does not match frame {frame0.shape[:2]}"
        )
    provider = provider or make_feature_provider(config)
    if features0 is None:
        features0 = provider(0, frame0)
    object_ids = [int(v) for v in np.unique(first_mask) if v != 0]
    sched = config.schedule()

    if config.feature_source == "files" and config.n_initial_samples > 1:
        warnings.warn(
            "file-based features cannot be extracted for augmented first-frame "
            "images; using the single original sample"
        )

    def build(oid: int) -> TargetState:
        binary = first_mask == oid
        if config.feature_source == "builtin":
            params = config.augmentation_params(_object_seed(config.rng_seed, oid, 0))
            pairs = generate_initial_set(frame0, binary, params)
            samples = [(features0, pairs[0][1])]
            samples += [(provider(0, img), m) for img, m in pairs[1:]]
        else:
            samples = [(features0, binary)]
        mem = init_memory(samples, "first-double", eta=config.eta, k_max=config.k_max)
        w = init_weights(features0.channels, config.model_channels,
                         _object_seed(config.rng_seed, oid, 1))
        w = optimize(w, mem, sched, FREE_BOTH)
        return TargetState(oid, w, mem)

    return _map_objects(build, object_ids)


def run_sequence(frames, first_mask: np.ndarray, config: PipelineConfig,
                 stats: RunStats | None = None) -> list[np.ndarray]:
    """Segment a whole sequence given the first-frame label mask.

    Returns one uint8 label mask per frame; frame 0 is the input mask
    verbatim. The optional ``stats`` object collects per-phase timings,
    update frames and memory growth.
    """
    frames = list(frames)
    if not frames:
        raise ValueError("at least one frame is required")
    first_mask = np.asarray(first_mask)
    h, w = frames[0].shape[:2]
    if first_mask.shape != (h, w):
        raise ValueError(f"first mask {first_mask.shape} does not match frames ({h}, {w})")
    stats = stats if stats is not None else RunStats()
    provider = make_feature_provider(config)
    sched = config.schedule()

    with stats.phase("feature"):
        features0 = provider(0, frames[0])
    t0 = time.perf_counter()
    states = initialize_targets(frames[0], first_mask, config,
                                features0=features0, provider=provider)
    stats.init_ms = (time.perf_counter() - t0) * 1e3

    outputs = [first_mask.astype(np.uint8).copy()]
    for st in states:
        stats.memory_sizes[st.object_id] = [len(st.memory)]
    if not states:
        outputs += [np.zeros((h, w), dtype=np.uint8) for _ in frames[1:]]
        return outputs

    id_lut = np.array([0] + [st.object_id for st in states], dtype=np.uint8)
    for i, frame in enumerate(frames[1:], start=1):
        if frame.shape[:2] != (h, w):
            raise ValueError(f"frame {i} geometry {frame.shape[:2]} differs from ({h}, {w})")
        with stats.phase("feature"):
            x = provider(i, frame)
        with stats.phase("predict"):
            scores = _map_objects(lambda st: forward(x, st.weights), states)
        with stats.phase("decode"):
            mask = id_lut[aggregate_multi_object(scores, (h, w), config.threshold)]
        with stats.phase("memory"):
            for st in states:
                extend(st.memory, x, mask == st.object_id)
                stats.memory_sizes[st.object_id].append(len(st.memory))
        if i % config.update_interval == 0:
            with stats.phase("update"):
                def refresh(st: TargetState) -> None:
                    st.weights = optimize(st.weights, st.memory, sched,
                                          free_set=config.update_free_set)
                _map_objects(refresh, states)
            stats.update_frames.append(i)
        outputs.append(mask)
    return outputs
