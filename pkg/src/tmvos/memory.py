"""Bounded sample memory with exponential recency weighting.

Each entry holds a feature map, a full-resolution binary label mask and a
positive raw weight. New video-frame samples follow the recursion
raw_i = raw_{i-1} / (1 - eta) anchored at raw_0 = eta, so recent frames
dominate; normalization to unit sum happens on read. When full, the entry
with the smallest raw weight is evicted (oldest wins on ties).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ops import DimensionError, FeatureMap

REBASE_LIMIT = 1e12


@dataclass
class MemorySample:
    features: FeatureMap
    labels: np.ndarray  # (H, W) bool, full resolution
    raw_weight: float
    insertion_index: int


@dataclass
class SampleMemory:
    entries: list[MemorySample]
    eta: float
    k_max: int
    # raw weight of the most recent sample in the recency recursion
    latest_raw: float = field(default=0.0)
    next_index: int = field(default=0)

    def __len__(self) -> int:
        return len(self.entries)

    def extend(self, x: FeatureMap, y_hat: np.ndarray) -> "SampleMemory":
        return extend(self, x, y_hat)

    def normalized_weights(self) -> list[float]:
        return normalized_weights(self)


def _as_label_mask(y) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 2:
        raise DimensionError(f"label mask must be 2-D, got shape {y.shape}")
    return y > 0


def _check_geometry(ref: MemorySample, x: FeatureMap, y: np.ndarray) -> None:
    if x.data.shape != ref.features.data.shape or x.stride != ref.features.stride:
        raise DimensionError(
            f"feature geometry {x.data.shape}@{x.stride} does not match "
            f"memory {ref.features.data.shape}@{ref.features.stride}"
        )
    if y.shape != ref.labels.shape:
        raise DimensionError(f"label shape {y.shape} does not match memory {ref.labels.shape}")


def init_memory(samples, weight_scheme: str = "first-double", eta: float = 0.1,
                k_max: int = 80) -> SampleMemory:
    """Create a memory from the initial (features, labels) pairs.

    With the "first-double" scheme the first sample (the unmodified frame)
    carries twice the weight of each augmented one; raw weights are scaled so
    the maximum equals eta, the base of the recency recursion.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("at least one initial sample is required")
    if not 0.0 < eta < 1.0:
        raise ValueError(f"eta must be in (0, 1), got {eta}")
    if k_max < 1:
        raise ValueError(f"k_max must be >= 1, got {k_max}")
    if len(samples) > k_max:
        raise ValueError(f"{len(samples)} initial samples exceed capacity {k_max}")
    if weight_scheme == "first-double":
        raws = [eta] + [eta / 2.0] * (len(samples) - 1)
    elif weight_scheme == "uniform":
        raws = [eta] * len(samples)
    else:
        raise ValueError(f"unknown weight scheme {weight_scheme!r}")

    entries = []
    for i, ((x, y), raw) in enumerate(zip(samples, raws)):
        y = _as_label_mask(y)
        if i > 0:
            _check_geometry(entries[0], x, y)
        entries.append(MemorySample(x, y, raw, i))
    return SampleMemory(entries, eta=eta, k_max=k_max, latest_raw=eta, next_index=len(entries))


def extend(mem: SampleMemory, x: FeatureMap, y_hat: np.ndarray) -> SampleMemory:
    """Insert a new video-frame sample, evicting the smallest weight if full."""
    y = _as_label_mask(y_hat)
    _check_geometry(mem.entries[0], x, y)
    if len(mem.entries) >= mem.k_max:
        victim = min(range(len(mem.entries)),
                     key=lambda i: (mem.entries[i].raw_weight, mem.entries[i].insertion_index))
        del mem.entries[victim]
    mem.latest_raw = mem.latest_raw / (1.0 - mem.eta)
    mem.entries.append(MemorySample(x, y, mem.latest_raw, mem.next_index))
    mem.next_index += 1
    if mem.latest_raw > REBASE_LIMIT:
        _rebase(mem)
    return mem


def _rebase(mem: SampleMemory) -> None:
    total = sum(e.raw_weight for e in mem.entries)
    for e in mem.entries:
        e.raw_weight /= total
    mem.latest_raw /= total


def normalized_weights(mem: SampleMemory) -> list[float]:
    """Raw weights divided by their sum (sums to one within 1e-9)."""
    if not mem.entries:
        raise ValueError("memory is empty")
    total = sum(e.raw_weight for e in mem.entries)
    return [e.raw_weight / total for e in mem.entries]
