"""Export intermediate ResNet activations to FRTM feature files.

The FRTM format (one file per frame, ``<index:05d>.frtm``):

    magic "FRTM" | version=1 u32 | height u32 | width u32 | channels u32 |
    stride u32 (all little-endian) | height*width*channels float32 LE,
    channel-major planes.

Frames are reflection-padded so both sides are multiples of 16 before the
backbone runs; the padding and normalization constants are recorded in
``export_manifest.json`` so masks can be aligned exactly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from torchvision import models

FRTM_MAGIC = b"FRTM"
FRTM_VERSION = 1
_HEADER = struct.Struct("<4s5I")

PAD_MULTIPLE = 16
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

BACKBONES = {
    "resnet18": models.resnet18,
    "resnet34": models.resnet34,
    "resnet50": models.resnet50,
    "resnet101": models.resnet101,
}

# cumulative stride of each residual stage output
LAYER_STRIDES = {"layer1": 4, "layer2": 8, "layer3": 16, "layer4": 32}
IMAGE_SUFFIXES = {".jpg", ".jpeg", ".png", ".bmp", ".ppm"}


@dataclass
class ExportSpec:
    backbone: str = "resnet18"
    layer: str = "layer3"          # fourth backbone stage, stride 16
    weights: str | None = None     # local state-dict path; None = torchvision pretrained
    random_init: bool = False      # seeded random weights instead of pretrained
    seed: int = 0
    out_dir: str = "features"

    def __post_init__(self):
        if self.backbone not in BACKBONES:
            raise ValueError(f"unknown backbone {self.backbone!r}, pick one of {sorted(BACKBONES)}")
        if self.layer not in LAYER_STRIDES:
            raise ValueError(f"unknown layer {self.layer!r}, pick one of {sorted(LAYER_STRIDES)}")

    @property
    def stride(self) -> int:
        return LAYER_STRIDES[self.layer]


def write_frtm(path, data: np.ndarray, stride: int) -> None:
    """Write a (channels, height, width) float32 array in FRTM layout."""
    data = np.ascontiguousarray(data, dtype="<f4")
    c, h, w = data.shape
    with open(path, "wb") as f:
        f.write(_HEADER.pack(FRTM_MAGIC, FRTM_VERSION, h, w, c, stride))
        f.write(data.tobytes())


def load_backbone(spec: ExportSpec) -> torch.nn.Module:
    ctor = BACKBONES[spec.backbone]
    if spec.random_init:
        torch.manual_seed(spec.seed)
        model = ctor(weights=None)
    elif spec.weights:
        model = ctor(weights=None)
        state = torch.load(spec.weights, map_location="cpu", weights_only=True)
        model.load_state_dict(state)
    else:
        model = ctor(weights="IMAGENET1K_V1")
    model.eval()
    return model


class ActivationTap:
    """Runs the backbone up to the tapped layer via a forward hook."""

    def __init__(self, spec: ExportSpec):
        self.spec = spec
        self.model = load_backbone(spec)
        self._grabbed = None
        getattr(self.model, spec.layer).register_forward_hook(self._hook)

    def _hook(self, module, inputs, output):
        self._grabbed = output
        raise _StopForward

    @torch.no_grad()
    def __call__(self, batch: torch.Tensor) -> torch.Tensor:
        self._grabbed = None
        try:
            self.model(batch)
        except _StopForward:
            pass
        return self._grabbed


class _StopForward(Exception):
    pass


def pad_to_multiple(image: np.ndarray, multiple: int = PAD_MULTIPLE) -> np.ndarray:
    h, w = image.shape[:2]
    pad_h = (-h) % multiple
    pad_w = (-w) % multiple
    if pad_h == 0 and pad_w == 0:
        return image
    return np.pad(image, ((0, pad_h), (0, pad_w), (0, 0)), mode="reflect")


def preprocess(image: np.ndarray) -> torch.Tensor:
    """Normalize an RGB uint8 frame and pad it for the backbone."""
    x = pad_to_multiple(image).astype(np.float32) / 255.0
    x = (x - np.asarray(IMAGENET_MEAN, np.float32)) / np.asarray(IMAGENET_STD, np.float32)
    return torch.from_numpy(np.ascontiguousarray(x.transpose(2, 0, 1)))[None]


def list_frames(frames_dir) -> list[Path]:
    frames_dir = Path(frames_dir)
    if not frames_dir.is_dir():
        raise FileNotFoundError(f"frame directory {frames_dir} does not exist")
    frames = sorted(p for p in frames_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not frames:
        raise FileNotFoundError(f"no frames found in {frames_dir}")
    return frames


def export_sequence(frames_dir, spec: ExportSpec) -> list[Path]:
    """Export one .frtm per frame plus export_manifest.json; returns the paths."""
    frame_paths = list_frames(frames_dir)
    out_dir = Path(spec.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tap = ActivationTap(spec)

    written = []
    manifest_frames = []
    for index, path in enumerate(frame_paths):
        with Image.open(path) as img:
            rgb = np.asarray(img.convert("RGB"))
        batch = preprocess(rgb)
        features = tap(batch)[0].numpy()
        out_path = out_dir / f"{index:05d}.frtm"
        write_frtm(out_path, features, spec.stride)
        written.append(out_path)
        manifest_frames.append({
            "file": out_path.name,
            "source": str(path),
            "original_size": [int(rgb.shape[0]), int(rgb.shape[1])],
            "padded_size": [int(batch.shape[2]), int(batch.shape[3])],
        })

    if spec.random_init:
        weights_desc = f"random-init(seed={spec.seed})"
    else:
        weights_desc = spec.weights or "torchvision:IMAGENET1K_V1"
    manifest = {
        "backbone": spec.backbone,
        "layer": spec.layer,
        "stride": spec.stride,
        "channels": int(features.shape[0]),
        "weights": weights_desc,
        "resize_rule": f"pad-reflect-{PAD_MULTIPLE}",
        "normalization": {"mean": list(IMAGENET_MEAN), "std": list(IMAGENET_STD)},
        "frames": manifest_frames,
    }
    (out_dir / "export_manifest.json").write_text(json.dumps(manifest, indent=2))
    return written
