"""The two-layer linear target model and its mask decoding.

The model scores each feature cell as target vs. background:
a 1x1 layer compresses the input features to ``c`` channels, a 3x3 layer
with a single output channel produces the score map. Scores regress toward
{0, 1} labels and are thresholded directly (no squashing).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ops import ConvKernel, DimensionError, FeatureMap, ScoreMap, bilinear_upsample, conv2d

DEFAULT_CHANNELS = 96
INIT_STD = 0.01


@dataclass
class TargetWeights:
    """Parameter pair (w1: 1x1 compression, w2: 3x3 scoring). Immutable by convention."""

    w1: ConvKernel
    w2: ConvKernel

    def __post_init__(self):
        if self.w1.k_h != 1 or self.w1.k_w != 1:
            raise ValueError(f"w1 must be 1x1, got {self.w1.k_h}x{self.w1.k_w}")
        if self.w2.k_h != 3 or self.w2.k_w != 3:
            raise ValueError(f"w2 must be 3x3, got {self.w2.k_h}x{self.w2.k_w}")
        if self.w2.in_channels != self.w1.out_channels:
            raise DimensionError(
                f"w2 expects {self.w2.in_channels} channels but w1 outputs {self.w1.out_channels}"
            )
        if self.w2.out_channels != 1:
            raise ValueError(f"w2 must have one output channel, got {self.w2.out_channels}")

    @property
    def c(self) -> int:
        return self.w1.out_channels


def init_weights(feature_channels: int, c: int = DEFAULT_CHANNELS, rng_seed: int = 0) -> TargetWeights:
    """Draw fresh weights i.i.d. from N(0, INIT_STD^2), deterministic per seed."""
    if feature_channels < 1 or c < 1:
        raise ValueError("channel counts must be >= 1")
    rng = np.random.default_rng(rng_seed)
    w1 = rng.normal(0.0, INIT_STD, size=(c, feature_channels, 1, 1)).astype(np.float32)
    w2 = rng.normal(0.0, INIT_STD, size=(1, c, 3, 3)).astype(np.float32)
    return TargetWeights(ConvKernel(w1), ConvKernel(w2))


def forward(x: FeatureMap, w: TargetWeights) -> ScoreMap:
    """Apply the model: single-channel scores at the feature stride."""
    if x.channels != w.w1.in_channels:
        raise DimensionError(
            f"model expects {w.w1.in_channels} feature channels, got {x.channels}"
        )
    scores = conv2d(conv2d(x, w.w1), w.w2)
    return ScoreMap(scores.data[0], stride=x.stride)


def predict_mask(s: ScoreMap, image_h: int, image_w: int, threshold: float = 0.5) -> np.ndarray:
    """Decode scores to a full-resolution boolean mask.

    The map is bilinearly upsampled by its stride, cropped to the image,
    and thresholded at ``threshold`` (foreground where score > threshold).
    """
    if s.height == 0 or s.width == 0:
        raise ValueError("empty score map")
    factor = int(s.stride)
    if factor != s.stride or factor < 1:
        raise ValueError(f"score map stride must be a positive integer, got {s.stride}")
    if s.height * factor < image_h or s.width * factor < image_w:
        raise ValueError(
            f"score map of {s.height}x{s.width} cells at stride {factor} "
            f"does not cover a {image_h}x{image_w} image"
        )
    full = bilinear_upsample(s, factor).data[:image_h, :image_w]
    return full > threshold
