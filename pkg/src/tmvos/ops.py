"""Minimal dense-tensor kernels: 2-D convolution, adjoints, bilinear upsampling.

Conventions fixed across the package:

* "Convolution" means cross-correlation (the kernel is not flipped).
* Spatial size is preserved by zero padding of (k - 1) / 2 cells per side,
  so only odd kernel extents are accepted.
* Bilinear upsampling maps output pixel centers into the input grid via
  (i + 0.5) / factor - 0.5 and clamps at the borders.

All operations are pure functions; values are treated as immutable once
constructed and are safe to share across threads. Payloads are float32,
reductions are accumulated in float64.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np


class DimensionError(ValueError):
    """Raised when shapes or channel counts of operands do not line up."""


@dataclass
class FeatureMap:
    """Dense feature grid stored as channel planes, shape (channels, height, width).

    ``stride`` is the number of image pixels represented by one grid cell;
    full-resolution maps have stride 1. Values must be finite float32.
    """

    data: np.ndarray
    stride: int = 1

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 3:
            raise DimensionError(
                f"feature map data must have shape (channels, height, width), got {self.data.shape}"
            )
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


@dataclass
class ConvKernel:
    """Convolution weights, shape (out_channels, in_channels, k_h, k_w).

    Kernel extents must be odd so that same-size zero padding exists;
    the implied padding is (k - 1) / 2 cells per side and axis.
    """

    data: np.ndarray

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 4:
            raise DimensionError(
                f"kernel data must have shape (out, in, k_h, k_w), got {self.data.shape}"
            )
        if self.k_h % 2 == 0 or self.k_w % 2 == 0:
            raise ValueError(
                f"kernel extents must be odd to preserve spatial size, got {self.k_h}x{self.k_w}"
            )

    @property
    def out_channels(self) -> int:
        return self.data.shape[0]

    @property
    def in_channels(self) -> int:
        return self.data.shape[1]

    @property
    def k_h(self) -> int:
        return self.data.shape[2]

    @property
    def k_w(self) -> int:
        return self.data.shape[3]

    @property
    def padding(self) -> tuple[int, int]:
        return ((self.k_h - 1) // 2, (self.k_w - 1) // 2)


@dataclass
class ScoreMap:
    """Single-channel real-valued score grid, shape (height, width).

    ``stride`` equals the stride of the feature map the scores came from and
    is divided by the factor on upsampling (kept exact, int when integral).
    """

    data: np.ndarray
    stride: int | float = 1

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 2:
            raise DimensionError(f"score map data must be 2-D, got {self.data.shape}")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


# ---------------------------------------------------------------------------
# raw array kernels (dtype follows the inputs; the optimizer feeds float64)
# ---------------------------------------------------------------------------

def conv2d_raw(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Cross-correlate (in_c, H, W) with (out_c, in_c, k_h, k_w), zero padded."""
    oc, ic, kh, kw = k.shape
    if kh == 1 and kw == 1:
        return np.tensordot(k[:, :, 0, 0], x, axes=1)
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    h, w = x.shape[1:]
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw)))
    out = np.zeros((oc, h, w), dtype=np.result_type(x, k))
    for u in range(kh):
        for v in range(kw):
            out += np.tensordot(k[:, :, u, v], xp[:, u:u + h, v:v + w], axes=1)
    return out


def conv2d_adjoint_raw(g: np.ndarray, k: np.ndarray) -> np.ndarray:
    # transpose of conv2d_raw: correlate with the spatially flipped kernel,
    # in/out channels swapped; same padding because extents are odd
    kt = np.ascontiguousarray(k[:, :, ::-1, ::-1].swapaxes(0, 1))
    return conv2d_raw(g, kt)


def kernel_grad_raw(x: np.ndarray, g: np.ndarray, kshape: tuple[int, int, int, int]) -> np.ndarray:
    """Gradient of <conv2d(x, k), g> with respect to the kernel entries."""
    oc, ic, kh, kw = kshape
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    h, w = x.shape[1:]
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw)))
    grad = np.empty(kshape, dtype=np.result_type(x, g))
    for u in range(kh):
        for v in range(kw):
            grad[:, :, u, v] = np.tensordot(g, xp[:, u:u + h, v:v + w], axes=([1, 2], [1, 2]))
    return grad


@functools.lru_cache(maxsize=64)
def upsample_matrix(n_in: int, factor: int) -> np.ndarray:
    """1-D bilinear interpolation operator, shape (n_in * factor, n_in), float64.

    Row i samples the input at (i + 0.5) / factor - 0.5, clamped to the grid.
    """
    n_out = n_in * factor
    src = (np.arange(n_out, dtype=np.float64) + 0.5) / factor - 0.5
    src = np.clip(src, 0.0, float(n_in - 1))
    i0 = np.minimum(np.floor(src).astype(np.int64), n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    t = src - i0
    m = np.zeros((n_out, n_in), dtype=np.float64)
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1.0 - t)
    np.add.at(m, (rows, i1), t)
    m.flags.writeable = False
    return m


def upsample_raw(s: np.ndarray, factor: int) -> np.ndarray:
    wr = upsample_matrix(s.shape[0], factor)
    wc = upsample_matrix(s.shape[1], factor)
    return wr @ s @ wc.T


def upsample_adjoint_raw(g: np.ndarray, factor: int) -> np.ndarray:
    h, w = g.shape
    if h % factor or w % factor:
        raise DimensionError(f"gradient shape {g.shape} is not a multiple of factor {factor}")
    wr = upsample_matrix(h // factor, factor)
    wc = upsample_matrix(w // factor, factor)
    return wr.T @ g @ wc


# ---------------------------------------------------------------------------
# public operations on the domain types
# ---------------------------------------------------------------------------

def conv2d(x: FeatureMap, k: ConvKernel) -> FeatureMap:
    """Same-size zero-padded cross-correlation of a feature map with a kernel."""
    if k.in_channels != x.channels:
        raise DimensionError(
            f"kernel expects {k.in_channels} input channels, feature map has {x.channels}"
        )
    out = conv2d_raw(x.data.astype(np.float64), k.data.astype(np.float64))
    return FeatureMap(out, stride=x.stride)


def conv2d_adjoint(g: FeatureMap, k: ConvKernel) -> FeatureMap:
    """Adjoint of ``conv2d`` in its input: <conv2d(x,k), g> == <x, conv2d_adjoint(g,k)>."""
    if k.out_channels != g.channels:
        raise DimensionError(
            f"kernel produces {k.out_channels} channels, gradient map has {g.channels}"
        )
    out = conv2d_adjoint_raw(g.data.astype(np.float64), k.data.astype(np.float64))
    return FeatureMap(out, stride=g.stride)


def kernel_grad_adjoint(x: FeatureMap, g: FeatureMap, kshape: tuple[int, int, int, int]) -> ConvKernel:
    """Adjoint of ``conv2d`` in its kernel: <conv2d(x,k), g> == <k, kernel_grad_adjoint(x,g)>."""
    oc, ic, kh, kw = kshape
    if ic != x.channels:
        raise DimensionError(f"kernel shape expects {ic} input channels, feature map has {x.channels}")
    if oc != g.channels:
        raise DimensionError(f"kernel shape expects {oc} output channels, gradient map has {g.channels}")
    if g.data.shape[1:] != x.data.shape[1:]:
        raise DimensionError(
            f"spatial sizes differ: x is {x.data.shape[1:]}, g is {g.data.shape[1:]}"
        )
    grad = kernel_grad_raw(x.data.astype(np.float64), g.data.astype(np.float64), kshape)
    return ConvKernel(grad)


def bilinear_upsample(s: ScoreMap, factor: int) -> ScoreMap:
    """Upsample a score map by an integer factor (linear operator, border clamped)."""
    if factor < 1:
        raise ValueError(f"upsampling factor must be >= 1, got {factor}")
    if factor == 1:
        return ScoreMap(s.data.copy(), stride=s.stride)
    out = upsample_raw(s.data.astype(np.float64), factor)
    new_stride = s.stride / factor
    if float(new_stride).is_integer():
        new_stride = int(new_stride)
    return ScoreMap(out, stride=new_stride)


def bilinear_upsample_adjoint(g: ScoreMap, factor: int) -> ScoreMap:
    """Adjoint of ``bilinear_upsample``: <U s, g> == <s, U^T g>."""
    if factor < 1:
        raise ValueError(f"upsampling factor must be >= 1, got {factor}")
    if factor == 1:
        return ScoreMap(g.data.copy(), stride=g.stride)
    out = upsample_adjoint_raw(g.data.astype(np.float64), factor)
    return ScoreMap(out, stride=g.stride * factor)
