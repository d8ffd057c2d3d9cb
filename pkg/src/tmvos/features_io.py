"""Feature-map file format and the built-in hand-crafted extractor.

File layout (all integers little-endian):

    bytes 0..3    magic "FRTM"
    bytes 4..7    version, uint32, currently 1
    bytes 8..23   height, width, channels, stride as uint32
    bytes 24..    height * width * channels float32 values, channel-major
                  (one full row-major H x W plane per channel)

One file per frame, named ``<frame_index:05d>.frtm``.
"""

from __future__ import annotations

import math
import struct

import numpy as np
from scipy import ndimage

from .ops import FeatureMap

FRTM_MAGIC = b"FRTM"
FRTM_VERSION = 1
_HEADER = struct.Struct("<4s5I")

HANDCRAFTED_CHANNELS = 18
VARIANCE_FLOOR = 1e-6
VALID_STRIDES = (4, 8, 16)
PYRAMID_SIGMA_FACTORS = (0.25, 0.5)  # of the stride, per pyramid level


class FeatureFileError(ValueError):
    """A feature file failed to parse; the message names the offending field."""


def write_feature_map(path, fm: FeatureMap) -> None:
    payload = np.ascontiguousarray(fm.data, dtype="<f4")
    header = _HEADER.pack(FRTM_MAGIC, FRTM_VERSION, fm.height, fm.width,
                          fm.channels, fm.stride)
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload.tobytes())


def read_feature_map(path) -> FeatureMap:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size:
        raise FeatureFileError(f"truncated header: {len(raw)} bytes in {path}")
    magic, version, height, width, channels, stride = _HEADER.unpack_from(raw)
    if magic != FRTM_MAGIC:
        raise FeatureFileError(f"bad magic {magic!r} in {path}")
    if version != FRTM_VERSION:
        raise FeatureFileError(f"unsupported version {version} in {path}")
    if min(height, width, channels, stride) < 1:
        raise FeatureFileError(
            f"invalid header dimensions {height}x{width}x{channels}@{stride} in {path}"
        )
    expected = height * width * channels * 4
    body = raw[_HEADER.size:]
    if len(body) < expected:
        raise FeatureFileError(
            f"truncated payload: expected {expected} bytes, got {len(body)} in {path}"
        )
    if len(body) > expected:
        raise FeatureFileError(
            f"trailing bytes after payload: expected {expected}, got {len(body)} in {path}"
        )
    data = np.frombuffer(body, dtype="<f4").reshape(channels, height, width).copy()
    if not np.isfinite(data).all():
        raise FeatureFileError(f"non-finite values in payload of {path}")
    return FeatureMap(data, stride=stride)


def feature_file_name(frame_index: int) -> str:
    return f"{frame_index:05d}.frtm"


def _cell_reduce(plane: np.ndarray, stride: int, hc: int, wc: int) -> np.ndarray:
    return plane.reshape(hc, stride, wc, stride).mean(axis=(1, 3))


def extract_raw_feature_channels(image: np.ndarray, stride: int) -> np.ndarray:
    """The 18 hand-crafted channels on the cell grid, before standardization."""
    if stride not in VALID_STRIDES:
        raise ValueError(f"stride must be one of {VALID_STRIDES}, got {stride}")
    image = np.asarray(image)
    if image.ndim == 2:
        image = np.repeat(image[:, :, None], 3, axis=2)
    h, w = image.shape[:2]
    if h < stride or w < stride:
        raise ValueError(f"image of {h}x{w} is smaller than stride {stride}")

    hc, wc = math.ceil(h / stride), math.ceil(w / stride)
    pad_h, pad_w = hc * stride - h, wc * stride - w
    img = np.pad(image.astype(np.float64), ((0, pad_h), (0, pad_w), (0, 0)), mode="edge")

    channels = np.empty((HANDCRAFTED_CHANNELS, hc, wc), dtype=np.float64)
    for ch in range(3):
        channels[ch] = _cell_reduce(img[:, :, ch], stride, hc, wc)
    for scale_idx, factor in enumerate(PYRAMID_SIGMA_FACTORS):
        sigma = factor * stride
        smooth = ndimage.gaussian_filter(img, sigma=(sigma, sigma, 0))
        for ch in range(3):
            channels[3 + 3 * scale_idx + ch] = _cell_reduce(smooth[:, :, ch], stride, hc, wc)

    gray = img @ np.array([0.299, 0.587, 0.114])
    gy, gx = np.gradient(gray)
    mag = np.hypot(gx, gy)
    angle = np.mod(np.arctan2(gy, gx), 2.0 * np.pi)
    bins = np.minimum((angle / (np.pi / 4.0)).astype(np.int64), 7)
    for b in range(8):
        channels[9 + b] = _cell_reduce(np.where(bins == b, mag, 0.0), stride, hc, wc)

    mean = _cell_reduce(gray, stride, hc, wc)
    mean_sq = _cell_reduce(gray * gray, stride, hc, wc)
    channels[17] = np.sqrt(np.maximum(mean_sq - mean * mean, 0.0))
    return channels


def standardize_channels(channels: np.ndarray) -> np.ndarray:
    """Zero-mean, unit-variance per channel plane (variance floor 1e-6)."""
    mu = channels.mean(axis=(1, 2), keepdims=True)
    var = channels.var(axis=(1, 2), keepdims=True)
    return ((channels - mu) / np.sqrt(np.maximum(var, VARIANCE_FLOOR))).astype(np.float32)


def extract_handcrafted_features(image: np.ndarray, stride: int) -> FeatureMap:
    """Hand-crafted 18-channel features on a stride-aligned cell grid.

    Per cell: mean RGB (3), Gaussian-smoothed color at two scales (6), an
    8-bin gradient-orientation histogram (8) and the local intensity
    standard deviation (1), each standardized over the frame. Output size is
    ceil(H / stride) x ceil(W / stride); partial border cells are completed
    by edge replication.
    """
    channels = extract_raw_feature_channels(image, stride)
    return FeatureMap(standardize_channels(channels), stride=stride)
