"""First-frame sample generation: inpaint the target hole, rewarp, paste back.

Images are 8-bit RGB (H, W, 3) on the 0..255 intensity scale; masks are
binary (H, W). Augmented samples keep the background of the first frame and
move a warped, optionally blurred copy of the target over it, so far-away
background pixels stay identical to the original frame.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

INPAINT_MAX_ITERS = 64
INPAINT_TOL = 0.5  # intensity levels


@dataclass
class AugmentationParams:
    n_augmented: int = 4
    max_rotation: float = 20.0           # degrees
    scale_range: tuple[float, float] = (0.8, 1.25)
    max_translation: float = 0.1         # fraction of the image side, per axis
    blur_sigma_range: tuple[float, float] = (0.0, 2.0)
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_augmented < 0:
            raise ValueError("n_augmented must be >= 0")
        if self.scale_range[0] <= 0:
            raise ValueError("scale range must be positive")


def _as_mask(mask: np.ndarray, image: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask) > 0
    if mask.shape != image.shape[:2]:
        raise ValueError(f"mask shape {mask.shape} does not match image {image.shape[:2]}")
    return mask


def inpaint_background(image: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Fill the masked region by diffusion from its boundary.

    Hole pixels start from their nearest unmasked pixel and are then
    relaxed by 4-neighbor averaging (Neumann borders) until the largest
    change drops below half an intensity level or 64 iterations pass.
    """
    image = np.asarray(image)
    mask = _as_mask(mask, image)
    if not mask.any():
        return image.copy()
    if mask.all():
        raise ValueError("mask covers the whole image, nothing to diffuse from")

    work = image.astype(np.float32)
    if work.ndim == 2:
        work = work[:, :, None]
    # seed the hole with nearest-boundary values
    _, (iy, ix) = ndimage.distance_transform_edt(mask, return_indices=True)
    work[mask] = work[iy[mask], ix[mask]]

    hole = mask
    for _ in range(INPAINT_MAX_ITERS):
        padded = np.pad(work, ((1, 1), (1, 1), (0, 0)), mode="edge")
        avg = 0.25 * (padded[:-2, 1:-1] + padded[2:, 1:-1]
                      + padded[1:-1, :-2] + padded[1:-1, 2:])
        delta = np.abs(avg[hole] - work[hole]).max()
        work[hole] = avg[hole]
        if delta < INPAINT_TOL:
            break

    out = work[:, :, 0] if image.ndim == 2 else work
    if np.issubdtype(image.dtype, np.integer):
        out = np.clip(np.rint(out), 0, 255)
    return out.astype(image.dtype)


def _sample_transform(params: AugmentationParams, rng: np.random.Generator, h: int, w: int):
    angle = np.deg2rad(rng.uniform(-params.max_rotation, params.max_rotation))
    scale = rng.uniform(*params.scale_range)
    ty = rng.uniform(-1.0, 1.0) * params.max_translation * h
    tx = rng.uniform(-1.0, 1.0) * params.max_translation * w
    sigma = rng.uniform(*params.blur_sigma_range)
    return angle, scale, (ty, tx), sigma


def _warp(image: np.ndarray, mask: np.ndarray, angle: float, scale: float,
          translation: tuple[float, float]):
    """Affine-warp image (bilinear) and mask (nearest) about the mask centroid."""
    ys, xs = np.nonzero(mask)
    center = np.array([ys.mean(), xs.mean()])
    rot = np.array([[np.cos(angle), -np.sin(angle)],
                    [np.sin(angle), np.cos(angle)]]) * scale
    inv = np.linalg.inv(rot)
    offset = center - inv @ (center + np.asarray(translation))

    warped = np.empty_like(image, dtype=np.float32)
    src = image.astype(np.float32)
    for ch in range(image.shape[2]):
        warped[:, :, ch] = ndimage.affine_transform(
            src[:, :, ch], inv, offset=offset, order=1, mode="constant", cval=0.0)
    warped_mask = ndimage.affine_transform(
        mask.astype(np.uint8), inv, offset=offset, order=0, mode="constant", cval=0) > 0
    return warped, warped_mask


def random_affine_blur(image: np.ndarray, mask: np.ndarray, params: AugmentationParams,
                       rng: np.random.Generator, background: np.ndarray | None = None):
    """Warp the target by a random similarity transform, blur it, paste it back.

    Returns the augmented (image, mask) pair; the mask stays binary. The
    inpainted background is recomputed unless supplied by the caller.
    """
    image = np.asarray(image)
    mask = _as_mask(mask, image)
    if not mask.any():
        warnings.warn("empty target mask, returning inputs unchanged")
        return image.copy(), mask.copy()
    if background is None:
        background = inpaint_background(image, mask)

    flat = image.ndim == 2
    planes = image[:, :, None] if flat else image
    angle, scale, translation, sigma = _sample_transform(params, rng, *mask.shape)
    warped, warped_mask = _warp(planes, mask, angle, scale, translation)
    if sigma > 0:
        warped = ndimage.gaussian_filter(warped, sigma=(sigma, sigma, 0))

    out = background.reshape(planes.shape).astype(np.float32).copy()
    out[warped_mask] = warped[warped_mask]
    if flat:
        out = out[:, :, 0]
    if np.issubdtype(image.dtype, np.integer):
        out = np.clip(np.rint(out), 0, 255)
    return out.astype(image.dtype), warped_mask


def generate_initial_set(image: np.ndarray, mask: np.ndarray,
                         params: AugmentationParams):
    """Build the initial training set: the original pair plus augmented copies."""
    image = np.asarray(image)
    mask = _as_mask(mask, image)
    pairs = [(image.copy(), mask.copy())]
    if params.n_augmented == 0:
        return pairs
    background = inpaint_background(image, mask) if mask.any() else image.copy()
    for seed in np.random.SeedSequence(params.rng_seed).spawn(params.n_augmented):
        rng = np.random.default_rng(seed)
        pairs.append(random_affine_blur(image, mask, params, rng, background=background))
    return pairs
