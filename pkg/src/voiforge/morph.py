"""Voxel-domain VOI perturbations: spherical dilation/erosion and Gaussian boundary smoothing.

All operators expect isotropically resampled masks (callers resample first) and
treat everything outside the grid as background.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .grid import Mask


@dataclass
class StructuringKernel:
    """Spherical binary structuring element as integer voxel offsets."""

    radius_mm: float
    offsets: np.ndarray  # (k, 3) int64, contains (0,0,0), symmetric under negation

    def __post_init__(self):
        self.offsets = np.asarray(self.offsets, dtype=np.int64).reshape(-1, 3)
        if not (self.offsets == 0).all(axis=1).any():
            raise DataError("kernel must contain the origin offset")


@dataclass
class SmoothParams:
    """Gaussian smoothing magnitude and binarization cutoff."""

    sigma_mm: float
    threshold: float = 0.5
    truncate: float = 3.0  # kernel support, in multiples of sigma

    def __post_init__(self):
        if self.sigma_mm <= 0:
            raise DataError(f"sigma must be positive, got {self.sigma_mm}")
        if not 0.0 < self.threshold < 1.0:
            raise DataError(f"threshold must lie in (0, 1), got {self.threshold}")


def _isotropic_spacing(spacing) -> float:
    s = float(spacing[0])
    if max(spacing) - min(spacing) > 1e-9 * s:
        raise DataError(f"operation requires isotropic spacing, got {spacing}")
    return s


def make_spherical_kernel(radius_mm: float, spacing) -> StructuringKernel:
    """All integer offsets whose physical center distance is <= radius_mm (inclusive)."""
    if radius_mm < 0:
        raise DataError(f"radius must be non-negative, got {radius_mm}")
    s = _isotropic_spacing(spacing if np.iterable(spacing) else (spacing,) * 3)
    reach = int(np.floor(radius_mm / s + 1e-9))
    rng = np.arange(-reach, reach + 1)
    dx, dy, dz = np.meshgrid(rng, rng, rng, indexing="ij")
    offs = np.stack([dx.ravel(), dy.ravel(), dz.ravel()], axis=1)
    dist2 = (offs.astype(np.float64) * s) ** 2
    keep = dist2.sum(axis=1) <= radius_mm**2 + 1e-9
    return StructuringKernel(radius_mm=radius_mm, offsets=offs[keep])


def _shifted(data: np.ndarray, off) -> np.ndarray:
    """View of ``data`` shifted by ``off`` with zero (background) fill."""
    out = np.zeros_like(data)
    src = []
    dst = []
    for n, o in zip(data.shape, off):
        o = int(o)
        src.append(slice(max(0, -o), min(n, n - o)))
        dst.append(slice(max(0, o), min(n, n + o)))
    out[tuple(dst)] = data[tuple(src)]
    return out


def dilate(mask: Mask, kernel: StructuringKernel) -> Mask:
    """Voxel z is foreground iff the kernel placed at z overlaps any foreground voxel."""
    _isotropic_spacing(mask.spacing)
    src = mask.data.astype(bool)
    out = np.zeros_like(src)
    for off in kernel.offsets:
        out |= _shifted(src, -off)
    return Mask(data=out.astype(np.uint8), spacing=mask.spacing, origin=mask.origin)


def erode(mask: Mask, kernel: StructuringKernel) -> Mask:
    """Voxel z is foreground iff every kernel offset from z lands on foreground.

    Offsets falling outside the grid count as background, so the mask shrinks
    at image edges.
    """
    _isotropic_spacing(mask.spacing)
    src = mask.data.astype(bool)
    out = np.ones_like(src)
    for off in kernel.offsets:
        out &= _shifted(src, -off)
    return Mask(data=out.astype(np.uint8), spacing=mask.spacing, origin=mask.origin)


def _gauss_1d(sigma_mm: float, spacing: float, truncate: float) -> np.ndarray:
    radius = int(np.ceil(truncate * sigma_mm / spacing))
    x = np.arange(-radius, radius + 1) * spacing
    w = np.exp(-(x**2) / (2.0 * sigma_mm**2))
    return w / w.sum()


def gaussian_smooth_mask(mask: Mask, params: SmoothParams) -> Mask:
    """Convolve the binary mask with a sum-normalized Gaussian, threshold at 0.5.

    The 3D kernel is separable (per-axis truncation at ``truncate * sigma``),
    normalized to total weight 1 so the convolved field lies in [0, 1] and the
    cutoff is meaningful.
    """
    s = _isotropic_spacing(mask.spacing)
    w = _gauss_1d(params.sigma_mm, s, params.truncate)
    field = mask.data.astype(np.float64)
    for axis in range(3):
        field = _correlate_axis(field, w, axis)
    out = (field > params.threshold).astype(np.uint8)
    return Mask(data=out, spacing=mask.spacing, origin=mask.origin)


def _correlate_axis(data: np.ndarray, weights: np.ndarray, axis: int) -> np.ndarray:
    radius = (len(weights) - 1) // 2
    pad = [(0, 0)] * 3
    pad[axis] = (radius, radius)
    padded = np.pad(data, pad, mode="constant")
    out = np.zeros_like(data)
    for k, w in enumerate(weights):
        sl = [slice(None)] * 3
        sl[axis] = slice(k, k + data.shape[axis])
        out += w * padded[tuple(sl)]
    return out


# Magnitude presets used by the perturbation pipeline: radii / sigmas in mm.
DILATION_RADII = {1: 1.0, 2: 2.0}
EROSION_RADII = {1: 1.0, 2: 2.0}
SMOOTHING_SIGMAS = {1: 1.0, 2: 2.0}
