"""Fixed-bin-count intensity discretization of the masked region."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DataError
from ..grid import ImageVolume, Mask, same_grid


@dataclass
class DiscretizedROI:
    """Masked region with intensities mapped to integer bins 1..bin_count.

    Arrays are cropped to the mask bounding box; ``levels`` is 0 outside the
    mask. ``raw`` holds the original in-mask intensities (flattened in C order
    of the cropped arrays).
    """

    levels: np.ndarray  # (bx, by, bz) int64, 0 outside mask
    mask: np.ndarray  # (bx, by, bz) bool
    raw: np.ndarray  # (n_voxels,) float64
    bin_edges: np.ndarray  # (bin_count + 1,) strictly increasing, or 1 edge pair if constant
    bin_count: int
    spacing: tuple[float, float, float]

    @property
    def n_voxels(self) -> int:
        return int(self.mask.sum())

    @property
    def present_levels(self) -> np.ndarray:
        return np.unique(self.levels[self.mask])


def _bbox_slices(mask_data: np.ndarray):
    coords = np.argwhere(mask_data > 0)
    lo = coords.min(axis=0)
    hi = coords.max(axis=0) + 1
    return tuple(slice(int(a), int(b)) for a, b in zip(lo, hi))


def discretize(image: ImageVolume, mask: Mask, bin_count: int = 100) -> DiscretizedROI:
    """Bin in-mask intensities over [min, max] into ``bin_count`` equal-width bins.

    The maximum maps to bin ``bin_count``; a constant region degenerates to a
    single occupied bin 1.
    """
    if not same_grid(image, mask):
        raise DataError("image and mask geometry do not match")
    if mask.voxel_count == 0:
        raise DataError("empty mask: nothing to discretize")
    if bin_count < 1:
        raise DataError(f"bin count must be >= 1, got {bin_count}")

    box = _bbox_slices(mask.data)
    m = mask.data[box].astype(bool)
    img = image.data[box]
    raw = img[m].astype(np.float64)

    lo, hi = float(raw.min()), float(raw.max())
    levels = np.zeros(m.shape, dtype=np.int64)
    if hi == lo:
        levels[m] = 1
        edges = np.array([lo, lo + 1.0])
    else:
        edges = np.linspace(lo, hi, bin_count + 1)
        width = (hi - lo) / bin_count
        binned = np.floor((raw - lo) / width).astype(np.int64) + 1
        levels[m] = np.clip(binned, 1, bin_count)
    return DiscretizedROI(
        levels=levels,
        mask=m,
        raw=raw,
        bin_edges=edges,
        bin_count=bin_count,
        spacing=mask.spacing,
    )
