"""The nine VOI modification operators applied as a mask-in, mask-out pipeline.

Each modification resamples the mask to isotropic spacing (min of the three
axes, nearest neighbour), applies its operator there, and resamples the result
back onto the original grid. Images are never touched.
"""

from __future__ import annotations

import hashlib

from .errors import ConfigError, DataError
from .grid import Mask, resample_isotropic, resample_to_grid
from .mesh import (
    RandomizeParams,
    fit_ellipsoid,
    marching_cubes,
    perlin_randomize,
    smooth_mesh,
    voxelize,
)
from .morph import (
    SmoothParams,
    dilate,
    erode,
    gaussian_smooth_mask,
    make_spherical_kernel,
)

MODIFICATION_IDS = (
    "dilate1",
    "dilate2",
    "erode1",
    "erode2",
    "smooth1",
    "smooth2",
    "rand1",
    "rand2",
    "ellipsoid",
)

# short labels used in the report tables
MODIFICATION_LABELS = {
    "dilate1": "d1",
    "dilate2": "d2",
    "erode1": "e1",
    "erode2": "e2",
    "smooth1": "s1",
    "smooth2": "s2",
    "rand1": "r1",
    "rand2": "r2",
    "ellipsoid": "l",
}


def derive_seed(master_seed: int, subject_id: str, modification_id: str) -> int:
    """Stable per-(subject, modification) seed, independent of subject ordering."""
    digest = hashlib.sha256(
        f"{master_seed}:{subject_id}:{modification_id}".encode()
    ).digest()
    return int.from_bytes(digest[:8], "little")


def _apply_on_isotropic(mask_iso: Mask, modification_id: str, seed: int) -> Mask:
    spacing = mask_iso.spacing
    if modification_id.startswith("dilate"):
        kernel = make_spherical_kernel(float(modification_id[-1]), spacing)
        return dilate(mask_iso, kernel)
    if modification_id.startswith("erode"):
        kernel = make_spherical_kernel(float(modification_id[-1]), spacing)
        return erode(mask_iso, kernel)
    if modification_id.startswith("smooth"):
        return gaussian_smooth_mask(mask_iso, SmoothParams(sigma_mm=float(modification_id[-1])))
    if modification_id.startswith("rand"):
        mesh = marching_cubes(mask_iso)
        randomized = perlin_randomize(
            mesh, RandomizeParams(max_distance_mm=float(modification_id[-1]), seed=seed)
        )
        return voxelize(randomized, mask_iso)
    if modification_id == "ellipsoid":
        mesh = smooth_mesh(marching_cubes(mask_iso), iterations=10, factor=0.5)
        return voxelize(fit_ellipsoid(mesh), mask_iso)
    raise ConfigError(f"unknown modification {modification_id!r}")


def apply_modification(mask: Mask, modification_id: str, seed: int = 0) -> Mask:
    """Perturb a VOI mask; result lives on the same grid as the input."""
    if modification_id not in MODIFICATION_IDS:
        raise ConfigError(f"unknown modification {modification_id!r}")
    if mask.voxel_count == 0:
        raise DataError("cannot perturb an empty mask")
    target = float(min(mask.spacing))
    iso = resample_isotropic(mask, target, mode="nearest")
    modified_iso = _apply_on_isotropic(iso, modification_id, seed)
    out = resample_to_grid(modified_iso, mask)
    if out.voxel_count == 0:
        raise DataError(f"modification {modification_id} left no foreground voxels")
    return out
