"""Extraction of the 102 radiomics features from an image + mask pair.

Feature census: 14 shape + 18 first-order + 24 GLCM + 16 GLRLM + 16 GLSZM +
14 GLDM = 102 named features, canonical order as in FEATURE_NAMES. See
docs/feature_reference.md for every formula.
"""

from __future__ import annotations

import numpy as np

from ..errors import DataError
from ..grid import ImageVolume, Mask, same_grid
from .discretize import DiscretizedROI, discretize
from .firstorder import FIRSTORDER_FEATURES, extract_firstorder
from .shape import SHAPE_FEATURES, extract_shape
from .table import FeatureTable
from .texture import (
    GLCM_FEATURES,
    GLDM_FEATURES,
    GLRLM_FEATURES,
    GLSZM_FEATURES,
    extract_glcm,
    extract_gldm,
    extract_glrlm,
    extract_glszm,
)

FEATURE_NAMES: tuple[str, ...] = (
    SHAPE_FEATURES
    + FIRSTORDER_FEATURES
    + GLCM_FEATURES
    + GLRLM_FEATURES
    + GLSZM_FEATURES
    + GLDM_FEATURES
)

FEATURE_CLASS_SIZES = {
    "shape": len(SHAPE_FEATURES),
    "firstorder": len(FIRSTORDER_FEATURES),
    "glcm": len(GLCM_FEATURES),
    "glrlm": len(GLRLM_FEATURES),
    "glszm": len(GLSZM_FEATURES),
    "gldm": len(GLDM_FEATURES),
}

assert len(FEATURE_NAMES) == 102


def extract_all(image: ImageVolume, mask: Mask, bin_count: int = 100) -> dict[str, float]:
    """Compute all 102 features on the raw (original) image, no filter banks.

    Returns an ordered mapping following FEATURE_NAMES; every value is finite.
    """
    if not same_grid(image, mask):
        raise DataError("image and mask geometry do not match")
    if mask.voxel_count == 0:
        raise DataError("empty mask: no features to extract")

    roi = discretize(image, mask, bin_count)
    values: dict[str, float] = {}
    values.update(extract_shape(mask))
    values.update(extract_firstorder(roi))
    values.update(extract_glcm(roi))
    values.update(extract_glrlm(roi))
    values.update(extract_glszm(roi))
    values.update(extract_gldm(roi))

    ordered = {name: float(values[name]) for name in FEATURE_NAMES}
    bad = [n for n, v in ordered.items() if not np.isfinite(v)]
    if bad:
        raise DataError(f"non-finite feature values: {bad}")
    return ordered


__all__ = [
    "DiscretizedROI",
    "FeatureTable",
    "FEATURE_NAMES",
    "FEATURE_CLASS_SIZES",
    "discretize",
    "extract_all",
    "extract_firstorder",
    "extract_glcm",
    "extract_gldm",
    "extract_glrlm",
    "extract_glszm",
    "extract_shape",
]
