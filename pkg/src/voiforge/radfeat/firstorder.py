"""First-order intensity statistics (18 features).

Intensity-domain statistics use the raw in-mask values; Entropy and Uniformity
use the discretized bin histogram. Variance, skewness, and kurtosis are the
population (biased) estimators, kurtosis is non-excess. Percentiles use linear
interpolation between order statistics. Entropy is base-2 with 0*log(0) = 0.
"""

from __future__ import annotations

import numpy as np

from .discretize import DiscretizedROI

FIRSTORDER_FEATURES = (
    "firstorder_10Percentile",
    "firstorder_90Percentile",
    "firstorder_Energy",
    "firstorder_Entropy",
    "firstorder_InterquartileRange",
    "firstorder_Kurtosis",
    "firstorder_Maximum",
    "firstorder_Mean",
    "firstorder_MeanAbsoluteDeviation",
    "firstorder_Median",
    "firstorder_Minimum",
    "firstorder_Range",
    "firstorder_RobustMeanAbsoluteDeviation",
    "firstorder_RootMeanSquared",
    "firstorder_Skewness",
    "firstorder_TotalEnergy",
    "firstorder_Uniformity",
    "firstorder_Variance",
)


def entropy_bits(p: np.ndarray) -> float:
    """Shannon entropy in bits, summing only over positive probabilities."""
    pos = p[p > 0]
    return float(-(pos * np.log2(pos)).sum()) + 0.0


def extract_firstorder(roi: DiscretizedROI) -> dict[str, float]:
    x = roi.raw
    n = x.size
    voxel_volume = float(np.prod(roi.spacing))

    mean = float(x.mean())
    centered = x - mean
    m2 = float((centered**2).mean())
    std = np.sqrt(m2)
    if m2 > 0:
        skew = float((centered**3).mean()) / std**3
        kurt = float((centered**4).mean()) / m2**2
    else:
        skew = 0.0
        kurt = 0.0

    p10, p25, p50, p75, p90 = (float(np.percentile(x, q)) for q in (10, 25, 50, 75, 90))
    robust = x[(x >= p10) & (x <= p90)]
    robust_mad = float(np.abs(robust - robust.mean()).mean()) if robust.size else 0.0

    counts = np.bincount(roi.levels[roi.mask], minlength=roi.bin_count + 1)[1:]
    p = counts / n

    energy = float((x**2).sum())
    return {
        "firstorder_10Percentile": p10,
        "firstorder_90Percentile": p90,
        "firstorder_Energy": energy,
        "firstorder_Entropy": entropy_bits(p),
        "firstorder_InterquartileRange": p75 - p25,
        "firstorder_Kurtosis": kurt,
        "firstorder_Maximum": float(x.max()),
        "firstorder_Mean": mean,
        "firstorder_MeanAbsoluteDeviation": float(np.abs(centered).mean()),
        "firstorder_Median": p50,
        "firstorder_Minimum": float(x.min()),
        "firstorder_Range": float(x.max() - x.min()),
        "firstorder_RobustMeanAbsoluteDeviation": robust_mad,
        "firstorder_RootMeanSquared": float(np.sqrt((x**2).mean())),
        "firstorder_Skewness": skew,
        "firstorder_TotalEnergy": voxel_volume * energy,
        "firstorder_Uniformity": float((p**2).sum()),
        "firstorder_Variance": m2,
    }
