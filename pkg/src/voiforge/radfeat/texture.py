"""Texture matrices and features: GLCM (24), GLRLM (16), GLSZM (16), GLDM (14).

Matrix conventions
------------------
* GLCM: distance 1, the 13 unique 3D direction offsets, symmetric
  accumulation, features computed per direction and averaged over directions
  with at least one co-occurring pair.
* GLRLM: runs of equal gray level along the same 13 directions, features
  averaged over directions.
* GLSZM: 26-connected zones of equal gray level, single matrix.
* GLDM: dependence threshold alpha = 0 over the 26-neighbourhood; the
  dependence size of a voxel is 1 (itself) plus its dependent neighbours.

Feature weights use the actual bin numbers of levels present in the region;
entropies are base 2 with 0*log(0) = 0. Degenerate single-level regions take
Correlation = MCC = 1 by convention.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from ..errors import DataError
from .discretize import DiscretizedROI
from .firstorder import entropy_bits

DIRECTIONS_13 = np.array(
    [
        (1, 0, 0), (0, 1, 0), (0, 0, 1),
        (1, 1, 0), (1, -1, 0), (1, 0, 1), (1, 0, -1), (0, 1, 1), (0, 1, -1),
        (1, 1, 1), (1, 1, -1), (1, -1, 1), (1, -1, -1),
    ],
    dtype=np.int64,
)

_STRUCT_26 = np.ones((3, 3, 3), dtype=bool)

GLCM_FEATURES = (
    "glcm_Autocorrelation",
    "glcm_ClusterProminence",
    "glcm_ClusterShade",
    "glcm_ClusterTendency",
    "glcm_Contrast",
    "glcm_Correlation",
    "glcm_DifferenceAverage",
    "glcm_DifferenceEntropy",
    "glcm_DifferenceVariance",
    "glcm_Id",
    "glcm_Idm",
    "glcm_Idmn",
    "glcm_Idn",
    "glcm_Imc1",
    "glcm_Imc2",
    "glcm_InverseVariance",
    "glcm_JointAverage",
    "glcm_JointEnergy",
    "glcm_JointEntropy",
    "glcm_MCC",
    "glcm_MaximumProbability",
    "glcm_SumAverage",
    "glcm_SumEntropy",
    "glcm_SumSquares",
)

GLRLM_FEATURES = (
    "glrlm_GrayLevelNonUniformity",
    "glrlm_GrayLevelNonUniformityNormalized",
    "glrlm_GrayLevelVariance",
    "glrlm_HighGrayLevelRunEmphasis",
    "glrlm_LongRunEmphasis",
    "glrlm_LongRunHighGrayLevelEmphasis",
    "glrlm_LongRunLowGrayLevelEmphasis",
    "glrlm_LowGrayLevelRunEmphasis",
    "glrlm_RunEntropy",
    "glrlm_RunLengthNonUniformity",
    "glrlm_RunLengthNonUniformityNormalized",
    "glrlm_RunPercentage",
    "glrlm_RunVariance",
    "glrlm_ShortRunEmphasis",
    "glrlm_ShortRunHighGrayLevelEmphasis",
    "glrlm_ShortRunLowGrayLevelEmphasis",
)

GLSZM_FEATURES = (
    "glszm_GrayLevelNonUniformity",
    "glszm_GrayLevelNonUniformityNormalized",
    "glszm_GrayLevelVariance",
    "glszm_HighGrayLevelZoneEmphasis",
    "glszm_LargeAreaEmphasis",
    "glszm_LargeAreaHighGrayLevelEmphasis",
    "glszm_LargeAreaLowGrayLevelEmphasis",
    "glszm_LowGrayLevelZoneEmphasis",
    "glszm_SizeZoneNonUniformity",
    "glszm_SizeZoneNonUniformityNormalized",
    "glszm_SmallAreaEmphasis",
    "glszm_SmallAreaHighGrayLevelEmphasis",
    "glszm_SmallAreaLowGrayLevelEmphasis",
    "glszm_ZoneEntropy",
    "glszm_ZonePercentage",
    "glszm_ZoneVariance",
)

GLDM_FEATURES = (
    "gldm_DependenceEntropy",
    "gldm_DependenceNonUniformity",
    "gldm_DependenceNonUniformityNormalized",
    "gldm_DependenceVariance",
    "gldm_GrayLevelNonUniformity",
    "gldm_GrayLevelVariance",
    "gldm_HighGrayLevelEmphasis",
    "gldm_LargeDependenceEmphasis",
    "gldm_LargeDependenceHighGrayLevelEmphasis",
    "gldm_LargeDependenceLowGrayLevelEmphasis",
    "gldm_LowGrayLevelEmphasis",
    "gldm_SmallDependenceEmphasis",
    "gldm_SmallDependenceHighGrayLevelEmphasis",
    "gldm_SmallDependenceLowGrayLevelEmphasis",
)


def _offset_slices(shape, off):
    src, dst = [], []
    for n, o in zip(shape, off):
        o = int(o)
        if o >= 0:
            src.append(slice(0, n - o))
            dst.append(slice(o, n))
        else:
            src.append(slice(-o, n))
            dst.append(slice(0, n + o))
    return tuple(src), tuple(dst)


# ---------------------------------------------------------------------------
# Matrices
# ---------------------------------------------------------------------------


def glcm_matrices(roi: DiscretizedROI) -> np.ndarray:
    """Symmetric co-occurrence count matrices, shape (13, B, B)."""
    lab, m, B = roi.levels, roi.mask, roi.bin_count
    counts = np.zeros((len(DIRECTIONS_13), B, B), dtype=np.float64)
    for k, d in enumerate(DIRECTIONS_13):
        src, dst = _offset_slices(lab.shape, d)
        valid = m[src] & m[dst]
        gi = lab[src][valid] - 1
        gj = lab[dst][valid] - 1
        np.add.at(counts[k], (gi, gj), 1.0)
        np.add.at(counts[k], (gj, gi), 1.0)
    return counts


def glrlm_matrices(roi: DiscretizedROI) -> np.ndarray:
    """Run-length count matrices, shape (13, B, max_dim)."""
    lab, m, B = roi.levels, roi.mask, roi.bin_count
    max_len = max(lab.shape)
    counts = np.zeros((len(DIRECTIONS_13), B, max_len), dtype=np.float64)
    for k, d in enumerate(DIRECTIONS_13):
        src, dst = _offset_slices(lab.shape, d)
        same_next = np.zeros(lab.shape, dtype=bool)
        same_next[src] = m[src] & m[dst] & (lab[src] == lab[dst])
        prev_same = np.zeros(lab.shape, dtype=bool)
        prev_same[dst] = same_next[src]
        starts = np.argwhere(m & ~prev_same)
        if starts.size == 0:
            continue
        lengths = np.ones(len(starts), dtype=np.int64)
        cur = starts.copy()
        active = np.arange(len(starts))
        while active.size:
            cont = same_next[tuple(cur[active].T)]
            active = active[cont]
            cur[active] += d
            lengths[active] += 1
        grays = lab[tuple(starts.T)] - 1
        np.add.at(counts[k], (grays, lengths - 1), 1.0)
    return counts


def glszm_matrix(roi: DiscretizedROI) -> np.ndarray:
    """Size-zone count matrix over 26-connected zones, shape (B, n_voxels)."""
    lab, m, B = roi.levels, roi.mask, roi.bin_count
    counts = np.zeros((B, roi.n_voxels), dtype=np.float64)
    for level in roi.present_levels:
        labeled, n_zones = ndimage.label(m & (lab == level), structure=_STRUCT_26)
        if n_zones == 0:
            continue
        sizes = np.bincount(labeled.ravel())[1:]
        for size in sizes:
            counts[level - 1, size - 1] += 1.0
    return counts


def gldm_matrix(roi: DiscretizedROI, alpha: int = 0) -> np.ndarray:
    """Dependence count matrix, shape (B, 27); column d-1 = dependence size d."""
    lab, m, B = roi.levels, roi.mask, roi.bin_count
    dep = np.zeros(lab.shape, dtype=np.int64)
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dz in (-1, 0, 1):
                if dx == dy == dz == 0:
                    continue
                src, dst = _offset_slices(lab.shape, (dx, dy, dz))
                ok = m[src] & m[dst] & (np.abs(lab[src] - lab[dst]) <= alpha)
                dep[src] += ok
    counts = np.zeros((B, 27), dtype=np.float64)
    np.add.at(counts, (lab[m] - 1, dep[m]), 1.0)
    return counts


# ---------------------------------------------------------------------------
# GLCM features
# ---------------------------------------------------------------------------


def _glcm_single(P: np.ndarray, ivals: np.ndarray, n_levels_norm: int) -> dict[str, float]:
    p = P / P.sum()
    px = p.sum(axis=1)
    py = p.sum(axis=0)
    i = ivals[:, None]
    j = ivals[None, :]
    ux = float((px * ivals).sum())
    uy = float((py * ivals).sum())
    sigx = float(np.sqrt((px * (ivals - ux) ** 2).sum()))
    sigy = float(np.sqrt((py * (ivals - uy) ** 2).sum()))

    max_val = int(ivals.max())
    pxy = np.zeros(2 * max_val + 1)
    np.add.at(pxy, (i + j).astype(np.int64).ravel(), p.ravel())
    pxmy = np.zeros(max_val)
    np.add.at(pxmy, np.abs(i - j).astype(np.int64).ravel(), p.ravel())
    ks = np.arange(2 * max_val + 1, dtype=np.float64)
    kd = np.arange(max_val, dtype=np.float64)

    joint_entropy = entropy_bits(p.ravel())
    hx = entropy_bits(px)
    hy = entropy_bits(py)
    outer = px[:, None] * py[None, :]
    pos = (p > 0) & (outer > 0)
    hxy1 = float(-(p[pos] * np.log2(outer[pos])).sum())
    hxy2 = entropy_bits(outer.ravel())

    if len(ivals) < 2:
        correlation = 1.0
        mcc = 1.0
    else:
        denom = sigx * sigy
        cov = float((p * (i - ux) * (j - uy)).sum())
        correlation = 1.0 if denom == 0 else cov / denom
        safe_px = np.where(px > 0, px, 1.0)
        safe_py = np.where(py > 0, py, 1.0)
        Q = (p / safe_px[:, None]) @ (p / safe_py[:, None]).T
        eig = np.sort(np.real(np.linalg.eigvals(Q)))
        mcc = float(np.sqrt(max(eig[-2], 0.0)))

    da = float((kd * pxmy).sum())
    imc1_div = max(hx, hy)
    ng = float(n_levels_norm)
    return {
        "glcm_Autocorrelation": float((p * i * j).sum()),
        "glcm_ClusterProminence": float((p * (i + j - ux - uy) ** 4).sum()),
        "glcm_ClusterShade": float((p * (i + j - ux - uy) ** 3).sum()),
        "glcm_ClusterTendency": float((p * (i + j - ux - uy) ** 2).sum()),
        "glcm_Contrast": float((p * (i - j) ** 2).sum()),
        "glcm_Correlation": correlation,
        "glcm_DifferenceAverage": da,
        "glcm_DifferenceEntropy": entropy_bits(pxmy),
        "glcm_DifferenceVariance": float((pxmy * (kd - da) ** 2).sum()),
        "glcm_Id": float((pxmy / (1.0 + kd)).sum()),
        "glcm_Idm": float((pxmy / (1.0 + kd**2)).sum()),
        "glcm_Idmn": float((pxmy / (1.0 + (kd / ng) ** 2)).sum()),
        "glcm_Idn": float((pxmy / (1.0 + kd / ng)).sum()),
        "glcm_Imc1": 0.0 if imc1_div == 0 else (joint_entropy - hxy1) / imc1_div,
        "glcm_Imc2": float(np.sqrt(1.0 - np.exp(-2.0 * max(hxy2 - joint_entropy, 0.0)))),
        "glcm_InverseVariance": float((pxmy[1:] / kd[1:] ** 2).sum()) if max_val > 1 else 0.0,
        "glcm_JointAverage": ux,
        "glcm_JointEnergy": float((p**2).sum()),
        "glcm_JointEntropy": joint_entropy,
        "glcm_MCC": mcc,
        "glcm_MaximumProbability": float(p.max()),
        "glcm_SumAverage": float((ks * pxy).sum()),
        "glcm_SumEntropy": entropy_bits(pxy),
        "glcm_SumSquares": float((p * (i - ux) ** 2).sum()),
    }


def extract_glcm(roi: DiscretizedROI) -> dict[str, float]:
    counts = glcm_matrices(roi)
    present = roi.present_levels
    ivals = present.astype(np.float64)
    ng_norm = int(present.max())
    sel = np.ix_(present - 1, present - 1)
    per_dir = []
    for k in range(counts.shape[0]):
        P = counts[k][sel]
        if P.sum() == 0:
            continue
        per_dir.append(_glcm_single(P, ivals, ng_norm))
    if not per_dir:
        raise DataError("no co-occurrences: region has no voxel pairs in any direction")
    return {name: float(np.mean([d[name] for d in per_dir])) for name in GLCM_FEATURES}


# ---------------------------------------------------------------------------
# Run-length / size-zone / dependence features share a common skeleton
# ---------------------------------------------------------------------------


def _weighted_stats(P: np.ndarray, ivals: np.ndarray, jvals: np.ndarray) -> dict[str, float]:
    """Common emphasis statistics of a gray-by-size count matrix."""
    total = P.sum()
    p = P / total
    i = ivals[:, None]
    j = jvals[None, :]
    pg = p.sum(axis=1)
    ps = p.sum(axis=0)
    mu_i = float((pg * ivals).sum())
    mu_j = float((ps * jvals).sum())
    return {
        "small": float((p / j**2).sum()),
        "large": float((p * j**2).sum()),
        "low": float((p / i**2).sum()),
        "high": float((p * i**2).sum()),
        "small_low": float((p / (i**2 * j**2)).sum()),
        "small_high": float((p * i**2 / j**2).sum()),
        "large_low": float((p * j**2 / i**2).sum()),
        "large_high": float((p * i**2 * j**2).sum()),
        "gray_nonuniformity": float((P.sum(axis=1) ** 2).sum() / total),
        "gray_nonuniformity_norm": float((p.sum(axis=1) ** 2).sum()),
        "size_nonuniformity": float((P.sum(axis=0) ** 2).sum() / total),
        "size_nonuniformity_norm": float((p.sum(axis=0) ** 2).sum()),
        "gray_variance": float((p * (i - mu_i) ** 2).sum()),
        "size_variance": float((p * (j - mu_j) ** 2).sum()),
        "entropy": entropy_bits(p.ravel()),
        "total": float(total),
    }


def _trim(P: np.ndarray, present: np.ndarray):
    """Keep present gray rows and size columns up to the largest occupied one."""
    rows = P[present - 1]
    occupied = np.flatnonzero(rows.sum(axis=0) > 0)
    max_j = int(occupied.max()) + 1 if occupied.size else 1
    return rows[:, :max_j], np.arange(1, max_j + 1, dtype=np.float64)


def extract_glrlm(roi: DiscretizedROI) -> dict[str, float]:
    counts = glrlm_matrices(roi)
    present = roi.present_levels
    ivals = present.astype(np.float64)
    n_vox = roi.n_voxels
    per_dir = []
    for k in range(counts.shape[0]):
        if counts[k].sum() == 0:
            continue
        P, jvals = _trim(counts[k], present)
        s = _weighted_stats(P, ivals, jvals)
        per_dir.append(
            {
                "glrlm_GrayLevelNonUniformity": s["gray_nonuniformity"],
                "glrlm_GrayLevelNonUniformityNormalized": s["gray_nonuniformity_norm"],
                "glrlm_GrayLevelVariance": s["gray_variance"],
                "glrlm_HighGrayLevelRunEmphasis": s["high"],
                "glrlm_LongRunEmphasis": s["large"],
                "glrlm_LongRunHighGrayLevelEmphasis": s["large_high"],
                "glrlm_LongRunLowGrayLevelEmphasis": s["large_low"],
                "glrlm_LowGrayLevelRunEmphasis": s["low"],
                "glrlm_RunEntropy": s["entropy"],
                "glrlm_RunLengthNonUniformity": s["size_nonuniformity"],
                "glrlm_RunLengthNonUniformityNormalized": s["size_nonuniformity_norm"],
                "glrlm_RunPercentage": s["total"] / n_vox,
                "glrlm_RunVariance": s["size_variance"],
                "glrlm_ShortRunEmphasis": s["small"],
                "glrlm_ShortRunHighGrayLevelEmphasis": s["small_high"],
                "glrlm_ShortRunLowGrayLevelEmphasis": s["small_low"],
            }
        )
    if not per_dir:
        raise DataError("empty region: no runs")
    return {name: float(np.mean([d[name] for d in per_dir])) for name in GLRLM_FEATURES}


def extract_glszm(roi: DiscretizedROI) -> dict[str, float]:
    counts = glszm_matrix(roi)
    P, jvals = _trim(counts, roi.present_levels)
    s = _weighted_stats(P, roi.present_levels.astype(np.float64), jvals)
    return {
        "glszm_GrayLevelNonUniformity": s["gray_nonuniformity"],
        "glszm_GrayLevelNonUniformityNormalized": s["gray_nonuniformity_norm"],
        "glszm_GrayLevelVariance": s["gray_variance"],
        "glszm_HighGrayLevelZoneEmphasis": s["high"],
        "glszm_LargeAreaEmphasis": s["large"],
        "glszm_LargeAreaHighGrayLevelEmphasis": s["large_high"],
        "glszm_LargeAreaLowGrayLevelEmphasis": s["large_low"],
        "glszm_LowGrayLevelZoneEmphasis": s["low"],
        "glszm_SizeZoneNonUniformity": s["size_nonuniformity"],
        "glszm_SizeZoneNonUniformityNormalized": s["size_nonuniformity_norm"],
        "glszm_SmallAreaEmphasis": s["small"],
        "glszm_SmallAreaHighGrayLevelEmphasis": s["small_high"],
        "glszm_SmallAreaLowGrayLevelEmphasis": s["small_low"],
        "glszm_ZoneEntropy": s["entropy"],
        "glszm_ZonePercentage": s["total"] / roi.n_voxels,
        "glszm_ZoneVariance": s["size_variance"],
    }


def extract_gldm(roi: DiscretizedROI, alpha: int = 0) -> dict[str, float]:
    counts = gldm_matrix(roi, alpha=alpha)
    P, jvals = _trim(counts, roi.present_levels)
    s = _weighted_stats(P, roi.present_levels.astype(np.float64), jvals)
    return {
        "gldm_DependenceEntropy": s["entropy"],
        "gldm_DependenceNonUniformity": s["size_nonuniformity"],
        "gldm_DependenceNonUniformityNormalized": s["size_nonuniformity_norm"],
        "gldm_DependenceVariance": s["size_variance"],
        "gldm_GrayLevelNonUniformity": s["gray_nonuniformity"],
        "gldm_GrayLevelVariance": s["gray_variance"],
        "gldm_HighGrayLevelEmphasis": s["high"],
        "gldm_LargeDependenceEmphasis": s["large"],
        "gldm_LargeDependenceHighGrayLevelEmphasis": s["large_high"],
        "gldm_LargeDependenceLowGrayLevelEmphasis": s["large_low"],
        "gldm_LowGrayLevelEmphasis": s["low"],
        "gldm_SmallDependenceEmphasis": s["small"],
        "gldm_SmallDependenceHighGrayLevelEmphasis": s["small_high"],
        "gldm_SmallDependenceLowGrayLevelEmphasis": s["small_low"],
    }
