"""Feature robustness statistics: ICC, category proportions, delta-AUC, common features.

The default reliability measure is ICC(3,1): two-way mixed effects,
consistency, single measurement, treating the VOI modification operator as a
fixed second rater. The variant is recorded in every report.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .radfeat.table import FeatureTable

ICC_VARIANTS = {
    "consistency": "ICC(3,1) two-way mixed, consistency, single measurement",
    "agreement": "ICC(2,1)-form two-way, absolute agreement, single measurement",
}
ICC_VARIANT = ICC_VARIANTS["consistency"]

CATEGORIES = ("all", "shape", "firstorder", "texture")


def feature_category(name: str) -> str:
    if name.startswith("shape_"):
        return "shape"
    if name.startswith("firstorder_"):
        return "firstorder"
    return "texture"


def icc(values_a, values_b, variant: str = "consistency") -> float:
    """Single-measurement ICC between two raters over matched subjects.

    Default 'consistency' is ICC(3,1): (MS_R - MS_E) / (MS_R + (k-1) MS_E)
    from the two-way ANOVA decomposition with k = 2 raters; 'agreement' adds
    the rater variance term to the denominator. Returns NaN when
    between-subject variance is zero (undefined).
    """
    if variant not in ICC_VARIANTS:
        raise DataError(f"unknown ICC variant {variant!r}")
    a = np.asarray(values_a, dtype=np.float64)
    b = np.asarray(values_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DataError("rater value arrays must be 1D and the same length")
    n = len(a)
    if n < 3:
        raise DataError(f"ICC needs at least 3 subjects, got {n}")
    data = np.stack([a, b], axis=1)
    k = 2

    grand = data.mean()
    subject_means = data.mean(axis=1)
    rater_means = data.mean(axis=0)
    if np.allclose(subject_means, subject_means[0], rtol=0.0, atol=0.0):
        return float("nan")

    ms_rows = k * ((subject_means - grand) ** 2).sum() / (n - 1)
    ms_cols = n * ((rater_means - grand) ** 2).sum() / (k - 1)
    residual = data - subject_means[:, None] - rater_means[None, :] + grand
    ms_err = (residual**2).sum() / ((n - 1) * (k - 1))

    denom = ms_rows + (k - 1) * ms_err
    if variant == "agreement":
        denom += k * (ms_cols - ms_err) / n
    if denom == 0.0:
        return float("nan")
    return float((ms_rows - ms_err) / denom)


@dataclass
class ICCReport:
    """Per-feature ICC values for one VOI modification."""

    modification_id: str
    feature_names: list[str]
    values: np.ndarray  # (n_features,), NaN where undefined
    variant: str = ICC_VARIANT

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if len(self.values) != len(self.feature_names):
            raise DataError("one ICC value per feature required")

    @property
    def flags(self) -> list[str]:
        return ["zero_between_subject_variance" if np.isnan(v) else "" for v in self.values]

    def category_mask(self, group: str) -> np.ndarray:
        if group == "all":
            return np.ones(len(self.feature_names), dtype=bool)
        return np.array([feature_category(n) == group for n in self.feature_names])

    def value_of(self, name: str) -> float:
        return float(self.values[self.feature_names.index(name)])


def robustness_report(
    baseline: FeatureTable,
    modified: FeatureTable,
    modification_id: str,
    variant: str = "consistency",
) -> ICCReport:
    """One ICC per feature between baseline and modified-VOI feature tables."""
    if baseline.subject_ids != modified.subject_ids:
        raise DataError("baseline and modified tables must cover the same subjects in order")
    if baseline.feature_names != modified.feature_names:
        raise DataError("baseline and modified tables must share the feature schema")
    values = np.array(
        [
            icc(baseline.matrix[:, j], modified.matrix[:, j], variant)
            for j in range(len(baseline.feature_names))
        ]
    )
    return ICCReport(
        modification_id=modification_id,
        feature_names=list(baseline.feature_names),
        values=values,
        variant=ICC_VARIANTS[variant],
    )


def proportion_above(report: ICCReport, threshold: float = 0.9, group: str = "all") -> float:
    """Percentage of the group's features with ICC strictly above the threshold.

    NaN (undefined) ICCs are excluded from the denominator. Returns the
    unrounded percentage; table renderers round for display.
    """
    if group not in CATEGORIES:
        raise DataError(f"unknown group {group!r}")
    mask = report.category_mask(group)
    vals = report.values[mask]
    vals = vals[~np.isnan(vals)]
    if vals.size == 0:
        raise DataError(f"group {group!r} has no defined ICC values")
    return float(100.0 * (vals > threshold).sum() / vals.size)


@dataclass
class DeltaAUC:
    """Percentage change of AUC relative to the original-VOI baseline."""

    auc1: float
    auc2: float
    delta_pct: float = field(init=False)

    def __post_init__(self):
        if self.auc1 <= 0:
            raise DataError(f"baseline AUC must be positive, got {self.auc1}")
        self.delta_pct = (self.auc2 - self.auc1) / self.auc1 * 100.0


def delta_auc(auc1: float, auc2: float) -> DeltaAUC:
    return DeltaAUC(auc1=auc1, auc2=auc2)


@dataclass
class CommonFeatureFraction:
    """Fraction of baseline-selected features still selected after a modification."""

    baseline_features: frozenset
    modified_features: frozenset
    n_common: int = field(init=False)
    f_c_pct: float = field(init=False)

    def __post_init__(self):
        self.baseline_features = frozenset(self.baseline_features)
        self.modified_features = frozenset(self.modified_features)
        if not self.baseline_features:
            raise DataError("baseline feature set is empty")
        self.n_common = len(self.baseline_features & self.modified_features)
        self.f_c_pct = 100.0 * self.n_common / len(self.baseline_features)


def common_fraction(baseline_set, modified_set) -> CommonFeatureFraction:
    return CommonFeatureFraction(frozenset(baseline_set), frozenset(modified_set))


def average_icc(report: ICCReport, feature_names) -> float:
    """Mean ICC over a set of features (NaNs excluded)."""
    vals = np.array([report.value_of(n) for n in feature_names])
    vals = vals[~np.isnan(vals)]
    if vals.size == 0:
        return float("nan")
    return float(vals.mean())
