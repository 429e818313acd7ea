"""Classifiers, stratified splitting/CV, hyperparameter search, ensemble evaluation.

Both models are linear scorers: p(y=1|x) = sigmoid(w.x + b). The elastic-net
logistic regression is fit by proximal gradient descent with a majorizing step
(monotone objective decrease per epoch); shrinkage LDA is closed-form via the
eigendecomposition of the shrunk pooled covariance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import DataError

LOGREG_TOL = 1e-6
LOGREG_MAX_EPOCHS = 10000


@dataclass
class ModelSpec:
    """Classifier family plus hyperparameters."""

    kind: str  # 'lr' | 'lda'
    C: float = 1.0
    l1_ratio: float = 0.5
    shrinkage: float = 0.5

    def __post_init__(self):
        if self.kind not in ("lr", "lda"):
            raise DataError(f"unknown model kind {self.kind!r}")
        if self.C <= 0:
            raise DataError("C must be positive")
        if not 0.0 <= self.l1_ratio <= 1.0:
            raise DataError("l1_ratio must lie in [0, 1]")
        if not 0.0 <= self.shrinkage <= 1.0:
            raise DataError("shrinkage must lie in [0, 1]")

    def fit(self, X, y) -> "LinearModel":
        if self.kind == "lr":
            return fit_logreg_elasticnet(X, y, C=self.C, l1_ratio=self.l1_ratio)
        return fit_lda_shrinkage(X, y, shrinkage=self.shrinkage)

    def with_params(self, **kw) -> "ModelSpec":
        merged = {
            "kind": self.kind,
            "C": self.C,
            "l1_ratio": self.l1_ratio,
            "shrinkage": self.shrinkage,
        }
        merged.update(kw)
        return ModelSpec(**merged)


@dataclass
class LinearModel:
    """Fitted linear scorer: probability = sigmoid(X @ weights + intercept)."""

    weights: np.ndarray
    intercept: float
    kind: str
    objective_trace: list[float] = field(default_factory=list, repr=False)

    def decision(self, X) -> np.ndarray:
        return np.asarray(X) @ self.weights + self.intercept

    def predict_proba(self, X) -> np.ndarray:
        return _sigmoid(self.decision(X))


def _sigmoid(z):
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _log1p_exp(z):
    # log(1 + exp(z)) without overflow
    return np.where(z > 0, z + np.log1p(np.exp(-np.abs(z))), np.log1p(np.exp(np.minimum(z, 0))))


def balanced_weights(y: np.ndarray) -> np.ndarray:
    """Per-sample weights n / (2 * n_class)."""
    n = len(y)
    n_pos = int(y.sum())
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("both classes must be present")
    w = np.where(y == 1, n / (2.0 * n_pos), n / (2.0 * n_neg))
    return w


def fit_logreg_elasticnet(
    X,
    y,
    C: float = 1.0,
    l1_ratio: float = 0.5,
    tol: float = LOGREG_TOL,
    max_epochs: int = LOGREG_MAX_EPOCHS,
) -> LinearModel:
    """Minimize balanced logistic loss + (1/C)(l1_ratio ||w||_1 + (1-l1_ratio) ||w||^2 / 2).

    Proximal gradient descent with step 1/L, L bounding the curvature of the
    smooth part, so the objective decreases monotonically. Converges when the
    largest coefficient change drops below ``tol`` or after ``max_epochs``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if not np.all(np.isfinite(X)):
        raise DataError("non-finite values in feature matrix")
    n, p = X.shape
    s = balanced_weights(y)
    lam1 = l1_ratio / C
    lam2 = (1.0 - l1_ratio) / C

    # curvature bound of the smooth part: logistic Hessian <= 1/4 per sample
    Xa = np.concatenate([X, np.ones((n, 1))], axis=1)
    gram = (Xa * s[:, None]).T @ Xa / 4.0
    L = float(np.linalg.eigvalsh(gram)[-1]) + lam2
    step = 1.0 / max(L, 1e-12)

    def objective(v):
        z = X @ v[:p] + v[p]
        loss = float((s * (_log1p_exp(z) - y * z)).sum())
        return loss + 0.5 * lam2 * float(v[:p] @ v[:p]) + lam1 * float(np.abs(v[:p]).sum())

    def prox_step(v):
        z = X @ v[:p] + v[p]
        resid = s * (_sigmoid(z) - y)
        grad = np.empty(p + 1)
        grad[:p] = X.T @ resid + lam2 * v[:p]
        grad[p] = resid.sum()
        out = v - step * grad
        if lam1 > 0:
            out[:p] = np.sign(out[:p]) * np.maximum(np.abs(out[:p]) - step * lam1, 0.0)
        return out

    # FISTA with adaptive restart: accelerated steps are kept only when they
    # decrease the objective, otherwise a plain majorizing step from the last
    # accepted point is taken (monotone trace by construction).
    x = np.zeros(p + 1)
    y_acc = x
    t = 1.0
    obj_x = objective(x)
    trace = [obj_x]
    for _ in range(max_epochs):
        cand = prox_step(y_acc)
        obj_c = objective(cand)
        if obj_c > obj_x:
            cand = prox_step(x)
            obj_c = objective(cand)
            t = 1.0
        delta = float(np.abs(cand - x).max(initial=0.0))
        t_next = (1.0 + np.sqrt(1.0 + 4.0 * t * t)) / 2.0
        y_acc = cand + ((t - 1.0) / t_next) * (cand - x)
        x, obj_x, t = cand, obj_c, t_next
        trace.append(obj_x)
        if delta < tol:
            break
    return LinearModel(weights=x[:p], intercept=float(x[p]), kind="lr", objective_trace=trace)


def fit_lda_shrinkage(X, y, shrinkage: float = 0.5) -> LinearModel:
    """LDA on the shrunk pooled covariance (1-l)S + l (tr S / p) I, eigen solver.

    The returned intercept includes the log prior odds, so predict_proba is the
    Gaussian posterior under the shared-covariance model.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if not np.all(np.isfinite(X)):
        raise DataError("non-finite values in feature matrix")
    n, p = X.shape
    n1 = int(y.sum())
    n0 = n - n1
    if n0 == 0 or n1 == 0:
        raise DataError("both classes must be present")
    mu0 = X[y == 0].mean(axis=0)
    mu1 = X[y == 1].mean(axis=0)

    scatter = np.zeros((p, p))
    for cls, mu in ((0, mu0), (1, mu1)):
        d = X[y == cls] - mu
        scatter += d.T @ d
    pooled = scatter / max(n - 2, 1)
    target = np.trace(pooled) / p * np.eye(p)
    sigma = (1.0 - shrinkage) * pooled + shrinkage * target

    eigval, eigvec = np.linalg.eigh(sigma)
    if eigval[-1] <= 0 or eigval[0] <= 1e-12 * eigval[-1]:
        raise DataError("singular covariance: use shrinkage > 0")
    diff = mu1 - mu0
    w = eigvec @ ((eigvec.T @ diff) / eigval)
    b = -0.5 * float(w @ (mu0 + mu1)) + float(np.log(n1 / n0))
    return LinearModel(weights=w, intercept=b, kind="lda")


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC with half credit for ties."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC needs both classes")
    ranks = rankdata(scores)
    pos_sum = float(ranks[labels == 1].sum())
    return (pos_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def sensitivity_specificity(probs, labels, threshold: float = 0.5) -> tuple[float, float]:
    probs = np.asarray(probs)
    labels = np.asarray(labels)
    pred = probs >= threshold
    pos = labels == 1
    neg = ~pos
    se = float((pred & pos).sum() / pos.sum()) if pos.any() else float("nan")
    sp = float((~pred & neg).sum() / neg.sum()) if neg.any() else float("nan")
    return se, sp


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------


def stratified_split(labels, ratio: float = 0.8, seed: int = 0):
    """Seeded stratified train/test index split; class counts within 1 of proportional."""
    labels = np.asarray(labels, dtype=np.int64)
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for cls in (0, 1):
        members = np.flatnonzero(labels == cls)
        if len(members) < 2:
            raise DataError(f"class {cls} has fewer than 2 subjects")
        members = rng.permutation(members)
        n_test = int(np.floor(len(members) * (1.0 - ratio) + 0.5))
        n_test = min(max(n_test, 1), len(members) - 1)
        test_idx.extend(members[:n_test])
        train_idx.extend(members[n_test:])
    return np.sort(np.array(train_idx)), np.sort(np.array(test_idx))


def stratified_kfold(labels, k: int = 5, seed: int = 0):
    """Seeded stratified k-fold: returns k disjoint validation index arrays."""
    labels = np.asarray(labels, dtype=np.int64)
    folds: list[list[int]] = [[] for _ in range(k)]
    rng = np.random.default_rng(seed)
    for cls in (0, 1):
        members = np.flatnonzero(labels == cls)
        if len(members) < k:
            raise DataError(f"class {cls} smaller than k={k}")
        members = rng.permutation(members)
        for pos, idx in enumerate(members):
            folds[pos % k].append(int(idx))
    return [np.sort(np.array(f)) for f in folds]


# ---------------------------------------------------------------------------
# Standardization, tuning, ensembles
# ---------------------------------------------------------------------------


def standardize_stats(X) -> tuple[np.ndarray, np.ndarray]:
    """Per-feature mean and std; zero stds become 1 so constant features map to 0."""
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std == 0, 1.0, std)
    return mean, std


def apply_stats(X, stats):
    mean, std = stats
    return (X - mean) / std


def tune_hyperparams(X, y, kind: str, folds, budget: int = 50, seed: int = 0) -> dict:
    """Seeded random search maximizing mean CV AUC.

    Samples C log-uniform on [1e-3, 1e3] and l1_ratio uniform for 'lr';
    shrinkage uniform for 'lda'. Deterministic per seed; ties keep the earliest
    sampled point.
    """
    if budget < 1:
        raise DataError("budget must be >= 1")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    rng = np.random.default_rng(seed)
    all_idx = np.arange(len(y))
    best: tuple[float, int, dict] | None = None
    for trial in range(budget):
        if kind == "lr":
            params = {
                "C": float(10.0 ** rng.uniform(-3, 3)),
                "l1_ratio": float(rng.uniform(0, 1)),
            }
        else:
            params = {"shrinkage": float(rng.uniform(0, 1))}
        spec = ModelSpec(kind=kind, **params)
        aucs = []
        for val_idx in folds:
            tr_idx = np.setdiff1d(all_idx, val_idx)
            stats = standardize_stats(X[tr_idx])
            model = spec.fit(apply_stats(X[tr_idx], stats), y[tr_idx])
            aucs.append(roc_auc(model.decision(apply_stats(X[val_idx], stats)), y[val_idx]))
        score = float(np.mean(aucs))
        if best is None or score > best[0]:
            best = (score, trial, params)
    return {"params": best[2], "cv_auc": best[0], "kind": kind}


@dataclass
class EvalReport:
    """AUC / sensitivity / specificity, mean and std across the k models."""

    split: str
    auc_mean: float
    auc_std: float
    se_mean: float
    se_std: float
    sp_mean: float
    sp_std: float

    def as_dict(self) -> dict:
        return {
            "split": self.split,
            "auc_mean": self.auc_mean,
            "auc_std": self.auc_std,
            "se_mean": self.se_mean,
            "se_std": self.se_std,
            "sp_mean": self.sp_mean,
            "sp_std": self.sp_std,
        }


@dataclass
class FittedEnsemble:
    """k fold models, each paired with its own training-fold standardization stats."""

    models: list[LinearModel]
    fold_stats: list[tuple[np.ndarray, np.ndarray]]
    val_folds: list[np.ndarray]
    feature_names: list[str]
    spec: ModelSpec
    seed: int

    @property
    def k(self) -> int:
        return len(self.models)


def fit_ensemble(X, y, feature_names, spec: ModelSpec, folds, seed: int = 0) -> tuple[FittedEnsemble, EvalReport]:
    """Fit one model per CV fold and report validation-fold AUC/SE/SP (mean +- std)."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    all_idx = np.arange(len(y))
    models, stats_list, aucs, ses, sps = [], [], [], [], []
    for val_idx in folds:
        tr_idx = np.setdiff1d(all_idx, val_idx)
        stats = standardize_stats(X[tr_idx])
        model = spec.fit(apply_stats(X[tr_idx], stats), y[tr_idx])
        probs = model.predict_proba(apply_stats(X[val_idx], stats))
        aucs.append(roc_auc(probs, y[val_idx]))
        se, sp = sensitivity_specificity(probs, y[val_idx])
        ses.append(se)
        sps.append(sp)
        models.append(model)
        stats_list.append(stats)
    ensemble = FittedEnsemble(
        models=models,
        fold_stats=stats_list,
        val_folds=[np.asarray(f) for f in folds],
        feature_names=list(feature_names),
        spec=spec,
        seed=seed,
    )
    report = EvalReport(
        split="train-CV",
        auc_mean=float(np.mean(aucs)),
        auc_std=float(np.std(aucs)),
        se_mean=float(np.mean(ses)),
        se_std=float(np.std(ses)),
        sp_mean=float(np.mean(sps)),
        sp_std=float(np.std(sps)),
    )
    return ensemble, report


def evaluate_ensemble(ensemble: FittedEnsemble, X_test, y_test, feature_names=None) -> EvalReport:
    """Score the test set with every fold model using its saved training statistics."""
    if feature_names is not None and list(feature_names) != ensemble.feature_names:
        raise DataError("test feature names/order do not match the ensemble")
    X_test = np.asarray(X_test, dtype=np.float64)
    y_test = np.asarray(y_test, dtype=np.int64)
    aucs, ses, sps = [], [], []
    for model, stats in zip(ensemble.models, ensemble.fold_stats):
        probs = model.predict_proba(apply_stats(X_test, stats))
        aucs.append(roc_auc(probs, y_test))
        se, sp = sensitivity_specificity(probs, y_test)
        ses.append(se)
        sps.append(sp)
    return EvalReport(
        split="test",
        auc_mean=float(np.mean(aucs)),
        auc_std=float(np.std(aucs)),
        se_mean=float(np.mean(ses)),
        se_std=float(np.std(ses)),
        sp_mean=float(np.mean(sps)),
        sp_std=float(np.std(sps)),
    )


def cv_validation_eval(ensemble: FittedEnsemble, X, y) -> EvalReport:
    """Evaluate each fold model on its own validation fold of (possibly new) features.

    Used by the fixed-model scenario to recompute the train-CV score after the
    validation-fold features were re-extracted from perturbed masks.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    aucs, ses, sps = [], [], []
    for model, stats, val_idx in zip(ensemble.models, ensemble.fold_stats, ensemble.val_folds):
        probs = model.predict_proba(apply_stats(X[val_idx], stats))
        aucs.append(roc_auc(probs, y[val_idx]))
        se, sp = sensitivity_specificity(probs, y[val_idx])
        ses.append(se)
        sps.append(sp)
    return EvalReport(
        split="train-CV",
        auc_mean=float(np.mean(aucs)),
        auc_std=float(np.std(aucs)),
        se_mean=float(np.mean(ses)),
        se_std=float(np.std(ses)),
        sp_mean=float(np.mean(sps)),
        sp_std=float(np.std(sps)),
    )
