"""Two-stage feature selection.

Stage I filters redundant features per fold of a stratified 5-fold loop: any
feature correlated (|Spearman| > r_c) with others survives only if its
univariate score is at least that of every correlated partner; uncorrelated
features always survive. The fold results are unioned into f_B.

Stage II runs up to nine selectors (F-Score, Relief, MI, Gini, LASSO, GA, SBS,
SFS, RFE) over f_B; each (selector, classifier) pair is scored by stratified
CV AUC and the best pair defines f_C, with f_C <= f_B <= f_A guaranteed.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata
from sklearn.ensemble import RandomForestClassifier

from .errors import ConfigError, DataError
from .learn import (
    ModelSpec,
    apply_stats,
    fit_logreg_elasticnet,
    roc_auc,
    standardize_stats,
    stratified_kfold,
)

STAGE2_METHODS = ("FScore", "Relief", "MI", "Gini", "LASSO", "GA", "SBS", "SFS", "RFE")


@dataclass
class SelectionConfig:
    """Hyperparameters of the two-stage selection."""

    r_c: float = 0.9
    k_folds: int = 5
    stage2_methods: tuple[str, ...] = STAGE2_METHODS
    seed: int = 0
    relief_neighbors: int = 10
    mi_bins: int = 10
    gini_trees: int = 200
    ga_population: int = 30
    ga_generations: int = 25
    ga_mutation: float = 0.05
    rfe_step: int = 1
    max_filter_size: int = 15
    wrapper_tol: float = 1e-4
    lasso_grid: tuple[float, ...] = tuple(float(c) for c in np.logspace(-2, 2, 9))

    def __post_init__(self):
        if not 0.0 < self.r_c <= 1.0:
            raise ConfigError(f"r_c must lie in (0, 1], got {self.r_c}")
        if self.k_folds < 2:
            raise ConfigError("k_folds must be >= 2")
        unknown = set(self.stage2_methods) - set(STAGE2_METHODS)
        if unknown:
            raise ConfigError(f"unknown stage-II methods: {sorted(unknown)}")


@dataclass
class SelectionEntry:
    """One (method, classifier) cell of the stage-II grid."""

    method: str
    classifier: str
    features: list[str]
    cv_auc: float
    fold_aucs: list[float]
    flag: str = ""


@dataclass
class SelectionResult:
    """f_A > f_B > f_C with the winning selector and the top-3 grid entries."""

    f_A: list[str]
    f_B: list[str]
    f_C: list[str]
    method_name: str
    classifier_name: str
    cv_auc: float
    top3: list[SelectionEntry]
    fold_f_B: list[list[str]]
    r_c: float
    seed: int
    flags: list[str] = field(default_factory=list)
    grid: list[SelectionEntry] = field(default_factory=list)  # all (method, classifier) cells

    def __post_init__(self):
        set_a, set_b, set_c = set(self.f_A), set(self.f_B), set(self.f_C)
        if not set_c <= set_b <= set_a:
            raise DataError("selection invariant violated: f_C <= f_B <= f_A")
        if not self.f_C:
            raise DataError("empty final feature set")


# ---------------------------------------------------------------------------
# Stage I
# ---------------------------------------------------------------------------


def spearman_matrix(X) -> np.ndarray:
    """Absolute Spearman correlation between feature columns (average-rank ties).

    Constant features get correlation 0 against everything (with a warning);
    the diagonal is always 1.
    """
    X = np.asarray(X, dtype=np.float64)
    n, p = X.shape
    if n < 3:
        raise DataError("need at least 3 subjects for correlations")
    ranks = np.column_stack([rankdata(X[:, j]) for j in range(p)])
    std = ranks.std(axis=0)
    constant = std == 0
    if constant.any():
        warnings.warn(
            f"{int(constant.sum())} constant feature(s): correlation treated as 0",
            stacklevel=2,
        )
    centered = ranks - ranks.mean(axis=0)
    safe_std = np.where(constant, 1.0, std)
    normed = centered / safe_std
    corr = np.abs(normed.T @ normed / n)
    corr[constant, :] = 0.0
    corr[:, constant] = 0.0
    np.fill_diagonal(corr, 1.0)
    return np.clip(corr, 0.0, 1.0)


def univariate_score(feature_column, labels) -> float:
    """Orientation-corrected single-feature ROC AUC: max(AUC, 1 - AUC)."""
    auc = roc_auc(feature_column, labels)
    return max(auc, 1.0 - auc)


def _stage1_one_fold(X, y, r_c: float) -> np.ndarray:
    """Apply the correlation-cutoff-with-rescue rule on one fold's training part."""
    corr = spearman_matrix(X)
    p = X.shape[1]
    linked = corr > r_c
    np.fill_diagonal(linked, False)
    has_partner = linked.any(axis=1)
    scores = np.array([univariate_score(X[:, j], y) for j in range(p)])

    keep = np.zeros(p, dtype=bool)
    keep[~has_partner] = True  # uncorrelated features always survive
    for i in np.flatnonzero(has_partner):
        partners = np.flatnonzero(linked[i])
        s, sp = scores[i], scores[partners]
        # survive if no partner scores strictly higher, and every equal-scoring
        # partner has a larger column index (deterministic tie-break)
        if (s > sp).all() or ((s >= sp).all() and (partners[sp == s] > i).all()):
            keep[i] = True
    return keep


def stage1_ufs(X, y, feature_names, config: SelectionConfig):
    """Run the Stage-I rule inside each CV fold and union the survivors into f_B."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.shape[1] == 0:
        raise DataError("empty feature table")
    folds = stratified_kfold(y, k=config.k_folds, seed=config.seed)
    all_idx = np.arange(len(y))
    union = np.zeros(X.shape[1], dtype=bool)
    per_fold: list[list[str]] = []
    for val_idx in folds:
        tr_idx = np.setdiff1d(all_idx, val_idx)
        keep = _stage1_one_fold(X[tr_idx], y[tr_idx], config.r_c)
        union |= keep
        per_fold.append([feature_names[j] for j in np.flatnonzero(keep)])
    f_B = [feature_names[j] for j in np.flatnonzero(union)]
    return f_B, per_fold


# ---------------------------------------------------------------------------
# CV scoring shared by all stage-II selectors
# ---------------------------------------------------------------------------


class CVScorer:
    """Memoized stratified-CV AUC of a classifier on feature subsets.

    Fold standardization statistics are computed once on the full candidate
    matrix; column slicing then reuses them, keeping fold scaling leak-free and
    cheap for wrapper searches.
    """

    def __init__(self, X, y, spec: ModelSpec, k_folds: int, seed: int):
        self.X = np.asarray(X, dtype=np.float64)
        self.y = np.asarray(y, dtype=np.int64)
        self.spec = spec
        self.folds = stratified_kfold(self.y, k=k_folds, seed=seed)
        all_idx = np.arange(len(self.y))
        self.train_parts = [np.setdiff1d(all_idx, v) for v in self.folds]
        self.fold_std = []
        for tr in self.train_parts:
            stats = standardize_stats(self.X[tr])
            self.fold_std.append(apply_stats(self.X, stats))
        self._cache: dict[tuple[int, ...], tuple[float, list[float]]] = {}

    def score(self, cols) -> tuple[float, list[float]]:
        key = tuple(sorted(int(c) for c in cols))
        if not key:
            return 0.0, []
        if key in self._cache:
            return self._cache[key]
        cols_arr = np.asarray(key)
        aucs = []
        for tr, val, Xs in zip(self.train_parts, self.folds, self.fold_std):
            model = self.spec.fit(Xs[np.ix_(tr, cols_arr)], self.y[tr])
            aucs.append(roc_auc(model.decision(Xs[np.ix_(val, cols_arr)]), self.y[val]))
        result = (float(np.mean(aucs)), [float(a) for a in aucs])
        self._cache[key] = result
        return result


# ---------------------------------------------------------------------------
# Stage-II scoring functions (filters)
# ---------------------------------------------------------------------------


def fscore_ranking(X, y) -> np.ndarray:
    """One-way ANOVA F statistic per feature."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n = len(y)
    mu = X.mean(axis=0)
    scores = np.zeros(X.shape[1])
    ss_between = np.zeros(X.shape[1])
    ss_within = np.zeros(X.shape[1])
    for cls in (0, 1):
        sel = X[y == cls]
        ss_between += len(sel) * (sel.mean(axis=0) - mu) ** 2
        ss_within += ((sel - sel.mean(axis=0)) ** 2).sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        scores = (n - 2) * ss_between / ss_within
    scores[np.isnan(scores)] = 0.0  # constant features
    return scores


def relief_scores(X, y, n_neighbors: int = 10) -> np.ndarray:
    """ReliefF weights with range-normalized feature differences."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n, p = X.shape
    span = X.max(axis=0) - X.min(axis=0)
    span = np.where(span == 0, 1.0, span)
    Xn = (X - X.min(axis=0)) / span
    weights = np.zeros(p)
    for i in range(n):
        diffs = np.abs(Xn - Xn[i])
        dist = diffs.sum(axis=1)
        dist[i] = np.inf
        order = np.argsort(dist, kind="stable")
        hits = [j for j in order if y[j] == y[i]][:n_neighbors]
        misses = [j for j in order if y[j] != y[i]][:n_neighbors]
        if hits:
            weights -= diffs[hits].mean(axis=0)
        if misses:
            weights += diffs[misses].mean(axis=0)
    return weights / n


def mutual_information_scores(X, y, bins: int = 10) -> np.ndarray:
    """Discrete MI between rank-binned features and the binary label."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    n, p = X.shape
    out = np.zeros(p)
    py = np.array([(y == 0).mean(), (y == 1).mean()])
    for j in range(p):
        ranks = rankdata(X[:, j], method="average")
        q = np.ceil(ranks * bins / n).astype(np.int64)
        q = np.clip(q, 1, bins)
        mi = 0.0
        for bin_id in np.unique(q):
            sel = q == bin_id
            px = sel.mean()
            for cls in (0, 1):
                pxy = (sel & (y == cls)).mean()
                if pxy > 0:
                    mi += pxy * np.log(pxy / (px * py[cls]))
        out[j] = mi
    return out


def gini_scores(X, y, n_trees: int = 200, seed: int = 0) -> np.ndarray:
    """Impurity importances from a seeded random-forest surrogate."""
    forest = RandomForestClassifier(n_estimators=n_trees, random_state=seed, n_jobs=1)
    forest.fit(np.asarray(X), np.asarray(y))
    return forest.feature_importances_


# ---------------------------------------------------------------------------
# Stage-II selectors
# ---------------------------------------------------------------------------


def _ranked_prefix_select(ranking: np.ndarray, scorer: CVScorer, max_size: int):
    """Scan top-m prefixes of a ranking, keep the m maximizing CV AUC (ties: smaller m)."""
    order = np.argsort(-ranking, kind="stable")
    best = None
    for m in range(1, min(max_size, len(order)) + 1):
        cols = order[:m]
        auc, fold_aucs = scorer.score(cols)
        if best is None or auc > best[0] + 1e-12:
            best = (auc, list(cols), fold_aucs)
    return best[1], best[0], best[2]


def _lasso_support(X, y, config: SelectionConfig, k_folds: int, seed: int):
    """Pick C by CV AUC of the l1-regularized model, keep nonzero coefficients."""
    folds = stratified_kfold(y, k=k_folds, seed=seed)
    all_idx = np.arange(len(y))
    best = None
    for C in config.lasso_grid:
        aucs = []
        for val_idx in folds:
            tr_idx = np.setdiff1d(all_idx, val_idx)
            stats = standardize_stats(X[tr_idx])
            model = fit_logreg_elasticnet(apply_stats(X[tr_idx], stats), y[tr_idx], C=C, l1_ratio=1.0)
            aucs.append(roc_auc(model.decision(apply_stats(X[val_idx], stats)), y[val_idx]))
        mean_auc = float(np.mean(aucs))
        if best is None or mean_auc > best[0] + 1e-12:
            best = (mean_auc, C)
    stats = standardize_stats(X)
    model = fit_logreg_elasticnet(apply_stats(X, stats), y, C=best[1], l1_ratio=1.0)
    return list(np.flatnonzero(np.abs(model.weights) > 0))


def _ga_select(scorer: CVScorer, n_features: int, config: SelectionConfig, seed: int):
    """Genetic search: tournament selection, uniform crossover, bit-flip mutation."""
    rng = np.random.default_rng(seed)
    pop_size = config.ga_population
    p_on = min(0.5, max(2.0 / n_features, 0.1))
    pop = rng.random((pop_size, n_features)) < p_on
    for row in pop:
        if not row.any():
            row[rng.integers(n_features)] = True

    def fitness(mask):
        return scorer.score(np.flatnonzero(mask))[0]

    fits = np.array([fitness(ind) for ind in pop])
    best_mask = pop[np.argmax(fits)].copy()
    best_fit = float(fits.max())
    for _ in range(config.ga_generations):
        children = []
        elite = pop[np.argmax(fits)].copy()
        children.append(elite)
        while len(children) < pop_size:
            idx_a = rng.integers(pop_size, size=3)
            idx_b = rng.integers(pop_size, size=3)
            pa = pop[idx_a[np.argmax(fits[idx_a])]]
            pb = pop[idx_b[np.argmax(fits[idx_b])]]
            cross = rng.random(n_features) < 0.5
            child = np.where(cross, pa, pb)
            flips = rng.random(n_features) < config.ga_mutation
            child = child ^ flips
            if not child.any():
                child[rng.integers(n_features)] = True
            children.append(child)
        pop = np.array(children)
        fits = np.array([fitness(ind) for ind in pop])
        gen_best = int(np.argmax(fits))
        if fits[gen_best] > best_fit:
            best_fit = float(fits[gen_best])
            best_mask = pop[gen_best].copy()
    return list(np.flatnonzero(best_mask))


def _sfs_select(scorer: CVScorer, n_features: int, config: SelectionConfig):
    selected: list[int] = []
    remaining = list(range(n_features))
    current_auc = 0.0
    while remaining and len(selected) < min(config.max_filter_size, n_features):
        trials = [(scorer.score(selected + [j])[0], j) for j in remaining]
        best_auc, best_j = max(trials, key=lambda t: (t[0], -t[1]))
        if selected and best_auc <= current_auc + config.wrapper_tol:
            break
        selected.append(best_j)
        remaining.remove(best_j)
        current_auc = best_auc
    return selected


def _sbs_select(scorer: CVScorer, n_features: int, config: SelectionConfig):
    selected = list(range(n_features))
    current_auc = scorer.score(selected)[0]
    while len(selected) > 1:
        trials = []
        for j in selected:
            reduced = [c for c in selected if c != j]
            trials.append((scorer.score(reduced)[0], j))
        best_auc, drop_j = max(trials, key=lambda t: (t[0], -t[1]))
        if best_auc <= current_auc + config.wrapper_tol:
            break
        selected = [c for c in selected if c != drop_j]
        current_auc = best_auc
    return selected


def _rfe_select(X, y, scorer: CVScorer, spec: ModelSpec, config: SelectionConfig):
    """Recursive elimination on absolute coefficients, best CV-AUC subset wins."""
    stats = standardize_stats(X)
    Xs = apply_stats(X, stats)
    current = list(range(X.shape[1]))
    best = None
    while current:
        auc, _ = scorer.score(current)
        size = len(current)
        if best is None or auc > best[0] + 1e-12 or (abs(auc - best[0]) <= 1e-12 and size < best[1]):
            best = (auc, size, list(current))
        if size == 1:
            break
        model = spec.fit(Xs[:, current], y)
        ranks = np.abs(model.weights)
        for _ in range(min(config.rfe_step, size - 1)):
            drop_pos = int(np.argmin(ranks))
            ranks = np.delete(ranks, drop_pos)
            current.pop(drop_pos)
    return best[2]


_METHOD_SEED_OFFSET = {name: i + 1 for i, name in enumerate(STAGE2_METHODS)}


def stage2_select(
    method: str,
    X_fB,
    y,
    names_fB,
    classifier: ModelSpec,
    config: SelectionConfig,
    scorer: CVScorer | None = None,
) -> SelectionEntry:
    """Run one stage-II selector over the f_B matrix; falls back to the single
    best univariate feature (flagged) when a method selects nothing."""
    if method not in STAGE2_METHODS:
        raise ConfigError(f"unknown stage-II method {method!r}")
    X_fB = np.asarray(X_fB, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X_fB.shape[1] == 0:
        raise DataError("f_B is empty")
    if scorer is None:
        scorer = CVScorer(X_fB, y, classifier, config.k_folds, config.seed)
    n = X_fB.shape[1]
    seed = config.seed * 1000 + _METHOD_SEED_OFFSET[method]
    flag = ""

    if method in ("FScore", "Relief", "MI", "Gini"):
        if method == "FScore":
            ranking = fscore_ranking(X_fB, y)
        elif method == "Relief":
            ranking = relief_scores(X_fB, y, config.relief_neighbors)
        elif method == "MI":
            ranking = mutual_information_scores(X_fB, y, config.mi_bins)
        else:
            ranking = gini_scores(X_fB, y, config.gini_trees, seed)
        cols, _, _ = _ranked_prefix_select(ranking, scorer, config.max_filter_size)
    elif method == "LASSO":
        cols = _lasso_support(X_fB, y, config, config.k_folds, config.seed)
    elif method == "GA":
        cols = _ga_select(scorer, n, config, seed)
    elif method == "SFS":
        cols = _sfs_select(scorer, n, config)
    elif method == "SBS":
        cols = _sbs_select(scorer, n, config)
    else:  # RFE
        cols = _rfe_select(X_fB, y, scorer, classifier, config)

    if not cols:
        scores = np.array([univariate_score(X_fB[:, j], y) for j in range(n)])
        cols = [int(np.argmax(scores))]
        flag = "fallback_single_best_univariate"

    cols = sorted(int(c) for c in cols)
    cv_auc, fold_aucs = scorer.score(cols)
    return SelectionEntry(
        method=method,
        classifier=classifier.kind,
        features=[names_fB[c] for c in cols],
        cv_auc=cv_auc,
        fold_aucs=fold_aucs,
        flag=flag,
    )


def select_best(X, y, feature_names, config: SelectionConfig, classifiers) -> SelectionResult:
    """Score every (method x classifier) pair by CV AUC; the best pair defines f_C.

    AUC ties prefer fewer features, then method name, then classifier name.
    """
    if len(config.stage2_methods) < 2:
        raise ConfigError("select_best needs at least 2 stage-II methods enabled")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    f_A = list(feature_names)
    f_B, fold_f_B = stage1_ufs(X, y, f_A, config)
    cols_B = [f_A.index(n) for n in f_B]
    X_fB = X[:, cols_B]

    entries: list[SelectionEntry] = []
    flags: list[str] = []
    for clf in classifiers:
        scorer = CVScorer(X_fB, y, clf, config.k_folds, config.seed)
        for method in config.stage2_methods:
            entry = stage2_select(method, X_fB, y, f_B, clf, config, scorer)
            entries.append(entry)
            if entry.flag:
                flags.append(f"{method}/{clf.kind}: {entry.flag}")
    if not entries:
        raise DataError("all selector runs failed")

    entries.sort(key=lambda e: (-e.cv_auc, len(e.features), e.method, e.classifier))
    winner = entries[0]
    return SelectionResult(
        f_A=f_A,
        f_B=f_B,
        f_C=list(winner.features),
        method_name=winner.method,
        classifier_name=winner.classifier,
        cv_auc=winner.cv_auc,
        top3=entries[:3],
        fold_f_B=fold_f_B,
        r_c=config.r_c,
        seed=config.seed,
        flags=flags,
        grid=entries,
    )
