import numpy as np
import pytest

from voiforge.errors import ConfigError, DataError
from voiforge.learn import ModelSpec, stratified_kfold
from voiforge.phantom import make_synthetic_table
from voiforge.selection import (
    CVScorer,
    SelectionConfig,
    fscore_ranking,
    mutual_information_scores,
    relief_scores,
    select_best,
    spearman_matrix,
    stage1_ufs,
    stage2_select,
    univariate_score,
)


class TestSpearman:
    def test_monotone_transform_unit_correlation(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal(20)
        M = spearman_matrix(np.column_stack([x, x**3]))
        assert M[0, 1] == pytest.approx(1.0)

    def test_reversed_ordering_absolute(self):
        x = np.arange(10.0)
        M = spearman_matrix(np.column_stack([x, -x]))
        assert M[0, 1] == pytest.approx(1.0)

    def test_hand_rank_cases(self):
        # rank-difference formula: rho = 1 - 6*sum(d^2) / (n(n^2-1))
        x = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
        y = np.array([2.0, 1.0, 4.0, 3.0, 5.0])  # d = (-1,1,-1,1,0), sum d^2 = 4
        M = spearman_matrix(np.column_stack([x, y]))
        assert M[0, 1] == pytest.approx(1.0 - 6 * 4 / 120.0, abs=1e-9)  # 0.8
        y2 = np.array([1.0, 2.0, 4.0, 5.0, 3.0])  # d = (0,0,-1,-1,2), sum d^2 = 6
        M2 = spearman_matrix(np.column_stack([x, y2]))
        assert M2[0, 1] == pytest.approx(0.7, abs=1e-9)

    def test_constant_feature_flagged_zero(self):
        x = np.arange(8.0)
        with pytest.warns(UserWarning, match="constant"):
            M = spearman_matrix(np.column_stack([x, np.full(8, 3.0)]))
        assert M[0, 1] == 0.0
        assert M[1, 1] == 1.0  # diagonal stays 1

    def test_symmetric_unit_diagonal(self):
        rng = np.random.default_rng(1)
        X = rng.standard_normal((15, 6))
        M = spearman_matrix(X)
        assert np.allclose(M, M.T)
        assert np.allclose(np.diag(M), 1.0)


class TestUnivariateScore:
    def test_perfectly_ordered(self):
        assert univariate_score(np.arange(8.0), np.array([0, 0, 0, 0, 1, 1, 1, 1])) == 1.0

    def test_constant_feature_uninformative(self):
        assert univariate_score(np.full(8, 2.0), np.array([0, 0, 0, 0, 1, 1, 1, 1])) == 0.5

    def test_orientation_corrected(self):
        # perfectly anti-ordered scores 1.0 after orientation correction
        assert univariate_score(np.arange(8.0), np.array([1, 1, 1, 1, 0, 0, 0, 0])) == 1.0

    def test_exhaustive_pair_count(self):
        feature = np.array([1.0, 2.0, 3.0, 4.0])
        labels = np.array([0, 1, 0, 1])
        assert univariate_score(feature, labels) == 0.75


def _labels(n):
    y = np.zeros(n, dtype=int)
    y[1::2] = 1
    return y


class TestAlgorithm1Traces:
    """The three hand-traced Stage-I cases."""

    def _assert_setup_correlated(self, X, y, cols, r_c, config):
        # the claimed correlation structure must hold inside every fold
        folds = stratified_kfold(y, config.k_folds, config.seed)
        all_idx = np.arange(len(y))
        for val in folds:
            tr = np.setdiff1d(all_idx, val)
            M = spearman_matrix(X[tr])
            for i, j, expect_high in cols:
                if expect_high:
                    assert M[i, j] > r_c, f"setup: features {i},{j} not correlated in a fold"
                else:
                    assert M[i, j] <= r_c, f"setup: features {i},{j} spuriously correlated"

    def test_duplicate_pair_keeps_exactly_one(self):
        n = 30
        y = _labels(n)
        rng = np.random.default_rng(7)
        informative = y * 2.0 + rng.normal(0, 0.4, n)
        z = rng.standard_normal(n)
        X = np.column_stack([informative, informative, z])
        config = SelectionConfig(r_c=0.9, seed=0, stage2_methods=("FScore", "MI"))
        self._assert_setup_correlated(
            X, y, [(0, 1, True), (0, 2, False), (1, 2, False)], 0.9, config
        )
        f_B, _ = stage1_ufs(X, y, ["A", "A2", "Z"], config)
        assert "Z" in f_B
        assert sorted(set(f_B) & {"A", "A2"}) == ["A"]  # tie broken to the first column

    def test_rc_one_no_duplicates_vacuous(self):
        rng = np.random.default_rng(8)
        X = rng.standard_normal((25, 6))
        y = _labels(25)
        config = SelectionConfig(r_c=1.0, seed=0, stage2_methods=("FScore", "MI"))
        names = [f"f{i}" for i in range(6)]
        f_B, _ = stage1_ufs(X, y, names, config)
        assert f_B == names

    def test_three_feature_cluster_best_survives(self):
        n = 60
        y = _labels(n)
        rng = np.random.default_rng(9)
        # shared-noise family: every label-rank violation of f2 is also a
        # violation of f3 (larger noise coefficient), so univariate AUC is
        # strictly ordered f1 > f2 > f3 in every fold while the three stay
        # mutually rank-correlated through the common signal and noise
        f1 = 2.0 * y + rng.normal(0, 0.5, n)
        g = rng.standard_normal(n)
        f2 = f1 + 1.0 * g
        f3 = f1 + 1.6 * g
        d = rng.standard_normal(n)
        X = np.column_stack([f1, f2, f3, d])
        r_c = 0.4
        config = SelectionConfig(r_c=r_c, seed=0, stage2_methods=("FScore", "MI"))

        # setup validity: cluster mutually correlated, d uncorrelated, strict score order
        folds = stratified_kfold(y, config.k_folds, config.seed)
        all_idx = np.arange(n)
        for val in folds:
            tr = np.setdiff1d(all_idx, val)
            M = spearman_matrix(X[tr])
            assert M[0, 1] > r_c and M[0, 2] > r_c and M[1, 2] > r_c
            assert max(M[0, 3], M[1, 3], M[2, 3]) <= r_c
            scores = [univariate_score(X[tr][:, j], y[tr]) for j in range(3)]
            assert scores[0] > scores[1] > scores[2]

        f_B, _ = stage1_ufs(X, y, ["best", "mid", "worst", "indep"], config)
        assert set(f_B) == {"best", "indep"}

    def test_uncorrelated_features_never_dropped(self):
        rng = np.random.default_rng(10)
        X = rng.standard_normal((30, 8))
        y = _labels(30)
        config = SelectionConfig(r_c=0.95, seed=0, stage2_methods=("FScore", "MI"))
        names = [f"f{i}" for i in range(8)]
        f_B, _ = stage1_ufs(X, y, names, config)
        # with independent gaussian columns nothing should exceed 0.95 in-fold
        assert f_B == names

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(11)
        X = rng.standard_normal((30, 5))
        y = _labels(30)
        config = SelectionConfig(r_c=0.9, seed=0, stage2_methods=("FScore", "MI"))
        names = [f"f{i}" for i in range(5)]
        f_B1, _ = stage1_ufs(X, y, names, config)
        X2 = X.copy()
        X2[:, 2] = np.exp(X2[:, 2])  # strictly increasing transform
        f_B2, _ = stage1_ufs(X2, y, names, config)
        assert f_B1 == f_B2


class TestFilterScores:
    def test_fscore_ranks_informative_first(self):
        rng = np.random.default_rng(0)
        y = _labels(40)
        X = rng.standard_normal((40, 5))
        X[:, 3] += 3 * y
        assert int(np.argmax(fscore_ranking(X, y))) == 3

    def test_relief_ranks_informative_first(self):
        rng = np.random.default_rng(1)
        y = _labels(40)
        X = rng.standard_normal((40, 5))
        X[:, 2] += 3 * y
        assert int(np.argmax(relief_scores(X, y, 10))) == 2

    def test_mi_ranks_informative_first(self):
        rng = np.random.default_rng(2)
        y = _labels(40)
        X = rng.standard_normal((40, 5))
        X[:, 1] += 3 * y
        assert int(np.argmax(mutual_information_scores(X, y, 10))) == 1


class TestStage2:
    def _separable(self, n=40, p=8, seed=0):
        rng = np.random.default_rng(seed)
        y = _labels(n)
        X = rng.standard_normal((n, p))
        X[:, 0] += 4 * y
        return X, y

    @pytest.mark.parametrize("method", ["FScore", "Relief", "MI", "Gini", "LASSO", "GA", "SBS", "SFS", "RFE"])
    def test_every_method_finds_separating_feature(self, method):
        X, y = self._separable()
        names = [f"f{i}" for i in range(X.shape[1])]
        config = SelectionConfig(seed=0)
        entry = stage2_select(method, X, y, names, ModelSpec(kind="lda"), config)
        assert entry.cv_auc == 1.0
        assert "f0" in entry.features

    def test_sfs_first_step_is_best_univariate(self):
        X, y = self._separable()
        names = [f"f{i}" for i in range(X.shape[1])]
        config = SelectionConfig(seed=0, max_filter_size=1)
        entry = stage2_select("SFS", X, y, names, ModelSpec(kind="lda"), config)
        assert len(entry.features) == 1
        scorer = CVScorer(X, y, ModelSpec(kind="lda"), 5, 0)
        aucs = [scorer.score([j])[0] for j in range(X.shape[1])]
        assert entry.features == [names[int(np.argmax(aucs))]]

    def test_lasso_extreme_regularization_falls_back(self):
        rng = np.random.default_rng(5)
        X = rng.standard_normal((30, 4))
        y = _labels(30)
        config = SelectionConfig(seed=0, lasso_grid=(1e-9,))
        entry = stage2_select("LASSO", X, y, list("abcd"), ModelSpec(kind="lr"), config)
        assert entry.flag == "fallback_single_best_univariate"
        assert len(entry.features) == 1

    def test_seeded_methods_reproducible(self):
        X, y = self._separable(seed=3)
        names = [f"f{i}" for i in range(X.shape[1])]
        config = SelectionConfig(seed=4)
        for method in ("GA", "Relief", "Gini"):
            a = stage2_select(method, X, y, names, ModelSpec(kind="lda"), config)
            b = stage2_select(method, X, y, names, ModelSpec(kind="lda"), config)
            assert a.features == b.features
            assert a.cv_auc == b.cv_auc


class TestSelectBest:
    def test_separable_grid(self):
        table = make_synthetic_table(n_subjects=40, n_informative=1, effect_sd=4.0, seed=5)
        config = SelectionConfig(seed=0, stage2_methods=("SFS", "LASSO"))
        result = select_best(
            table.matrix,
            table.labels,
            table.feature_names,
            config,
            [ModelSpec(kind="lr"), ModelSpec(kind="lda")],
        )
        assert result.cv_auc == 1.0
        assert set(result.f_C) <= set(result.f_B) <= set(result.f_A)
        assert len(result.top3) == 3
        aucs = [e.cv_auc for e in result.top3]
        assert aucs == sorted(aucs, reverse=True)
        # ties broken toward smaller feature sets
        same_auc = [e for e in result.top3 if e.cv_auc == result.cv_auc]
        assert len(result.f_C) == min(len(e.features) for e in same_auc)

    def test_single_method_rejected(self):
        table = make_synthetic_table(n_subjects=30, seed=6)
        config = SelectionConfig(seed=0, stage2_methods=("SFS",))
        with pytest.raises(ConfigError, match="2 stage-II"):
            select_best(
                table.matrix, table.labels, table.feature_names, config, [ModelSpec(kind="lr")]
            )

    def test_result_carries_table_columns(self):
        table = make_synthetic_table(n_subjects=40, n_informative=1, effect_sd=4.0, seed=7)
        config = SelectionConfig(seed=0, stage2_methods=("FScore", "MI"))
        result = select_best(
            table.matrix, table.labels, table.feature_names, config,
            [ModelSpec(kind="lr"), ModelSpec(kind="lda")],
        )
        for entry in result.top3:
            assert entry.method in ("FScore", "MI")
            assert entry.classifier in ("lr", "lda")
            assert entry.features
            assert len(entry.fold_aucs) == 5

    def test_empty_table_rejected(self):
        with pytest.raises(DataError, match="empty"):
            stage1_ufs(np.zeros((10, 0)), _labels(10), [], SelectionConfig(seed=0))

    def test_bad_config_rejected(self):
        with pytest.raises(ConfigError):
            SelectionConfig(r_c=0.0)
        with pytest.raises(ConfigError):
            SelectionConfig(stage2_methods=("Bogus",))
