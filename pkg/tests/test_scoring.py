import numpy as np
import pytest

from drbo.graph import Dag
from drbo.datagen import Dataset, ScmSpec, sample_er_dag, sample_linear_weights, simulate
from drbo.scoring import (
    MSE_FLOOR,
    EvaluationRecord,
    LocalScoreCache,
    ScoreConfig,
    Scorer,
    bic_ev,
    bic_logistic,
    bic_nv,
    combine_total,
    local_ln_mse,
    logistic_local_mll,
    score_dag,
)


def linear_dataset(d, e, n, seed):
    rng = np.random.default_rng(seed)
    graph = sample_er_dag(d, e, rng)
    W = sample_linear_weights(graph, rng)
    return simulate(ScmSpec(graph=graph, weights=W), n, rng), graph


class TestLocalLnMse:
    def test_no_parents_is_ln_variance(self):
        X = np.random.default_rng(0).normal(2.0, 3.0, (500, 1))
        got = local_ln_mse(0, np.array([], dtype=int), Dataset(X))
        assert got == pytest.approx(np.log(np.var(X[:, 0])), rel=1e-12)

    def test_exact_fit_hits_floor(self):
        x0 = np.random.default_rng(1).normal(size=200)
        X = np.column_stack([x0, 2.0 * x0 + 1.0])
        got = local_ln_mse(1, np.array([0]), Dataset(X))
        assert got == pytest.approx(np.log(MSE_FLOOR))

    def test_superset_never_increases_mse(self):
        data, _ = linear_dataset(6, 2, 300, seed=2)
        base = local_ln_mse(5, np.array([0]), data)
        more = local_ln_mse(5, np.array([0, 1, 2]), data)
        assert more <= base + 1e-12

    def test_irrelevant_parent_barely_helps(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(1000, 2))  # independent columns
        empty = local_ln_mse(1, np.array([], dtype=int), Dataset(X))
        with_parent = local_ln_mse(1, np.array([0]), Dataset(X))
        assert empty - with_parent < 0.05

    def test_duplicate_column_uses_pinv(self):
        x = np.random.default_rng(4).normal(size=100)
        X = np.column_stack([x, x, x + np.random.default_rng(5).normal(0, 0.1, 100)])
        got = local_ln_mse(2, np.array([0, 1]), Dataset(X))
        assert np.isfinite(got)


class TestGpRegressor:
    def test_fits_smooth_nonlinearity(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(-2, 2, 300)
        y = np.sin(2 * x) + rng.normal(0, 0.05, 300)
        data = Dataset(np.column_stack([x, y]))
        lin = local_ln_mse(1, np.array([0]), data, regressor="linear")
        gp = local_ln_mse(1, np.array([0]), data, regressor="gp")
        assert gp < lin - 1.0

    def test_subsample_cap(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=1000)
        data = Dataset(np.column_stack([x, x**2 + rng.normal(0, 0.1, 1000)]))
        got = local_ln_mse(1, np.array([0]), data, regressor="gp", gp_max_rows=128)
        assert np.isfinite(got)

    def test_no_parents_falls_back_to_variance(self):
        X = np.random.default_rng(2).normal(size=(200, 1))
        lin = local_ln_mse(0, np.array([], dtype=int), Dataset(X), regressor="linear")
        gp = local_ln_mse(0, np.array([], dtype=int), Dataset(X), regressor="gp")
        assert gp == lin


class TestCombine:
    def test_nv_formula(self):
        locals_ = np.array([-1.0, -2.0, 0.5])
        assert bic_nv(locals_, 4, 100) == pytest.approx(-100 * (-2.5) - 4 * np.log(100))

    def test_ev_pools_mse_in_linear_space(self):
        locals_ = np.log(np.array([0.5, 1.5, 2.0]))
        direct = -90 * 3 * np.log(np.mean([0.5, 1.5, 2.0])) - 2 * np.log(90)
        assert bic_ev(locals_, 2, 90, 3) == pytest.approx(direct, rel=1e-12)

    def test_ev_equals_nv_single_node(self):
        locals_ = np.array([-0.7])
        assert bic_ev(locals_, 0, 50, 1) == pytest.approx(bic_nv(locals_, 0, 50))

    def test_penalty_is_linear_in_edges(self):
        locals_ = np.array([-1.0, -1.0])
        for variant in ("bic-ev", "bic-nv"):
            s0 = combine_total(locals_, 0, 200, variant)
            s3 = combine_total(locals_, 3, 200, variant)
            assert s0 - s3 == pytest.approx(3 * np.log(200))

    def test_logistic_combine(self):
        locals_ = np.array([-10.0, -20.0])
        assert combine_total(locals_, 2, 100, "bic-logistic") == pytest.approx(
            2 * (-30.0) - 2 * np.log(100)
        )

    def test_unknown_variant(self):
        with pytest.raises(ValueError):
            combine_total(np.zeros(2), 0, 10, "aic")


class TestScorer:
    def test_true_graph_beats_empty_graph(self):
        data, truth = linear_dataset(6, 2, 1000, seed=0)
        cfg = ScoreConfig(variant="bic-ev")
        s_true = score_dag(truth, data, cfg).total
        s_empty = score_dag(Dag(np.zeros((6, 6), dtype=int)), data, cfg).total
        assert s_true > s_empty

    def test_relabeling_permutes_locals(self):
        data, truth = linear_dataset(5, 1.5, 400, seed=1)
        perm = np.array([3, 0, 4, 1, 2])
        P = np.eye(5)[perm]
        data_p = Dataset(data.X[:, perm])
        adj_p = truth.adj[np.ix_(perm, perm)]
        cfg = ScoreConfig(variant="bic-nv")
        rec = score_dag(truth, data, cfg)
        rec_p = score_dag(Dag(adj_p), data_p, cfg)
        assert np.allclose(rec_p.locals, rec.locals[perm])
        assert rec_p.total == pytest.approx(rec.total)
        del P

    def test_cache_counts_and_transparency(self):
        data, truth = linear_dataset(5, 1.5, 200, seed=2)
        cfg = ScoreConfig()
        scorer = Scorer(data, cfg)
        first = scorer.score(truth)
        assert scorer.cache.misses == 5 and scorer.cache.hits == 0
        second = scorer.score(truth)
        assert scorer.cache.hits == 5
        assert second.total == first.total
        assert np.array_equal(second.locals, first.locals)
        fresh = score_dag(truth, data, cfg)
        assert fresh.total == first.total

    def test_shared_cache_across_scorers(self):
        data, truth = linear_dataset(4, 1, 150, seed=3)
        cache = LocalScoreCache()
        Scorer(data, ScoreConfig(), cache).score(truth)
        scorer2 = Scorer(data, ScoreConfig(), cache)
        scorer2.score(truth)
        assert cache.hits == 4
        assert cache.hit_rate == pytest.approx(0.5)

    def test_record_fields(self):
        data, truth = linear_dataset(4, 1, 100, seed=4)
        rec = score_dag(truth, data, ScoreConfig())
        assert isinstance(rec, EvaluationRecord)
        assert rec.parent_masks == truth.parent_masks()
        assert rec.locals.shape == (4,)


class TestLogistic:
    def test_intercept_only_entropy(self):
        rng = np.random.default_rng(0)
        y = (rng.random(800) < 0.3).astype(float)
        p_hat = y.mean()
        expected = 800 * (p_hat * np.log(p_hat) + (1 - p_hat) * np.log(1 - p_hat))
        got = logistic_local_mll(0, np.array([], dtype=int), Dataset(y[:, None]))
        assert got == pytest.approx(expected, rel=1e-6)

    def test_nested_model_monotone(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(600, 2))
        y = (rng.random(600) < 1 / (1 + np.exp(-1.5 * x[:, 0]))).astype(float)
        data = Dataset(np.column_stack([x, y]))
        small = logistic_local_mll(2, np.array([0]), data)
        big = logistic_local_mll(2, np.array([0, 1]), data)
        assert big >= small - 1e-6

    def test_separated_data_stays_finite(self):
        x = np.linspace(-1, 1, 100)
        y = (x > 0).astype(float)
        data = Dataset(np.column_stack([x, y]))
        got = logistic_local_mll(1, np.array([0]), data)
        assert np.isfinite(got)
        assert got <= 0

    def test_requires_binary_data(self):
        with pytest.raises(ValueError, match="binary"):
            Scorer(Dataset(np.random.default_rng(2).normal(size=(50, 2))),
                   ScoreConfig(variant="bic-logistic"))

    def test_true_parent_raises_likelihood(self):
        rng = np.random.default_rng(3)
        graph = Dag(np.array([[0, 1], [0, 0]]))
        W = np.array([[0.0, 2.0], [0.0, 0.0]])
        data = simulate(ScmSpec(graph=graph, mechanism="logistic", weights=W), 2000, rng)
        # column 0 is itself Bernoulli(1/2) under an empty parent set
        with_parent = logistic_local_mll(1, np.array([0]), data)
        without = logistic_local_mll(1, np.array([], dtype=int), data)
        assert with_parent > without + 10

    def test_bic_logistic_total(self):
        rng = np.random.default_rng(4)
        graph = Dag(np.array([[0, 1], [0, 0]]))
        W = np.array([[0.0, 1.5], [0.0, 0.0]])
        data = simulate(ScmSpec(graph=graph, mechanism="logistic", weights=W), 500, rng)
        total = bic_logistic(data, graph)
        locs = [logistic_local_mll(i, graph.parents(i), data) for i in range(2)]
        assert total == pytest.approx(2 * sum(locs) - np.log(500))


def test_score_config_validation():
    with pytest.raises(ValueError):
        ScoreConfig(variant="bic-xyz")
    with pytest.raises(ValueError):
        ScoreConfig(regressor="forest")
