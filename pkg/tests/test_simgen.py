import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semforge.core import NetworkGenerationError, validate
from semforge.pipeline import FitConfig
from semforge.simgen import (
    METRIC_COLUMNS,
    ErrorSpec,
    NetworkSpec,
    f2_genotypes,
    fitting_assignment,
    gen_dataset,
    gen_network,
    run_experiment,
    score,
)


class TestNetwork:
    def test_acyclic_is_nilpotent(self):
        for seed in range(5):
            gt = gen_network(NetworkSpec(p=15, mean_out_degree=3, seed=seed))
            assert np.allclose(np.linalg.matrix_power(gt.Gamma, 15), 0)
            assert not np.diag(gt.Gamma).any()

    def test_acyclic_respects_order(self):
        gt = gen_network(NetworkSpec(p=12, mean_out_degree=2, seed=1))
        rank = np.empty(12, int)
        rank[gt.order] = np.arange(12)
        for j, k in gt.edges():
            assert rank[j] < rank[k]

    def test_expected_edge_count(self):
        # edges ~ Binomial(p(p-1)/2, 2d/(p-1)): mean p*d, variance known
        p, d, reps = 20, 1.0, 300
        counts = np.array([len(gen_network(NetworkSpec(p=p, mean_out_degree=d, seed=s)).edges()) for s in range(reps)])
        N, prob = p * (p - 1) // 2, 2 * d / (p - 1)
        mean, sd = N * prob, math.sqrt(N * prob * (1 - prob))
        assert abs(counts.mean() - mean) < 4 * sd / math.sqrt(reps)
        assert 0.6 < counts.var(ddof=1) / sd**2 < 1.5

    def test_cyclic_is_stable(self):
        for seed in range(5):
            gt = gen_network(NetworkSpec(p=10, topology="cyclic", mean_out_degree=2, seed=seed))
            assert np.max(np.abs(np.linalg.eigvals(gt.Gamma))) <= 0.95
            assert np.linalg.cond(np.eye(10) - gt.Gamma) <= 1e8

    def test_cyclic_generation_can_fail(self):
        with pytest.raises(NetworkGenerationError):
            gen_network(NetworkSpec(p=6, topology="cyclic", mean_out_degree=5, effect_range=(5.0, 6.0)))

    def test_effect_range(self):
        gt = gen_network(NetworkSpec(p=20, mean_out_degree=3, effect_range=(0.2, 0.4), seed=3))
        vals = np.abs(gt.Gamma[gt.Gamma != 0])
        assert vals.min() >= 0.2 and vals.max() <= 0.4

    def test_hubs_have_high_out_degree(self):
        gt = gen_network(NetworkSpec(p=40, hubs=2, hub_degree=8, seed=0))
        out = np.count_nonzero(gt.Gamma, axis=1)
        assert np.sort(out)[-2:].mean() > 3 * np.median(out[out > 0])

    def test_instrument_blocks(self):
        gt = gen_network(NetworkSpec(p=4, ee_count=3, seed=0))
        assert gt.ea[2] == (6, 7, 8)
        assert gt.Psi.shape == (12, 4)
        assert gt.Psi[6:9, 2].tolist() == [1.0, 1.0, 1.0]

    def test_pi_is_reduced_form(self):
        gt = gen_network(NetworkSpec(p=6, topology="cyclic", seed=2))
        np.testing.assert_allclose(gt.Pi @ (np.eye(6) - gt.Gamma), gt.Psi, atol=1e-12)

    @pytest.mark.parametrize(
        "kw",
        [{"topology": "tree"}, {"p": 1}, {"mean_out_degree": 0}, {"ee_count": 0}, {"effect_range": (1.0, 0.5)},
         {"ee_count": 2, "ee_effects": (1.0,)}, {"ee_correlation": 1.5}],
    )
    def test_spec_validation(self, kw):
        with pytest.raises(ValueError):
            NetworkSpec(**kw)

    def test_density_label(self):
        assert NetworkSpec().density == "sparse"
        assert NetworkSpec(mean_out_degree=3).density == "dense"


class TestData:
    def test_f2_moments(self):
        X = f2_genotypes(np.random.default_rng(0), 20000, 3)
        assert set(np.unique(X)) <= {0.0, 1.0, 2.0}
        np.testing.assert_allclose(X.mean(axis=0), 1.0, atol=0.03)
        np.testing.assert_allclose(X.var(axis=0), 0.5, atol=0.02)

    def test_correlated_blocks(self):
        X = f2_genotypes(np.random.default_rng(1), 40000, 4, block=2, correlation=0.6)
        C = np.corrcoef(X.T)
        assert abs(C[0, 1] - 0.6) < 0.03 and abs(C[2, 3] - 0.6) < 0.03
        assert abs(C[0, 2]) < 0.03

    def test_structural_equation_holds(self):
        gt = gen_network(NetworkSpec(p=8, topology="cyclic", seed=4))
        ds = gen_dataset(gt, 50, error=ErrorSpec(sd=0.0), seed=1)
        np.testing.assert_allclose(ds.Y @ (np.eye(8) - gt.Gamma), ds.X @ gt.Psi, atol=1e-10)
        assert validate(ds, gt.ea).ok

    @given(st.sampled_from(["normal", "t"]), st.floats(0.05, 2.0))
    @settings(max_examples=10, deadline=None)
    def test_error_sd(self, kind, sd):
        e = ErrorSpec(kind, sd).draw(np.random.default_rng(3), 200000)
        assert abs(e.std() / sd - 1) < 0.05

    def test_scaled_doubles_variance(self):
        assert math.isclose(ErrorSpec(sd=0.1).scaled(2.0).sd ** 2, 0.02)

    def test_fitting_assignment_picks_one_per_node(self):
        spec = NetworkSpec(p=5, ee_count=3, ee_correlation=0.5, ee_effects=(1.0, 0.3, 0.1), seed=0)
        gt = gen_network(spec)
        ds = gen_dataset(gt, 500, seed=2)
        ea = fitting_assignment(ds, gt)
        assert all(len(s) == 1 for s in ea.sets)
        assert [s[0] for s in ea.sets] == [3 * k for k in range(5)]


class TestScore:
    def test_counts(self):
        G = np.zeros((3, 3))
        G[0, 1] = G[1, 2] = 1.0
        H = np.zeros((3, 3))
        H[0, 1] = -1.0
        H[2, 0] = 1.0
        sc = score(H, G)
        assert (sc.tp, sc.fp, sc.fn) == (1, 1, 1)
        assert sc.power == 0.5 and sc.fdr == 0.5 and sc.sign_accuracy == 0.0

    def test_empty_conventions(self):
        sc = score(np.zeros((2, 2)), np.zeros((2, 2)))
        assert sc.power == 1.0 and sc.fdr == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            score(np.zeros((2, 2)), np.zeros((3, 3)))


class TestExperiment:
    def test_cardinality_and_columns(self):
        grid = [(NetworkSpec(p=6), 80), (NetworkSpec(p=6), 120)]
        t = run_experiment(grid, 2, strategies=("ridge", "alasso"), seed=1)
        assert len(t) == 2 * 2 * 2
        for c in METRIC_COLUMNS:
            assert hasattr(t.rows[0], c)

    def test_summary_means_match_rows(self):
        t = run_experiment([(NetworkSpec(p=6), 100)], 3, seed=2)
        s = t.summary()[0]
        assert math.isclose(s["power_mean"], np.mean([r.power for r in t.rows]))
        assert math.isclose(s["fdr_mean"], np.mean([r.fdr for r in t.rows]))
        assert s["replicates"] == 3

    def test_reproducible(self):
        grid = [(NetworkSpec(p=6), 80)]
        a = run_experiment(grid, 2, seed=5)
        b = run_experiment(grid, 2, seed=5, threads=2)
        assert [(r.power, r.fdr, r.tp) for r in a.rows] == [(r.power, r.fdr, r.tp) for r in b.rows]

    def test_generation_failure_recorded(self):
        spec = NetworkSpec(p=6, topology="cyclic", mean_out_degree=5, effect_range=(5.0, 6.0))
        t = run_experiment([(spec, 50)], 1, FitConfig())
        assert t.rows[0].error and math.isnan(t.rows[0].power)


class TestGeneratorExamples:
    def test_large_sparse_edge_count(self):
        counts = [len(gen_network(NetworkSpec(p=300, seed=s)).edges()) for s in range(40)]
        inside = np.mean([240 <= c <= 360 for c in counts])
        assert inside >= 0.95

    def test_topological_sort_exists(self):
        gt = gen_network(NetworkSpec(p=25, mean_out_degree=3, seed=11))
        indeg = np.count_nonzero(gt.Gamma, axis=0)
        queue = [k for k in range(25) if indeg[k] == 0]
        seen = 0
        while queue:
            j = queue.pop()
            seen += 1
            for k in np.flatnonzero(gt.Gamma[j]):
                indeg[k] -= 1
                if indeg[k] == 0:
                    queue.append(int(k))
        assert seen == 25

    def test_default_effect_magnitudes(self):
        gt = gen_network(NetworkSpec(p=50, mean_out_degree=3, seed=2))
        v = np.abs(gt.Gamma[gt.Gamma != 0])
        assert v.min() >= 0.5 and v.max() <= 1.0

    def test_decoupled_data(self):
        gt = gen_network(NetworkSpec(p=4, mean_out_degree=1e-9, seed=0))
        assert not gt.Gamma.any()
        ds = gen_dataset(gt, 30, error=ErrorSpec(sd=0.0), seed=0)
        np.testing.assert_allclose(ds.Y, ds.X @ gt.Psi, atol=1e-12)

    def test_noiseless_reduced_form(self):
        gt = gen_network(NetworkSpec(p=10, topology="cyclic", mean_out_degree=2, seed=1))
        ds = gen_dataset(gt, 40, error=ErrorSpec(sd=0.0), seed=5)
        ref = ds.X @ gt.Pi
        assert np.linalg.norm(ds.Y - ref) <= 1e-8 * np.linalg.norm(ref)

    def test_genotype_moments_n1000(self):
        X = f2_genotypes(np.random.default_rng(8), 1000, 5)
        assert np.all(np.abs(X.mean(axis=0) - 1.0) <= 0.1)
        assert np.all(np.abs(X.var(axis=0) - 0.5) <= 0.07)

    def test_t_errors_heavy_tailed(self):
        rng = np.random.default_rng(0)
        e_n = ErrorSpec().draw(rng, 200000)
        e_t = ErrorSpec("t").draw(rng, 200000)
        kurt = lambda e: float(np.mean(e**4) / np.mean(e**2) ** 2)
        assert abs(kurt(e_n) - 3) < 0.1 and kurt(e_t) > 6

    def test_toggles_change_only_their_component(self):
        base = NetworkSpec(p=8, seed=4)
        gt0 = gen_network(base)
        gt1 = gen_network(NetworkSpec(p=8, seed=4, error=ErrorSpec(sd=0.2)))
        np.testing.assert_array_equal(gt0.Gamma, gt1.Gamma)
        d0 = gen_dataset(gt0, 100, seed=1)
        d1 = gen_dataset(gt0, 100, error=ErrorSpec(sd=0.2), seed=1)
        np.testing.assert_array_equal(d0.X, d1.X)
        resid0 = d0.Y @ (np.eye(8) - gt0.Gamma) - d0.X @ gt0.Psi
        resid1 = d1.Y @ (np.eye(8) - gt0.Gamma) - d1.X @ gt0.Psi
        np.testing.assert_allclose(resid1, 2 * resid0, atol=1e-10)

    def test_correlated_ee_scenario(self):
        spec = NetworkSpec(p=5, ee_count=3, ee_correlation=0.8, ee_effects=(1.0, 0.5, -0.3), seed=1)
        gt = gen_network(spec)
        assert gt.Psi[0:3, 0].tolist() == [1.0, 0.5, -0.3]
        ds = gen_dataset(gt, 20000, seed=0)
        assert abs(np.corrcoef(ds.X[:, 0], ds.X[:, 1])[0, 1] - 0.8) < 0.03


def test_score_relabeling_symmetry():
    rng = np.random.default_rng(2)
    G = (rng.random((7, 7)) < 0.3) * 1.0
    H = (rng.random((7, 7)) < 0.3) * 1.0
    np.fill_diagonal(G, 0)
    np.fill_diagonal(H, 0)
    perm = rng.permutation(7)
    a = score(H, G)
    b = score(H[np.ix_(perm, perm)], G[np.ix_(perm, perm)])
    assert (a.tp, a.fp, a.fn, a.power, a.fdr) == (b.tp, b.fp, b.fn, b.power, b.fdr)


def test_score_examples():
    G = np.zeros((3, 3))
    G[0, 1] = 1.0
    assert score(G, G).power == 1.0 and score(G, G).fdr == 0.0
    sc = score(np.zeros((3, 3)), G)
    assert sc.power == 0.0 and sc.fdr == 0.0
