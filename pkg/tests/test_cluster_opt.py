import csv

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from bipx.cluster_opt import (ACCEPT_EPS, ClusterAtCapacityError,
                              CorrClustCS, LocalSearchConfig,
                              LocalSearchState, balanced_partition_baseline,
                              corr_clust_cs_rewrite, exposure_spread_objective,
                              local_search, local_search_restarts, objective,
                              objective_by_moments, objective_by_omega, omega,
                              omega_matrix, spread_identity_constant,
                              wedge_sample, write_trace_csv)
from bipx.design import Clustering
from bipx.graph_core import BipartiteGraph
from bipx.synth import (partitions_equal, planted_four_block, random_clustering,
                        random_instance)


def small_graph():
    W = sp.csr_matrix(np.array([[0.5, 0.5], [1.0, 0.0]]))
    return BipartiteGraph.from_csr(W, ("a", "b"), ("u", "v"))


def test_omega_matches_matrix():
    rng = np.random.default_rng(7)
    g = random_instance(rng)
    for phi in (0.0, 0.5, 1.0):
        om = omega_matrix(g, phi)
        for i in range(g.n_diversion):
            for j in range(g.n_diversion):
                assert omega(g, phi, i, j) == pytest.approx(om[i, j],
                                                            abs=1e-12)


def test_omega_rejects_negative_phi():
    g = small_graph()
    with pytest.raises(ValueError):
        omega(g, -0.1, 0, 0)


def test_objective_worked_values():
    g = small_graph()
    singles = Clustering.singletons(2)
    merged = Clustering.one_cluster(2)
    obj_s = objective(g, singles, 1.0)
    assert obj_s.variance_sum == pytest.approx(1.5)
    assert obj_s.covariance_sum == pytest.approx(1.0)
    assert obj_s.total == pytest.approx(0.5)
    assert objective(g, merged, 1.0).total == pytest.approx(0.0)


@settings(deadline=None, max_examples=50)
@given(seed=st.integers(0, 10**6), phi=st.sampled_from([0.0, 0.3, 1.0, 2.5]),
       p=st.sampled_from([0.3, 0.5, 0.7]))
def test_objective_three_routes_agree(seed, phi, p):
    rng = np.random.default_rng(seed)
    g = random_instance(rng)
    c = random_clustering(rng, g.n_diversion)
    a = objective(g, c, phi, p)
    b = objective_by_moments(g, c, phi, p)
    d = objective_by_omega(g, c, phi, p)
    assert a.variance_sum == pytest.approx(b.variance_sum, rel=1e-9, abs=1e-9)
    assert a.covariance_sum == pytest.approx(b.covariance_sum, rel=1e-9,
                                             abs=1e-9)
    assert a.total == pytest.approx(b.total, rel=1e-9, abs=1e-9)
    assert a.total == pytest.approx(d.total, rel=1e-9, abs=1e-9)
    assert a.variance_sum == pytest.approx(d.variance_sum, rel=1e-9, abs=1e-9)


@settings(deadline=None, max_examples=40)
@given(seed=st.integers(0, 10**6), p=st.sampled_from([0.3, 0.5, 0.7]))
def test_spread_identity(seed, p):
    rng = np.random.default_rng(seed)
    g = random_instance(rng)
    c = random_clustering(rng, g.n_diversion)
    n = g.n_outcome
    spread_a = exposure_spread_objective(g, c, p, method="aggregate")
    spread_e = exposure_spread_objective(g, c, p, method="enumerate")
    assert spread_a == pytest.approx(spread_e, rel=1e-9, abs=1e-9)
    if n > 1:
        phi = 1.0 / (n - 1)
        lhs = spread_a
        rhs = ((n - 1) / n) * objective(g, c, phi, p).total \
            + spread_identity_constant(g, c, p)
        assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-9)
    # Normalized rows make every row sum 1, so the constant vanishes
    # at any p, not just p = 1/2.
    assert spread_identity_constant(g, c, p) == pytest.approx(0.0, abs=1e-12)


def test_spread_objective_unknown_method():
    g = small_graph()
    with pytest.raises(ValueError):
        exposure_spread_objective(g, Clustering.singletons(2),
                                  method="nope")


def test_cs_rewrite_worked_values():
    g = small_graph()
    cs = corr_clust_cs_rewrite(g, 1.0, Clustering.singletons(2))
    assert cs.in_weight == pytest.approx(0.5)
    assert cs.out_weight == pytest.approx(0.5)
    assert cs.constant == pytest.approx(-0.5)
    assert cs.corr_clust_total == pytest.approx(0.5)
    assert cs.cs_total == pytest.approx(1.0)


@settings(deadline=None, max_examples=40)
@given(seed=st.integers(0, 10**6), phi=st.sampled_from([0.0, 0.5, 1.0, 3.0]))
def test_cs_rewrite_identity(seed, phi):
    rng = np.random.default_rng(seed)
    g = random_instance(rng)
    c = random_clustering(rng, g.n_diversion)
    cs = corr_clust_cs_rewrite(g, phi, c)
    assert cs.in_weight >= 0
    assert cs.out_weight >= 0
    assert cs.corr_clust_total - cs.constant == pytest.approx(
        cs.cs_total, rel=1e-10, abs=1e-10)
    om = omega_matrix(g, phi)
    same = c.assignment[:, None] == c.assignment[None, :]
    assert cs.corr_clust_total == pytest.approx(float(om[same].sum()),
                                                abs=1e-12)


def test_wedge_marginal_matches_coweight():
    g = small_graph()
    # Exact two-stage marginal: P(j) = sum_k (w[k,i]/s[i]) w[k,j].
    W = g.rows.toarray()
    s = g.col_sums
    i = 0
    marginal = (W[:, i] / s[i]) @ W
    coweight = (W.T @ W)[i] / s[i]
    np.testing.assert_allclose(marginal, coweight, atol=1e-15)
    rng = np.random.default_rng(123)
    draws = np.array([wedge_sample(g, i, rng) for _ in range(4000)])
    freq = np.bincount(draws, minlength=g.n_diversion) / draws.size
    assert 0.5 * np.abs(freq - coweight).sum() < 0.05


def test_wedge_sample_rejects_isolated_column():
    W = sp.csr_matrix(np.array([[1.0, 0.0], [1.0, 0.0]]))
    g = BipartiteGraph.from_csr(W, ("a", "b"), ("u", "v"))
    with pytest.raises(ValueError):
        wedge_sample(g, 1, np.random.default_rng(0))


@settings(deadline=None, max_examples=40)
@given(seed=st.integers(0, 10**6), phi=st.sampled_from([0.2, 1.0]))
def test_move_delta_matches_recompute(seed, phi):
    rng = np.random.default_rng(seed)
    g = random_instance(rng)
    m = g.n_diversion
    state = LocalSearchState(g, phi)
    for _ in range(3 * m):
        i = int(rng.integers(m))
        live = np.flatnonzero(state.sizes > 0)
        target = int(rng.choice(live))
        before = state.objective_value().total
        delta = state.move_delta(i, target)
        state.apply_move(i, target)
        after = state.objective_value().total
        assert after - before == pytest.approx(delta, rel=1e-9, abs=1e-10)


def test_move_delta_own_cluster_is_zero():
    g = small_graph()
    state = LocalSearchState(g, 1.0)
    assert state.move_delta(0, 0) == 0.0


def test_move_delta_capacity_and_empty_errors():
    g = small_graph()
    state = LocalSearchState(g, 1.0, k_max=1)
    with pytest.raises(ClusterAtCapacityError):
        state.move_delta(0, 1)
    state2 = LocalSearchState(g, 1.0)
    state2.apply_move(0, 1)  # cluster 0 is now empty
    with pytest.raises(ValueError, match="empty"):
        state2.move_delta(1, 0)
    with pytest.raises(ValueError, match="empty"):
        state2.apply_move(1, 0)


def test_config_validation():
    with pytest.raises(ValueError):
        LocalSearchConfig(convergence=False)
    with pytest.raises(ValueError):
        LocalSearchConfig(phi=-0.5)
    with pytest.raises(ValueError):
        LocalSearchConfig(k_max=0)
    with pytest.raises(ValueError):
        LocalSearchConfig(p=0.0)
    cfg = LocalSearchConfig(convergence=False, max_passes=4)
    assert cfg.max_passes == 4


def test_local_search_trace_and_caps():
    rng = np.random.default_rng(5)
    g = random_instance(rng, n_max=8, m_max=16)
    for seed in (0, 1, 2):
        for phi, k_max in ((1.0, None), (0.3, 2), (0.0, 3)):
            cfg = LocalSearchConfig(phi=phi, k_max=k_max, max_passes=12,
                                    seed=seed)
            result = local_search(g, cfg)
            totals = [row.objective_total for row in result.trace]
            for earlier, later in zip(totals, totals[1:]):
                assert later >= earlier - 1e-9
            sizes = np.bincount(result.clustering.assignment)
            if k_max is not None:
                assert sizes.max() <= k_max
            assert result.objective.total == pytest.approx(totals[-1])


def test_local_search_deterministic():
    rng = np.random.default_rng(9)
    g = random_instance(rng, n_max=8, m_max=16)
    cfg = LocalSearchConfig(phi=1.0, max_passes=10, seed=42)
    r1 = local_search(g, cfg)
    r2 = local_search(g, cfg)
    np.testing.assert_array_equal(r1.clustering.assignment,
                                  r2.clustering.assignment)
    assert r1.objective.total == r2.objective.total


def test_local_search_converged_flag():
    g = small_graph()
    cfg = LocalSearchConfig(phi=1.0, convergence=True, max_passes=50, seed=0)
    result = local_search(g, cfg)
    assert result.converged
    assert result.trace[-1].moves_accepted == 0


def test_local_search_improves_over_singletons():
    g, planted = planted_four_block()
    singles = objective(g, Clustering.singletons(g.n_diversion), 1.0).total
    cfg = LocalSearchConfig(phi=1.0, convergence=False, max_passes=30,
                            seed=0)
    result = local_search(g, cfg)
    assert result.objective.total > singles


def test_local_search_recovers_planted_blocks():
    g, planted = planted_four_block()
    hits = 0
    for seed in (0, 1, 2):
        cfg = LocalSearchConfig(phi=1.0, convergence=False, max_passes=30,
                                seed=seed)
        result = local_search(g, cfg)
        if partitions_equal(result.clustering, planted):
            hits += 1
    assert hits == 3


def test_restarts_pick_best():
    rng = np.random.default_rng(13)
    g = random_instance(rng, n_max=8, m_max=16)
    cfg = LocalSearchConfig(phi=1.0, max_passes=8, seed=100)
    best = local_search_restarts(g, cfg, restarts=4)
    singles = [local_search(g, LocalSearchConfig(phi=1.0, max_passes=8,
                                                 seed=100 + r))
               for r in range(4)]
    assert best.objective.total == max(r.objective.total for r in singles)
    with pytest.raises(ValueError):
        local_search_restarts(g, cfg, restarts=0)


def test_balanced_baseline_caps_and_determinism():
    rng = np.random.default_rng(21)
    g = random_instance(rng, n_max=8, m_max=16)
    m = g.n_diversion
    for k in (1, 2, 3, m):
        c = balanced_partition_baseline(g, k, seed=7)
        sizes = np.bincount(c.assignment)
        assert sizes.max() <= -(-m // k)
        assert sizes.sum() == m
    c1 = balanced_partition_baseline(g, 3, seed=7)
    c2 = balanced_partition_baseline(g, 3, seed=7)
    np.testing.assert_array_equal(c1.assignment, c2.assignment)
    with pytest.raises(ValueError):
        balanced_partition_baseline(g, m + 1)
    with pytest.raises(ValueError):
        balanced_partition_baseline(g, 0)


def test_write_trace_csv(tmp_path):
    g = small_graph()
    cfg = LocalSearchConfig(phi=1.0, max_passes=3, convergence=False, seed=0)
    result = local_search(g, cfg)
    path = tmp_path / "trace.csv"
    write_trace_csv(result.trace, path)
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == len(result.trace)
    assert rows[0]["pass"] == "1"
    assert float(rows[-1]["objective_total"]) == pytest.approx(
        result.objective.total)
