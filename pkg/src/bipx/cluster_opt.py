"""Clustering objective for exposure designs and its local-search heuristic.

The objective scores a clustering of diversion units by the exposure
moments it induces: sum of exposure variances minus phi times the sum of
pairwise exposure covariances, phi >= 0 a trade-off parameter. Through the
pair weights

    omega[i, j] = (1 + phi) * sum_k w[k, i] w[k, j] - phi * s[i] * s[j]

the objective equals the coin variance 4p(1-p) times the total in-cluster
omega weight, so maximizing it is a correlation-clustering problem. The
local search starts from singletons and repeatedly tries to move a unit
into the cluster of a wedge-sampled partner, accepting strict improvements
subject to a cluster-size cap.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from bipx.design import (Clustering, DesignSpec, cluster_aggregated_weights,
                         enumerate_exact_moments)
from bipx.graph_core import diversion_coweight

# Strict improvement threshold; prevents cycling on exact ties.
ACCEPT_EPS = 1e-12


class ClusterAtCapacityError(Exception):
    """Move target is already at the configured maximum cluster size."""


@dataclass(frozen=True)
class LocalSearchConfig:
    """Knobs for the local search.

    At least one stopping rule must be active: convergence (a full pass
    that accepts no move), max_passes, or time_budget (seconds).
    """

    phi: float = 1.0
    k_max: int | None = None
    max_passes: int | None = None
    time_budget: float | None = None
    convergence: bool = True
    seed: int = 0
    p: float = 0.5

    def __post_init__(self):
        if self.phi < 0:
            raise ValueError("phi must be >= 0")
        if self.k_max is not None and self.k_max < 1:
            raise ValueError("k_max must be >= 1")
        if self.max_passes is not None and self.max_passes < 1:
            raise ValueError("max_passes must be >= 1")
        if not (self.convergence or self.max_passes or self.time_budget):
            raise ValueError("no stopping rule set")
        if not (0.0 < self.p < 1.0):
            raise ValueError("p must be in (0, 1)")


@dataclass(frozen=True)
class ObjectiveValue:
    """Objective split into its variance and covariance parts."""

    variance_sum: float
    covariance_sum: float
    phi: float

    @property
    def total(self):
        return self.variance_sum - self.phi * self.covariance_sum


@dataclass(frozen=True)
class PassTrace:
    pass_index: int
    moves_accepted: int
    objective_total: float
    variance_sum: float
    covariance_sum: float
    elapsed: float


@dataclass(frozen=True)
class SearchResult:
    clustering: Clustering
    objective: ObjectiveValue
    trace: tuple
    converged: bool
    seed: int


def omega(g, phi, i, j):
    """Pair weight (1 + phi) c[i, j] - phi s[i] s[j] for diversion units."""
    g.require_normalized()
    if phi < 0:
        raise ValueError("phi must be >= 0")
    c = diversion_coweight(g, i, j)
    return (1.0 + phi) * c - phi * float(g.col_sums[i] * g.col_sums[j])


def omega_matrix(g, phi):
    """Dense m x m omega matrix; verification utility for desk-scale m."""
    g.require_normalized()
    gram = (g.cols.T @ g.cols).toarray()
    s = g.col_sums
    return (1.0 + phi) * gram - phi * np.outer(s, s)


def objective(g, c, phi, p=0.5):
    """Objective of a clustering via the cluster aggregates (closed form).

    variance_sum = 4p(1-p) sum_i sum_C agg[i, C]^2 and covariance_sum =
    4p(1-p) sum_C (S_C^2 - sum_i agg[i, C]^2); the total also equals
    4p(1-p) times the in-cluster omega weight (tested as an invariant).
    The coin-variance factor scales every clustering alike, so the argmax
    over clusterings does not depend on p.
    """
    g.require_normalized()
    d = DesignSpec.independent_cluster(c, p)
    caw = cluster_aggregated_weights(g, c)
    sq = caw.agg.copy()
    sq.data = sq.data ** 2
    agg_sq = float(sq.sum())
    s_sq = float(np.sum(caw.cluster_col_sums ** 2))
    cv = d.coin_variance
    return ObjectiveValue(variance_sum=cv * agg_sq,
                          covariance_sum=cv * (s_sq - agg_sq),
                          phi=phi)


def objective_by_moments(g, c, phi, p=0.5):
    """Objective reassembled from brute-force moments; oracle route."""
    exact = enumerate_exact_moments(g, DesignSpec.independent_cluster(c, p))
    cov = exact.covariance()
    var_sum = float(np.trace(cov))
    cov_sum = float(cov.sum() - np.trace(cov))
    return ObjectiveValue(var_sum, cov_sum, phi)


def objective_by_omega(g, c, phi, p=0.5):
    """Objective as 4p(1-p) times the total in-cluster omega weight.

    The parts are recovered from the dense co-weight Gram matrix and the
    column-sum outer product, whose phi-combination is exactly omega.
    """
    same = c.assignment[:, None] == c.assignment[None, :]
    cv = DesignSpec.independent_cluster(c, p).coin_variance
    gram = (g.cols.T @ g.cols).toarray()
    s = g.col_sums
    var_sum = cv * float(gram[same].sum())
    cov_sum = cv * float((np.outer(s, s)[same]).sum() - gram[same].sum())
    return ObjectiveValue(var_sum, cov_sum, phi)


def exposure_spread_objective(g, c, p=0.5, method="aggregate"):
    """Expected empirical variance of the exposure vector under the design.

    E[ sum_i (x_i - mean(x))^2 ] equals the trace form
    4p(1-p) sum_C (sum_i agg[i,C]^2 - S_C^2 / n) plus a mean term
    (2p-1)^2 * r^T (I - 11^T/n) r with r the row sums, which vanishes for
    row-normalized graphs. method="enumerate" uses the brute-force oracle.
    """
    g.require_normalized()
    d = DesignSpec.independent_cluster(c, p)
    if method == "enumerate":
        exact = enumerate_exact_moments(g, d)
        return float(exact.expect(lambda x: np.sum((x - x.mean()) ** 2)))
    if method != "aggregate":
        raise ValueError(f"unknown method {method!r}")
    n = g.n_outcome
    caw = cluster_aggregated_weights(g, c)
    sq = caw.agg.copy()
    sq.data = sq.data ** 2
    agg_sq = float(sq.sum())
    s_sq = float(np.sum(caw.cluster_col_sums ** 2))
    cov_part = d.coin_variance * (agg_sq - s_sq / n)
    r = g.row_sums
    mean_part = (2.0 * d.p - 1.0) ** 2 * float(np.sum((r - r.mean()) ** 2))
    return cov_part + mean_part


def spread_identity_constant(g, c, p=0.5):
    """Additive constant linking the spread to the phi = 1/(n-1) objective.

    spread = ((n-1)/n) * objective(phi = 1/(n-1)).total + constant. The
    constant is the mean term of the spread, zero whenever rows sum to 1.
    """
    r = g.row_sums
    return (2.0 * p - 1.0) ** 2 * float(np.sum((r - r.mean()) ** 2))


def wedge_sample(g, i, rng):
    """Draw a partner diversion unit j with probability c[i, j] / s[i].

    Two stages: pick an outcome unit k with probability w[k, i] / s[i],
    then pick j with probability w[k, j] (rows sum to 1). The marginal of
    j is proportional to the co-weight sum_k w[k, i] w[k, j].
    """
    g.require_normalized()
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    out_idx, out_w = g.col(i)
    if out_idx.size == 0:
        raise ValueError(f"diversion unit {i} has no incident edges")
    k = _sample_index(out_idx, out_w, rng)
    row_idx, row_w = g.row(k)
    return int(_sample_index(row_idx, row_w, rng))


def _sample_index(indices, weights, rng):
    cum = np.cumsum(weights)
    u = rng.random() * cum[-1]
    pos = int(np.searchsorted(cum, u, side="right"))
    return indices[min(pos, indices.size - 1)]


class LocalSearchState:
    """Incremental clustering state for the local search.

    Keeps, per cluster, the aggregated weight column (a dict keyed by
    outcome index holding [member_count, weight_sum]) and the aggregated
    column total S_C. Unmaterialized cluster ids are still their founding
    singleton, so their aggregates are read straight off the graph column.
    Move deltas cost O(nnz of column i).
    """

    def __init__(self, g, phi, p=0.5, k_max=None):
        g.require_normalized()
        self.g = g
        self.phi = phi
        self.coin_variance = 4.0 * p * (1.0 - p)
        m = g.n_diversion
        self.k_max = m if k_max is None else k_max
        self.assignment = np.arange(m, dtype=np.int64)
        self.sizes = np.ones(m, dtype=np.int64)
        self.S = g.col_sums.astype(np.float64).copy()
        self.agg = {}
        csc = g.cols
        self._indptr = csc.indptr
        self._indices = csc.indices
        self._data = csc.data
        sq = csc.copy()
        sq.data = sq.data ** 2
        self.col_sq = np.asarray(sq.sum(axis=0)).ravel()

    def _col(self, j):
        lo, hi = self._indptr[j], self._indptr[j + 1]
        return self._indices[lo:hi], self._data[lo:hi]

    def _dot_with_cluster(self, i, cid):
        """sum_k w[k, i] * agg[cid][k]."""
        idx, w = self._col(i)
        bag = self.agg.get(cid)
        if bag is None:
            # Unmaterialized: cluster cid is still exactly {cid}.
            jdx, jw = self._col(cid)
            _, a, b = np.intersect1d(idx, jdx, assume_unique=True,
                                     return_indices=True)
            return float(w[a] @ jw[b])
        total = 0.0
        for k, wk in zip(idx, w):
            entry = bag.get(k)
            if entry is not None:
                total += wk * entry[1]
        return total

    def move_delta(self, i, target):
        """Objective change from moving unit i to cluster `target`.

        Raises ClusterAtCapacityError when the target is full. Moving a
        unit to its own cluster is a no-op with delta 0.
        """
        a = self.assignment[i]
        if target == a:
            return 0.0
        if self.sizes[target] == 0:
            raise ValueError(f"cluster {target} is empty")
        if self.sizes[target] >= self.k_max:
            raise ClusterAtCapacityError(
                f"cluster {target} is at k_max = {self.k_max}")
        return self._delta_unchecked(i, a, target)

    def _delta_unchecked(self, i, a, target):
        s_i = float(self.g.col_sums[i])
        c_ii = float(self.col_sq[i])
        d_new = self._dot_with_cluster(i, target)
        d_own = self._dot_with_cluster(i, a) - c_ii
        gain = (1.0 + self.phi) * (d_new - d_own) \
            - self.phi * s_i * (self.S[target] - (self.S[a] - s_i))
        return 2.0 * self.coin_variance * gain

    def apply_move(self, i, target):
        a = self.assignment[i]
        if target == a:
            return
        if self.sizes[target] == 0:
            raise ValueError(f"cluster {target} is empty")
        idx, w = self._col(i)
        bag = self.agg.get(target)
        if bag is None:
            jdx, jw = self._col(target)
            bag = {int(k): [1, float(wk)] for k, wk in zip(jdx, jw)}
            self.agg[target] = bag
        for k, wk in zip(idx, w):
            entry = bag.get(k)
            if entry is None:
                bag[k] = [1, float(wk)]
            else:
                entry[0] += 1
                entry[1] += wk
        old = self.agg.get(a)
        if old is not None:
            for k, wk in zip(idx, w):
                entry = old[k]
                if entry[0] == 1:
                    del old[k]
                else:
                    entry[0] -= 1
                    entry[1] -= wk
        self.S[target] += self.g.col_sums[i]
        self.S[a] -= self.g.col_sums[i]
        self.sizes[target] += 1
        self.sizes[a] -= 1
        self.assignment[i] = target
        if self.sizes[a] == 0:
            self.S[a] = 0.0
            self.agg.pop(a, None)

    def objective_value(self):
        """Recompute the objective from the aggregates (drift-free)."""
        live = np.flatnonzero(self.sizes > 0)
        agg_sq = 0.0
        for cid in live:
            bag = self.agg.get(cid)
            if bag is None:
                agg_sq += float(self.col_sq[cid])
            else:
                agg_sq += sum(v[1] * v[1] for v in bag.values())
        s_sq = float(np.sum(self.S[live] ** 2))
        cv = self.coin_variance
        return ObjectiveValue(variance_sum=cv * agg_sq,
                              covariance_sum=cv * (s_sq - agg_sq),
                              phi=self.phi)

    def clustering(self):
        return Clustering.from_labels(self.assignment)


def local_search(g, cfg):
    """Greedy improvement over singletons with wedge-sampled move targets.

    Each pass visits every diversion unit in a fresh random permutation,
    samples a partner j by wedge sampling, and moves the unit into j's
    cluster when that strictly improves the objective and the target is
    below k_max. Stops on a zero-accept pass (if cfg.convergence), the
    pass budget, or the time budget. The per-pass trace records the
    recomputed objective, so it is exact, not drift-accumulated.
    """
    g.require_normalized()
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed]))
    state = LocalSearchState(g, cfg.phi, p=cfg.p, k_max=cfg.k_max)
    m = g.n_diversion
    indptr_c, indices_c, data_c = state._indptr, state._indices, state._data
    indptr_r = g.rows.indptr
    indices_r = g.rows.indices
    data_r = g.rows.data

    def wedge(i):
        lo, hi = indptr_c[i], indptr_c[i + 1]
        cum = np.cumsum(data_c[lo:hi])
        u = rng.random() * cum[-1]
        k = indices_c[lo + min(int(np.searchsorted(cum, u, side="right")),
                               hi - lo - 1)]
        lo, hi = indptr_r[k], indptr_r[k + 1]
        cum = np.cumsum(data_r[lo:hi])
        u = rng.random() * cum[-1]
        return indices_r[lo + min(int(np.searchsorted(cum, u, side="right")),
                                  hi - lo - 1)]

    trace = []
    start = time.perf_counter()
    converged = False
    pass_index = 0
    while True:
        if cfg.max_passes is not None and pass_index >= cfg.max_passes:
            break
        if cfg.time_budget is not None and \
                time.perf_counter() - start > cfg.time_budget:
            break
        accepted = 0
        out_of_time = False
        for i in rng.permutation(m):
            j = wedge(i)
            a = state.assignment[i]
            b = state.assignment[j]
            if b == a or state.sizes[b] >= state.k_max:
                continue
            if state._delta_unchecked(i, a, b) > ACCEPT_EPS:
                state.apply_move(i, b)
                accepted += 1
        obj = state.objective_value()
        pass_index += 1
        trace.append(PassTrace(pass_index, accepted, obj.total,
                               obj.variance_sum, obj.covariance_sum,
                               time.perf_counter() - start))
        if cfg.time_budget is not None and \
                time.perf_counter() - start > cfg.time_budget:
            break
        if cfg.convergence and accepted == 0:
            converged = True
            break
    return SearchResult(clustering=state.clustering(),
                        objective=state.objective_value(),
                        trace=tuple(trace),
                        converged=converged,
                        seed=cfg.seed)


def local_search_restarts(g, cfg, restarts):
    """Best of `restarts` runs with seeds derived from cfg.seed."""
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    best = None
    for r in range(restarts):
        result = local_search(g, replace(cfg, seed=cfg.seed + r))
        if best is None or result.objective.total > best.objective.total:
            best = result
    return best


def balanced_partition_baseline(g, k, seed=0, max_passes=15):
    """Size-constrained label propagation over diversion co-weights.

    Starts from round-robin labels (unit j gets j mod k), then repeatedly
    moves each unit to the label with the largest co-weight affinity among
    its two-hop neighbors, subject to the size cap ceil(m/k). Deterministic
    given the seed, which only shuffles the visit order.
    """
    g.require_normalized()
    m = g.n_diversion
    if k < 1 or k > m:
        raise ValueError(f"k must be in [1, {m}]")
    cap = -(-m // k)
    labels = np.arange(m, dtype=np.int64) % k
    sizes = np.bincount(labels, minlength=k)
    rng = np.random.default_rng(np.random.SeedSequence([seed]))
    csc, csr = g.cols, g.rows
    for _ in range(max_passes):
        moved = 0
        for i in rng.permutation(m):
            aff = {}
            lo, hi = csc.indptr[i], csc.indptr[i + 1]
            for kk, wk in zip(csc.indices[lo:hi], csc.data[lo:hi]):
                rlo, rhi = csr.indptr[kk], csr.indptr[kk + 1]
                for j2, w2 in zip(csr.indices[rlo:rhi], csr.data[rlo:rhi]):
                    lab = labels[j2]
                    aff[lab] = aff.get(lab, 0.0) + wk * w2
            cur = labels[i]
            best_lab, best_aff = cur, aff.get(cur, 0.0)
            for lab in sorted(aff):
                if lab == cur or sizes[lab] >= cap:
                    continue
                if aff[lab] > best_aff:
                    best_lab, best_aff = lab, aff[lab]
            if best_lab != cur:
                labels[i] = best_lab
                sizes[cur] -= 1
                sizes[best_lab] += 1
                moved += 1
        if moved == 0:
            break
    return Clustering.from_labels(labels)


@dataclass(frozen=True)
class CorrClustCS:
    """Split of the in-cluster omega objective into non-negative weights.

    w_in = max{0, omega} on in-cluster pairs, w_out = -min{0, omega} on
    out-of-cluster pairs, and constant = sum over all ordered pairs of
    min{0, omega}; then corr_clust_total - constant = cs_total.
    """

    in_weight: float
    out_weight: float
    constant: float
    corr_clust_total: float

    @property
    def cs_total(self):
        return self.in_weight + self.out_weight


def corr_clust_cs_rewrite(g, phi, c):
    """Evaluate the non-negative-weight rewriting of the objective.

    Materializes omega densely; verification utility for desk-scale m.
    """
    om = omega_matrix(g, phi)
    same = c.assignment[:, None] == c.assignment[None, :]
    pos = np.maximum(om, 0.0)
    neg = np.minimum(om, 0.0)
    return CorrClustCS(
        in_weight=float(pos[same].sum()),
        out_weight=float(-neg[~same].sum()),
        constant=float(neg.sum()),
        corr_clust_total=float(om[same].sum()))


def write_trace_csv(trace, path):
    """Search trace as CSV; elapsed is wall-clock and thus run-specific."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("pass,moves_accepted,objective_total,variance_sum,"
                 "covariance_sum,elapsed\n")
        for row in trace:
            fh.write(f"{row.pass_index},{row.moves_accepted},"
                     f"{float(row.objective_total)!r},"
                     f"{float(row.variance_sum)!r},"
                     f"{float(row.covariance_sum)!r},{float(row.elapsed)!r}\n")
