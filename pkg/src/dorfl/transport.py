"""Discrete distributions and (unbalanced) optimal transport between them."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import cvxpy as cp
import numpy as np
import scipy.sparse as sp

from .errors import InvalidInputError
from .model import Sample, cost_matrix


@dataclass(frozen=True)
class DiscreteDistribution:
    """Weighted atoms; ``features`` is ``(n, d)``, ``labels`` and ``weights`` are ``(n,)``."""

    features: np.ndarray
    labels: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.features, dtype=float))
        y = np.asarray(self.labels).astype(int).reshape(-1)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if not (x.shape[0] == y.shape[0] == w.shape[0]):
            raise InvalidInputError("atoms, labels and weights must have equal length")
        if x.shape[0] == 0:
            raise InvalidInputError("distribution has no atoms")
        if not np.all(np.isfinite(x)):
            raise InvalidInputError("atom features must be finite")
        if not np.all(np.isin(y, (-1, 1))):
            raise InvalidInputError("labels must be -1 or +1")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise InvalidInputError(f"weights must be nonnegative and sum to 1 (sum={w.sum()!r})")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, features, labels) -> "DiscreteDistribution":
        n = np.atleast_2d(features).shape[0]
        return cls(features, labels, np.full(n, 1.0 / n))

    @classmethod
    def from_samples(cls, samples, weights=None) -> "DiscreteDistribution":
        x = np.stack([s.features for s in samples])
        y = np.array([s.label for s in samples])
        if weights is None:
            weights = np.full(len(samples), 1.0 / len(samples))
        return cls(x, y, weights)

    @property
    def atoms(self) -> list[Sample]:
        return [Sample(x, int(y)) for x, y in zip(self.features, self.labels)]

    @property
    def size(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class UWResult:
    value: float
    coupling: np.ndarray
    pbar: np.ndarray
    gap: float


def kl_divergence(p, q) -> float:
    """KL(p || q) with 0 log 0 = 0."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    support = p > 0
    if np.any(q[support] <= 0):
        raise InvalidInputError("KL undefined: p puts mass where q has none")
    return float(np.sum(p[support] * np.log(p[support] / q[support])))


def _xlogy_ratio(m, q):
    out = np.zeros_like(m)
    pos = m > 0
    out[pos] = m[pos] * np.log(m[pos] / q[pos])
    return out


def _dual_bound(C, feasible, a, b, m, beta) -> float:
    """Lower bound on UW from the column potentials v = beta * log(m / b)."""
    live = a > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        v = beta * np.log(m / b)
        inner = np.where(feasible, C + v[None, :], np.inf)
    return float(np.sum(a[live] * inner[live].min(axis=1)))


def _row_dual_bound(C, feasible, a, b, alpha, beta) -> float:
    """Lower bound on UW from row potentials ``alpha``; valid for any ``alpha``."""
    live = feasible & (a[:, None] > 0)
    v = np.max(np.where(live, alpha[:, None] - C, -np.inf), axis=0)
    with np.errstate(over="ignore"):
        mass = np.exp(v / beta)
    return float(np.sum(a * alpha) - beta * np.sum(b * (mass - 1.0)))


def _polish(C, feasible, a, b, gamma, beta, threshold):
    """Exact KKT solution on a forest extracted from an approximate coupling.

    The support is the maximum-weight spanning forest of the entries above
    ``threshold`` (relative to the row mass).  On a forest the equalities
    ``C_ij + v_j = alpha_i`` fix the potentials up to one shift per connected
    component; mass balance ``sum_j b_j exp(v_j / beta) = sum_i a_i`` fixes the
    shift, and the flows follow by leaf elimination.  Returns None when the
    recovered flows are not a valid coupling.
    """
    n, m = C.shape
    live = a > 0
    support = (gamma > threshold * np.maximum(a[:, None], 1e-300)) & feasible & live[:, None]
    candidates = sorted(zip(*np.nonzero(support)), key=lambda e: -gamma[e])
    nodes = [("r", i) for i in range(n) if live[i]] + [("c", j) for j in range(m) if support[:, j].any()]
    edges = _spanning_forest(nodes, candidates)
    adj = {u: [] for u in nodes}
    for i, j in edges:
        adj[("r", i)].append(("c", j))
        adj[("c", j)].append(("r", i))

    alpha = np.zeros(n)
    v = np.full(m, -np.inf)
    seen = set()
    for root in nodes:
        if root in seen:
            continue
        comp, stack = [], [root]
        seen.add(root)
        pot = {root: 0.0}
        while stack:
            u = stack.pop()
            comp.append(u)
            for w in adj[u]:
                if w in seen:
                    continue
                seen.add(w)
                i, j = (u[1], w[1]) if u[0] == "r" else (w[1], u[1])
                pot[w] = pot[u] - C[i, j] if u[0] == "r" else pot[u] + C[i, j]
                stack.append(w)
        cols = [w[1] for w in comp if w[0] == "c"]
        rows = [w[1] for w in comp if w[0] == "r"]
        if not cols:
            return None
        vc = np.array([pot[("c", j)] for j in cols])
        top = vc.max()
        shift = beta * np.log(a[rows].sum() / np.sum(b[cols] * np.exp((vc - top) / beta))) - top
        for j in cols:
            v[j] = pot[("c", j)] + shift
        for i in rows:
            alpha[i] = pot[("r", i)] + shift

    mass = np.where(np.isfinite(v), b * np.exp(np.minimum(v, 700.0) / beta), 0.0)
    flow = np.zeros((n, m))
    row_left = np.where(live, a, 0.0).astype(float)
    col_left = mass.copy()
    deg = {u: len(adj[u]) for u in nodes}
    open_edges = set(edges)
    leaves = [u for u in nodes if deg[u] == 1]
    while leaves:
        u = leaves.pop()
        if deg[u] != 1:
            continue
        i, j = next((e for e in open_edges if (e[0] if u[0] == "r" else e[1]) == u[1]))
        amount = row_left[i] if u[0] == "r" else col_left[j]
        flow[i, j] = amount
        row_left[i] -= amount
        col_left[j] -= amount
        open_edges.discard((i, j))
        for w in (("r", i), ("c", j)):
            deg[w] -= 1
            if deg[w] == 1:
                leaves.append(w)
    if open_edges or np.any(flow < -1e-14):
        return None
    return np.maximum(flow, 0.0), alpha


def _spanning_forest(nodes, edges):
    parent = {u: u for u in nodes}

    def find(u):
        while parent[u] != u:
            parent[u] = parent[parent[u]]
            u = parent[u]
        return u

    kept = []
    for i, j in edges:
        ru, rw = find(("r", i)), find(("c", j))
        if ru != rw:
            parent[ru] = rw
            kept.append((int(i), int(j)))
    return kept


def uw_distance_discrete(p: DiscreteDistribution, q: DiscreteDistribution, beta: float,
                         tol: float = 1e-8) -> UWResult:
    """Unbalanced Wasserstein distance UW(p || q).

    Minimises ``<C, g> + beta * KL(colsum(g) || q.weights)`` over couplings
    ``g >= 0`` whose row sums equal ``p.weights``; entries joining atoms with
    different labels are fixed at zero.  The conic program is solved with an
    interior-point method and the returned ``gap`` is an independent
    primal-dual certificate: the true value lies in ``[value - gap, value]``.
    """
    if beta <= 0:
        raise InvalidInputError("beta must be positive")
    if p.dim != q.dim:
        raise InvalidInputError("distributions live in different dimensions")
    if np.any(q.weights <= 0):
        raise InvalidInputError("reference distribution must have strictly positive weights")

    C = cost_matrix(p.features, p.labels, q.features, q.labels)
    feasible = np.isfinite(C)
    a, b = p.weights, q.weights
    if np.any((a > 0) & ~feasible.any(axis=1)):
        raise InvalidInputError("no feasible coupling: some atom has no same-label partner")

    rows, cols = np.nonzero(feasible & (a[:, None] > 0))
    n, m = C.shape
    k = rows.size
    row_op = sp.csr_matrix((np.ones(k), (rows, np.arange(k))), shape=(n, k))
    col_op = sp.csr_matrix((np.ones(k), (cols, np.arange(k))), shape=(m, k))
    g = cp.Variable(k, nonneg=True)
    colsum = col_op @ g
    objective = C[rows, cols] @ g + beta * cp.sum(cp.rel_entr(colsum, b))
    problem = cp.Problem(cp.Minimize(objective), [row_op @ g == a])
    with warnings.catch_warnings():
        # accuracy is certified below, independently of the solver's own status
        warnings.simplefilter("ignore", UserWarning)
        problem.solve(solver=cp.CLARABEL)
    if g.value is None:
        raise InvalidInputError(f"UW solver failed with status {problem.status}")

    gamma = np.zeros((n, m))
    gamma[rows, cols] = np.maximum(g.value, 0.0)
    # restore exact row marginals lost to interior-point slack
    sums = gamma.sum(axis=1)
    gamma *= np.divide(a, sums, out=np.zeros_like(a), where=sums > 0)[:, None]
    alpha = np.asarray(problem.constraints[0].dual_value, dtype=float).reshape(-1)
    candidates = [(gamma, alpha), (gamma, -alpha)]
    for threshold in (1e-4, 1e-6, 1e-8, 1e-10, 1e-12):
        polished = _polish(C, feasible, a, b, gamma, beta, threshold)
        if polished is not None:
            candidates.append(polished)

    best = None
    Cf = np.where(feasible, C, 0.0)
    for coupling, pot in candidates:
        pbar = coupling.sum(axis=0)
        value = float(np.sum(Cf * coupling) + beta * np.sum(_xlogy_ratio(pbar, b)))
        with np.errstate(invalid="ignore"):
            bound = max(_dual_bound(C, feasible, a, b, pbar, beta),
                        _row_dual_bound(C, feasible, a, b, pot, beta))
        if best is None or value - bound < best[3]:
            best = (coupling, pbar, value, value - bound)
    gamma, pbar, value, gap = best
    if gap > tol:
        raise InvalidInputError(f"UW solve not certified: duality gap {gap:.3e} exceeds {tol:.1e}")
    return UWResult(value=max(value, 0.0), coupling=gamma, pbar=pbar, gap=max(gap, 0.0))


def wasserstein_1d_exact(p: DiscreteDistribution, q: DiscreteDistribution) -> float:
    """Exact W with cost |x - x'|^2 / 2 between 1-D distributions via the quantile coupling."""
    if p.dim != 1 or q.dim != 1:
        raise InvalidInputError("exact Wasserstein is implemented for 1-D atoms only")
    labels = np.concatenate([p.labels[p.weights > 0], q.labels[q.weights > 0]])
    if np.unique(labels).size > 1:
        raise InvalidInputError("exact Wasserstein needs all atoms to share one label")

    def quantiles(dist):
        order = np.argsort(dist.features[:, 0], kind="stable")
        return dist.features[order, 0], np.cumsum(dist.weights[order])

    xp, cum_p = quantiles(p)
    xq, cum_q = quantiles(q)
    cum_p[-1] = cum_q[-1] = 1.0
    breaks = np.unique(np.concatenate([[0.0], cum_p, cum_q]))
    breaks = breaks[breaks <= 1.0]
    lo, hi = breaks[:-1], breaks[1:]
    mid = 0.5 * (lo + hi)
    ip = np.minimum(np.searchsorted(cum_p, mid), xp.size - 1)
    iq = np.minimum(np.searchsorted(cum_q, mid), xq.size - 1)
    return float(np.sum((hi - lo) * 0.5 * (xp[ip] - xq[iq]) ** 2))


def _match_support(p_bar: DiscreteDistribution, p_hat: DiscreteDistribution) -> np.ndarray:
    """Weights of ``p_bar`` re-expressed on ``p_hat``'s atoms."""
    out = np.zeros(p_hat.size)
    for x, y, w in zip(p_bar.features, p_bar.labels, p_bar.weights):
        if w == 0:
            continue
        hit = np.flatnonzero(
            (p_hat.labels == y) & np.all(p_hat.features == x, axis=1) & (p_hat.weights > 0)
        )
        if hit.size == 0:
            raise InvalidInputError("p_bar is not absolutely continuous with respect to p_hat")
        out[hit[0]] += w
    return out


def lemma1_check(p_star: DiscreteDistribution, p_bar: DiscreteDistribution,
                 p_hat: DiscreteDistribution, beta: float) -> tuple[float, float]:
    """Both sides of UW(p* || p_hat) <= W(p*, p_bar) + beta * KL(p_bar || p_hat)."""
    bar_on_hat = _match_support(p_bar, p_hat)
    keep = p_hat.weights > 0
    ref = DiscreteDistribution(p_hat.features[keep], p_hat.labels[keep], p_hat.weights[keep])
    lhs = uw_distance_discrete(p_star, ref, beta).value
    rhs = wasserstein_1d_exact(p_star, p_bar) + beta * kl_divergence(bar_on_hat, p_hat.weights)
    return lhs, rhs
