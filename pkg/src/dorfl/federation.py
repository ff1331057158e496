"""Simulated federated minimax training: client rounds, server aggregation, traces."""

from __future__ import annotations

import csv
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from .dro import HyperParams, client_tilts, grad_theta_estimate, inner_maximize, tilt
from .errors import InvalidInputError
from .model import NO_SCORE, AdjustedLogistic, OutlierScore
from .transport import DiscreteDistribution


def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-and-threshold)."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise InvalidInputError("simplex projection needs a nonempty vector")
    if not np.all(np.isfinite(v)):
        raise InvalidInputError("simplex projection needs finite entries")
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, v.size + 1)
    rho = np.flatnonzero(u - css / k > 0)[-1]
    tau = css[rho] / (rho + 1)
    w = np.maximum(v - tau, 0.0)
    # absorb the last few ulps so the output sums to one to machine precision
    return w / w.sum()


def project_ball(theta, radius: float) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    norm = np.linalg.norm(theta)
    if norm <= radius:
        return theta.copy()
    return theta * (radius / norm)


@dataclass(frozen=True)
class MixtureWeights:
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or w.size == 0:
            raise InvalidInputError("mixture weights must be a nonempty vector")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise InvalidInputError("mixture weights must lie on the simplex")
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, n: int) -> "MixtureWeights":
        return cls(np.full(n, 1.0 / n))


@dataclass(frozen=True)
class ClientState:
    client_id: int
    data: DiscreteDistribution
    seed: int = 0

    def rng(self, round_index: int) -> np.random.Generator:
        """Stream for one round; depends only on (seed, client_id, round)."""
        return np.random.default_rng([self.seed, self.client_id, round_index])

    def minibatch(self, round_index: int, batch_size: Optional[int]):
        x, y = self.data.features, self.data.labels
        if batch_size is None:
            return x, y
        idx = self.rng(round_index).choice(self.data.size, size=batch_size, p=self.data.weights)
        return x[idx], y[idx]


@dataclass(frozen=True)
class ClientUpdate:
    theta_local: np.ndarray
    g_lambda: float


class Method:
    """Estimator plugin: what a client sends back and whether lambda moves."""

    name = "dorfl"
    adaptive_lambda = True

    def initial_lambda(self, sizes) -> np.ndarray:
        return np.full(len(sizes), 1.0 / len(sizes))

    def estimates(self, theta, x, y, hp: HyperParams, score: OutlierScore):
        """Minibatch means of (g_theta, g_lambda)."""
        res = inner_maximize(theta, x, y, hp, score)
        weight = tilt(res.value, hp)
        g_theta = (weight / hp.temperature)[:, None] * AdjustedLogistic(score).grad_theta(
            theta, res.maximizer, y
        )
        return g_theta.mean(axis=0), float(weight.mean())


DORFL = Method()


def client_round(cs: ClientState, theta_t, lambda_t, hp: HyperParams, score: OutlierScore = NO_SCORE,
                 round_index: int = 0, method: Method = DORFL) -> ClientUpdate:
    """One local step: sample, maximise, estimate, and move theta."""
    theta_t = np.asarray(theta_t, dtype=float)
    x, y = cs.minibatch(round_index, hp.batch_size)
    g_theta, g_lambda = method.estimates(theta_t, np.atleast_2d(x), np.atleast_1d(y), hp, score)
    return ClientUpdate(theta_t - hp.step_theta * g_theta, g_lambda)


def server_aggregate(updates: Sequence[ClientUpdate], lambda_t, hp: HyperParams,
                     adaptive_lambda: bool = True):
    lambda_t = np.asarray(lambda_t, dtype=float)
    if len(updates) != lambda_t.size:
        raise InvalidInputError(f"{len(updates)} updates for {lambda_t.size} mixture weights")
    locals_ = np.stack([u.theta_local for u in updates])
    theta_next = project_ball(lambda_t @ locals_, hp.radius)
    if not adaptive_lambda:
        return theta_next, lambda_t.copy()
    g = np.array([u.g_lambda for u in updates])
    return theta_next, project_simplex(lambda_t + hp.step_lambda * g)


@dataclass
class TrainingTrace:
    """Round-by-round record; row ``t`` holds the state after round ``t + 1``."""

    method: str
    thetas: np.ndarray
    lambdas: np.ndarray
    g_lambda: np.ndarray
    surrogate: np.ndarray
    seconds: np.ndarray
    lambda0: np.ndarray = field(default=None)

    @property
    def rounds(self) -> int:
        return self.thetas.shape[0]

    @property
    def theta_bar(self) -> np.ndarray:
        return self.thetas.mean(axis=0)

    def running_average(self, t: int) -> np.ndarray:
        """Mean of the first ``t`` iterates."""
        if not 1 <= t <= self.rounds:
            raise InvalidInputError(f"round {t} outside 1..{self.rounds}")
        return self.thetas[:t].mean(axis=0)

    def write_csv(self, path):
        n = self.lambdas.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["round", "theta_norm"] + [f"lambda_{i + 1}" for i in range(n)]
                       + ["gap_surrogate", "seconds", "method"])
            for t in range(self.rounds):
                w.writerow([t + 1, repr(float(np.linalg.norm(self.thetas[t])))]
                           + [repr(float(v)) for v in self.lambdas[t]]
                           + [repr(float(self.surrogate[t])), repr(float(self.seconds[t])), self.method])


def make_clients(datasets: Sequence[DiscreteDistribution], seed: int) -> List[ClientState]:
    if len(datasets) == 0:
        raise InvalidInputError("need at least one client")
    return [ClientState(i, d, seed) for i, d in enumerate(datasets)]


def run_training(clients: Sequence[DiscreteDistribution], hp: HyperParams,
                 score: OutlierScore = NO_SCORE, seed: int = 0, method: Method = DORFL,
                 monitor_every: int = 0, jobs: int = 1) -> TrainingTrace:
    """Synchronous rounds from theta = 0.

    ``monitor_every > 0`` evaluates the gap surrogate at the running average
    every that many rounds (and at the last round); other rows hold NaN.
    ``jobs > 1`` runs the clients of a round on a thread pool; results are
    consumed in client order, so traces do not depend on ``jobs``.
    """
    states = make_clients(clients, seed)
    dim = states[0].data.dim
    theta = np.zeros(dim)
    lam = method.initial_lambda([c.size for c in clients])
    T, n = hp.rounds, len(states)
    thetas = np.empty((T, dim))
    lambdas = np.empty((T, n))
    g_lam = np.empty((T, n))
    surrogate = np.full(T, np.nan)
    seconds = np.empty(T)
    lambda0 = lam.copy()
    pool = ThreadPoolExecutor(jobs) if jobs > 1 else None
    try:
        for t in range(T):
            start = time.perf_counter()

            def work(cs, theta=theta, lam=lam, t=t):
                return client_round(cs, theta, lam, hp, score, t, method)

            updates = list(pool.map(work, states)) if pool else [work(cs) for cs in states]
            g_lam[t] = [u.g_lambda for u in updates]
            theta, lam = server_aggregate(updates, lam, hp, method.adaptive_lambda)
            thetas[t] = theta
            lambdas[t] = lam
            seconds[t] = time.perf_counter() - start
            if monitor_every and ((t + 1) % monitor_every == 0 or t + 1 == T):
                surrogate[t] = duality_gap_surrogate(thetas[: t + 1].mean(axis=0), clients, hp, score)
    finally:
        if pool:
            pool.shutdown()
    return TrainingTrace(method.name, thetas, lambdas, g_lam, surrogate, seconds, lambda0)


def duality_gap_surrogate(theta, clients: Sequence[DiscreteDistribution], hp: HyperParams,
                          score: OutlierScore = NO_SCORE) -> float:
    """max over the simplex of H(theta, .), attained at a vertex since H is linear in lambda."""
    return float(np.max(client_tilts(theta, clients, hp, score)))


def _client_tilt_grads(theta, clients, hp, score):
    vals, grads = [], []
    for dist in clients:
        res = inner_maximize(theta, dist.features, dist.labels, hp, score)
        w = dist.weights * tilt(res.value, hp)
        vals.append(w.sum())
        grads.append(grad_theta_estimate(theta, dist.features, dist.labels, hp, score).T @ dist.weights)
    return np.array(vals), np.stack(grads)


def minimax_reference(clients: Sequence[DiscreteDistribution], hp: HyperParams,
                      score: OutlierScore = NO_SCORE, theta0=None, ftol: float = 1e-14):
    """Deterministic solution of ``min_theta max_i H_i(theta)`` over the ball.

    Epigraph form solved by SLSQP; gradients of each H_i come from Danskin's
    theorem, i.e. the full-batch tilted estimator.  Returns ``(value, theta)``.
    """
    dim = clients[0].dim
    theta0 = np.zeros(dim) if theta0 is None else np.asarray(theta0, dtype=float)
    vals, _ = _client_tilt_grads(theta0, clients, hp, score)
    z0 = np.r_[theta0, vals.max()]

    def cons(z):
        v, _ = _client_tilt_grads(z[:-1], clients, hp, score)
        return np.r_[z[-1] - v, hp.radius**2 - z[:-1] @ z[:-1]]

    def cons_jac(z):
        _, g = _client_tilt_grads(z[:-1], clients, hp, score)
        rows = np.hstack([-g, np.ones((len(clients), 1))])
        return np.vstack([rows, np.r_[-2 * z[:-1], 0.0]])

    res = minimize(
        lambda z: z[-1], z0, jac=lambda z: np.r_[np.zeros(dim), 1.0], method="SLSQP",
        constraints=[{"type": "ineq", "fun": cons, "jac": cons_jac}],
        options={"ftol": ftol, "maxiter": 500},
    )
    theta = project_ball(res.x[:-1], hp.radius)
    return duality_gap_surrogate(theta, clients, hp, score), theta
