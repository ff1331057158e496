"""Robust surrogate, tilted dual objective, gradient estimators and certificates.

For a sample zeta the robust surrogate is

    f(theta, zeta) = sup_x  L(theta, x) - rho * c(x, zeta),

and the penalised unbalanced-Wasserstein problem reduces to the exponential
tilt ``E[exp(f / (rho * beta))]`` of the empirical mixture.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigurationError, InvalidInputError
from .model import NO_SCORE, AdjustedLogistic, OutlierScore, cost_matrix, transport_cost
from .transport import DiscreteDistribution


@dataclass(frozen=True)
class HyperParams:
    rho: float = 1.0
    beta: float = 1.0
    eta_theta: Optional[float] = None
    eta_lambda: Optional[float] = None
    inner_tol: float = 1e-6
    inner_max_iters: int = 10_000
    rounds: int = 1000
    batch_size: Optional[int] = 1
    radius: float = 10.0

    def __post_init__(self):
        for name in ("rho", "beta", "inner_tol", "radius"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)!r}")
        for name in ("eta_theta", "eta_lambda"):
            value = getattr(self, name)
            if value is not None and value < 0:
                raise ConfigurationError(f"{name} must be nonnegative, got {value!r}")
        if self.inner_tol > 1:
            raise ConfigurationError("inner_tol must not exceed 1")
        if self.inner_max_iters < 1 or self.rounds < 1:
            raise ConfigurationError("inner_max_iters and rounds must be positive")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigurationError("batch_size must be positive (or None for full batch)")

    @property
    def temperature(self) -> float:
        return self.rho * self.beta

    @property
    def step_theta(self) -> float:
        return self.eta_theta if self.eta_theta is not None else 1.0 / math.sqrt(self.rounds)

    @property
    def step_lambda(self) -> float:
        return self.eta_lambda if self.eta_lambda is not None else 1.0 / math.sqrt(self.rounds)


@dataclass(frozen=True)
class InnerMaxResult:
    maximizer: np.ndarray
    value: np.ndarray
    iterations: np.ndarray
    grad_norm_at_exit: np.ndarray
    tolerance: float


def _objective(score, loss):
    return loss if loss is not None else AdjustedLogistic(score)


def inner_maximize(theta, x, y, hp: HyperParams, score: OutlierScore = NO_SCORE,
                   loss=None) -> InnerMaxResult:
    """Gradient ascent on ``L(theta, .) - rho * c(., zeta)`` started at zeta.

    ``x``/``y`` hold one sample or a batch.  The step is the reciprocal of a
    smoothness bound; each sample stops once its ascent gradient drops below
    ``inner_tol * mu``, which places it within ``inner_tol`` of the maximiser
    when the objective is ``mu``-strongly concave.
    """
    loss = _objective(score, loss)
    theta = np.asarray(theta, dtype=float)
    zeta = np.asarray(x, dtype=float)
    single = zeta.ndim == 1
    zeta = np.atleast_2d(zeta)
    y = np.broadcast_to(np.asarray(y), zeta.shape[:1])
    if zeta.shape[1] != theta.shape[0]:
        raise InvalidInputError("dimension mismatch between theta and sample features")

    rho = hp.rho
    mu = rho + loss.concavity - loss.convexity(theta)
    if mu <= 0:
        raise ConfigurationError(
            f"rho={rho!r} does not make the inner problem strongly concave "
            f"(needs rho > {loss.convexity(theta) - loss.concavity:.6g} at this theta)"
        )
    step = 1.0 / (rho + loss.curvature(theta))
    stop = hp.inner_tol * mu

    xi = zeta.copy()
    iters = np.zeros(len(xi), dtype=int)
    grad = loss.grad_x(theta, xi, y) - rho * (xi - zeta)
    norms = np.linalg.norm(grad, axis=1)
    active = np.flatnonzero(norms > stop)
    for _ in range(hp.inner_max_iters):
        if active.size == 0:
            break
        xi[active] += step * grad[active]
        iters[active] += 1
        g = loss.grad_x(theta, xi[active], y[active]) - rho * (xi[active] - zeta[active])
        grad[active] = g
        norms[active] = np.linalg.norm(g, axis=1)
        active = active[norms[active] > stop]

    value = loss.value(theta, xi, y) - rho * transport_cost(xi, y, zeta, y)
    if single:
        return InnerMaxResult(xi[0], value[0], iters[0], norms[0], stop)
    return InnerMaxResult(xi, value, iters, norms, stop)


def surrogate(theta, x, y, hp: HyperParams, score: OutlierScore = NO_SCORE, loss=None):
    """Robust surrogate f(theta, zeta) for each sample."""
    return inner_maximize(theta, x, y, hp, score, loss).value


def tilt(values, hp: HyperParams):
    return np.exp(np.asarray(values) / hp.temperature)


def client_tilts(theta, clients: Sequence[DiscreteDistribution], hp: HyperParams,
                 score: OutlierScore = NO_SCORE, loss=None) -> np.ndarray:
    """Per-client ``E_{P_i}[exp(f / (rho beta))]``; H is linear in lambda with these slopes."""
    if len(clients) == 0:
        raise InvalidInputError("no clients")
    out = np.empty(len(clients))
    for i, dist in enumerate(clients):
        f = surrogate(theta, dist.features, dist.labels, hp, score, loss)
        out[i] = float(np.dot(dist.weights, tilt(f, hp)))
    return out


def _check_lambda(lam, n):
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (n,):
        raise InvalidInputError(f"lambda has shape {lam.shape}, expected ({n},)")
    if np.any(lam < 0) or abs(lam.sum() - 1.0) > 1e-12:
        raise InvalidInputError("lambda must lie on the probability simplex")
    return lam


def dual_objective_H(theta, lam, clients: Sequence[DiscreteDistribution], hp: HyperParams,
                     score: OutlierScore = NO_SCORE, loss=None) -> float:
    """H(theta, lambda) = sum_i lambda_i E_{P_i}[exp(f(theta, zeta) / (rho beta))]."""
    lam = _check_lambda(lam, len(clients))
    return float(np.dot(lam, client_tilts(theta, clients, hp, score, loss)))


def grad_theta_estimate(theta, x, y, hp: HyperParams, score: OutlierScore = NO_SCORE,
                        loss=None) -> np.ndarray:
    """exp((L(z) - rho c(z, zeta)) / (rho beta)) * grad_theta L(z) / (rho beta), per sample."""
    loss = _objective(score, loss)
    res = inner_maximize(theta, x, y, hp, score, loss)
    weight = tilt(res.value, hp) / hp.temperature
    return np.asarray(weight)[..., None] * loss.grad_theta(theta, res.maximizer, y)


def grad_lambda_estimate(theta, x, y, hp: HyperParams, score: OutlierScore = NO_SCORE,
                         loss=None):
    """exp((L(z) - rho c(z, zeta)) / (rho beta)), per sample."""
    return tilt(inner_maximize(theta, x, y, hp, score, loss).value, hp)


def mixture(lam, clients: Sequence[DiscreteDistribution]) -> DiscreteDistribution:
    """The aggregated empirical distribution sum_i lambda_i P_i, zero-weight atoms dropped."""
    lam = _check_lambda(lam, len(clients))
    x = np.concatenate([c.features for c in clients])
    y = np.concatenate([c.labels for c in clients])
    w = np.concatenate([l * c.weights for l, c in zip(lam, clients)])
    keep = w > 0
    w = w[keep]
    return DiscreteDistribution(x[keep], y[keep], w / w.sum())


@dataclass(frozen=True)
class CertificateReport:
    worst_case: DiscreteDistribution
    induced_radius: float
    dual_value: float
    robust_value: float
    bound: float

    def __post_init__(self):
        if abs(self.robust_value - self.bound) > 1e-9 * max(1.0, abs(self.bound)):
            raise ArithmeticError(
                f"certificate identity violated: E[L]={self.robust_value!r}, bound={self.bound!r}"
            )
        if self.induced_radius < 0:
            raise ArithmeticError("negative induced radius")


def robustness_certificate(theta, lam, clients: Sequence[DiscreteDistribution], hp: HyperParams,
                           score: OutlierScore = NO_SCORE, loss=None) -> CertificateReport:
    """Worst-case distribution of the penalised problem and its induced UW radius.

    The worst case moves every empirical atom to its inner maximiser and
    reweights it by the exponential tilt.  Its expected loss equals
    ``rho * r + rho * beta * log E[exp(f / (rho beta))]`` where ``r`` is the
    UW distance it sits at.
    """
    loss = _objective(score, loss)
    ref = mixture(lam, clients)
    res = inner_maximize(theta, ref.features, ref.labels, hp, score, loss)
    z = res.maximizer
    temp = hp.temperature
    logits = np.log(ref.weights) + res.value / temp
    lse = logsumexp(logits)
    w = np.exp(logits - lse)
    w /= w.sum()
    cost = transport_cost(z, ref.labels, ref.features, ref.labels)
    pos = w > 0
    kl = float(np.sum(w[pos] * np.log(w[pos] / ref.weights[pos])))
    radius = float(np.dot(w, cost)) + hp.beta * kl
    dual_value = temp * float(lse)
    robust_value = float(np.dot(w, loss.value(theta, z, ref.labels)))
    return CertificateReport(
        worst_case=DiscreteDistribution(z, ref.labels, w),
        induced_radius=radius,
        dual_value=dual_value,
        robust_value=robust_value,
        bound=hp.rho * radius + dual_value,
    )


def primal_sup_on_grid(theta, p_hat: DiscreteDistribution, hp: HyperParams, grid_x, grid_y,
                       score: OutlierScore = NO_SCORE, loss=None, max_iter: int = 5000,
                       tol: float = 1e-12) -> float:
    """Lower bound on ``sup_P E_P[L] - rho UW(P || p_hat)`` over P supported on a grid.

    The sup over P and the inf inside UW combine into one concave program over
    couplings ``g`` between grid points (rows) and empirical atoms (columns):

        max  sum_kj g_kj (L_k - rho c_kj) - rho beta KL(colsum(g) || p_hat),

    solved by exponentiated-gradient ascent on ``g`` with step ``1/(rho beta)``.
    Every iterate is feasible, so the returned value never exceeds the true sup.
    """
    loss = _objective(score, loss)
    grid_x = np.atleast_2d(np.asarray(grid_x, dtype=float))
    grid_y = np.broadcast_to(np.asarray(grid_y), grid_x.shape[:1])
    if grid_x.shape[0] == 0:
        raise InvalidInputError("empty grid")
    C = cost_matrix(grid_x, grid_y, p_hat.features, p_hat.labels)
    feasible = np.isfinite(C)
    keep = p_hat.weights > 0
    if np.any(keep & ~feasible.any(axis=0)):
        raise InvalidInputError("grid has no point sharing a label with some atom")
    gain = loss.value(theta, grid_x, grid_y)[:, None] - hp.rho * np.where(feasible, C, 0.0)
    temp = hp.temperature
    q = p_hat.weights
    logq = np.log(np.where(keep, q, 1.0))

    def value_of(log_g):
        g = np.exp(log_g)
        m = g.sum(axis=0)
        pos = m > 0
        kl = np.sum(m[pos] * (np.log(m[pos]) - logq[pos]))
        return float(np.sum(np.where(feasible, g * gain, 0.0)) - temp * kl)

    mask = feasible & keep[None, :]
    log_g = np.where(mask, logq[None, :] - np.log(np.maximum(mask.sum(axis=0), 1))[None, :], -np.inf)
    best = value_of(log_g)
    for _ in range(max_iter):
        log_m = logsumexp(log_g, axis=0)
        log_g = log_g + gain / temp + (logq - np.where(keep, log_m, 0.0))[None, :]
        log_g = np.where(mask, log_g - logsumexp(log_g[mask]), -np.inf)
        current = value_of(log_g)
        if current - best <= tol * max(1.0, abs(best)) and current <= best:
            break
        best = max(best, current)
    return best
