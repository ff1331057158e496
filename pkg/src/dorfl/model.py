"""Samples, the logistic model, outlier scores and the transport cost.

Every function here is vectorised over a leading batch axis: ``x`` may be a
single feature vector of shape ``(d,)`` or a batch of shape ``(n, d)``, and
``y`` the matching scalar label or ``(n,)`` array of labels in {-1, +1}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit

from .errors import InvalidInputError

# max |sigma''(u)| over the real line, attained where sigma(u) = 1/2 -+ 1/(2*sqrt(3))
SIGMOID_CURVATURE = math.sqrt(3.0) / 18.0

INFEASIBLE = math.inf

SCORE_VARIANTS = ("none", "quadratic", "sigmoid")


@dataclass(frozen=True)
class Sample:
    features: np.ndarray
    label: int

    def __post_init__(self):
        x = np.asarray(self.features, dtype=float)
        if x.ndim != 1:
            raise InvalidInputError("sample features must be a 1-D vector")
        if not np.all(np.isfinite(x)):
            raise InvalidInputError("sample features must be finite")
        if self.label not in (-1, 1):
            raise InvalidInputError(f"label must be -1 or +1, got {self.label!r}")
        object.__setattr__(self, "features", x)

    @property
    def dim(self) -> int:
        return self.features.shape[0]


@dataclass
class ModelParams:
    theta: np.ndarray
    radius: float = 10.0

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        if self.radius <= 0:
            raise InvalidInputError("radius must be positive")
        if not np.all(np.isfinite(self.theta)):
            raise InvalidInputError("theta must be finite")
        if np.linalg.norm(self.theta) > self.radius * (1 + 1e-12):
            raise InvalidInputError("theta lies outside the parameter ball")

    @classmethod
    def zeros(cls, dim: int, radius: float = 10.0) -> "ModelParams":
        return cls(np.zeros(dim), radius)


@dataclass(frozen=True)
class OutlierScore:
    """Prior-knowledge penalty h subtracted from the loss.

    ``quadratic`` scores ``rho2 * ||x - prior_mean||^2``; ``sigmoid`` scores
    ``rho2 * 1{y = -1} * sigmoid((x[feature_index] - threshold) / softness)``.
    """

    variant: str = "none"
    rho2: float = 0.0
    prior_mean: Optional[np.ndarray] = None
    threshold: float = 0.0
    softness: float = 1.0
    feature_index: int = 0

    def __post_init__(self):
        if self.variant not in SCORE_VARIANTS:
            raise InvalidInputError(f"unknown score variant {self.variant!r}")
        if self.rho2 < 0:
            raise InvalidInputError("rho2 must be nonnegative")
        if self.softness <= 0:
            raise InvalidInputError("softness must be positive")
        if self.variant == "quadratic":
            if self.prior_mean is None:
                raise InvalidInputError("quadratic score needs a prior mean")
            object.__setattr__(self, "prior_mean", np.asarray(self.prior_mean, dtype=float))

    def check_dim(self, d: int):
        if self.variant == "quadratic" and self.prior_mean.shape != (d,):
            raise InvalidInputError(
                f"prior mean has length {self.prior_mean.shape[0]}, features have {d}"
            )
        if self.variant == "sigmoid" and not 0 <= self.feature_index < d:
            raise InvalidInputError(f"feature index {self.feature_index} out of range")

    @property
    def concavity(self) -> float:
        """Strong concavity that -h adds to the adjusted loss in x."""
        return 2.0 * self.rho2 if self.variant == "quadratic" else 0.0

    @property
    def curvature(self) -> float:
        """Bound on the Hessian norm of h in x."""
        if self.variant == "quadratic":
            return 2.0 * self.rho2
        if self.variant == "sigmoid":
            return self.rho2 * SIGMOID_CURVATURE / self.softness**2
        return 0.0


NO_SCORE = OutlierScore()


def _check(theta, x):
    theta = np.asarray(theta, dtype=float)
    x = np.asarray(x, dtype=float)
    if theta.ndim != 1 or x.shape[-1] != theta.shape[0]:
        raise InvalidInputError(
            f"dimension mismatch: theta has shape {theta.shape}, features {x.shape}"
        )
    return theta, x


def margin(theta, x, y):
    theta, x = _check(theta, x)
    return np.asarray(y) * (x @ theta)


def logistic_loss(theta, x, y):
    """log(1 + exp(-y <theta, x>)), overflow safe."""
    return np.logaddexp(0.0, -margin(theta, x, y))


def logistic_loss_grad_theta(theta, x, y):
    theta, x = _check(theta, x)
    y = np.asarray(y, dtype=float)
    coef = -y * expit(-y * (x @ theta))
    return coef[..., None] * x


def logistic_loss_grad_x(theta, x, y):
    theta, x = _check(theta, x)
    y = np.asarray(y, dtype=float)
    coef = -y * expit(-y * (x @ theta))
    return coef[..., None] * theta


def outlier_score(score: OutlierScore, x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y)
    score.check_dim(x.shape[-1])
    if score.variant == "quadratic":
        diff = x - score.prior_mean
        return score.rho2 * np.sum(diff * diff, axis=-1)
    if score.variant == "sigmoid":
        g = x[..., score.feature_index]
        gate = (y == -1).astype(float)
        return score.rho2 * gate * expit((g - score.threshold) / score.softness)
    return np.zeros(x.shape[:-1])


def outlier_score_grad_x(score: OutlierScore, x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y)
    score.check_dim(x.shape[-1])
    if score.variant == "quadratic":
        return 2.0 * score.rho2 * (x - score.prior_mean)
    grad = np.zeros_like(x)
    if score.variant == "sigmoid":
        s = expit((x[..., score.feature_index] - score.threshold) / score.softness)
        gate = (y == -1).astype(float)
        grad[..., score.feature_index] = score.rho2 * gate * s * (1.0 - s) / score.softness
    return grad


def adjusted_loss(theta, x, y, score: OutlierScore = NO_SCORE):
    """L = l - h."""
    return logistic_loss(theta, x, y) - outlier_score(score, x, y)


def adjusted_loss_grad_x(theta, x, y, score: OutlierScore = NO_SCORE):
    return logistic_loss_grad_x(theta, x, y) - outlier_score_grad_x(score, x, y)


def transport_cost(xa, ya, xb, yb):
    """Half squared Euclidean distance on features; labels never move."""
    xa = np.asarray(xa, dtype=float)
    xb = np.asarray(xb, dtype=float)
    if xa.shape[-1] != xb.shape[-1]:
        raise InvalidInputError("transport cost between samples of different dimension")
    diff = xa - xb
    cost = 0.5 * np.sum(diff * diff, axis=-1)
    return np.where(np.asarray(ya) == np.asarray(yb), cost, INFEASIBLE)


def cost_matrix(xa, ya, xb, yb):
    """Pairwise transport costs, rows indexed by ``xa`` and columns by ``xb``."""
    xa = np.atleast_2d(np.asarray(xa, dtype=float))
    xb = np.atleast_2d(np.asarray(xb, dtype=float))
    if xa.shape[1] != xb.shape[1]:
        raise InvalidInputError("cost matrix between samples of different dimension")
    diff = xa[:, None, :] - xb[None, :, :]
    cost = 0.5 * np.sum(diff * diff, axis=-1)
    same = np.asarray(ya)[:, None] == np.asarray(yb)[None, :]
    return np.where(same, cost, INFEASIBLE)


@dataclass(frozen=True)
class AdjustedLogistic:
    """The adjusted loss L = l - h as seen by the inner maximisation.

    ``convexity`` bounds the positive curvature of L in x, ``concavity`` is the
    strong concavity contributed by -h, and ``curvature`` bounds the Hessian
    norm of L in x; together they size the ascent step and stopping rule.
    """

    score: OutlierScore = NO_SCORE

    def value(self, theta, x, y):
        return adjusted_loss(theta, x, y, self.score)

    def grad_x(self, theta, x, y):
        return adjusted_loss_grad_x(theta, x, y, self.score)

    def grad_theta(self, theta, x, y):
        return logistic_loss_grad_theta(theta, x, y)

    def convexity(self, theta) -> float:
        return float(np.dot(theta, theta)) / 4.0

    @property
    def concavity(self) -> float:
        return self.score.concavity

    def curvature(self, theta) -> float:
        return self.convexity(theta) + self.score.curvature
