"""ERM (FedAvg), agnostic FL and Wasserstein FL as estimator plugins of the same loop."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .dro import HyperParams, inner_maximize
from .errors import InvalidInputError
from .federation import DORFL, Method, TrainingTrace, run_training
from .model import NO_SCORE, logistic_loss, logistic_loss_grad_theta
from .transport import DiscreteDistribution

BASELINE_KINDS = ("erm", "afl", "wafl")


class _Proportional(Method):
    adaptive_lambda = False

    def initial_lambda(self, sizes):
        sizes = np.asarray(sizes, dtype=float)
        return sizes / sizes.sum()


class ERM(_Proportional):
    """FedAvg on the plain logistic loss; clients report their mean loss."""

    name = "erm"

    def estimates(self, theta, x, y, hp, score):
        g = logistic_loss_grad_theta(theta, x, y).mean(axis=0)
        return g, float(logistic_loss(theta, x, y).mean())


class AFL(Method):
    """Minimax over the mixture with the plain loss as the ascent signal."""

    name = "afl"

    def estimates(self, theta, x, y, hp, score):
        return ERM.estimates(self, theta, x, y, hp, score)


class WAFL(_Proportional):
    """Penalised Wasserstein robustness at fixed proportions, untilted gradients."""

    name = "wafl"

    def estimates(self, theta, x, y, hp, score):
        res = inner_maximize(theta, x, y, hp, NO_SCORE)
        g = logistic_loss_grad_theta(theta, res.maximizer, y).mean(axis=0)
        return g, float(np.mean(res.value))


METHODS = {"dorfl": DORFL, "erm": ERM(), "afl": AFL(), "wafl": WAFL()}


def get_method(name: str) -> Method:
    try:
        return METHODS[name]
    except KeyError:
        raise InvalidInputError(f"unknown method {name!r}; expected one of {sorted(METHODS)}") from None


def run_baseline(kind: str, clients: Sequence[DiscreteDistribution], hp: HyperParams, seed: int = 0,
                 **kw) -> TrainingTrace:
    if kind not in BASELINE_KINDS:
        raise InvalidInputError(f"unknown baseline {kind!r}; expected one of {BASELINE_KINDS}")
    return run_training(clients, hp, NO_SCORE, seed, METHODS[kind], **kw)
