import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dorfl.dro import (HyperParams, client_tilts, dual_objective_H, grad_lambda_estimate, grad_theta_estimate,
                       inner_maximize, mixture, primal_sup_on_grid, robustness_certificate)
from dorfl.errors import ConfigurationError, InvalidInputError
from dorfl.model import OutlierScore, adjusted_loss, logistic_loss
from dorfl.transport import DiscreteDistribution

LN2 = math.log(2.0)


class LinearLoss:
    """L(theta, x) = <theta, x>: flat in x, so the maximiser is available in closed form."""

    concavity = 0.0

    def value(self, theta, x, y):
        return np.asarray(x) @ theta

    def grad_x(self, theta, x, y):
        return np.broadcast_to(theta, np.shape(x)).copy()

    def grad_theta(self, theta, x, y):
        return np.asarray(x, dtype=float)

    def convexity(self, theta):
        return 0.0

    def curvature(self, theta):
        return 0.0


@pytest.mark.parametrize("rho", [0.5, 1.0, 4.0])
def test_inner_max_linear_closed_form(rho):
    theta = np.array([1.0, -2.0, 0.5])
    x = np.array([0.3, 0.1, -1.0])
    res = inner_maximize(theta, x, 1, HyperParams(rho=rho), loss=LinearLoss())
    np.testing.assert_allclose(res.maximizer, x + theta / rho, atol=1e-12)
    assert res.value == pytest.approx(x @ theta + theta @ theta / (2 * rho), abs=1e-12)


def test_inner_max_zero_theta():
    x = np.array([[1.0, 2.0], [-3.0, 0.5]])
    res = inner_maximize(np.zeros(2), x, np.array([1, -1]), HyperParams())
    np.testing.assert_array_equal(res.maximizer, x)
    np.testing.assert_allclose(res.value, LN2)
    assert np.all(res.iterations == 0)


SCORES = [
    OutlierScore(),
    OutlierScore("quadratic", 0.5, prior_mean=np.array([0.5, -0.5, 1.0])),
    OutlierScore("sigmoid", 2.0, threshold=0.2, softness=0.1, feature_index=2),
]


@pytest.mark.parametrize("score", SCORES, ids=["none", "quadratic", "sigmoid"])
@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 100_000))
def test_inner_max_properties(score, seed):
    rng = np.random.default_rng(seed)
    hp = HyperParams(rho=float(rng.choice([0.5, 1.0, 2.0])), inner_tol=1e-9)
    theta = rng.normal(size=3)
    theta *= rng.uniform(0, 0.95) * 2 * math.sqrt(hp.rho + score.concavity) / np.linalg.norm(theta)
    x = rng.normal(size=(6, 3)) * 3
    y = rng.choice([-1, 1], 6)
    res = inner_maximize(theta, x, y, hp, score)
    assert np.all(res.value >= adjusted_loss(theta, x, y, score) - 1e-12)
    assert np.all((res.grad_norm_at_exit <= res.tolerance) | (res.iterations == hp.inner_max_iters))
    # objective along the ascent path never decreases
    prev = adjusted_loss(theta, x, y, score)
    for k in (1, 2, 4, 8, 16):
        val = inner_maximize(theta, x, y, HyperParams(rho=hp.rho, inner_max_iters=k, inner_tol=1e-12),
                             score).value
        assert np.all(val >= prev - 1e-12)
        prev = val


def test_inner_max_precondition():
    with pytest.raises(ConfigurationError, match="rho=1.0"):
        inner_maximize(np.array([3.0, 0.0]), np.zeros(2), 1, HyperParams(rho=1.0))
    # quadratic h adds 2 * rho2 of concavity, so the same theta becomes admissible
    quad = OutlierScore("quadratic", 1.5, prior_mean=np.zeros(2))
    inner_maximize(np.array([3.0, 0.0]), np.zeros(2), 1, HyperParams(rho=1.0), quad)


def test_inner_max_distance_bound():
    # the stopping rule bounds the distance to the exact maximiser by inner_tol
    rng = np.random.default_rng(0)
    theta = np.array([1.2, -0.4])
    x = rng.normal(size=(20, 2))
    y = rng.choice([-1, 1], 20)
    exact = inner_maximize(theta, x, y, HyperParams(inner_tol=1e-13)).maximizer
    rough = inner_maximize(theta, x, y, HyperParams(inner_tol=1e-3)).maximizer
    assert np.max(np.linalg.norm(rough - exact, axis=1)) <= 1e-3


def test_hyperparams_validation():
    for bad in ({"rho": 0.0}, {"beta": -1.0}, {"inner_tol": 2.0}, {"rounds": 0}, {"batch_size": 0}):
        with pytest.raises(ConfigurationError):
            HyperParams(**bad)
    hp = HyperParams(rounds=400)
    assert hp.step_theta == hp.step_lambda == 0.05
    assert HyperParams(eta_theta=0.3).step_theta == 0.3


def one_atom(x, y=1):
    return DiscreteDistribution.uniform(np.atleast_2d(x), [y])


@pytest.mark.parametrize("rho,beta", [(1.0, 1.0), (2.0, 0.5), (0.5, 3.0)])
def test_H_single_atom_zero_theta(rho, beta):
    hp = HyperParams(rho=rho, beta=beta)
    H = dual_objective_H(np.zeros(2), [1.0], [one_atom([0.4, -1.0])], hp)
    assert H == pytest.approx(math.exp(LN2 / (rho * beta)), rel=1e-14)


def test_H_vertex_depends_on_one_client():
    rng = np.random.default_rng(1)
    theta = np.array([0.5, -0.3])
    hp = HyperParams()
    a = DiscreteDistribution.uniform(rng.normal(size=(4, 2)), rng.choice([-1, 1], 4))
    b = DiscreteDistribution.uniform(rng.normal(size=(3, 2)), rng.choice([-1, 1], 3))
    c = DiscreteDistribution.uniform(5 * rng.normal(size=(5, 2)), rng.choice([-1, 1], 5))
    assert dual_objective_H(theta, [0, 1, 0], [a, b, c], hp) == dual_objective_H(theta, [0, 1, 0], [c, b, a], hp)
    assert dual_objective_H(theta, [0, 1, 0], [a, b, c], hp) == dual_objective_H(theta, [1.0], [b], hp)


def test_H_validation():
    hp = HyperParams()
    with pytest.raises(InvalidInputError):
        dual_objective_H(np.zeros(1), [1.0], [], hp)
    with pytest.raises(InvalidInputError):
        dual_objective_H(np.zeros(1), [0.7, 0.7], [one_atom([0.0]), one_atom([1.0])], hp)


def test_estimators_at_zero_theta():
    hp = HyperParams(rho=2.0, beta=0.5)
    x = np.array([1.0, -2.0])
    scale = math.exp(LN2 / hp.temperature)
    for y in (-1, 1):
        np.testing.assert_allclose(grad_theta_estimate(np.zeros(2), x, y, hp), scale * (-y * x / 2) / hp.temperature)
        assert grad_lambda_estimate(np.zeros(2), x, y, hp) == pytest.approx(scale)


def test_lambda_estimate_is_tilted_surrogate():
    rng = np.random.default_rng(2)
    theta = np.array([0.8, -0.6, 0.1])
    x, y = rng.normal(size=(10, 3)), rng.choice([-1, 1], 10)
    hp = HyperParams(inner_tol=1e-10)
    g = grad_lambda_estimate(theta, x, y, hp)
    assert np.all(g > 0)
    np.testing.assert_allclose(g, np.exp(inner_maximize(theta, x, y, hp).value / hp.temperature), rtol=1e-15)


def test_theta_estimate_norm_bound():
    rng = np.random.default_rng(4)
    theta = np.array([1.0, 0.5, -0.5])
    x, y = rng.normal(size=(50, 3)), rng.choice([-1, 1], 50)
    hp = HyperParams()
    res = inner_maximize(theta, x, y, hp)
    B1 = np.max(np.abs(res.value))
    B2 = np.max(np.linalg.norm(res.maximizer, axis=1))  # |grad_theta l| <= |z|
    g = grad_theta_estimate(theta, x, y, hp)
    assert np.all(np.linalg.norm(g, axis=1) <= B2 / hp.temperature * math.exp(B1 / hp.temperature))


def test_certificate_single_atom():
    hp = HyperParams(rho=2.0, inner_tol=1e-12)
    theta = np.array([1.5, -0.5])
    dist = one_atom([0.2, 0.9], -1)
    rep = robustness_certificate(theta, [1.0], [dist], hp)
    z = rep.worst_case.features[0]
    assert rep.worst_case.weights.tolist() == [1.0]
    assert rep.induced_radius == pytest.approx(0.5 * np.sum((z - dist.features[0]) ** 2), rel=1e-12)
    assert rep.robust_value == pytest.approx(float(logistic_loss(theta, z, -1)), rel=1e-14)
    assert abs(rep.robust_value - rep.bound) <= 1e-12


def test_certificate_zero_theta():
    rng = np.random.default_rng(6)
    dist = DiscreteDistribution.uniform(rng.normal(size=(4, 3)), rng.choice([-1, 1], 4))
    rep = robustness_certificate(np.zeros(3), [1.0], [dist], HyperParams())
    assert rep.induced_radius == pytest.approx(0.0, abs=1e-15)
    assert rep.robust_value == pytest.approx(LN2) and rep.dual_value == pytest.approx(LN2)


def test_certificate_random_five_atoms():
    rng = np.random.default_rng(8)
    hp = HyperParams(rho=2.0, beta=1.0, inner_tol=1e-12)
    dist = DiscreteDistribution.uniform(rng.normal(size=(5, 4)), rng.choice([-1, 1], 5))
    rep = robustness_certificate(rng.normal(size=4), [1.0], [dist], hp)
    assert abs(rep.robust_value - rep.bound) <= 1e-9 * max(1.0, abs(rep.bound))
    assert rep.induced_radius >= 0


def test_mixture_drops_zero_weight_clients():
    a, b = one_atom([0.0]), one_atom([1.0])
    m = mixture([1.0, 0.0], [a, b])
    assert m.size == 1 and m.features[0, 0] == 0.0


def grid_1d(lo=-5.0, hi=5.0, n=201):
    g = np.linspace(lo, hi, n)[:, None]
    return np.concatenate([g, g]), np.r_[np.ones(n), -np.ones(n)]


def toy(seed):
    rng = np.random.default_rng(seed)
    p = DiscreteDistribution.uniform(rng.uniform(-2, 2, size=(3, 1)), rng.choice([-1, 1], 3))
    return np.array([rng.uniform(-1.5, 1.5)]), p


@pytest.mark.parametrize("seed", range(4))
def test_grid_primal_weak_duality(seed):
    theta, p = toy(seed)
    hp = HyperParams(inner_tol=1e-10)
    dual = hp.temperature * math.log(dual_objective_H(theta, [1.0], [p], hp))
    rng = np.random.default_rng(seed)
    gx = rng.uniform(-4, 4, size=(40, 1))
    gy = np.r_[np.ones(20), -np.ones(20)]
    assert primal_sup_on_grid(theta, p, hp, gx, gy) <= dual + 1e-6
    gx, gy = grid_1d()
    assert primal_sup_on_grid(theta, p, hp, gx, gy) <= dual + 1e-6


def test_grid_primal_large_rho_on_atoms():
    theta, p = toy(1)
    hp = HyperParams(rho=1e5, beta=1.0)
    value = primal_sup_on_grid(theta, p, hp, p.features, p.labels)
    assert value == pytest.approx(float(np.mean(logistic_loss(theta, p.features, p.labels))), abs=1e-4)


def test_grid_refinement_closes_gap():
    theta, p = toy(0)
    hp = HyperParams(inner_tol=1e-10)
    dual = hp.temperature * math.log(dual_objective_H(theta, [1.0], [p], hp))
    gaps = [dual - primal_sup_on_grid(theta, p, hp, *grid_1d(n=n), max_iter=20_000) for n in (11, 21, 41, 81)]
    assert all(b < a for a, b in zip(gaps, gaps[1:]))
    assert all(g >= -1e-6 for g in gaps)


def test_client_tilts_linear_in_lambda():
    rng = np.random.default_rng(9)
    clients = [DiscreteDistribution.uniform(rng.normal(size=(3, 2)), rng.choice([-1, 1], 3)) for _ in range(3)]
    theta, hp = np.array([0.3, 0.7]), HyperParams()
    slopes = client_tilts(theta, clients, hp)
    lam = rng.dirichlet(np.ones(3))
    assert dual_objective_H(theta, lam, clients, hp) == pytest.approx(lam @ slopes, rel=1e-15)
