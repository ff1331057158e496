"""Numerical acceptance checks shared by the CLI ``verify`` verb and the test suite.

Each check returns a :class:`CheckResult` with a PASS/FAIL/SKIP status, the
measured quantities and the wall time; none of them raise on a failed claim.
"""

from __future__ import annotations

import dataclasses
import os
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List

import numpy as np

from .dro import (HyperParams, client_tilts, dual_objective_H, grad_lambda_estimate, grad_theta_estimate,
                  primal_sup_on_grid, robustness_certificate)
from .datasets import SyntheticConfig, generate_synthetic, prior_mean_estimate
from .experiment import RunConfig, run_experiment, sensitivity_sweep, train_and_evaluate
from .federation import duality_gap_surrogate, minimax_reference, project_simplex, run_training
from .model import OutlierScore
from .transport import DiscreteDistribution, lemma1_check


@dataclass
class CheckResult:
    name: str
    status: str
    detail: str
    seconds: float
    values: Dict[str, object] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.status == "PASS"

    def line(self) -> str:
        return f"{self.status} {self.name}: {self.detail} ({self.seconds:.1f}s)"


def _timed(name: str, limit: float, body: Callable[[], tuple]) -> CheckResult:
    start = time.perf_counter()
    ok, detail, values = body()
    seconds = time.perf_counter() - start
    if ok is None:
        return CheckResult(name, "SKIP", detail, seconds, values)
    if seconds > limit:
        ok = False
        detail += f"; runtime {seconds:.1f}s exceeds {limit:.0f}s"
    return CheckResult(name, "PASS" if ok else "FAIL", detail, seconds, values)


def _random_score(rng, d):
    kind = rng.integers(3)
    if kind == 0:
        return OutlierScore()
    if kind == 1:
        return OutlierScore("quadratic", float(rng.uniform(0, 1)), prior_mean=rng.normal(size=d))
    return OutlierScore("sigmoid", float(rng.uniform(0, 2)), threshold=float(rng.normal()),
                        softness=float(rng.uniform(0.2, 1)), feature_index=int(rng.integers(d)))


def _feasible_theta(rng, d, rho, score):
    """Random theta strictly inside the strong-concavity region of the inner problem."""
    theta = rng.normal(size=d)
    limit = 2.0 * np.sqrt(rho + score.concavity)
    return theta * (rng.uniform(0.05, 0.9) * limit / np.linalg.norm(theta))


def _random_clients(rng, n_clients, max_atoms, d):
    out = []
    for _ in range(n_clients):
        n = int(rng.integers(1, max_atoms + 1))
        out.append(DiscreteDistribution.uniform(rng.normal(size=(n, d)), rng.choice([-1, 1], n)))
    return out


# ------------------------------------------------------------------ criteria

def certificate_instances(seed: int = 0, count: int = 50):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        d = int(rng.integers(1, 6))
        n_clients = int(rng.integers(1, 4))
        clients = _random_clients(rng, n_clients, max(1, 10 // n_clients), d)
        hp = HyperParams(rho=float(rng.choice([0.5, 1.0, 2.0])), beta=float(rng.choice([0.5, 1.0, 2.0])),
                         inner_tol=1e-12)
        score = _random_score(rng, d)
        theta = _feasible_theta(rng, d, hp.rho, score)
        lam = rng.dirichlet(np.ones(n_clients))
        yield theta, lam, clients, hp, score


def check_certificate(seed: int = 0) -> CheckResult:
    def body():
        worst, values = 0.0, []
        for theta, lam, clients, hp, score in certificate_instances(seed):
            try:
                rep = robustness_certificate(theta, lam, clients, hp, score)
            except ArithmeticError as exc:
                return False, str(exc), {}
            rel = abs(rep.robust_value - rep.bound) / max(1.0, abs(rep.bound))
            worst = max(worst, rel)
            values.append((rep.robust_value, rep.bound, rep.induced_radius))
        return worst <= 1e-9, f"max relative |E[L] - bound| = {worst:.2e} (tol 1e-09)", {
            "worst": worst, "values": values}

    return _timed("certificate exactness", 10, body)


def duality_toys():
    toys = []
    for seed in range(3):
        rng = np.random.default_rng(100 + seed)
        p = DiscreteDistribution.uniform(rng.uniform(-2, 2, size=(3, 1)), rng.choice([-1, 1], 3))
        theta = np.array([rng.uniform(-1.5, 1.5)])
        toys.append((theta, p, HyperParams(rho=1.0, beta=1.0, inner_tol=1e-10)))
    return toys


def check_strong_duality() -> CheckResult:
    def body():
        grid = np.linspace(-5, 5, 201)[:, None]
        gx = np.concatenate([grid, grid])
        gy = np.r_[np.ones(201), -np.ones(201)]
        rows, ok = [], True
        for theta, p, hp in duality_toys():
            primal = primal_sup_on_grid(theta, p, hp, gx, gy)
            dual = hp.temperature * np.log(dual_objective_H(theta, np.ones(1), [p], hp))
            rows.append((primal, dual))
            ok &= abs(dual - primal) <= 1e-3 and primal <= dual + 1e-6
        gaps = ", ".join(f"{d - p:.2e}" for p, d in rows)
        return ok, f"dual - primal on three toys = [{gaps}] (tol 1e-03, primal <= dual + 1e-06)", {
            "pairs": rows}

    return _timed("strong duality on grid", 30, body)


def contamination_bound_instances(seed: int = 0, count: int = 100):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        label = int(rng.choice([-1, 1]))
        n_star, n_hat = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        p_star = DiscreteDistribution(rng.normal(size=(n_star, 1)), np.full(n_star, label),
                                      rng.dirichlet(np.ones(n_star)))
        hat_x = rng.normal(size=(n_hat, 1))
        p_hat = DiscreteDistribution(hat_x, np.full(n_hat, label), rng.dirichlet(np.ones(n_hat)))
        w = rng.dirichlet(np.ones(n_hat))
        w[rng.random(n_hat) < 0.25] = 0.0
        if w.sum() == 0:
            w[0] = 1.0
        p_bar = DiscreteDistribution(hat_x, np.full(n_hat, label), w / w.sum())
        yield p_star, p_bar, p_hat, float(rng.choice([0.1, 0.5, 1.0, 2.0, 5.0]))


def check_contamination_bound(seed: int = 0) -> CheckResult:
    def body():
        slacks = [rhs - lhs for lhs, rhs in (lemma1_check(*inst) for inst in contamination_bound_instances(seed))]
        worst = min(slacks)
        return worst >= -1e-6, f"min slack rhs - lhs = {worst:.3e} over {len(slacks)} instances (tol -1e-06)", {
            "slacks": slacks}

    return _timed("contamination bound", 30, body)


def gradient_instances(seed: int = 0, count: int = 20):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        d = int(rng.integers(1, 5))
        n_clients = int(rng.integers(1, 4))
        clients = _random_clients(rng, n_clients, 6, d)
        hp = HyperParams(rho=float(rng.choice([0.5, 1.0, 2.0])), beta=float(rng.choice([0.5, 1.0, 2.0])),
                         inner_tol=1e-10)
        score = _random_score(rng, d)
        yield _feasible_theta(rng, d, hp.rho, score), rng.dirichlet(np.ones(n_clients)), clients, hp, score


def _H(theta, lam, clients, hp, score):
    # linear extension of H off the simplex, for finite differences in lambda
    return float(np.dot(lam, client_tilts(theta, clients, hp, score)))


def gradient_errors(theta, lam, clients, hp, score, step=1e-5):
    g_theta = sum(l * (c.weights @ grad_theta_estimate(theta, c.features, c.labels, hp, score))
                  for l, c in zip(lam, clients))
    fd_theta = np.empty_like(theta)
    for k in range(theta.size):
        e = np.zeros_like(theta)
        e[k] = step
        fd_theta[k] = (_H(theta + e, lam, clients, hp, score) - _H(theta - e, lam, clients, hp, score)) / (2 * step)
    g_lambda = np.array([c.weights @ grad_lambda_estimate(theta, c.features, c.labels, hp, score)
                         for c in clients])
    fd_lambda = np.empty(len(clients))
    for i in range(len(clients)):
        e = np.zeros(len(clients))
        e[i] = step
        fd_lambda[i] = (_H(theta, lam + e, clients, hp, score) - _H(theta, lam - e, clients, hp, score)) / (2 * step)
    err_t = np.linalg.norm(g_theta - fd_theta) / max(np.linalg.norm(fd_theta), 1e-12)
    err_l = np.linalg.norm(g_lambda - fd_lambda) / np.linalg.norm(fd_lambda)
    return float(err_t), float(err_l)


def check_gradients(seed: int = 0) -> CheckResult:
    def body():
        errs = [gradient_errors(*inst) for inst in gradient_instances(seed)]
        et = max(e[0] for e in errs)
        el = max(e[1] for e in errs)
        return et <= 1e-4 and el <= 1e-6, (
            f"max relative error theta {et:.2e} (tol 1e-04), lambda {el:.2e} (tol 1e-06)"), {"errors": errs}

    return _timed("gradient fidelity", 60, body)


def simplex_oracle(v, iters: int = 200) -> np.ndarray:
    """Bisection on the threshold tau solving sum(max(v - tau, 0)) = 1."""
    lo, hi = v.min() - 1.0, v.max()
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if np.maximum(v - mid, 0).sum() > 1:
            lo = mid
        else:
            hi = mid
    return np.maximum(v - 0.5 * (lo + hi), 0)


def check_simplex(seed: int = 0) -> CheckResult:
    def body():
        rng = np.random.default_rng(seed)
        worst, feas = 0.0, 0.0
        for _ in range(1000):
            v = rng.normal(scale=rng.choice([0.1, 1.0, 10.0]), size=int(rng.integers(1, 9)))
            w = project_simplex(v)
            worst = max(worst, float(np.linalg.norm(w - simplex_oracle(v))))
            feas = max(feas, abs(w.sum() - 1.0), float(-w.min()))
        return worst <= 1e-6 and feas <= 1e-12, (
            f"max distance to oracle {worst:.2e} (tol 1e-06), max simplex violation {feas:.1e}"), {
            "worst": worst}

    return _timed("simplex projection", 60, body)


CONVERGENCE_ROUNDS = (100, 316, 1000, 3162, 10000)


def convergence_problem(seed: int = 0):
    data = generate_synthetic(SyntheticConfig(sizes=(50, 50, 50), seed=seed))
    score = OutlierScore("quadratic", 0.5, prior_mean=prior_mean_estimate(data))
    return data.clients, score


def convergence_gaps(seed: int = 0, rounds=CONVERGENCE_ROUNDS, replicates: int = 4,
                     inner_tol: float = 1e-6):
    """Mean gap surrogate of the averaged iterate above the minimax value, per horizon."""
    clients, score = convergence_problem(seed)
    ref_hp = HyperParams(inner_tol=1e-10)
    best, _ = minimax_reference(clients, ref_hp, score)
    gaps = []
    for T in rounds:
        hp = HyperParams(rounds=T, inner_tol=inner_tol)
        vals = [duality_gap_surrogate(run_training(clients, hp, score, seed * 1000 + r).theta_bar,
                                      clients, ref_hp, score) - best for r in range(replicates)]
        gaps.append(float(np.mean(vals)))
    return np.array(gaps), best


def check_convergence(seed: int = 0) -> CheckResult:
    def body():
        gaps, best = convergence_gaps(seed)
        rerun, _ = convergence_gaps(seed, rounds=CONVERGENCE_ROUNDS[-1:], inner_tol=1e-7)
        floor = max(0.0, float(gaps[-1] - rerun[0]))
        above = gaps - floor
        if np.any(above <= 0):
            return False, f"gap not above its floor: gaps {gaps}, floor {floor:.2e}", {}
        slope = float(np.polyfit(np.log(CONVERGENCE_ROUNDS), np.log(above), 1)[0])
        return slope <= -0.35, f"log-log slope {slope:.3f} (tol -0.35), floor {floor:.2e}, gaps {np.round(gaps, 6).tolist()}", {
            "slope": slope, "gaps": gaps.tolist(), "floor": floor, "minimax": best}

    return _timed("convergence trend", 300, body)


def ordering_reports(seed: int = 0):
    cfg = RunConfig(method=("dorfl", "wafl", "afl", "erm"), seed=seed,
                    synthetic=SyntheticConfig(seed=seed))
    return {r.method: r for r in run_experiment(cfg, write=False)}


def check_method_ordering(seed: int = 0) -> CheckResult:
    def body():
        start = time.perf_counter()
        reps = ordering_reports(seed)
        per_method = (time.perf_counter() - start) / len(reps)
        acc = {m: r.overall_accuracy for m, r in reps.items()}
        groups_best = all(
            reps["dorfl"].group_accuracy[g] > max(reps[m].group_accuracy[g] for m in ("wafl", "afl", "erm"))
            for g in range(len(reps["dorfl"].group_accuracy))
        )
        claims = {
            "dorfl >= 0.90": acc["dorfl"] >= 0.90,
            "dorfl - wafl >= 0.05": acc["dorfl"] - acc["wafl"] >= 0.05,
            "wafl - afl >= 0.05": acc["wafl"] - acc["afl"] >= 0.05,
            "dorfl best on every group": groups_best,
            "under 2 min per method": per_method < 120,
        }
        failed = [k for k, v in claims.items() if not v]
        detail = "overall " + ", ".join(f"{m} {a:.4f}" for m, a in acc.items())
        detail += "; failed claims: " + ("; ".join(failed) if failed else "none")
        return not failed, detail, {"accuracy": acc, "claims": claims,
                                   "groups": {m: r.group_accuracy for m, r in reps.items()}}

    return _timed("synthetic method ordering", 8 * 60, body)


SWEEP_OFFSETS = tuple(float(m) for m in range(-5, 6))


def check_sensitivity(seed: int = 0, jobs: int = 1) -> CheckResult:
    def body():
        cfg = RunConfig(seed=seed, synthetic=SyntheticConfig(seed=seed))
        points = sensitivity_sweep(cfg, SWEEP_OFFSETS, jobs=jobs)
        accs = [a for _, a in points]
        spread = max(accs) - min(accs)
        return spread <= 0.10, f"accuracy spread {100 * spread:.1f} points over offsets -5..5 (tol 10)", {
            "points": points}

    return _timed("prior mean sensitivity", 15 * 60, body)


def check_adult(directory: str = None, seed: int = 0) -> CheckResult:
    directory = directory if directory is not None else os.environ.get("DORFL_ADULT_DIR", "")

    def body():
        paths = [os.path.join(directory, f) for f in ("adult.data", "adult.test")]
        if not directory or not all(os.path.isfile(p) for p in paths):
            return None, "Adult files not found (set DORFL_ADULT_DIR)", {}
        cfg = RunConfig(dataset="adult", method=("dorfl", "erm", "afl"), seed=seed, adult_dir=directory)
        reps = {r.method: r for r in run_experiment(cfg, write=False)}
        d, e, a = reps["dorfl"], reps["erm"], reps["afl"]
        claims = {
            "dorfl acc >= erm - 0.5 points": d.overall_accuracy >= e.overall_accuracy - 0.005,
            "dorfl worst group >= afl worst group": d.worst_group_accuracy >= a.worst_group_accuracy,
            "dorfl excess risk <= erm + 0.02": d.excess_risk <= e.excess_risk + 0.02,
        }
        failed = [k for k, v in claims.items() if not v]
        detail = ", ".join(f"{m} acc {r.overall_accuracy:.4f} worst {r.worst_group_accuracy:.4f} "
                           f"excess {r.excess_risk:.4f}" for m, r in reps.items())
        detail += "; failed claims: " + ("; ".join(failed) if failed else "none")
        return not failed, detail, {"claims": claims}

    return _timed("adult experiment", 10 * 60, body)


def check_determinism(seed: int = 0) -> CheckResult:
    """Reruns certificate values, a parallel training trace and a full report bit-for-bit."""

    def body():
        same = {}
        a = check_certificate(seed).values.get("values")
        b = check_certificate(seed).values.get("values")
        same["certificates"] = a == b

        clients, score = convergence_problem(seed)
        hp = HyperParams(rounds=200)
        t1 = run_training(clients, hp, score, seed)
        t2 = run_training(clients, hp, score, seed, jobs=3)
        same["training trace"] = (np.array_equal(t1.thetas, t2.thetas) and np.array_equal(t1.lambdas, t2.lambdas)
                                  and np.array_equal(t1.g_lambda, t2.g_lambda))

        cfg = RunConfig(seed=seed, synthetic=SyntheticConfig(seed=seed))
        r1 = train_and_evaluate(cfg)[0]
        r2 = train_and_evaluate(dataclasses.replace(cfg, output_dir="elsewhere"))[0]
        strip = lambda r: dataclasses.replace(r, config={k: v for k, v in r.config.items() if k != "run.output_dir"})
        same["experiment report"] = strip(r1) == strip(r2)
        failed = [k for k, v in same.items() if not v]
        return not failed, "bit-identical reruns: " + ", ".join(f"{k} {'yes' if v else 'NO'}" for k, v in same.items()), same

    return _timed("determinism", 120, body)


CRITERIA = {
    1: check_certificate,
    2: check_strong_duality,
    3: check_contamination_bound,
    4: check_gradients,
    5: check_simplex,
    6: check_convergence,
    7: check_method_ordering,
    8: check_sensitivity,
    9: check_adult,
    10: check_determinism,
}

FAST_CRITERIA = (1, 2, 3, 4, 5, 10)


def run_checks(numbers=FAST_CRITERIA) -> List[CheckResult]:
    return [CRITERIA[n]() for n in numbers]
