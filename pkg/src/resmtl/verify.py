"""Oracle sweeps behind ``resmtl verify``.

Each suite returns a list of :class:`CheckResult`.  Sample sizes and
tolerances are fixed here and shared with the acceptance tests.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .models import LocalizationLoss, QuadraticLoss, SoftmaxLoss, finite_diff_gradient
from .oracle import (
    ConvexityProfile,
    check_lemma1,
    regret_bound,
    solve_weight_qp_numeric,
    strong_convexity_gap_check,
)
from .weighting import EmaTable, loss_weights

QP_CASES = 100
QP_TOL = 1e-6
LEMMA1_CASES = 10_000
GRAD_POINTS = 200
GRAD_TOL = 1e-4
GRAD_STEP = 1e-5
GAP_POINTS = 1000


class CheckResult(NamedTuple):
    suite: str
    name: str
    passed: bool
    detail: str


def random_risks(rng, lo=0.1, hi=10.0, n_range=(2, 10)):
    n = int(rng.integers(n_range[0], n_range[1] + 1))
    return rng.uniform(lo, hi, size=n)


def closed_form(risks):
    w = loss_weights(EmaTable(0.5, dict(enumerate(np.asarray(risks).tolist()))))
    return np.array([w[i] for i in range(len(risks))])


def qp_errors(cases=QP_CASES, seed=0):
    rng = np.random.default_rng(seed)
    errs = []
    for _ in range(cases):
        r = random_risks(rng)
        errs.append(float(np.max(np.abs(closed_form(r) - solve_weight_qp_numeric(r).weights))))
    return np.array(errs)


def suite_qp(seed=0):
    errs = qp_errors(seed=seed)
    ok = int(np.sum(errs < QP_TOL))
    return [CheckResult("qp", "closed form vs projected-gradient QP", ok == len(errs),
                        f"{ok}/{len(errs)} within {QP_TOL:g} (worst {errs.max():.2e})")]


def lemma1_sweep(cases=LEMMA1_CASES, seed=1):
    rng = np.random.default_rng(seed)
    holds = 0
    worst = -np.inf
    for _ in range(cases):
        r = random_risks(rng)
        c = check_lemma1(r, float(rng.uniform(0.0, r.min())))
        holds += c.holds
        worst = max(worst, c.lhs - c.rhs)
    return holds, worst


def suite_lemma1(seed=1):
    holds, worst = lemma1_sweep(seed=seed)
    return [CheckResult("lemma1", "weighted regret <= average regret", holds == LEMMA1_CASES,
                        f"{holds}/{LEMMA1_CASES} true (max lhs-rhs {worst:.2e})")]


def random_pd(rng, d):
    A = rng.standard_normal((d, d))
    return A @ A.T + 0.5 * np.eye(d)


def gradient_cases(rng):
    """Yield ``(name, model, theta, batch)`` draws for each loss model."""
    loc = LocalizationLoss()
    soft = SoftmaxLoss(3, 4)
    quad = QuadraticLoss(random_pd(rng, 3))
    B = 5
    while True:
        u = rng.standard_normal((B, 2))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        yield "localization", loc, rng.uniform(-20, 20, 2), {
            "pos": rng.uniform(0, 30, (B, 2)), "dist": rng.uniform(0, 30, B),
            "dir": u + 0.1 * rng.standard_normal((B, 2)),
        }
        yield "softmax", soft, rng.standard_normal(soft.dim), {
            "x": rng.standard_normal((B, 4)), "y": rng.integers(0, 3, B),
        }
        yield "quadratic", quad, rng.standard_normal(3) * 3, {"target": rng.standard_normal((B, 3)) * 3}


def gradient_rel_error(model, theta, batch, h=GRAD_STEP):
    analytic = model.grad(theta, batch)
    numeric = finite_diff_gradient(model, theta, batch, h)
    return float(np.max(np.abs(analytic - numeric)) / max(np.max(np.abs(analytic)), 1e-8))


def gradient_errors(points=GRAD_POINTS, seed=2):
    rng = np.random.default_rng(seed)
    errs = {"localization": [], "softmax": [], "quadratic": []}
    for name, model, theta, batch in gradient_cases(rng):
        if len(errs[name]) < points:
            errs[name].append(gradient_rel_error(model, theta, batch))
        if all(len(v) >= points for v in errs.values()):
            return {k: np.array(v) for k, v in errs.items()}


def suite_gradients(seed=2):
    out = []
    for name, errs in gradient_errors(seed=seed).items():
        ok = int(np.sum(errs < GRAD_TOL))
        out.append(CheckResult("gradients", name, ok == len(errs),
                               f"{ok}/{len(errs)} below {GRAD_TOL:g} (worst {errs.max():.2e})"))
    return out


def suite_convexity(seed=3):
    rng = np.random.default_rng(seed)
    fails = 0
    for _ in range(GAP_POINTS):
        d = int(rng.integers(1, 5))
        q = QuadraticLoss(random_pd(rng, d))
        star = rng.standard_normal(d)
        prof = ConvexityProfile(q.m, q.L, 0.0)
        c = strong_convexity_gap_check(prof, star + 3 * rng.standard_normal(d), star,
                                       lambda th: q.risk(th, star, 0.0))
        fails += not c.holds
    return [CheckResult("convexity", "||theta - theta*||^2 <= 2/m (r - r*)", fails == 0,
                        f"{GAP_POINTS - fails}/{GAP_POINTS} true")]


def suite_bound():
    base = dict(m=1.0, L=2.0, sigma2=1.0)
    b0 = regret_bound(ConvexityProfile(**base), 0.1)
    checks = [
        ("formula mu=0.1 L=2 s2=1 m=1", abs(b0 - 0.1) < 1e-15),
        ("increasing in mu", regret_bound(ConvexityProfile(**base), 0.2) > b0),
        ("increasing in L", regret_bound(ConvexityProfile(1.0, 4.0, 1.0), 0.1) > b0),
        ("increasing in sigma2", regret_bound(ConvexityProfile(1.0, 2.0, 2.0), 0.1) > b0),
        ("decreasing in m", regret_bound(ConvexityProfile(1.5, 2.0, 1.0), 0.1) < b0),
        ("zero noise", regret_bound(ConvexityProfile(1.0, 4.0, 0.0), 0.25) == 0.0),
    ]
    try:
        regret_bound(ConvexityProfile(1.0, 4.0, 1.0), 0.26)
        checks.append(("mu beyond 1/(L c) rejected", False))
    except ValueError:
        checks.append(("mu beyond 1/(L c) rejected", True))
    return [CheckResult("bound", name, ok, "ok" if ok else "violated") for name, ok in checks]


SUITES = {
    "qp": suite_qp,
    "lemma1": suite_lemma1,
    "gradients": suite_gradients,
    "convexity": suite_convexity,
    "bound": suite_bound,
}


def run_suites(names):
    if not names or "all" in names:
        names = list(SUITES)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise KeyError(f"unknown suite(s) {unknown}; choose from {sorted(SUITES)} or 'all'")
    results = []
    for n in names:
        results.extend(SUITES[n]())
    return results
