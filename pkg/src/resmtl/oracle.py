"""Independent numerical checks for the weight rule and the convergence bound.

Nothing here calls into the engine.  The simplex QP solver is a plain
projected-gradient method, so agreement with the closed-form weights is
evidence about the closed form rather than a restatement of it.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .weighting import EmaTable, loss_weights


@dataclass(frozen=True)
class ConvexityProfile:
    """Curvature and noise constants of one agent's risk.

    ``m``: strong-convexity modulus; ``L``: gradient Lipschitz constant;
    ``sigma2``: gradient-noise floor; ``c``: second-moment coefficient.
    """

    m: float
    L: float
    sigma2: float = 0.0
    c: float = 1.0

    def __post_init__(self):
        if not 0 < self.m <= self.L:
            raise ValueError(f"need 0 < m <= L, got m={self.m}, L={self.L}")
        if self.sigma2 < 0:
            raise ValueError("sigma2 must be non-negative")
        if self.c < 1:
            raise ValueError("c must be >= 1")

    @property
    def max_step(self) -> float:
        return 1.0 / (self.L * self.c)


def project_simplex(v):
    """Euclidean projection of ``v`` onto the probability simplex (sort-based)."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / idx > 0)[0][-1]
    return np.maximum(v - css[rho] / (rho + 1), 0.0)


class QPSolution(NamedTuple):
    weights: np.ndarray
    iterations: int
    residual: float


def solve_weight_qp_numeric(risks, max_iter: int = 100_000, tol: float = 1e-10) -> QPSolution:
    """Minimize ``sum_l a_l^2 r_l`` over the simplex by projected gradient.

    Step size ``1 / (2 max r)``.  Stops when the projected-gradient residual
    ``||a - P(a - grad)||_inf`` falls below ``tol``.
    """
    r = np.asarray(risks, dtype=float)
    if r.ndim != 1 or r.size == 0:
        raise ValueError("risks must be a non-empty vector")
    if np.any(r <= 0) or not np.all(np.isfinite(r)):
        raise ValueError("risks must be finite and strictly positive")
    step = 1.0 / (2.0 * r.max())
    a = np.full(r.size, 1.0 / r.size)
    res = np.inf
    for it in range(1, max_iter + 1):
        grad = 2.0 * a * r
        res = float(np.max(np.abs(a - project_simplex(a - grad))))
        if res < tol:
            return QPSolution(a, it, res)
        a = project_simplex(a - step * grad)
    return QPSolution(a, max_iter, res)


def regret_bound(profile: ConvexityProfile, mu: float) -> float:
    """Limit of expected regret under filtered weights: ``mu L sigma2 / (2 m)``.

    Valid only for ``0 < mu <= 1 / (L c)``.
    """
    if not 0 < mu <= profile.max_step:
        raise ValueError(f"step size {mu} outside admissible interval (0, {profile.max_step:.6g}]")
    return mu * profile.L * profile.sigma2 / (2.0 * profile.m)


class InequalityCheck(NamedTuple):
    holds: bool
    lhs: float
    rhs: float


def check_lemma1(risks, r_star: float, slack: float = 1e-12) -> InequalityCheck:
    """Weighted regret under inverse-risk weights vs. the plain average regret.

    ``sum_l a_l (r_l - r*) <= mean_l (r_l - r*)`` with ``a = loss_weights(r)``.
    ``slack`` absorbs round-off at exact equality (all risks equal).
    """
    r = np.asarray(risks, dtype=float)
    if r.size == 0 or np.any(r <= 0):
        raise ValueError("risks must be strictly positive")
    if not 0 <= r_star <= r.min():
        raise ValueError("need 0 <= r_star <= min(risks)")
    w = loss_weights(EmaTable(0.5, dict(enumerate(r.tolist()))))
    a = np.array([w[i] for i in range(r.size)])
    gaps = r - r_star
    lhs = float(a @ gaps)
    rhs = float(np.mean(gaps))
    return InequalityCheck(lhs <= rhs + slack * max(1.0, abs(rhs)), lhs, rhs)


def strong_convexity_gap_check(
    profile: ConvexityProfile, theta_l, theta_star, risk_fn: Callable, slack: float = 1e-12
) -> InequalityCheck:
    """``||theta_l - theta*||^2 <= (2 / m) (r(theta_l) - r(theta*))``."""
    diff = np.asarray(theta_l, float) - np.asarray(theta_star, float)
    lhs = float(diff @ diff)
    rhs = 2.0 / profile.m * float(risk_fn(theta_l) - risk_fn(theta_star))
    return InequalityCheck(lhs <= rhs + slack * max(1.0, abs(rhs)), lhs, rhs)
