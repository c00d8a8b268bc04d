import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from resmtl.models import QuadraticLoss
from resmtl.oracle import (
    ConvexityProfile,
    check_lemma1,
    project_simplex,
    regret_bound,
    solve_weight_qp_numeric,
    strong_convexity_gap_check,
)
from resmtl.verify import LEMMA1_CASES, QP_CASES, QP_TOL, lemma1_sweep, qp_errors, run_suites


@pytest.mark.parametrize("risks, expected", [
    ([1.0, 3.0], [0.75, 0.25]),
    ([1.0, 1.0, 1.0, 1.0], [0.25] * 4),
    ([1.0, 2.0, 4.0], [4 / 7, 2 / 7, 1 / 7]),
])
def test_qp_examples(risks, expected):
    sol = solve_weight_qp_numeric(risks)
    np.testing.assert_allclose(sol.weights, expected, atol=1e-6)
    assert sol.residual < 1e-10


@pytest.mark.parametrize("risks", [[1.0, 0.0], [1.0, -2.0], [], [np.inf, 1.0]])
def test_qp_rejects_non_positive(risks):
    with pytest.raises(ValueError):
        solve_weight_qp_numeric(risks)


def test_qp_sweep_matches_closed_form():
    errs = qp_errors()
    assert errs.size == QP_CASES and errs.max() < QP_TOL


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=12))
def test_projection_on_simplex(v):
    p = project_simplex(v)
    assert np.all(p >= 0) and abs(p.sum() - 1) < 1e-12


def test_projection_is_nearest():
    rng = np.random.default_rng(0)
    for _ in range(100):
        v = rng.standard_normal(5)
        p = project_simplex(v)
        for _ in range(20):
            q = rng.dirichlet(np.ones(5))
            assert np.sum((v - p) ** 2) <= np.sum((v - q) ** 2) + 1e-12


def test_regret_bound_examples():
    assert regret_bound(ConvexityProfile(1.0, 2.0, 1.0), 0.1) == pytest.approx(0.1)
    assert regret_bound(ConvexityProfile(1.0, 4.0, 0.0), 0.1) == 0.0
    assert regret_bound(ConvexityProfile(1.0, 4.0, 1.0), 0.25) == pytest.approx(0.5)
    with pytest.raises(ValueError, match=r"\(0, 0.25\]"):
        regret_bound(ConvexityProfile(1.0, 4.0, 1.0), 0.26)
    with pytest.raises(ValueError):
        regret_bound(ConvexityProfile(1.0, 4.0, 1.0), 0.0)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.1, 5), st.floats(1, 3), st.floats(0.1, 5), st.floats(0.01, 0.99))
def test_regret_bound_monotone(m, ratio, sigma2, frac):
    L = m * ratio
    mu = frac / L
    b = regret_bound(ConvexityProfile(m, L, sigma2), mu)
    assert regret_bound(ConvexityProfile(m, L, sigma2 * 1.5), mu) > b
    assert regret_bound(ConvexityProfile(m, L, sigma2), mu * 0.5) < b
    assert regret_bound(ConvexityProfile(m, L * 1.01, sigma2), mu) > b
    assert regret_bound(ConvexityProfile(m * 0.99, L, sigma2), mu) > b


def test_profile_validation():
    with pytest.raises(ValueError):
        ConvexityProfile(2.0, 1.0)
    with pytest.raises(ValueError):
        ConvexityProfile(0.0, 1.0)


def test_lemma1_examples():
    c = check_lemma1([1.0, 3.0], 0.0)
    assert c.holds and c.lhs == pytest.approx(1.5) and c.rhs == pytest.approx(2.0)
    c = check_lemma1([2.0, 2.0], 1.0)
    assert c.holds and c.lhs == pytest.approx(1.0) and c.rhs == pytest.approx(1.0)


def test_lemma1_preconditions():
    with pytest.raises(ValueError):
        check_lemma1([1.0, 3.0], 1.5)
    with pytest.raises(ValueError):
        check_lemma1([0.0, 3.0], 0.0)


def test_lemma1_sweep():
    holds, worst = lemma1_sweep()
    assert holds == LEMMA1_CASES and worst <= 0


@settings(max_examples=300, deadline=None)
@given(st.lists(st.floats(0.01, 100), min_size=1, max_size=10), st.floats(0, 1))
def test_lemma1_property(risks, frac):
    assert check_lemma1(risks, frac * min(risks)).holds


def test_gap_examples():
    q = QuadraticLoss(np.eye(2))
    c = strong_convexity_gap_check(ConvexityProfile(1.0, 1.0), [2.0, 0.0], [0.0, 0.0], lambda t: q.risk(t, 0.0, 0.0))
    assert c.holds and c.lhs == pytest.approx(4.0) and c.rhs == pytest.approx(4.0)
    q = QuadraticLoss(np.diag([1.0, 4.0]))
    c = strong_convexity_gap_check(ConvexityProfile(1.0, 4.0), [0.0, 1.0], [0.0, 0.0], lambda t: q.risk(t, 0.0, 0.0))
    assert c.holds and c.lhs == pytest.approx(1.0) and c.rhs == pytest.approx(4.0)


def test_all_suites_pass():
    results = run_suites(["all"])
    assert results and all(r.passed for r in results), [r for r in results if not r.passed]


def test_unknown_suite():
    with pytest.raises(KeyError):
        run_suites(["nope"])
