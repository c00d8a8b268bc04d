"""Acceptance criteria, each at its stated tolerance and time budget.

A summary line per criterion is printed at the end of the pytest run.
"""
import time

import numpy as np
import pytest

from resmtl import io
from resmtl.config import validate
from resmtl.engine import Simulation, run_simulation
from resmtl.oracle import regret_bound
from resmtl.verify import GRAD_POINTS, GRAD_TOL, LEMMA1_CASES, QP_CASES, QP_TOL, gradient_errors, lemma1_sweep, qp_errors
from resmtl.weighting import EmaTable, OpCounter, filtered_loss_weights

pytestmark = pytest.mark.acceptance


class Timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0


def test_c1_closed_form_weights_match_qp(criterion):
    with Timer() as t:
        errs = qp_errors()
    ok = errs.size == QP_CASES and errs.max() < QP_TOL and t.elapsed < 10
    criterion(ok, f"{np.sum(errs < QP_TOL)}/{errs.size} within {QP_TOL:g}, worst {errs.max():.2e}, {t.elapsed:.1f}s")
    assert ok


def test_c2_lemma1(criterion):
    with Timer() as t:
        holds, worst = lemma1_sweep()
    ok = holds == LEMMA1_CASES and t.elapsed < 5
    criterion(ok, f"{holds}/{LEMMA1_CASES} true, max lhs-rhs {worst:.2e}, {t.elapsed:.1f}s")
    assert ok


def test_c3_gradients(criterion):
    with Timer() as t:
        errs = gradient_errors()
    worst = {k: float(v.max()) for k, v in errs.items()}
    ok = all(v.size == GRAD_POINTS for v in errs.values()) and max(worst.values()) < GRAD_TOL and t.elapsed < 10
    criterion(ok, ", ".join(f"{k} worst {v:.1e}" for k, v in worst.items()) + f", {t.elapsed:.1f}s")
    assert ok


def c4_config(seed):
    return validate({
        "engine": {"rounds": 1000, "seed": seed, "test_every": 10**9},
        "topology": {"kind": "complete", "n": 6},
        "scenario": {"name": "quadratic", "hessian": [1.0, 4.0], "sigma2": 1.0, "centers": [[1.0, -1.0]]},
        "agents": {"rule": "filtered-loss", "mu": 0.1, "nu": 0.1, "byzantine": [1, 2, 3, 4, 5]},
        "attack": {"kind": "random-interval", "lo": 15.0, "hi": 16.0},
    })


def test_c4_regret_bound(criterion):
    with Timer() as t:
        regrets = []
        for seed in range(50):
            sim = Simulation(c4_config(seed))
            sc = sim.scenario
            floor = sc.risk(sc.theta_star[0], 0)
            tail = []

            def collect(i, s):
                if i >= 800:
                    tail.append(sc.risk(s.theta[0], 0) - floor)

            sim.run(collect)
            regrets.append(np.mean(tail))
    bound = regret_bound(sc.profile, 0.1)
    mean = float(np.mean(regrets))
    ok = bound == pytest.approx(0.2) and mean <= 1.2 * bound and t.elapsed < 120
    criterion(ok, f"mean tail regret {mean:.4f} <= {1.2 * bound:.3f} (bound {bound:.3f}), {t.elapsed:.1f}s")
    assert ok


def test_c5_cooperation_never_hurts(criterion):
    cfg = validate({
        "engine": {"rounds": 1000, "seed": 5, "test_every": 10**9},
        "topology": {"kind": "complete", "n": 20},
        "scenario": {"name": "quadratic", "hessian": [1.0, 4.0], "sigma2": 1.0, "clusters": 4, "spread": 3.0},
        "agents": {"rule": "filtered-loss", "risk": "exact", "mu": 0.1},
    })
    with Timer() as t:
        sim = Simulation(cfg)
        sc, rows = sim.scenario, np.arange(sim.m)
        worst = {"combined": -np.inf, "filtered mean": -np.inf}
        checks = [0]

        def chain(i, s):
            ids = s.normal
            r_theta = sc.risk(s.theta[ids], ids)
            r_hat = sc.risk(s.theta_hat[ids], ids)
            own = s.phi[rows, s.self_slot]
            np.testing.assert_array_equal(own, r_hat)
            kept = s.valid & (s.phi <= own[:, None])
            r_kept = np.sum(np.where(kept, s.phi, 0.0), axis=1) / kept.sum(axis=1)
            worst["combined"] = max(worst["combined"], float(np.max(r_theta - r_kept)))
            worst["filtered mean"] = max(worst["filtered mean"], float(np.max(r_kept - r_hat)))
            checks[0] += ids.size

        sim.run(chain)
    ok = max(worst.values()) <= 1e-9 and checks[0] == 20 * 1000 and t.elapsed < 60
    criterion(ok, f"{checks[0]} agent-rounds; max r(theta)-mean r(kept) {worst['combined']:.2e}, "
                  f"max mean r(kept)-r(theta_hat) {worst['filtered mean']:.2e}, {t.elapsed:.1f}s")
    assert ok


def c6_config(rule, byz, seed):
    return validate({
        "engine": {"rounds": 2000, "seed": seed, "test_every": 10**9},
        "topology": {"kind": "geometric", "n": 100},
        "scenario": {"name": "localization"},
        "agents": {"rule": rule, "mu": 0.1, "nu": 0.1, "byzantine_count": byz},
        "attack": {"kind": "random-interval", "lo": 15.0, "hi": 16.0},
    })


def test_c6_localization_figure(criterion):
    cells = [(0, "filtered-loss"), (0, "none"), (20, "filtered-loss"), (20, "none"), (20, "average"),
             (99, "filtered-loss"), (99, "none")]
    final = {c: [] for c in cells}
    with Timer() as t:
        for seed in range(10):
            for byz, rule in cells:
                final[byz, rule].append(run_simulation(c6_config(rule, byz, seed)).final_losses())
    mean = {c: float(np.mean(v)) for c, v in final.items()}
    a = mean[0, "filtered-loss"] <= mean[0, "none"] and mean[20, "filtered-loss"] <= mean[20, "none"]
    b = mean[20, "average"] >= 10 * mean[20, "filtered-loss"]
    lone = np.array([f[0] for f in final[99, "filtered-loss"]])
    alone = np.array([f[0] for f in final[99, "none"]])
    rel = np.abs(lone - alone) / alone
    c = bool(np.all(rel <= 0.2))
    ok = a and b and c and t.elapsed < 300
    criterion(ok, f"(a) filtered {mean[0, 'filtered-loss']:.3f}/{mean[20, 'filtered-loss']:.3f} vs none "
                  f"{mean[0, 'none']:.3f}/{mean[20, 'none']:.3f}; (b) average/filtered "
                  f"{mean[20, 'average'] / mean[20, 'filtered-loss']:.1f}x; (c) lone agent max rel gap "
                  f"{rel.max():.3f}; {t.elapsed:.0f}s")
    assert ok


def c7_config(rule, attacked, seed):
    return validate({
        "engine": {"rounds": 1000, "seed": seed, "weights_every": 1, "test_every": 10**9},
        "topology": {"kind": "complete", "n": 5},
        "scenario": {"name": "quadratic", "hessian": [1.0, 4.0], "sigma2": 1.0, "centers": [[0.0, 0.0]]},
        "agents": {"rule": rule, "mu": 0.1, "nu": 0.1, "byzantine": [4] if attacked else []},
        "attack": {"kind": "distance-exploit", "target": [50.0, 50.0], "delta": 0.01},
    })


def final_error(res):
    return float(np.mean(res.dist_to_opt[-len(res.rounds) // 10:, 0]))


def test_c7_distance_rule_vulnerable(criterion):
    seeds = range(5)
    first, dist_ratio, filt_ratio = [], [], []
    with Timer() as t:
        for seed in seeds:
            hit = run_simulation(c7_config("distance", True, seed))
            rounds = [r for r, w in hit.weight_snapshots if w[0, 4] > w[0, :4].max()]
            first.append(min(rounds) if rounds else np.inf)
            dist_ratio.append(final_error(hit) / final_error(run_simulation(c7_config("distance", False, seed))))
            filt_ratio.append(final_error(run_simulation(c7_config("filtered-loss", True, seed)))
                              / final_error(run_simulation(c7_config("filtered-loss", False, seed))))
    ok = max(first) <= 50 and min(dist_ratio) > 5 and max(filt_ratio) <= 1.5 and t.elapsed < 60
    criterion(ok, f"attacker dominates by round {max(first)}; distance victim error x{min(dist_ratio):.1f} "
                  f"(min over seeds); filtered victim x{max(filt_ratio):.2f} (max); {t.elapsed:.1f}s")
    assert ok


DETERMINISM_CASES = {
    "localization": {
        "engine": {"rounds": 150, "seed": 2},
        "topology": {"kind": "geometric", "n": 100},
        "scenario": {"name": "localization"},
        "agents": {"rule": "filtered-loss", "byzantine_count": 20},
    },
    "mixed-rules": {
        "engine": {"rounds": 150, "seed": 4, "batch_size": 2},
        "topology": {"kind": "complete", "n": 10},
        "scenario": {"name": "quadratic", "hessian": [1.0, 4.0], "clusters": 2, "spread": 2.0},
        "agents": {"rules": ["none", "average", "distance", "loss", "filtered-loss"] * 2, "byzantine": [9]},
    },
    "distance-exploit": {
        "engine": {"rounds": 150, "seed": 6},
        "topology": {"kind": "complete", "n": 12},
        "scenario": {"name": "quadratic", "hessian": [2.0, 1.0]},
        "agents": {"rule": "distance", "byzantine": [0, 5]},
        "attack": {"kind": "distance-exploit", "target": [9.0, 9.0]},
    },
}


def metrics_bytes(raw, workers, path):
    cfg = validate({**raw, "engine": {**raw["engine"], "workers": workers}})
    io.write_metrics_csv(run_simulation(cfg), path)
    return path.read_bytes()


def test_c8_determinism(criterion, tmp_path):
    results = {}
    for name, raw in DETERMINISM_CASES.items():
        one = metrics_bytes(raw, 1, tmp_path / f"{name}-1a.csv")
        again = metrics_bytes(raw, 1, tmp_path / f"{name}-1b.csv")
        eight = metrics_bytes(raw, 8, tmp_path / f"{name}-8.csv")
        results[name] = one == again == eight
    ok = all(results.values())
    criterion(ok, ", ".join(f"{k} {'identical' if v else 'DIFFERS'}" for k, v in results.items()) + " (x2, 1 vs 8 workers)")
    assert ok


def test_c9_linear_weighting(criterion):
    rng = np.random.default_rng(0)
    counts = {}
    for n in (10, 100, 1000):
        risks = rng.uniform(0.1, 10.0, n)
        risks[0] = risks.max()  # every neighbor passes the filter: the most work per call
        ops = OpCounter()
        filtered_loss_weights(EmaTable(0.1, dict(enumerate(risks.tolist()))), 0, ops=ops)
        counts[n] = ops.count
    r1, r2 = counts[100] / counts[10], counts[1000] / counts[100]
    ok = abs(r1 / 10 - 1) <= 0.1 and abs(r2 / 10 - 1) <= 0.1
    criterion(ok, f"ops {counts}; ratios {r1:.2f}, {r2:.2f} (linear = 10)")
    assert ok
