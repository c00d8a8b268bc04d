"""Round-synchronous adapt-then-combine simulation.

Each round:

1. every normal agent draws a training batch and takes an SGD step from its
   previous model (adapt);
2. all intermediate models are published at once; Byzantine agents craft one
   message per victim;
3. every normal agent scores what it received on a fresh evaluation batch,
   updates its estimates, computes weights under its rule and combines;
4. metrics are recorded.

Agents are processed as rows of a padded ``(normal agents, neighbor slots)``
layout.  Work within a phase is split into contiguous row chunks, one per
worker thread; every random draw happens on the main thread before the
chunks are dispatched, and each row's arithmetic is independent of the
chunking, so results do not depend on the worker count.

Randomness comes from counter-based Philox streams keyed by
``(seed, round, purpose)``.  Each stream draws an agent-major block over all
``n`` agents, so agent ``k``'s data are a function of ``(seed, k, round,
purpose)`` alone and do not change when other agents switch roles.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .agents import DistanceExploit, RandomInterval
from .config import SimulationConfig
from .errors import ConfigError
from .scenarios import (
    CsvScenario,
    Scenario,
    clustered_regression_scenario,
    load_csv_dataset,
    target_localization_scenario,
)
from .topology import NetworkGraph, build_graph
from .weighting import average_rows, filtered_rows, inverse_rows, self_rows

log = logging.getLogger(__name__)

PURPOSES = {"train": 1, "eval": 2, "byzantine": 3, "roles": 4, "scenario": 5, "topology": 6}
CSV_COLUMNS = ("round", "agent", "rule", "train_loss", "ema_loss", "test_loss", "accuracy", "dist_to_opt")


def seed_sequence(seed: int, round_index: int, purpose: str) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), int(round_index), PURPOSES[purpose]])


def stream(seed: int, round_index: int, purpose: str) -> np.random.Generator:
    """Counter-based generator for one ``(seed, round, purpose)`` cell."""
    return np.random.Generator(np.random.Philox(seed_sequence(seed, round_index, purpose)))


# -- construction from config ----------------------------------------------


def build_scenario(cfg: SimulationConfig, n: int) -> Scenario:
    sc = cfg.scenario
    seed = sc.get("seed")
    if seed is None:
        seed = seed_sequence(cfg.engine.seed, 0, "scenario")
    name = sc["name"]
    if name == "localization":
        overrides = {k: sc[k] for k in ("targets", "positions", "sigma_d2", "sigma_u2", "region") if k in sc}
        return target_localization_scenario(n, seed=seed, overrides=overrides)
    if name == "quadratic":
        H = np.asarray(sc.get("hessian", (1.0, 1.0)), dtype=float)
        if H.ndim == 1:
            H = np.diag(H)
        return clustered_regression_scenario(
            n, n_clusters=int(sc.get("clusters", 1)), H=H, sigma2=float(sc.get("sigma2", 1.0)),
            spread=float(sc.get("spread", 0.0)), seed=seed, centers=sc.get("centers"),
        )
    if name == "csv":
        ds = load_csv_dataset(
            sc["path"], sc["label_column"], split=float(sc.get("split", 0.75)),
            partition=sc.get("partition", "uniform"), n_agents=n, seed=seed,
            group_column=sc.get("group_column"),
        )
        return CsvScenario(ds, standardize=bool(sc.get("standardize", False)))
    raise ConfigError([("scenario.name", f"unknown scenario {name!r}")])


def build_topology(cfg: SimulationConfig, scenario: Scenario | None = None) -> NetworkGraph:
    spec = {k: v for k, v in cfg.to_dict()["topology"].items() if v is not None}
    spec.setdefault("seed", seed_sequence(cfg.engine.seed, 0, "topology"))
    positions = getattr(scenario, "positions", None) if spec.get("kind") == "geometric" else None
    return build_graph(spec, positions=positions)


def assign_byzantine(cfg: SimulationConfig, n: int) -> np.ndarray:
    if cfg.agents.byzantine:
        return np.array(sorted(cfg.agents.byzantine), dtype=np.intp)
    count = cfg.agents.byzantine_count
    if not count:
        return np.array([], dtype=np.intp)
    picks = stream(cfg.engine.seed, 0, "roles").choice(n, size=count, replace=False)
    return np.sort(picks).astype(np.intp)


def build_attack(cfg: SimulationConfig, dim: int):
    a = cfg.attack
    if a.kind == "distance-exploit":
        target = np.asarray(a.target, dtype=float)
        if target.shape != (dim,):
            raise ConfigError([("attack.target", f"must have {dim} entries")])
        return DistanceExploit(tuple(target.tolist()), a.delta)
    for key, val in (("attack.lo", a.lo), ("attack.hi", a.hi)):
        if np.size(val) not in (1, dim):
            raise ConfigError([(key, f"must be a scalar or {dim} values")])
    return RandomInterval(a.lo, a.hi)


def _per_agent(value, n):
    return np.broadcast_to(np.asarray(value, dtype=float), (n,)).copy()


# -- results ------------------------------------------------------------------


@dataclass(frozen=True)
class MetricsRecord:
    round: int
    agent: int
    rule: str
    train_loss: float
    ema_loss: float
    test_loss: float
    accuracy: float
    dist_to_opt: float


@dataclass
class SimulationResult:
    """Columnar metrics (rows = recorded rounds, columns = normal agents)."""

    config: SimulationConfig
    normal: np.ndarray
    rules: list
    rounds: np.ndarray
    train_loss: np.ndarray
    ema_loss: np.ndarray
    test_loss: np.ndarray
    accuracy: np.ndarray
    dist_to_opt: np.ndarray
    final_theta: np.ndarray
    byzantine: np.ndarray
    neighbors: np.ndarray | None = None
    valid: np.ndarray | None = None
    weight_snapshots: list = field(default_factory=list)
    errors: list = field(default_factory=list)

    def records(self):
        cols = (self.train_loss, self.ema_loss, self.test_loss, self.accuracy, self.dist_to_opt)
        for r, rnd in enumerate(self.rounds):
            for j, k in enumerate(self.normal):
                yield MetricsRecord(int(rnd), int(k), self.rules[j], *(float(c[r, j]) for c in cols))

    def final_losses(self, tail: int | None = None) -> np.ndarray:
        """Per-agent mean streaming loss over the last ``tail`` recorded rounds."""
        tail = tail or max(1, len(self.rounds) // 10)
        return np.mean(self.train_loss[-tail:], axis=0)


# -- simulation ---------------------------------------------------------------


class Simulation:
    """Engine state for one configured run.

    ``scenario`` and ``graph`` may be passed pre-built (tests, sweeps);
    otherwise they are derived from the config and master seed.
    """

    def __init__(self, config: SimulationConfig, scenario: Scenario | None = None, graph: NetworkGraph | None = None):
        self.config = cfg = config
        eng = cfg.engine
        n = cfg.topology.n
        if scenario is None:
            if n is None:
                graph = graph or build_topology(cfg)
                n = graph.n
            scenario = build_scenario(cfg, n)
        self.scenario = scenario
        self.graph = graph if graph is not None else build_topology(cfg, scenario)
        n = self.graph.n
        if scenario.n_agents != n:
            raise ConfigError([("topology.n", f"graph has {n} agents, scenario has {scenario.n_agents}")])
        self.n = n
        self.model = scenario.model
        self.dim = d = scenario.dim
        self.seed = eng.seed
        self.batch_size = eng.batch_size
        self.eval_batch_size = eng.eval_batch_size or eng.batch_size
        self.workers = eng.workers

        self.byzantine = assign_byzantine(cfg, n)
        if np.any(self.byzantine >= n):
            raise ConfigError([("agents.byzantine", f"ids must lie in [0, {n})")])
        is_byz = np.zeros(n, dtype=bool)
        is_byz[self.byzantine] = True
        self.is_byz = is_byz
        self.normal = np.nonzero(~is_byz)[0]
        m = self.m = len(self.normal)
        self.attack = build_attack(cfg, d) if len(self.byzantine) else None

        rules = list(cfg.agents.rules) if cfg.agents.rules else [cfg.agents.rule] * n
        self.rules = [rules[k] for k in self.normal]
        self.rule_names = sorted(set(self.rules))
        self.rule_code = np.array([self.rule_names.index(r) for r in self.rules], dtype=np.intp)
        self.mu = _per_agent(cfg.agents.mu, n)[self.normal]
        self.nu = _per_agent(cfg.agents.nu, n)[self.normal]
        self.exact = cfg.agents.risk == "exact"
        if self.exact and not scenario.has_risk:
            raise ConfigError([("agents.risk", f"scenario {scenario.name!r} has no closed-form risk")])

        D = max(self.graph.degree(k) for k in self.normal)
        self.nbr = np.empty((m, D), dtype=np.intp)
        self.valid = np.zeros((m, D), dtype=bool)
        self.self_slot = np.empty(m, dtype=np.intp)
        for j, k in enumerate(self.normal):
            nb = self.graph.neighbors(int(k))
            self.nbr[j, :] = k
            self.nbr[j, : len(nb)] = nb
            self.valid[j, : len(nb)] = True
            self.self_slot[j] = nb.index(int(k))
        self.byz_slot = self.valid & is_byz[self.nbr]

        init = np.asarray(cfg.model.get("init", 0.0), dtype=float)
        if init.size not in (1, d):
            raise ConfigError([("model.init", f"must be a scalar or {d} values")])
        self.theta = np.broadcast_to(init, (n, d)).copy()
        self.theta_hat = self.theta.copy()
        self.prev = self.theta.copy()
        self.phi = np.zeros((m, D))
        self.phi_dist = np.zeros((m, D)) if "distance" in self.rule_names else None
        self.weights = np.zeros((m, D))
        self.received = np.zeros((m, D, d))
        self.failed = np.zeros(m, dtype=bool)
        self.train_loss = np.full(m, math.nan)
        self.errors = []
        self.round = 0
        chunks = np.array_split(np.arange(m), min(self.workers, m))
        self.chunks = [c for c in chunks if c.size]

    # -- phases ---------------------------------------------------------------

    def _adapt(self, rows, batch):
        ids = self.normal[rows]
        th = self.prev[ids]
        sub = {k: v[rows] for k, v in batch.items()}
        g = self.model.grad(th, sub)
        ok = np.all(np.isfinite(g), axis=-1)
        self.failed[rows] = ~ok
        self.train_loss[rows] = self.model.loss(th, sub)
        step = np.where(ok[:, None], self.mu[rows, None] * g, 0.0)
        self.theta_hat[ids] = th - step

    def _evaluate_combine(self, rows, ebatch):
        ids = self.normal[rows]
        recv = self.received[rows]
        finite_model = np.all(np.isfinite(recv), axis=-1)
        if self.exact:
            with np.errstate(invalid="ignore", over="ignore"):
                values = self.scenario.risk(recv, ids[:, None])
            bad = ~(finite_model & np.isfinite(values))
            self.phi[rows] = np.where(bad, np.inf, values)
        else:
            sub = {k: v[rows][:, None] for k, v in ebatch.items()}
            with np.errstate(invalid="ignore", over="ignore"):
                values = self.model.loss(recv, sub)
            bad = ~(finite_model & np.isfinite(values)) | np.isinf(self.phi[rows])
            nu = self.nu[rows, None]
            self.phi[rows] = np.where(bad, np.inf, (1.0 - nu) * self.phi[rows] + nu * np.where(bad, 0.0, values))
        if self.phi_dist is not None:
            with np.errstate(invalid="ignore", over="ignore"):
                gap = self.prev[ids][:, None, :] - recv
                dist = np.sum(gap * gap, axis=-1)
            badd = ~(finite_model & np.isfinite(dist)) | np.isinf(self.phi_dist[rows])
            nu = self.nu[rows, None]
            self.phi_dist[rows] = np.where(badd, np.inf, (1.0 - nu) * self.phi_dist[rows] + nu * np.where(badd, 0.0, dist))

        w = np.zeros((rows.size, self.nbr.shape[1]))
        codes = self.rule_code[rows]
        for c, rule in enumerate(self.rule_names):
            sel = np.nonzero(codes == c)[0]
            if not sel.size:
                continue
            valid = self.valid[rows[sel]]
            slot = self.self_slot[rows[sel]]
            if rule == "none":
                w[sel] = self_rows(valid, slot)
            elif rule == "average":
                w[sel] = average_rows(valid)
            elif rule == "loss":
                w[sel] = inverse_rows(self.phi[rows[sel]], valid)
            elif rule == "distance":
                w[sel] = inverse_rows(self.phi_dist[rows[sel]], valid)
            else:
                w[sel] = filtered_rows(self.phi[rows[sel]], valid, slot)
        self.weights[rows] = w
        keep = w[..., None] > 0.0
        with np.errstate(invalid="ignore", over="ignore"):
            mixed = np.sum(np.where(keep, w[..., None] * recv, 0.0), axis=1)
        hold = self.failed[rows]
        self.theta[ids] = np.where(hold[:, None], self.prev[ids], mixed)

    def _run_chunks(self, pool, fn, *args):
        if pool is None:
            for rows in self.chunks:
                fn(rows, *args)
        else:
            for f in [pool.submit(fn, rows, *args) for rows in self.chunks]:
                f.result()

    def _messages(self, rng):
        recv = self.theta_hat[self.nbr]
        if self.attack is not None and self.byz_slot.any():
            if isinstance(self.attack, RandomInterval):
                draws = self.attack.draw(rng, recv.shape)
            else:
                draws = np.broadcast_to(self.attack.craft(self.prev[self.normal])[:, None, :], recv.shape)
            recv[self.byz_slot] = draws[self.byz_slot]
        self.received = recv

    def step(self, pool=None) -> None:
        """Advance one round."""
        i = self.round = self.round + 1
        self.prev = self.theta.copy()
        batch = self.scenario.sample(stream(self.seed, i, "train"), self.batch_size)
        batch = {k: v[self.normal] for k, v in batch.items()}
        self._run_chunks(pool, self._adapt, batch)
        for j in np.nonzero(self.failed)[0]:
            self.errors.append((i, int(self.normal[j]), "non-finite gradient; holding previous model"))
        self._messages(stream(self.seed, i, "byzantine"))
        ebatch = None
        if not self.exact:
            ebatch = self.scenario.sample(stream(self.seed, i, "eval"), self.eval_batch_size)
            ebatch = {k: v[self.normal] for k, v in ebatch.items()}
        self._run_chunks(pool, self._evaluate_combine, ebatch)

    def run(self, on_round: Callable | None = None) -> SimulationResult:
        eng = self.config.engine
        rec_rounds, cols = [], {c: [] for c in CSV_COLUMNS[3:]}
        snapshots = []
        star = self.scenario.theta_star
        pool = ThreadPoolExecutor(self.workers) if len(self.chunks) > 1 else None
        try:
            for _ in range(eng.rounds):
                self.step(pool)
                i = self.round
                if on_round is not None:
                    on_round(i, self)
                if eng.weights_every and i % eng.weights_every == 0:
                    snapshots.append((i, self.weights.copy()))
                if i % eng.metrics_every:
                    continue
                rec_rounds.append(i)
                cols["train_loss"].append(self.train_loss.copy())
                cols["ema_loss"].append(self.phi[np.arange(self.m), self.self_slot].copy())
                nan = np.full(self.m, math.nan)
                tested = self.scenario.test_metrics(self.theta[self.normal], self.normal) if i % eng.test_every == 0 else None
                cols["test_loss"].append(tested[0] if tested is not None else nan)
                cols["accuracy"].append(tested[1] if tested is not None else nan)
                if star is not None:
                    gap = self.theta[self.normal] - star[self.normal]
                    with np.errstate(over="ignore"):
                        cols["dist_to_opt"].append(np.sqrt(np.sum(gap * gap, axis=1)))
                else:
                    cols["dist_to_opt"].append(nan)
        finally:
            if pool is not None:
                pool.shutdown()
        stack = {c: np.array(v).reshape(len(rec_rounds), self.m) for c, v in cols.items()}
        return SimulationResult(
            config=self.config, normal=self.normal.copy(), rules=list(self.rules),
            rounds=np.array(rec_rounds, dtype=int), final_theta=self.theta.copy(),
            byzantine=self.byzantine.copy(), neighbors=self.nbr.copy(), valid=self.valid.copy(),
            weight_snapshots=snapshots, errors=list(self.errors), **stack,
        )


def run_simulation(config: SimulationConfig, on_round: Callable | None = None, **kwargs) -> SimulationResult:
    return Simulation(config, **kwargs).run(on_round)
