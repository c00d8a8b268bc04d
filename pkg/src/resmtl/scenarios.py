"""Scenario generators and CSV ingestion.

A scenario owns the loss model and each agent's data distribution.  Its
``sample`` draws a batch for *all* agents from one generator, agent-major,
so an agent's data depend only on the generator and its own index, never on
which other agents are Byzantine.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, InvalidScenarioError
from .models import LocalizationLoss, QuadraticLoss, SoftmaxLoss
from .oracle import ConvexityProfile

TARGETS = np.array([(10.84, 10.76), (20.42, 20.26), (20.51, 10.40), (10.78, 20.30)])
AGENT_REGION = (5.0, 25.0)
SIGMA_D2_RANGE = (0.1, 0.2)
SIGMA_U2_RANGE = (0.01, 0.1)


class Scenario:
    name = "base"
    theta_star = None
    profile = None

    # ``model`` and ``positions`` are dataclass fields in subclasses, so the
    # base gives them no class-level default

    @property
    def dim(self) -> int:
        return self.model.dim

    @property
    def has_risk(self) -> bool:
        return False

    def sample(self, rng, batch_size):
        raise NotImplementedError

    def risk(self, theta, agents):
        raise NotImplementedError(f"{self.name} scenario has no closed-form risk")

    def test_metrics(self, theta, agents):
        return None


def _per_agent(value, n, name):
    arr = np.broadcast_to(np.asarray(value, dtype=float), (n,)).copy()
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise InvalidScenarioError(f"{name} must be finite and non-negative")
    return arr


@dataclass
class LocalizationScenario(Scenario):
    """Agents estimate the position of their assigned target from range and bearing."""

    targets: np.ndarray
    positions: np.ndarray
    assignment: np.ndarray
    sigma_d2: np.ndarray
    sigma_u2: np.ndarray
    name: str = "localization"
    model: LocalizationLoss = field(default_factory=LocalizationLoss)

    def __post_init__(self):
        vec = self.targets[self.assignment] - self.positions
        self.true_dist = np.sqrt(np.sum(vec * vec, axis=1))
        safe = np.where(self.true_dist > 0, self.true_dist, 1.0)
        self.true_dir = np.where(self.true_dist[:, None] > 0, vec / safe[:, None], 0.0)
        # minimizer of the expected loss: bearing noise shrinks it toward the agent
        self.theta_star = self.positions + self.true_dist[:, None] * self.true_dir / (1.0 + self.sigma_u2[:, None])

    @property
    def n_agents(self):
        return self.positions.shape[0]

    @property
    def has_risk(self):
        return True

    def sample(self, rng, batch_size):
        n = self.n_agents
        e_d = rng.standard_normal((n, batch_size))
        e_u = rng.standard_normal((n, batch_size, 2))
        dist = self.true_dist[:, None] + np.sqrt(self.sigma_d2)[:, None] * e_d
        direction = self.true_dir[:, None, :] + np.sqrt(self.sigma_u2)[:, None, None] * e_u
        pos = np.broadcast_to(self.positions[:, None, :], (n, batch_size, 2))
        return {"pos": pos, "dist": dist, "dir": direction}

    def risk(self, theta, agents):
        """``(D - w.u)^2 + sigma_u2 ||w||^2 + sigma_d2`` with ``w = theta - x_k``."""
        agents = np.asarray(agents)
        w = np.asarray(theta, float) - self.positions[agents]
        along = self.true_dist[agents] - np.sum(w * self.true_dir[agents], axis=-1)
        return along * along + self.sigma_u2[agents] * np.sum(w * w, axis=-1) + self.sigma_d2[agents]


def target_localization_scenario(n_agents: int, seed=None, overrides=None) -> LocalizationScenario:
    """Four-target localization field with per-agent noise levels.

    ``overrides`` may set ``targets``, ``positions``, ``sigma_d2``,
    ``sigma_u2`` or ``region``.  All random draws happen regardless of
    overrides so that overriding one quantity never shifts another.
    """
    if n_agents < 1:
        raise InvalidScenarioError("need at least one agent")
    ov = dict(overrides or {})
    lo, hi = ov.get("region", AGENT_REGION)
    rng = np.random.default_rng(seed)
    positions = rng.uniform(lo, hi, size=(n_agents, 2))
    sigma_d2 = rng.uniform(*SIGMA_D2_RANGE, size=n_agents)
    sigma_u2 = rng.uniform(*SIGMA_U2_RANGE, size=n_agents)
    targets = np.asarray(ov.get("targets", TARGETS), dtype=float).reshape(-1, 2)
    if "positions" in ov:
        positions = np.asarray(ov["positions"], dtype=float).reshape(n_agents, 2)
    if "sigma_d2" in ov:
        sigma_d2 = _per_agent(ov["sigma_d2"], n_agents, "sigma_d2")
    if "sigma_u2" in ov:
        sigma_u2 = _per_agent(ov["sigma_u2"], n_agents, "sigma_u2")
    gaps = positions[:, None, :] - targets[None, :, :]
    assignment = np.argmin(np.sum(gaps * gaps, axis=-1), axis=1)
    return LocalizationScenario(targets, positions, assignment, sigma_d2, sigma_u2)


@dataclass
class QuadraticScenario(Scenario):
    """Clustered quadratic tasks with known optimum, curvature and noise."""

    model: QuadraticLoss
    centers: np.ndarray
    assignment: np.ndarray
    sigma2: float
    name: str = "quadratic"

    def __post_init__(self):
        self.theta_star = self.centers[self.assignment]
        self.profile = ConvexityProfile(self.model.m, self.model.L, self.sigma2, 1.0)

    @property
    def n_agents(self):
        return self.assignment.shape[0]

    @property
    def has_risk(self):
        return True

    def sample(self, rng, batch_size):
        return {"target": self.model.sample_targets(self.theta_star, self.sigma2, rng, batch_size)}

    def risk(self, theta, agents):
        return self.model.risk(theta, self.theta_star[np.asarray(agents)], self.sigma2)


def clustered_regression_scenario(
    n_agents: int, n_clusters: int = 1, H=((1.0, 0.0), (0.0, 1.0)), sigma2: float = 1.0,
    spread: float = 0.0, seed=None, centers=None,
) -> QuadraticScenario:
    """Agents split into contiguous equal-size clusters sharing one optimum each.

    Cluster optima are ``spread * N(0, I)`` unless ``centers`` is given.
    """
    if n_agents < 1 or not 1 <= n_clusters <= n_agents:
        raise InvalidScenarioError("need 1 <= n_clusters <= n_agents")
    if sigma2 < 0:
        raise InvalidScenarioError("sigma2 must be non-negative")
    model = QuadraticLoss(H)
    if centers is None:
        centers = spread * np.random.default_rng(seed).standard_normal((n_clusters, model.dim))
    centers = np.asarray(centers, dtype=float).reshape(n_clusters, model.dim)
    assignment = (np.arange(n_agents) * n_clusters) // n_agents
    return QuadraticScenario(model, centers, assignment, float(sigma2))


@dataclass
class CsvDataset:
    features: np.ndarray
    labels: np.ndarray
    train: list
    test: list
    columns: list

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1

    @property
    def n_agents(self) -> int:
        return len(self.train)


def _read_csv(path, label_column, group_column=None):
    path = Path(path)
    try:
        fh = path.open(newline="")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise DataError(f"{path} is empty; a header row is required")
        header = [h.strip() for h in header]
        if label_column not in header:
            raise DataError(f"label column {label_column!r} not in header {header}")
        if group_column is not None and group_column not in header:
            raise DataError(f"group column {group_column!r} not in header")
        li = header.index(label_column)
        gi = header.index(group_column) if group_column is not None else None
        feat_idx = [i for i in range(len(header)) if i not in (li, gi)]
        rows, labels, groups = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"expected {len(header)} fields, got {len(row)}", line=lineno)
            try:
                y = float(row[li])
                vals = [float(row[i]) for i in feat_idx]
            except ValueError as exc:
                raise DataError(f"non-numeric field ({exc})", line=lineno) from None
            if not y.is_integer() or y < 0:
                raise DataError(f"label {row[li]!r} is not a non-negative integer", line=lineno)
            if not all(math.isfinite(v) for v in vals):
                raise DataError("non-finite feature value", line=lineno)
            rows.append(vals)
            labels.append(int(y))
            if gi is not None:
                groups.append(row[gi].strip())
    if not rows:
        raise DataError(f"{path} has no data rows")
    return np.array(rows, dtype=float), np.array(labels, dtype=np.intp), [header[i] for i in feat_idx], groups


def _shares(partition, n_agents):
    if partition in (None, "uniform"):
        return [1.0 / n_agents] * n_agents
    shares = [float(s) for s in partition]
    if len(shares) != n_agents:
        raise DataError(f"partition lists {len(shares)} shares for {n_agents} agents")
    if any(s < 0 for s in shares) or sum(shares) > 1.0 + 1e-9:
        raise DataError("partition shares must be non-negative and sum to at most 1")
    return shares


def _slice_by_shares(pool, shares):
    out, start = [], 0
    for s in shares:
        size = int(math.floor(s * len(pool) + 1e-9))
        out.append(pool[start : start + size])
        start += size
    return out


def load_csv_dataset(
    path, label_column: str, split: float = 0.75, partition="uniform", n_agents: int | None = None,
    seed=None, group_column: str | None = None,
) -> CsvDataset:
    """Load a labelled CSV and split it into per-agent train/test index sets.

    Without ``group_column`` the rows are shuffled, split globally into train
    and test at ``split``, and each pool is cut into consecutive per-agent
    slices of ``floor(share * pool size)`` rows.  With ``group_column`` each
    distinct group value becomes one agent (sorted order) and the split is
    done within each group.
    """
    if not 0 < split < 1:
        raise DataError("split must lie in (0, 1)")
    X, y, columns, groups = _read_csv(path, label_column, group_column)
    rng = np.random.default_rng(seed)
    if group_column is not None:
        names = sorted(set(groups))
        if n_agents is not None and n_agents != len(names):
            raise DataError(f"{len(names)} groups in {group_column!r} but {n_agents} agents configured")
        garr = np.array(groups)
        train, test = [], []
        for name in names:
            idx = rng.permutation(np.nonzero(garr == name)[0])
            cut = int(math.floor(split * idx.size + 1e-9))
            train.append(idx[:cut])
            test.append(idx[cut:])
    else:
        if n_agents is None:
            raise DataError("n_agents is required without a group column")
        order = rng.permutation(len(y))
        cut = int(math.floor(split * len(y) + 1e-9))
        shares = _shares(partition, n_agents)
        train = _slice_by_shares(order[:cut], shares)
        test = _slice_by_shares(order[cut:], shares)
    return CsvDataset(X, y, train, test, columns)


@dataclass
class CsvScenario(Scenario):
    """Softmax regression on per-agent partitions of a CSV dataset."""

    dataset: CsvDataset
    standardize: bool = False
    name: str = "csv"

    def __post_init__(self):
        ds = self.dataset
        empty = [k for k, idx in enumerate(ds.train) if len(idx) == 0]
        if empty:
            raise InvalidScenarioError(f"agents {empty} received no training rows")
        X = ds.features
        if self.standardize:
            rows = np.concatenate(ds.train)
            mean, std = X[rows].mean(axis=0), X[rows].std(axis=0)
            X = (X - mean) / np.where(std > 0, std, 1.0)
        self.X = X
        self.model = SoftmaxLoss(ds.n_classes, X.shape[1])
        self._sizes = np.array([len(idx) for idx in ds.train])

    @property
    def n_agents(self):
        return self.dataset.n_agents

    def sample(self, rng, batch_size):
        u = rng.random((self.n_agents, batch_size))
        picks = np.floor(u * self._sizes[:, None]).astype(np.intp)
        rows = np.stack([self.dataset.train[k][picks[k]] for k in range(self.n_agents)])
        return {"x": self.X[rows], "y": self.dataset.labels[rows]}

    def test_metrics(self, theta, agents):
        """Mean test loss and accuracy per agent (NaN without test rows)."""
        losses, accs = [], []
        for th, k in zip(theta, agents):
            rows = self.dataset.test[k]
            if len(rows) == 0:
                losses.append(math.nan)
                accs.append(math.nan)
                continue
            batch = {"x": self.X[rows], "y": self.dataset.labels[rows]}
            losses.append(float(self.model.loss(th, batch)))
            accs.append(float(np.mean(self.model.predict(th, batch["x"]) == batch["y"])))
        return np.array(losses), np.array(accs)
