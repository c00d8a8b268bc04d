"""Normal-agent adapt-then-combine steps and Byzantine message generators.

These functions operate on one agent at a time.  The engine runs the same
arithmetic vectorized over all agents; the per-agent form is the reference
it is tested against.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import ConfigError, NonFiniteError
from .models import LossModel
from .weighting import RULES, EmaTable, compute_weights, mark_faulty, update_ema


@dataclass(frozen=True)
class RandomInterval:
    """Each coordinate drawn uniformly from ``[lo, hi]``, fresh per message."""

    lo: float | tuple = 15.0
    hi: float | tuple = 16.0

    def __post_init__(self):
        if np.any(np.asarray(self.lo) > np.asarray(self.hi)):
            raise ConfigError([("attack.lo", "must not exceed attack.hi")])

    def draw(self, rng, shape):
        lo, hi = np.asarray(self.lo, float), np.asarray(self.hi, float)
        return lo + (hi - lo) * rng.random(shape)


@dataclass(frozen=True)
class DistanceExploit:
    """A point ``delta`` away from the victim's reference model, toward ``target``.

    Against distance-based weights this buys a near-zero distance and hence
    most of the victim's weight mass.
    """

    target: tuple
    delta: float = 0.01

    def __post_init__(self):
        if not self.delta > 0:
            raise ConfigError([("attack.delta", "must be positive")])

    def craft(self, victim_view):
        ref = np.asarray(victim_view, dtype=float)
        gap = np.asarray(self.target, dtype=float) - ref
        norm = np.sqrt(np.sum(gap * gap, axis=-1, keepdims=True))
        unit = np.divide(gap, norm, out=np.zeros_like(gap), where=norm > 0)
        return ref + self.delta * unit


AttackSpec = RandomInterval | DistanceExploit


def byzantine_message(spec, victim_view=None, rng=None, dim: int | None = None):
    """One message for one victim.

    ``victim_view`` is the victim's previous model and is required by
    :class:`DistanceExploit`; :class:`RandomInterval` needs ``rng`` and ``dim``.
    """
    if isinstance(spec, DistanceExploit):
        if victim_view is None:
            raise ConfigError([("attack", "distance exploit needs the victim's model")])
        return spec.craft(victim_view)
    if isinstance(spec, RandomInterval):
        if dim is None:
            dim = np.size(victim_view) if victim_view is not None else np.size(spec.lo)
        return spec.draw(rng, (dim,))
    raise TypeError(f"unknown attack spec {spec!r}")


@dataclass
class NormalAgent:
    id: int
    theta: np.ndarray
    mu: float
    rule: str
    risk: EmaTable
    dist: EmaTable | None = None
    theta_hat: np.ndarray | None = None
    train_loss: float = math.nan
    errors: list = field(default_factory=list)

    def __post_init__(self):
        if self.rule not in RULES:
            raise ValueError(f"unknown rule {self.rule!r}")
        if not self.mu > 0:
            raise ValueError("step size must be positive")
        self.theta = np.asarray(self.theta, dtype=float)
        if self.rule == "distance" and self.dist is None:
            self.dist = EmaTable(self.risk.nu)


def adapt(agent: NormalAgent, model: LossModel, batch) -> np.ndarray:
    """SGD step on the agent's batch; stores and returns the intermediate model.

    A non-finite gradient leaves the agent untouched and raises.
    """
    g = model.grad(agent.theta, batch)
    if not np.all(np.isfinite(g)):
        agent.errors.append("non-finite gradient")
        raise NonFiniteError(f"agent {agent.id}: non-finite gradient")
    agent.train_loss = float(model.loss(agent.theta, batch))
    agent.theta_hat = agent.theta - agent.mu * g
    return agent.theta_hat


def evaluate_neighbors(
    agent: NormalAgent,
    model: LossModel,
    received: Mapping[int, np.ndarray],
    eval_batch,
    exact_risk: Callable | None = None,
) -> None:
    """Score every received model on the agent's own data.

    Losses go through the risk EMA (or, with ``exact_risk``, the true risk
    replaces the estimate).  Distance agents also smooth
    ``||theta_prev - received||^2``.  Non-finite models get the +inf sentinel.
    """
    for l, th in received.items():
        th = np.asarray(th, dtype=float)
        if not np.all(np.isfinite(th)):
            mark_faulty(agent.risk, l)
            if agent.dist is not None:
                mark_faulty(agent.dist, l)
            continue
        value = float(exact_risk(th)) if exact_risk is not None else float(model.loss(th, eval_batch))
        if not math.isfinite(value):
            mark_faulty(agent.risk, l)
        elif exact_risk is not None:
            agent.risk.phi[l] = value
        else:
            update_ema(agent.risk, l, value)
        if agent.dist is not None:
            gap = agent.theta - th
            update_ema(agent.dist, l, float(gap @ gap))


def agent_weights(agent: NormalAgent, nbhd) -> dict:
    return compute_weights(agent.rule, agent.id, nbhd, agent.risk, agent.dist)


def combine(agent: NormalAgent, received: Mapping[int, np.ndarray], weights: Mapping[int, float]) -> np.ndarray:
    """``theta_k = sum_l a_lk * theta_hat_l``; zero-weight models are skipped."""
    out = np.zeros_like(agent.theta)
    for l, a in weights.items():
        if a > 0.0:
            out = out + a * np.asarray(received[l], dtype=float)
    agent.theta = out
    return out
