"""Online combination-weight rules and the EMA estimators that feed them.

Two surfaces share the same arithmetic:

* per-agent functions over ``{agent_id: value}`` mappings, used by the
  single-agent API and instrumented for operation counting;
* row-wise array versions over a padded ``(agents, neighbor slots)`` layout,
  used by the simulation engine.

Inverses are taken as ``1 / max(value, EPS)``.  An infinite estimate (the
sentinel for a neighbor that sent a non-finite model) gets weight 0.
"""
from __future__ import annotations

import math
from typing import Iterable, Mapping

import numpy as np

from .errors import NonFiniteError

EPS = 1e-12
RULES = ("none", "average", "distance", "loss", "filtered-loss")


class EmaTable:
    """Per-agent exponential moving averages keyed by neighbor id.

    Serves both as the risk table (smoothed losses of neighbor models on the
    owner's data) and as the distance table (smoothed squared distances).
    Unseen neighbors start at 0.
    """

    def __init__(self, nu: float, phi: Mapping[int, float] | None = None):
        if not 0.0 < nu < 1.0:
            raise ValueError(f"forgetting factor must lie in (0, 1), got {nu}")
        self.nu = float(nu)
        self.phi = dict(phi or {})

    def __getitem__(self, l):
        return self.phi.get(l, 0.0)

    def __contains__(self, l):
        return l in self.phi

    def __repr__(self):
        return f"EmaTable(nu={self.nu}, phi={self.phi!r})"


RiskEstimateTable = EmaTable
DistanceEstimateTable = EmaTable


def update_ema(table: EmaTable, l: int, value: float) -> EmaTable:
    """``phi[l] <- (1 - nu) phi[l] + nu * value``; rejects non-finite input."""
    if not math.isfinite(value):
        raise NonFiniteError(f"non-finite value {value!r} for neighbor {l}")
    if value < 0:
        raise ValueError(f"EMA input must be non-negative, got {value}")
    table.phi[l] = (1.0 - table.nu) * table.phi.get(l, 0.0) + table.nu * value
    return table


def mark_faulty(table: EmaTable, l: int) -> EmaTable:
    """Pin ``phi[l]`` to +inf so the neighbor is never weighted again."""
    table.phi[l] = math.inf
    return table


class OpCounter:
    """Tally of scalar arithmetic operations (compare, clamp, add, divide)."""

    def __init__(self):
        self.count = 0

    def __call__(self, k: int = 1):
        self.count += k


def _tick(ops, k=1):
    if ops is not None:
        ops(k)


def average_weights(nbhd: Iterable[int]) -> dict:
    nbhd = sorted(nbhd)
    if not nbhd:
        raise ValueError("neighborhood must contain at least the agent itself")
    w = 1.0 / len(nbhd)
    return {l: w for l in nbhd}


def inverse_weights(values: Mapping[int, float], eps: float = EPS, ops: OpCounter | None = None) -> dict:
    """``a_l = v_l^-1 / sum_p v_p^-1`` with clamped inverses.

    Falls back to uniform weights when every value is infinite.
    """
    if not values:
        raise ValueError("cannot weight an empty neighborhood")
    inv = {}
    total = 0.0
    for l, v in values.items():
        x = 1.0 / max(v, eps)
        _tick(ops, 3)  # clamp, invert, accumulate
        inv[l] = x
        total += x
    if total == 0.0:
        return average_weights(values)
    out = {}
    for l, x in inv.items():
        out[l] = x / total
        _tick(ops)
    return out


def distance_weights(table: EmaTable, nbhd: Iterable[int] | None = None, eps: float = EPS) -> dict:
    """Inverse smoothed squared distance, normalized over the neighborhood."""
    keys = table.phi.keys() if nbhd is None else nbhd
    return inverse_weights({l: table[l] for l in keys}, eps)


def loss_weights(table: EmaTable, nbhd: Iterable[int] | None = None, eps: float = EPS) -> dict:
    """Closed-form minimizer of ``sum_l a_l^2 r_l`` over the simplex."""
    keys = table.phi.keys() if nbhd is None else nbhd
    return inverse_weights({l: table[l] for l in keys}, eps)


def filtered_loss_weights(
    table: EmaTable, self_id: int, eps: float = EPS, ops: OpCounter | None = None
) -> dict:
    """Inverse-risk weights over neighbors whose risk is at most the agent's own.

    Neighbors with ``phi_l > phi_self`` get weight exactly 0.  The agent
    always passes its own filter.
    """
    if self_id not in table:
        raise ValueError(f"risk of agent {self_id} on its own data is not tracked")
    own = table.phi[self_id]
    kept = {}
    for l, v in table.phi.items():
        _tick(ops)
        if v <= own:
            kept[l] = v
    kept[self_id] = own
    w = inverse_weights(kept, eps, ops)
    return {l: w.get(l, 0.0) for l in table.phi}


def compute_weights(rule: str, self_id: int, nbhd: Iterable[int], risk: EmaTable | None, dist: EmaTable | None) -> dict:
    """Dispatch a rule name to its weight function for one agent."""
    nbhd = sorted(nbhd)
    if rule == "none":
        return {l: float(l == self_id) for l in nbhd}
    if rule == "average":
        return average_weights(nbhd)
    if rule == "distance":
        return distance_weights(dist, nbhd)
    if rule == "loss":
        return loss_weights(risk, nbhd)
    if rule == "filtered-loss":
        sub = EmaTable(risk.nu, {l: risk[l] for l in nbhd})
        return filtered_loss_weights(sub, self_id)
    raise ValueError(f"unknown weighting rule {rule!r}; expected one of {RULES}")


# -- row-wise versions over a padded (agents, slots) layout -----------------


def _inverse_rows(values, mask, eps=EPS):
    with np.errstate(divide="ignore"):
        inv = np.where(mask, 1.0 / np.maximum(values, eps), 0.0)
    total = np.sum(inv, axis=1)
    dead = total == 0.0
    if np.any(dead):
        inv[dead] = mask[dead]
        total[dead] = np.sum(mask[dead], axis=1)
    return inv / total[:, None]


def average_rows(valid):
    return valid / np.sum(valid, axis=1, keepdims=True)


def self_rows(valid, self_slot):
    w = np.zeros(valid.shape)
    w[np.arange(valid.shape[0]), self_slot] = 1.0
    return w


def inverse_rows(values, valid, eps=EPS):
    """Row-wise ``loss_weights`` / ``distance_weights``."""
    return _inverse_rows(values, valid, eps)


def filtered_rows(phi, valid, self_slot, eps=EPS):
    """Row-wise ``filtered_loss_weights``."""
    rows = np.arange(phi.shape[0])
    own = phi[rows, self_slot]
    mask = valid & (phi <= own[:, None])
    mask[rows, self_slot] = True
    return _inverse_rows(phi, mask, eps)
