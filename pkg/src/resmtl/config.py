"""Simulation configuration: parsing, dotted-key overrides, validation.

Config files are TOML, normally written with dotted keys::

    engine.rounds = 1000
    topology.kind = "complete"
    topology.n = 6
    scenario.name = "quadratic"
    agents.byzantine = [3, 5]

Validation reports every bad field at once through :class:`ConfigError`.
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import tomli

from .errors import ConfigError
from .weighting import RULES

SCENARIOS = ("localization", "quadratic", "csv")
ATTACKS = ("random-interval", "distance-exploit")
RISK_SOURCES = ("ema", "exact")

SCENARIO_KEYS = {
    "localization": {"name", "seed", "targets", "positions", "sigma_d2", "sigma_u2", "region"},
    "quadratic": {"name", "seed", "hessian", "sigma2", "clusters", "spread", "centers"},
    "csv": {"name", "seed", "path", "label_column", "split", "partition", "group_column", "standardize"},
}


@dataclass(frozen=True)
class EngineConfig:
    rounds: int
    batch_size: int = 1
    eval_batch_size: int | None = None
    seed: int = 0
    workers: int = 1
    metrics_every: int = 1
    test_every: int = 10
    weights_every: int = 0


@dataclass(frozen=True)
class TopologyConfig:
    kind: str = "complete"
    n: int | None = None
    radius: float | None = None
    region: tuple = (5.0, 25.0)
    edges: tuple = ()
    edge_file: str | None = None


@dataclass(frozen=True)
class AgentsConfig:
    rule: str = "filtered-loss"
    rules: tuple | None = None
    mu: float | tuple = 0.1
    nu: float | tuple = 0.1
    risk: str = "ema"
    byzantine: tuple = ()
    byzantine_count: int = 0


@dataclass(frozen=True)
class AttackConfig:
    kind: str = "random-interval"
    lo: float | tuple = 15.0
    hi: float | tuple = 16.0
    target: tuple | None = None
    delta: float = 0.01


@dataclass(frozen=True)
class SimulationConfig:
    engine: EngineConfig
    topology: TopologyConfig
    scenario: dict
    agents: AgentsConfig = field(default_factory=AgentsConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    model: dict = field(default_factory=lambda: {"init": 0.0})

    def to_dict(self) -> dict:
        return _plain(asdict(self))

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def content_hash(self) -> str:
        """Git blob hash of :meth:`canonical_json`."""
        return git_blob_hash(self.canonical_json().encode())

    @property
    def n_agents(self) -> int:
        return self.topology.n


def git_blob_hash(data: bytes) -> str:
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _freeze(obj):
    if isinstance(obj, list):
        return tuple(_freeze(v) for v in obj)
    return obj


def parse_value(text: str):
    """Parse an override value as a TOML literal, falling back to a bare string."""
    try:
        return tomli.loads(f"v = {text}")["v"]
    except tomli.TOMLDecodeError:
        return text


def set_dotted(raw: dict, key: str, value) -> None:
    parts = key.split(".")
    node = raw
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError([(key, f"{p!r} is not a table")])
    node[parts[-1]] = value


def get_dotted(raw: dict, key: str):
    node = raw
    for p in key.split("."):
        node = node[p]
    return node


def apply_overrides(raw: dict, overrides) -> dict:
    """Return a copy of ``raw`` with dotted-key overrides applied.

    ``overrides`` is a mapping or an iterable of ``"key=value"`` strings.
    """
    out = copy.deepcopy(raw)
    items = overrides.items() if isinstance(overrides, dict) else overrides
    for item in items:
        if isinstance(item, str):
            if "=" not in item:
                raise ConfigError([(item, "override must look like key=value")])
            key, text = item.split("=", 1)
            key, value = key.strip(), parse_value(text.strip())
        else:
            key, value = item
        set_dotted(out, key, value)
    return out


def load_raw(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([("config", f"cannot read {path}: {exc}")]) from None
    if path.suffix == ".json":
        data = json.loads(text)
        # a run manifest embeds the resolved config
        return data["config"] if "config" in data and "config_hash" in data else data
    try:
        return tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError([("config", f"TOML syntax error: {exc}")]) from None


def load_config(path, overrides=()) -> SimulationConfig:
    return validate(apply_overrides(load_raw(path), overrides))


def _section(raw, name, cls, problems, required=()):
    data = raw.get(name, {})
    if not isinstance(data, dict):
        problems.append((name, "must be a table"))
        return {}
    known = set(cls.__dataclass_fields__)
    for k in data:
        if k not in known:
            problems.append((f"{name}.{k}", "unknown field"))
    for k in required:
        if data.get(k) is None:
            problems.append((f"{name}.{k}", "required field is missing"))
    return {k: _freeze(v) for k, v in data.items() if k in known}


def _positive_int(problems, key, value, minimum=1):
    if not isinstance(value, int) or isinstance(value, bool) or value < minimum:
        problems.append((key, f"must be an integer >= {minimum}"))


def _per_agent_numbers(problems, key, value, n, check):
    values = value if isinstance(value, tuple) else (value,)
    if isinstance(value, tuple) and n is not None and len(value) != n:
        problems.append((key, f"expected a scalar or {n} values, got {len(value)}"))
    for v in values:
        if not isinstance(v, (int, float)) or isinstance(v, bool) or not check(v):
            problems.append((key, f"invalid value {v!r}"))
            return


def validate(raw: dict) -> SimulationConfig:
    """Build a :class:`SimulationConfig`, reporting all invalid fields together."""
    problems = []
    if not isinstance(raw, dict):
        raise ConfigError([("config", "top level must be a table")])
    for k in raw:
        if k not in ("engine", "topology", "scenario", "agents", "attack", "model"):
            problems.append((k, "unknown section"))

    eng = _section(raw, "engine", EngineConfig, problems, required=("rounds",))
    topo = _section(raw, "topology", TopologyConfig, problems)
    agents = _section(raw, "agents", AgentsConfig, problems)
    attack = _section(raw, "attack", AttackConfig, problems)
    model = dict(raw.get("model", {}) or {})
    scenario = {k: _freeze(v) for k, v in (raw.get("scenario") or {}).items()}

    if "rounds" in eng:
        _positive_int(problems, "engine.rounds", eng["rounds"])
    for key in ("batch_size", "metrics_every", "test_every", "workers"):
        if key in eng:
            _positive_int(problems, f"engine.{key}", eng[key])
    if eng.get("eval_batch_size") is not None:
        _positive_int(problems, "engine.eval_batch_size", eng["eval_batch_size"])
    if "weights_every" in eng:
        _positive_int(problems, "engine.weights_every", eng["weights_every"], minimum=0)
    if "seed" in eng:
        _positive_int(problems, "engine.seed", eng["seed"], minimum=0)

    kind = topo.get("kind", "complete")
    if kind not in ("complete", "geometric", "explicit"):
        problems.append(("topology.kind", f"unknown kind {kind!r}"))
    n = topo.get("n")
    if n is None and not (kind == "explicit" and topo.get("edge_file")):
        problems.append(("topology.n", "required field is missing"))
    elif n is not None:
        _positive_int(problems, "topology.n", n)
    if topo.get("radius") is not None and not topo["radius"] >= 0:
        problems.append(("topology.radius", "must be non-negative"))
    n_ok = n if isinstance(n, int) and not isinstance(n, bool) and n >= 1 else None

    name = scenario.get("name")
    if name is None:
        problems.append(("scenario.name", "required field is missing"))
    elif name not in SCENARIOS:
        problems.append(("scenario.name", f"unknown scenario {name!r}; expected one of {SCENARIOS}"))
    else:
        for k in scenario:
            if k not in SCENARIO_KEYS[name]:
                problems.append((f"scenario.{k}", f"unknown field for scenario {name!r}"))
        if name == "csv":
            for k in ("path", "label_column"):
                if not scenario.get(k):
                    problems.append((f"scenario.{k}", "required field is missing"))
        if name == "quadratic" and scenario.get("sigma2", 1.0) < 0:
            problems.append(("scenario.sigma2", "must be non-negative"))

    rule = agents.get("rule", "filtered-loss")
    if rule not in RULES:
        problems.append(("agents.rule", f"unknown rule {rule!r}; expected one of {RULES}"))
    if agents.get("rules") is not None:
        rules = agents["rules"]
        if not isinstance(rules, tuple) or (n_ok is not None and len(rules) != n_ok):
            problems.append(("agents.rules", "must list one rule per agent"))
        elif any(r not in RULES for r in rules):
            problems.append(("agents.rules", f"entries must be in {RULES}"))
    if "mu" in agents:
        _per_agent_numbers(problems, "agents.mu", agents["mu"], n_ok, lambda v: v > 0)
    if "nu" in agents:
        _per_agent_numbers(problems, "agents.nu", agents["nu"], n_ok, lambda v: 0 < v < 1)
    if agents.get("risk", "ema") not in RISK_SOURCES:
        problems.append(("agents.risk", f"must be one of {RISK_SOURCES}"))
    if agents.get("risk") == "exact" and name == "csv":
        problems.append(("agents.risk", "exact risk is unavailable for the csv scenario"))
    byz = agents.get("byzantine", ())
    count = agents.get("byzantine_count", 0)
    if not isinstance(byz, tuple) or any(not isinstance(b, int) for b in byz):
        problems.append(("agents.byzantine", "must be a list of agent ids"))
        byz = ()
    elif n_ok is not None and any(not 0 <= b < n_ok for b in byz):
        problems.append(("agents.byzantine", f"ids must lie in [0, {n_ok})"))
    elif len(set(byz)) != len(byz):
        problems.append(("agents.byzantine", "duplicate ids"))
    if not isinstance(count, int) or isinstance(count, bool) or count < 0:
        problems.append(("agents.byzantine_count", "must be a non-negative integer"))
    elif byz and count:
        problems.append(("agents.byzantine_count", "set either byzantine or byzantine_count, not both"))
    elif n_ok is not None and max(len(byz), count) >= n_ok:
        problems.append(("agents", "at least one agent must be normal"))

    akind = attack.get("kind", "random-interval")
    if akind not in ATTACKS:
        problems.append(("attack.kind", f"must be one of {ATTACKS}"))
    if akind == "distance-exploit" and (byz or count):
        if attack.get("target") is None:
            problems.append(("attack.target", "required for distance-exploit"))
        if not attack.get("delta", 0.01) > 0:
            problems.append(("attack.delta", "must be positive"))
    if akind == "random-interval":
        lo, hi = attack.get("lo", 15.0), attack.get("hi", 16.0)
        los = lo if isinstance(lo, tuple) else (lo,)
        his = hi if isinstance(hi, tuple) else (hi,)
        if len(los) != len(his) and 1 not in (len(los), len(his)):
            problems.append(("attack.lo", "lo and hi lengths differ"))
        elif any(a > b for a, b in zip(los * len(his) if len(los) == 1 else los,
                                         his * len(los) if len(his) == 1 else his)):
            problems.append(("attack.lo", "must not exceed attack.hi"))

    if problems:
        raise ConfigError(problems)
    if "model" in raw:
        model = {k: _freeze(v) for k, v in model.items()}
    model.setdefault("init", 0.0)
    return SimulationConfig(
        engine=EngineConfig(**eng),
        topology=TopologyConfig(**topo),
        scenario=scenario,
        agents=AgentsConfig(**agents),
        attack=AttackConfig(**attack),
        model=model,
    )
