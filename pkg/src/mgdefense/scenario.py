"""Declarative scenarios: configuration types, YAML round-trip, overrides and presets.

Inverter and bus indices are 1-based in files and 0-based in memory.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .attacks import AttackSignal, Polynomial, Power, Sinusoid, Sum, case1_attacks
from .controller import ControllerParams, LeaderSignal
from .plant import ElectricalNetwork, InverterParams, line_network
from .topology import CommGraph, ring_graph

EVENT_KINDS = ("load_step", "load_remove", "load_set", "link_down", "link_up")
METHODS = ("sdirk4", "rk4")
INITIAL_MODES = ("equilibrium", "flat")

# Case II resistive load at the nominal inverter voltage
R_LOAD = 15.0
V_NOMINAL = 340.0


class ConfigError(ValueError):
    """Invalid scenario; ``where`` carries 'file:line:col' or a dotted path when known."""

    def __init__(self, message: str, where: str | None = None):
        super().__init__(f"{where}: {message}" if where else message)
        self.where = where


InvalidScenario = ConfigError


class UnknownPreset(KeyError):
    pass


@dataclass(frozen=True)
class ScenarioEvent:
    time: float
    kind: str
    bus: int | None = None  # 0-based
    dP: float = 0.0
    dQ: float = 0.0
    load_p: float | None = None  # absolute values for load_set
    load_q: float | None = None
    id: str | None = None
    i: int | None = None  # 0-based link endpoints
    j: int | None = None
    weight: float | None = None
    directed: bool = False

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}")
        if self.kind in ("load_step", "load_set") and self.bus is None:
            raise ValueError(f"{self.kind} needs a bus")
        if self.kind == "load_remove" and self.id is None:
            raise ValueError("load_remove needs the id of a previous load_step")
        if self.kind in ("link_down", "link_up") and (self.i is None or self.j is None or self.i == self.j):
            raise ValueError(f"{self.kind} needs two distinct endpoints i, j")


@dataclass(frozen=True)
class DivergenceLimits:
    freq_hz: float = 3.0  # |f - f_ref| beyond this is divergence
    v_min: float | None = None  # default 0.8 * v_lower
    v_max: float | None = None  # default 1.2 * v_upper

    def resolve(self, leaders: LeaderSignal) -> tuple[float, float, float]:
        vmin = 0.8 * leaders.v_lower if self.v_min is None else self.v_min
        vmax = 1.2 * leaders.v_upper if self.v_max is None else self.v_max
        return 2 * math.pi * self.freq_hz, vmin, vmax


@dataclass(frozen=True)
class ScenarioConfig:
    graph: CommGraph
    network: ElectricalNetwork
    inverters: InverterParams
    controller: ControllerParams
    leaders: LeaderSignal
    attacks: tuple[AttackSignal, ...] = ()
    events: tuple[ScenarioEvent, ...] = ()
    t_end: float = 30.0
    dt: float = 1e-3
    record_every: int = 10
    method: str = "sdirk4"
    initial: Any = "equilibrium"
    divergence: DivergenceLimits = field(default_factory=DivergenceLimits)
    name: str = "scenario"

    def __post_init__(self):
        n = self.graph.n_followers
        sizes = {"network": self.network.n, "inverters": self.inverters.n, "controller": self.controller.n}
        for k, v in sizes.items():
            if v != n:
                raise ConfigError(f"{k} describes {v} inverters but the graph has {n}", k)
        if not (self.dt > 0 and self.t_end > 0):
            raise ConfigError("dt and t_end must be positive", "solver")
        if self.dt > self.t_end:
            raise ConfigError("dt exceeds t_end", "solver.dt")
        if int(self.record_every) != self.record_every or self.record_every < 1:
            raise ConfigError("record_every must be a positive integer", "solver.record_every")
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}", "solver.method")
        for a in self.attacks:
            if a.inverter >= n:
                raise ConfigError(f"attack targets inverter {a.inverter + 1} of {n}", "attacks")
        for e in self.events:
            for idx in (e.bus, e.i, e.j):
                if idx is not None and not 0 <= idx < n:
                    raise ConfigError(f"event at t={e.time} references inverter {idx + 1} of {n}", "events")
        if isinstance(self.initial, str) and self.initial not in INITIAL_MODES:
            raise ConfigError(f"initial must be one of {INITIAL_MODES} or explicit vectors", "initial")
        object.__setattr__(self, "attacks", tuple(self.attacks))
        object.__setattr__(self, "events", tuple(sorted(self.events, key=lambda e: e.time)))

    @property
    def n(self) -> int:
        return self.graph.n_followers

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))


# --------------------------------------------------------------------------- dict <-> config


def _vec(v):
    arr = np.asarray(v, dtype=float).ravel()
    if arr.size and np.all(arr == arr[0]):
        return float(arr[0])
    return [float(x) for x in arr]


def _mat(m):
    return [[float(x) for x in row] for row in np.asarray(m, dtype=float)]


def _shape_to_dict(shape) -> dict:
    if isinstance(shape, Polynomial):
        return {"kind": "polynomial", "coeffs": [float(c) for c in shape.coeffs]}
    if isinstance(shape, Sinusoid):
        return {"kind": "sinusoid", "amplitude": shape.amplitude, "frequency": shape.frequency,
                "phase": shape.phase}
    if isinstance(shape, Power):
        return {"kind": "power", "coef": shape.coef, "exponent": shape.exponent}
    if isinstance(shape, Sum):
        return {"kind": "sum", "terms": [_shape_to_dict(s) for s in shape.terms]}
    raise TypeError(shape)


def _event_to_dict(e: ScenarioEvent) -> dict:
    d: dict[str, Any] = {"time": float(e.time), "kind": e.kind}
    if e.kind == "load_step":
        d.update(bus=e.bus + 1, dP=float(e.dP), dQ=float(e.dQ))
        if e.id is not None:
            d["id"] = e.id
    elif e.kind == "load_remove":
        d["id"] = e.id
    elif e.kind == "load_set":
        d.update(bus=e.bus + 1, load_p=e.load_p, load_q=e.load_q)
    else:
        d.update(i=e.i + 1, j=e.j + 1)
        if e.weight is not None:
            d["weight"] = float(e.weight)
        if e.directed:
            d["directed"] = True
    return d


def to_dict(cfg: ScenarioConfig) -> dict:
    c = cfg.controller
    initial = cfg.initial
    if not isinstance(initial, str):
        initial = {k: [float(x) for x in np.asarray(v, dtype=float)] for k, v in initial.items()}
    div = {"freq_hz": cfg.divergence.freq_hz}
    if cfg.divergence.v_min is not None:
        div["v_min"] = cfg.divergence.v_min
    if cfg.divergence.v_max is not None:
        div["v_max"] = cfg.divergence.v_max
    return {
        "name": cfg.name,
        "graph": {"adjacency": _mat(cfg.graph.adjacency), "pins": _mat(cfg.graph.pinning)},
        "network": {
            "b_active": _mat(cfg.network.b_active),
            "b_reactive": _mat(cfg.network.b_reactive),
            "load_p": [float(x) for x in cfg.network.load_p],
            "load_q": [float(x) for x in cfg.network.load_q],
            "schedule": [{"time": float(t), "bus": int(b) + 1, "load_p": float(p), "load_q": float(q)}
                         for t, b, p, q in cfg.network.schedule],
        },
        "inverters": {"m_p": [float(x) for x in cfg.inverters.m_p],
                      "n_q": [float(x) for x in cfg.inverters.n_q]},
        "controller": {
            "mode": c.mode, "c_f": _vec(c.c_f), "c_v": _vec(c.c_v), "beta_f": _vec(c.beta_f),
            "beta_v": _vec(c.beta_v), "alpha_f": _vec(c.alpha_f), "alpha_v": _vec(c.alpha_v),
            "gamma": c.gamma, "chi_f0": _vec(c.chi_f0), "chi_v0": _vec(c.chi_v0),
        },
        "leaders": {"frequency_hz": float(f"{cfg.leaders.omega_ref / (2 * math.pi):.14g}"),
                    "v_upper": cfg.leaders.v_upper, "v_lower": cfg.leaders.v_lower},
        "attacks": [{"inverter": a.inverter + 1, "channel": a.channel, "start": float(a.start_time),
                     "shape": _shape_to_dict(a.shape)} for a in cfg.attacks],
        "events": [_event_to_dict(e) for e in cfg.events],
        "initial": initial,
        "solver": {"dt": cfg.dt, "t_end": cfg.t_end, "record_every": int(cfg.record_every),
                   "method": cfg.method, "divergence": div},
    }


def _square(v, n: int | None, where: str) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if arr.ndim == 1:
        k = int(round(math.sqrt(arr.size)))
        if k * k != arr.size:
            raise ConfigError("row-major matrix length is not a perfect square", where)
        arr = arr.reshape(k, k)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or (n is not None and arr.shape[0] != n):
        raise ConfigError(f"expected a square {n or 'N'}x{n or 'N'} matrix", where)
    return arr


def _shape_from_dict(d: dict, where: str):
    kind = d.get("kind")
    try:
        if kind == "polynomial":
            return Polynomial(tuple(d["coeffs"]))
        if kind == "ramp":
            return Polynomial((0.0, float(d["slope"])))
        if kind == "sinusoid":
            return Sinusoid(float(d["amplitude"]), float(d["frequency"]), float(d.get("phase", 0.0)))
        if kind == "power":
            return Power(float(d["coef"]), float(d["exponent"]))
        if kind == "sum":
            return Sum(tuple(_shape_from_dict(s, f"{where}.terms.{k}") for k, s in enumerate(d["terms"])))
    except KeyError as exc:
        raise ConfigError(f"missing field {exc.args[0]!r}", where) from None
    raise ConfigError(f"unknown attack shape kind {kind!r}", where + ".kind")


def _get(d: dict, key: str, where: str, default=...):
    if not isinstance(d, dict):
        raise ConfigError("expected a mapping", where)
    if key in d:
        return d[key]
    if default is ...:
        raise ConfigError(f"missing required key {key!r}", where)
    return default


def _event_from_dict(e: dict, where: str) -> ScenarioEvent:
    kind = _get(e, "kind", where)
    time = float(_get(e, "time", where))

    def idx(key):
        v = e.get(key)
        return None if v is None else int(v) - 1

    try:
        return ScenarioEvent(
            time=time, kind=kind, bus=idx("bus"), dP=float(e.get("dP", 0.0)), dQ=float(e.get("dQ", 0.0)),
            load_p=e.get("load_p"), load_q=e.get("load_q"),
            id=None if e.get("id") is None else str(e["id"]),
            i=idx("i"), j=idx("j"), weight=e.get("weight"), directed=bool(e.get("directed", False)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc), where) from None


def _wrap(exc: ValueError, section: str, doc) -> ConfigError:
    """Point the error at the offending key when the message names one."""
    first = str(exc).split(" ", 1)[0]
    where = f"{section}.{first}" if isinstance(doc, dict) and first in doc else section
    return ConfigError(str(exc), where)


def from_dict(d: dict) -> ScenarioConfig:
    if not isinstance(d, dict):
        raise ConfigError("scenario document must be a mapping")
    g = _get(d, "graph", "")
    adj = _square(_get(g, "adjacency", "graph"), None, "graph.adjacency")
    n = adj.shape[0]
    try:
        graph = CommGraph(adj, np.asarray(_get(g, "pins", "graph"), dtype=float))
    except ValueError as exc:
        raise _wrap(exc, "graph", g) from None

    nd = _get(d, "network", "")
    sched = tuple((float(s["time"]), int(s["bus"]) - 1, float(s["load_p"]), float(s["load_q"]))
                  for s in nd.get("schedule", []) or [])
    try:
        network = ElectricalNetwork(_square(_get(nd, "b_active", "network"), n, "network.b_active"),
                                    _square(_get(nd, "b_reactive", "network"), n, "network.b_reactive"),
                                    _get(nd, "load_p", "network"), _get(nd, "load_q", "network"), sched)
    except ValueError as exc:
        raise _wrap(exc, "network", nd) from None

    inv = _get(d, "inverters", "")
    try:
        inverters = InverterParams(_get(inv, "m_p", "inverters"), _get(inv, "n_q", "inverters"))
    except ValueError as exc:
        raise _wrap(exc, "inverters", inv) from None

    c = _get(d, "controller", "")
    try:
        controller = ControllerParams.uniform(
            n, c_f=_get(c, "c_f", "controller"), c_v=_get(c, "c_v", "controller"),
            beta_f=c.get("beta_f", 350.0), beta_v=c.get("beta_v", 20.0),
            alpha_f=c.get("alpha_f", 0.01), alpha_v=c.get("alpha_v", 0.01),
            gamma=c.get("gamma", 3), mode=c.get("mode", "resilient"),
            chi_f0=c.get("chi_f0", 0.01), chi_v0=c.get("chi_v0", 0.01))
    except ValueError as exc:
        raise _wrap(exc, "controller", c) from None

    ld = _get(d, "leaders", "")
    try:
        leaders = LeaderSignal.from_hz(float(_get(ld, "frequency_hz", "leaders")),
                                       float(_get(ld, "v_upper", "leaders")),
                                       float(_get(ld, "v_lower", "leaders")))
    except ValueError as exc:
        raise _wrap(exc, "leaders", ld) from None

    attacks = []
    for k, a in enumerate(d.get("attacks", []) or []):
        where = f"attacks.{k}"
        try:
            attacks.append(AttackSignal(int(_get(a, "inverter", where)) - 1, _get(a, "channel", where),
                                        float(_get(a, "start", where, 0.0)),
                                        _shape_from_dict(_get(a, "shape", where), where + ".shape")))
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc), where) from None

    events = [_event_from_dict(e, f"events.{k}") for k, e in enumerate(d.get("events", []) or [])]

    initial = d.get("initial", "equilibrium")
    if isinstance(initial, dict):
        for key in ("delta", "omega_n", "V_n"):
            v = np.asarray(_get(initial, key, "initial"), dtype=float)
            if v.shape != (n,):
                raise ConfigError(f"initial.{key} must have length {n}", "initial")

    s = d.get("solver", {}) or {}
    div = s.get("divergence", {}) or {}
    return ScenarioConfig(
        graph=graph, network=network, inverters=inverters, controller=controller, leaders=leaders,
        attacks=tuple(attacks), events=tuple(events),
        t_end=float(s.get("t_end", 30.0)), dt=float(s.get("dt", 1e-3)),
        record_every=int(s.get("record_every", 10)), method=str(s.get("method", "sdirk4")),
        initial=initial,
        divergence=DivergenceLimits(float(div.get("freq_hz", 3.0)), div.get("v_min"), div.get("v_max")),
        name=str(d.get("name", "scenario")),
    )


# --------------------------------------------------------------------------- files


def _locate(text: str, dotted: str | None, source: str, doc_index: int = 0) -> str | None:
    """'source:line:col' of the node at a dotted path, or None."""
    if not dotted:
        return None
    try:
        nodes = list(yaml.compose_all(text))
    except yaml.YAMLError:
        return None
    if doc_index >= len(nodes):
        return None
    node = best = nodes[doc_index]
    for part in dotted.split("."):
        if isinstance(node, yaml.MappingNode):
            nxt = next((v for k, v in node.value if k.value == part), None)
        elif isinstance(node, yaml.SequenceNode) and part.isdigit() and int(part) < len(node.value):
            nxt = node.value[int(part)]
        else:
            nxt = None
        if nxt is None:
            break
        node = best = nxt
    if best is None:
        return None
    m = best.start_mark
    return f"{source}:{m.line + 1}:{m.column + 1}"


def _yaml_error(exc: yaml.YAMLError, source: str) -> ConfigError:
    mark = getattr(exc, "problem_mark", None)
    where = f"{source}:{mark.line + 1}:{mark.column + 1}" if mark else source
    return ConfigError(f"YAML syntax error: {getattr(exc, 'problem', None) or exc}", where)


def _build(doc, text: str, source: str, index: int) -> ScenarioConfig:
    try:
        return from_dict(doc)
    except ConfigError as exc:
        loc = _locate(text, exc.where, source, index)
        if loc is None:
            raise
        raise ConfigError(f"{exc.args[0].split(': ', 1)[-1]} (at {exc.where})", loc) from None
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"invalid value: {exc}", source) from None


def parse_documents(text: str, source: str = "<string>") -> list:
    """Raw YAML documents; a file may hold several scenarios separated by '---'."""
    try:
        docs = [d for d in yaml.safe_load_all(text) if d is not None]
    except yaml.YAMLError as exc:
        raise _yaml_error(exc, source) from None
    if not docs:
        raise ConfigError("empty scenario document", source)
    return docs


def parse_scenarios(text: str, source: str = "<string>", overrides=()) -> list[tuple[ScenarioConfig, dict]]:
    out = []
    for k, doc in enumerate(parse_documents(text, source)):
        doc = apply_overrides(doc, overrides)
        out.append((_build(doc, text, source, k), doc))
    return out


def parse_scenario(text: str, source: str = "<string>", overrides=()) -> tuple[ScenarioConfig, dict]:
    found = parse_scenarios(text, source, overrides)
    if len(found) != 1:
        raise ConfigError(f"expected one scenario, found {len(found)}", source)
    return found[0]


def load_scenario(path, overrides=()) -> ScenarioConfig:
    path = Path(path)
    return parse_scenario(path.read_text(), str(path), overrides)[0]


def load_scenarios(path, overrides=()) -> list[ScenarioConfig]:
    path = Path(path)
    return [cfg for cfg, _ in parse_scenarios(path.read_text(), str(path), overrides)]


def dump_scenario(cfg) -> str:
    """YAML text for one config, or several documents for a list of configs."""
    if isinstance(cfg, (list, tuple)):
        return yaml.safe_dump_all([to_dict(c) for c in cfg], sort_keys=False, default_flow_style=None,
                                  width=100, explicit_start=True)
    return yaml.safe_dump(to_dict(cfg), sort_keys=False, default_flow_style=None, width=100)


def save_scenario(cfg: ScenarioConfig, path) -> None:
    Path(path).write_text(dump_scenario(cfg))


def parse_override(item: str) -> tuple[str, Any]:
    if "=" not in item:
        raise ConfigError(f"override {item!r} must look like key.path=value")
    key, raw = item.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError(f"override {item!r} has an empty key")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError:
        value = raw
    return key, value


def apply_overrides(doc: dict, overrides) -> dict:
    """Set dotted-path values; every path must already exist in the document."""
    if not overrides:
        return doc
    doc = copy.deepcopy(doc)
    for item in overrides:
        key, value = parse_override(item) if isinstance(item, str) else item
        parts = key.split(".")
        node = doc
        for depth, part in enumerate(parts):
            last = depth == len(parts) - 1
            if isinstance(node, dict):
                if part not in node:
                    raise ConfigError(f"override path {key!r} does not exist", key)
                if last:
                    node[part] = value
                else:
                    node = node[part]
            elif isinstance(node, list) and part.isdigit() and int(part) < len(node):
                if last:
                    node[int(part)] = value
                else:
                    node = node[int(part)]
            else:
                raise ConfigError(f"override path {key!r} does not exist", key)
    return doc


def with_overrides(cfg: ScenarioConfig, overrides) -> ScenarioConfig:
    return from_dict(apply_overrides(to_dict(cfg), overrides))


# --------------------------------------------------------------------------- presets


def case_base(mode: str = "resilient", *, attacks=True, name="case1") -> ScenarioConfig:
    """Four inverters of equal rating, ring communication graph, 60 Hz / 350 V / 330 V references."""
    n = 4
    network = line_network(n, b_active=1.0e5, b_reactive=50.0,
                           load_p=[6000.0] * n, load_q=[1000.0] * n)
    inverters = InverterParams([9.4e-5, 9.4e-5, 18.8e-5, 18.8e-5], [1.3e-3, 1.3e-3, 2.6e-3, 2.6e-3])
    controller = ControllerParams.uniform(n, c_f=20.0, c_v=10.0, beta_f=350.0, beta_v=20.0,
                                          alpha_f=0.01, alpha_v=0.01, gamma=3, mode=mode)
    return ScenarioConfig(
        graph=ring_graph(), network=network, inverters=inverters, controller=controller,
        leaders=LeaderSignal.from_hz(60.0, 350.0, 330.0),
        attacks=tuple(case1_attacks(5.0)) if attacks else (), name=name,
    )


def _case2() -> ScenarioConfig:
    step = V_NOMINAL**2 / R_LOAD
    events = (ScenarioEvent(13.0, "load_step", bus=0, dP=step, dQ=0.0, id="R_L"),
              ScenarioEvent(20.0, "load_remove", id="R_L"))
    return replace(case_base("resilient", name="case2"), events=events)


def _case3() -> ScenarioConfig:
    events = (ScenarioEvent(12.0, "link_down", i=0, j=1), ScenarioEvent(18.0, "link_up", i=0, j=1))
    return replace(case_base("resilient", name="case3"), events=events)


BETA_SWEEP = (3.5, 35.0, 350.0)


def beta_sweep() -> list[ScenarioConfig]:
    base = case_base("resilient")
    n = base.n
    return [replace(base, name=f"beta_sweep_bf{b:g}",
                    controller=replace(base.controller, beta_f=np.full(n, b)))
            for b in BETA_SWEEP]


def _baseline(mode: str) -> ScenarioConfig:
    return replace(case_base(mode, attacks=False, name=f"baseline_{mode}"), initial="flat")


PRESETS = {
    "case1_conventional": lambda: case_base("conventional", name="case1_conventional"),
    "case1_resilient": lambda: case_base("resilient", name="case1_resilient"),
    "case2": _case2,
    "case3": _case3,
    "baseline_conventional": lambda: _baseline("conventional"),
    "baseline_resilient": lambda: _baseline("resilient"),
}


def preset(name: str):
    """Named scenario; ``beta_sweep`` returns a list of three configs."""
    if name == "beta_sweep":
        return beta_sweep()
    try:
        return PRESETS[name]()
    except KeyError:
        raise UnknownPreset(f"unknown preset {name!r}; choose from {sorted([*PRESETS, 'beta_sweep'])}") from None


def preset_names() -> list[str]:
    return sorted([*PRESETS, "beta_sweep"])
