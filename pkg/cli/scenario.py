"""Strict JSON scenario files.

Every section is checked key by key; anything unknown or malformed raises
ScenarioError carrying the dotted path of the offending field.
"""

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from core.attack import AttackKind, AttackScenario
from core.constants import (
    DEFAULT_HEXAGON_RADIUS,
    DEFAULT_K_POS,
    DEFAULT_K_VEL,
    DEFAULT_SPATIAL_DIM,
)
from core.errors import ScenarioError
from core.formation import FleetModel, FormationSpec, UavModel, hexagon
from core.monitor import MonitorConfig
from core.simkit import SimConfig
from core.topology import FormationGraph, cycle_graph, from_adjacency

SECTIONS = {"name", "graph", "formation", "dynamics", "gains", "attack", "monitors", "sim"}
REQUIRED_SECTIONS = ("graph", "formation")


@dataclass(frozen=True, eq=False)
class Scenario:
    name: str
    fleet: FleetModel
    attack: Optional[AttackScenario]
    monitors: MonitorConfig
    sim: SimConfig

    def resolved(self) -> Dict[str, Any]:
        """Fully resolved configuration, echoed into the run manifest."""
        fleet = self.fleet
        attack = None
        if self.attack is not None:
            t_start, t_end = self.attack.window
            attack = {
                "kind": self.attack.kind.value,
                "target": self.attack.target,
                "window": [t_start, None if math.isinf(t_end) else t_end],
                "channel": self.attack.channel,
                "magnitude": self.attack.magnitude,
                "seed": self.attack.seed,
            }
        monitors = dataclasses.asdict(self.monitors)
        monitors["hosts"] = list(self.monitors.hosts) if self.monitors.hosts is not None else None
        sim = {f.name: getattr(self.sim, f.name) for f in dataclasses.fields(self.sim)}
        if self.sim.initial_state is not None:
            sim["initial_state"] = np.asarray(self.sim.initial_state).tolist()
        return {
            "name": self.name,
            "graph": {"nodes": list(fleet.graph.node_ids), "adjacency": fleet.graph.adjacency.tolist()},
            "formation": {"offsets": fleet.formation.offsets.tolist()},
            "dynamics": {"alpha": fleet.uav.alpha, "beta": fleet.uav.beta},
            "gains": {"k_pos": fleet.k_pos, "k_vel": fleet.k_vel},
            "attack": attack,
            "monitors": monitors,
            "sim": sim,
        }


def _section(data: Any, path: str, allowed: Sequence[str]) -> Dict[str, Any]:
    if not isinstance(data, dict):
        raise ScenarioError(path, "expected an object")
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ScenarioError(f"{path}.{unknown[0]}" if path else unknown[0], "unknown key")
    return data


def _number(value: Any, path: str, positive: bool = False, negative: bool = False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ScenarioError(path, f"expected a finite number, got {value!r}")
    if positive and value <= 0:
        raise ScenarioError(path, f"must be positive, got {value}")
    if negative and value >= 0:
        raise ScenarioError(path, f"must be negative, got {value}")
    return float(value)


def _integer(value: Any, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ScenarioError(path, f"expected an integer, got {value!r}")
    return value


def _boolean(value: Any, path: str) -> bool:
    if not isinstance(value, bool):
        raise ScenarioError(path, f"expected true or false, got {value!r}")
    return value


def _choice(value: Any, path: str, options: Sequence[str]) -> str:
    if value not in options:
        raise ScenarioError(path, f"expected one of {list(options)}, got {value!r}")
    return value


def _matrix(value: Any, path: str, rows: Optional[int] = None, cols: Optional[int] = None) -> np.ndarray:
    if not isinstance(value, list) or not all(isinstance(r, list) for r in value):
        raise ScenarioError(path, "expected a list of lists")
    for i, r in enumerate(value):
        for j, v in enumerate(r):
            _number(v, f"{path}[{i}][{j}]")
    widths = {len(r) for r in value}
    if len(widths) > 1:
        raise ScenarioError(path, "rows have different lengths")
    arr = np.array(value, dtype=float).reshape(len(value), widths.pop() if widths else 0)
    if rows is not None and arr.shape[0] != rows:
        raise ScenarioError(path, f"expected {rows} rows, got {arr.shape[0]}")
    if cols is not None and arr.shape[1] != cols:
        raise ScenarioError(path, f"expected {cols} columns, got {arr.shape[1]}")
    return arr


def _parse_graph(data: Any) -> FormationGraph:
    sec = _section(data, "graph", ("cycle", "adjacency", "labels"))
    if ("cycle" in sec) == ("adjacency" in sec):
        raise ScenarioError("graph", "give exactly one of 'cycle' or 'adjacency'")
    labels = None
    if "labels" in sec:
        if not isinstance(sec["labels"], list):
            raise ScenarioError("graph.labels", "expected a list of integers")
        labels = [_integer(v, f"graph.labels[{i}]") for i, v in enumerate(sec["labels"])]
        if len(set(labels)) != len(labels):
            raise ScenarioError("graph.labels", "labels must be unique")
    try:
        if "cycle" in sec:
            n = _integer(sec["cycle"], "graph.cycle")
            if labels is not None and len(labels) != n:
                raise ScenarioError("graph.labels", f"expected {n} labels, got {len(labels)}")
            return cycle_graph(n, labels)
        adj = _matrix(sec["adjacency"], "graph.adjacency")
        if labels is not None and len(labels) != adj.shape[0]:
            raise ScenarioError("graph.labels", f"expected {adj.shape[0]} labels, got {len(labels)}")
        if not np.all(np.isin(adj, (0, 1))):
            raise ScenarioError("graph.adjacency", "entries must be 0 or 1")
        return from_adjacency(adj.astype(np.int64), labels)
    except ValueError as exc:
        if isinstance(exc, ScenarioError):
            raise
        field = "graph.cycle" if "cycle" in sec else "graph.adjacency"
        raise ScenarioError(field, str(exc)) from exc


def _parse_formation(data: Any, graph: FormationGraph, dim: int) -> FormationSpec:
    sec = _section(data, "formation", ("hexagon", "offsets"))
    if ("hexagon" in sec) == ("offsets" in sec):
        raise ScenarioError("formation", "give exactly one of 'hexagon' or 'offsets'")
    if "hexagon" in sec:
        hx = _section(sec["hexagon"], "formation.hexagon", ("center", "radius"))
        center = [0.0, 0.0]
        if "center" in hx:
            center = _matrix([hx["center"]], "formation.hexagon.center", cols=2)[0].tolist()
        radius = _number(hx.get("radius", DEFAULT_HEXAGON_RADIUS), "formation.hexagon.radius", positive=True)
        return hexagon(graph.node_ids, center, radius)
    offsets = _matrix(sec["offsets"], "formation.offsets", rows=graph.n_nodes, cols=dim)
    return FormationSpec(offsets, graph.node_ids)


def _parse_attack(data: Any, graph: FormationGraph, uav: UavModel) -> AttackScenario:
    sec = _section(data, "attack", ("kind", "target", "window", "channel", "magnitude", "seed"))
    for key in ("kind", "target", "window", "magnitude"):
        if key not in sec:
            raise ScenarioError(f"attack.{key}", "required")
    kind = AttackKind(_choice(sec["kind"], "attack.kind", [k.value for k in AttackKind]))
    target = _integer(sec["target"], "attack.target")
    if target not in graph.node_ids:
        raise ScenarioError("attack.target", f"no UAV labelled {target}")
    window = sec["window"]
    if not isinstance(window, list) or len(window) != 2:
        raise ScenarioError("attack.window", "expected [t_start, t_end]")
    t_start = _number(window[0], "attack.window[0]")
    t_end = math.inf if window[1] is None else _number(window[1], "attack.window[1]")
    if t_start < 0:
        raise ScenarioError("attack.window[0]", "must be nonnegative")
    if not t_start < t_end:
        raise ScenarioError("attack.window", f"t_start {t_start} must be before t_end {t_end}")
    channel = _choice(sec.get("channel", "x"), "attack.channel", ("x", "vx", "y", "vy"))
    magnitude = _number(sec["magnitude"], "attack.magnitude")
    if kind is AttackKind.BROADCAST_NOISE and magnitude < 0:
        raise ScenarioError("attack.magnitude", "noise standard deviation must be nonnegative")
    seed = _integer(sec.get("seed", 0), "attack.seed")
    return AttackScenario(kind, target, (t_start, t_end), uav.channel_index(channel), magnitude,
                          uav.state_dim, seed)


def _parse_monitors(data: Any, graph: FormationGraph) -> MonitorConfig:
    sec = _section(data, "monitors", ("model", "hosts", "channel", "observer_pole", "margin", "transient",
                                      "floor", "debounce", "calibrate", "calibration_duration", "threshold"))
    kwargs: Dict[str, Any] = {}
    if "model" in sec:
        kwargs["model"] = _choice(sec["model"], "monitors.model", ("node", "broadcast"))
    if "hosts" in sec:
        if not isinstance(sec["hosts"], list) or not sec["hosts"]:
            raise ScenarioError("monitors.hosts", "expected a nonempty list of UAV labels")
        hosts = [_integer(v, f"monitors.hosts[{i}]") for i, v in enumerate(sec["hosts"])]
        for i, h in enumerate(hosts):
            if h not in graph.node_ids:
                raise ScenarioError(f"monitors.hosts[{i}]", f"no UAV labelled {h}")
        kwargs["hosts"] = tuple(sorted(set(hosts)))
    if "channel" in sec:
        kwargs["channel"] = _choice(sec["channel"], "monitors.channel", ("x", "vx", "y", "vy"))
    if "observer_pole" in sec:
        kwargs["observer_pole"] = _number(sec["observer_pole"], "monitors.observer_pole", negative=True)
    for key in ("margin", "transient", "floor", "debounce", "calibration_duration", "threshold"):
        if key in sec:
            kwargs[key] = _number(sec[key], f"monitors.{key}", positive=key != "debounce")
    if kwargs.get("debounce", 0.0) < 0:
        raise ScenarioError("monitors.debounce", "must be nonnegative")
    if "calibrate" in sec:
        kwargs["calibrate"] = _boolean(sec["calibrate"], "monitors.calibrate")
    if kwargs.get("calibrate", True) is False and "threshold" not in kwargs:
        raise ScenarioError("monitors.threshold", "required when calibrate is false")
    if kwargs.get("calibrate", True) and kwargs.get("calibration_duration", 5.0) < kwargs.get("transient", 1.0):
        raise ScenarioError("monitors.calibration_duration", "shorter than the transient cutoff")
    return MonitorConfig(**kwargs)


def _parse_sim(data: Any, graph: FormationGraph, uav: UavModel) -> SimConfig:
    sec = _section(data, "sim", ("dt", "duration", "integrator", "seed", "initial_box", "initial_state",
                                 "removal", "observer_init"))
    if "initial_box" in sec and "initial_state" in sec:
        raise ScenarioError("sim", "give at most one of 'initial_box' or 'initial_state'")
    kwargs: Dict[str, Any] = {}
    for key in ("dt", "duration", "initial_box"):
        if key in sec:
            kwargs[key] = _number(sec[key], f"sim.{key}", positive=True)
    if "integrator" in sec:
        kwargs["integrator"] = _choice(sec["integrator"], "sim.integrator", ("rk4", "euler"))
    if "seed" in sec:
        kwargs["seed"] = _integer(sec["seed"], "sim.seed")
    if "initial_state" in sec:
        kwargs["initial_state"] = _matrix(sec["initial_state"], "sim.initial_state",
                                          rows=graph.n_nodes, cols=uav.state_dim)
    if "removal" in sec:
        kwargs["removal"] = _boolean(sec["removal"], "sim.removal")
    if "observer_init" in sec:
        kwargs["observer_init"] = _choice(sec["observer_init"], "sim.observer_init", ("exact", "zero"))
    try:
        return SimConfig(**kwargs)
    except ValueError as exc:
        raise ScenarioError("sim", str(exc)) from exc


def parse_scenario(data: Any) -> Scenario:
    sec = _section(data, "", sorted(SECTIONS))
    for key in REQUIRED_SECTIONS:
        if key not in sec:
            raise ScenarioError(key, "required section is missing")
    name = sec.get("name", "scenario")
    if not isinstance(name, str):
        raise ScenarioError("name", "expected a string")

    graph = _parse_graph(sec["graph"])
    dyn = _section(sec.get("dynamics", {}), "dynamics", ("alpha", "beta"))
    uav = UavModel(DEFAULT_SPATIAL_DIM,
                   _number(dyn.get("alpha", 0.0), "dynamics.alpha"),
                   _number(dyn.get("beta", 0.0), "dynamics.beta"))
    gains = _section(sec.get("gains", {}), "gains", ("k_pos", "k_vel"))
    k_pos = _number(gains.get("k_pos", DEFAULT_K_POS), "gains.k_pos")
    k_vel = _number(gains.get("k_vel", DEFAULT_K_VEL), "gains.k_vel")
    formation = _parse_formation(sec["formation"], graph, uav.spatial_dim)
    fleet = FleetModel(graph, uav, formation, k_pos, k_vel)

    attack = _parse_attack(sec["attack"], graph, uav) if sec.get("attack") is not None else None
    monitors = _parse_monitors(sec.get("monitors", {}), graph)
    sim = _parse_sim(sec.get("sim", {}), graph, uav)
    return Scenario(name, fleet, attack, monitors, sim)


def load_scenario(path: Path) -> Scenario:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ScenarioError("<file>", f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ScenarioError("<file>", f"invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    return parse_scenario(data)


def apply_overrides(scenario: Scenario, seed: Optional[int] = None, dt: Optional[float] = None,
                    no_removal: bool = False) -> Scenario:
    """CLI flags win over the scenario file."""
    changes: Dict[str, Any] = {}
    if seed is not None:
        changes["seed"] = seed
    if dt is not None:
        if dt <= 0:
            raise ScenarioError("--dt", "must be positive")
        changes["dt"] = dt
    if no_removal:
        changes["removal"] = False
    if not changes:
        return scenario
    try:
        sim = dataclasses.replace(scenario.sim, **changes)
    except ValueError as exc:
        raise ScenarioError("sim", str(exc)) from exc
    return dataclasses.replace(scenario, sim=sim)


def scenario_files(directory: Path) -> List[Path]:
    return sorted(Path(directory).glob("*.json"))
