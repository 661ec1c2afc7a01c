"""Deterministic fixed-step engine: plant, attack, monitors and recovery."""

import hashlib
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from core.attack import AttackScenario, fault_terms, make_noise_stream
from core.constants import (
    DEFAULT_DIVERGENCE_BOUND,
    DEFAULT_DT,
    DEFAULT_DURATION,
    DEFAULT_INITIAL_BOX,
    DEFAULT_INTEGRATOR,
    DEFAULT_SEED,
    INTEGRATORS,
    OBSERVER_INIT_MODES,
)
from core.errors import DivergenceError, StaleNodeError, UnsafeRemovalError
from core.formation import FleetModel, fleet_step
from core.integrators import get_tableau
from core.models import Decision, RemovalEvent, TraceStep, Verdict
from core.monitor import (
    MonitorBank,
    MonitorConfig,
    decide,
    deploy_banks,
    self_check,
    snapshot_for,
    update,
)
from core.recovery import remove_and_reconfigure, restrict_state
from core.topology import neighbors

log = logging.getLogger(__name__)

TIME_EPSILON = 1e-9


@dataclass(frozen=True, eq=False)
class SimConfig:
    dt: float = DEFAULT_DT
    duration: float = DEFAULT_DURATION
    integrator: str = DEFAULT_INTEGRATOR
    seed: int = DEFAULT_SEED
    initial_state: Optional[np.ndarray] = None  # N x n; drawn from the box when absent
    initial_box: float = DEFAULT_INITIAL_BOX
    removal: bool = False
    observer_init: str = "exact"
    divergence_bound: float = DEFAULT_DIVERGENCE_BOUND

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not self.duration >= self.dt:
            raise ValueError(f"duration {self.duration} is shorter than one step")
        if self.integrator not in INTEGRATORS:
            raise ValueError(f"integrator must be one of {INTEGRATORS}")
        if self.observer_init not in OBSERVER_INIT_MODES:
            raise ValueError(f"observer_init must be one of {OBSERVER_INIT_MODES}")
        if self.initial_box <= 0:
            raise ValueError("initial_box must be positive")

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.dt))


def initial_state(fleet: FleetModel, config: SimConfig) -> np.ndarray:
    """Configured state, or positions uniform in the box with zero velocity."""
    shape = (fleet.n_nodes, fleet.state_dim)
    if config.initial_state is not None:
        X = np.array(config.initial_state, dtype=float)
        if X.shape != shape:
            raise ValueError(f"initial_state must have shape {shape}, got {X.shape}")
        return X
    rng = np.random.default_rng(config.seed)
    X = np.zeros(shape)
    X[:, fleet.uav.position_slots] = rng.uniform(-config.initial_box, config.initial_box,
                                                 size=(fleet.n_nodes, fleet.uav.spatial_dim))
    return X


@dataclass
class SimTrace:
    steps: List[TraceStep] = field(default_factory=list)
    removals: List[RemovalEvent] = field(default_factory=list)
    deployments: List[Tuple[float, FleetModel, List[MonitorBank]]] = field(default_factory=list)
    first_identified: Dict[int, Verdict] = field(default_factory=dict)
    first_confirmed: Dict[int, Verdict] = field(default_factory=dict)

    def thresholds(self) -> List[Tuple[float, Dict[int, Dict[int, float]]]]:
        return [(t, {b.host: dict(b.thresholds) for b in banks}) for t, _, banks in self.deployments]

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.steps])

    @property
    def final(self) -> TraceStep:
        return self.steps[-1]

    def verdicts(self, host: Optional[int] = None) -> List[Verdict]:
        return [v for s in self.steps for v in s.verdicts if host is None or v.host == host]

    def residual_series(self, host: int, target: int) -> Tuple[np.ndarray, np.ndarray]:
        pairs = [(r.t, r.norm) for s in self.steps for r in s.residuals
                 if r.host == host and r.target == target]
        if not pairs:
            return np.zeros(0), np.zeros(0)
        t, norms = zip(*pairs)
        return np.array(t), np.array(norms)

    def residual_keys(self) -> List[Tuple[int, int]]:
        """(host, target) pairs in order of first appearance."""
        seen: Dict[Tuple[int, int], None] = {}
        for s in self.steps:
            for r in s.residuals:
                seen.setdefault((r.host, r.target), None)
        return list(seen)

    def hosts(self) -> List[int]:
        return sorted({k[0] for k in self.residual_keys()} | {v.host for v in self.verdicts()})

    @property
    def no_fault_throughout(self) -> bool:
        return all(v.decision is Decision.NO_FAULT for v in self.verdicts())

    def digest(self) -> str:
        """SHA-256 over every recorded number and verdict code."""
        h = hashlib.sha256()
        for s in self.steps:
            h.update(np.float64(s.t).tobytes())
            h.update(np.asarray(s.node_ids, dtype=np.int64).tobytes())
            h.update(np.ascontiguousarray(s.states, dtype=np.float64).tobytes())
            h.update(b"1" if s.attack_active else b"0")
            for r in s.residuals:
                h.update(np.array([r.host, r.target], dtype=np.int64).tobytes())
                h.update(np.float64(r.norm).tobytes())
            for v in s.verdicts:
                h.update(f"{v.host}:{v.code}:{v.attack_class.value};".encode())
        for e in self.removals:
            h.update(f"{e.t!r}:{e.node}:{e.cause_host}:{e.refused}".encode())
        return h.hexdigest()

    def summary(self) -> Dict[str, object]:
        def brief(v: Verdict) -> Dict[str, object]:
            return {"t": round(v.t, 10), "verdict": v.code, "attack_class": v.attack_class.value}

        return {
            "no_fault_throughout": self.no_fault_throughout,
            "first_identified": {str(h): brief(v) for h, v in sorted(self.first_identified.items())},
            "first_confirmed": {str(h): brief(v) for h, v in sorted(self.first_confirmed.items())},
            "removals": [{"t": round(e.t, 10), "node": e.node, "cause_host": e.cause_host,
                          "refused": e.refused, "reason": e.reason} for e in self.removals],
            "final_nodes": list(self.final.node_ids),
            "final_time": round(self.final.t, 10),
        }


def _attempt_removal(trace: SimTrace, fleet: FleetModel, X: np.ndarray, t: float,
                     confirmed: List[Tuple[int, int]], refused: set):
    """Remove the first confirmed node a neighbouring host points at. Returns the new fleet and state."""
    for host, k in confirmed:
        if k == host or k in refused or k not in fleet.graph.node_ids or k not in neighbors(fleet.graph, host):
            continue
        try:
            survivors = remove_and_reconfigure(fleet, k)
        except UnsafeRemovalError as exc:
            log.warning("Refused to remove UAV %s at t=%.2fs: %s", k, t, exc)
            refused.add(k)
            trace.removals.append(RemovalEvent(t, k, host, refused=True, reason=str(exc)))
            continue
        trace.removals.append(RemovalEvent(t, k, host, reason=f"debounced Identified({k}) at host {host}"))
        return survivors, restrict_state(fleet, X, survivors)
    return None


def run(fleet: FleetModel, scenario: Optional[AttackScenario], monitors: Optional[MonitorConfig],
        config: SimConfig) -> SimTrace:
    """Integrate the fleet, feed the monitors and act on their verdicts."""
    tableau = get_tableau(config.integrator)
    if scenario is not None and scenario.target not in fleet.graph.node_ids:
        raise StaleNodeError(scenario.target)
    if monitors is not None and scenario is not None:
        expected = "node" if scenario.kind.value == "node" else "broadcast"
        if monitors.model != expected:
            log.warning("Monitors use the %s model against a %s attack", monitors.model, scenario.kind.value)
        if fleet.uav.channel_index(monitors.channel) != scenario.channel:
            log.warning("Monitors watch channel %s but the attack hits slot %d", monitors.channel, scenario.channel)
    X = initial_state(fleet, config)
    rng = make_noise_stream(scenario)
    trace = SimTrace()

    banks: List[MonitorBank] = []
    if monitors is not None:
        banks = deploy_banks(fleet, monitors, X, 0.0, config.dt, config.integrator, config.observer_init)
    trace.deployments.append((0.0, fleet, banks))
    trace.steps.append(TraceStep(0.0, fleet.graph.node_ids, X.copy(), fleet.formation.offsets.copy()))
    log.info("Run start: %d UAVs, %d steps of %.4fs, %d banks", fleet.n_nodes, config.n_steps, config.dt, len(banks))

    last_code: Dict[int, str] = {}
    refused: set = set()
    for step in range(config.n_steps):
        t = step * config.dt
        t_next = (step + 1) * config.dt
        node_fault, offset, active = fault_terms(scenario, t, fleet.graph.node_ids, fleet.state_dim, rng)
        X_next, internal, broadcast = fleet_step(fleet, X, config.dt, tableau, node_fault, offset)
        norm = float(np.linalg.norm(X_next))
        if not np.isfinite(norm) or norm > config.divergence_bound:
            raise DivergenceError(t_next, norm)

        residuals, verdicts, confirmed = [], [], []
        for bank in banks:
            snap = snapshot_for(bank, internal, broadcast, t_next, config.integrator)
            records = update(bank, snap, config.dt)
            residuals.extend(records)
            if t_next - bank.start_time < bank.warmup - TIME_EPSILON:
                continue
            verdict = decide(bank, records, self_check(bank, snap, config.dt))
            verdicts.append(verdict)
            if verdict.code != last_code.get(bank.host) and verdict.decision is Decision.IDENTIFIED:
                log.info("t=%.2fs host %s: %s (%s)", t_next, bank.host, verdict.code, verdict.attack_class.value)
            last_code[bank.host] = verdict.code
            if verdict.decision is Decision.IDENTIFIED:
                trace.first_identified.setdefault(bank.host, verdict)
            k = bank.confirm(verdict, monitors.debounce)
            if k is not None:
                log.info("t=%.2fs host %s confirmed Identified(%s)", t_next, bank.host, k)
                trace.first_confirmed.setdefault(bank.host, verdict)
                confirmed.append((bank.host, k))

        X = X_next
        trace.steps.append(TraceStep(t_next, fleet.graph.node_ids, X.copy(), fleet.formation.offsets.copy(),
                                     active, residuals, verdicts))

        if config.removal and confirmed:
            outcome = _attempt_removal(trace, fleet, X, t_next, confirmed, refused)
            if outcome is not None:
                fleet, X = outcome
                banks = deploy_banks(fleet, monitors, X, t_next, config.dt, config.integrator, "exact")
                trace.deployments.append((t_next, fleet, banks))
                last_code.clear()

    log.info("Run end at t=%.2fs: %d removals, digest %s", trace.final.t, len(trace.removals), trace.digest()[:12])
    return trace
