"""Per-host banks of unknown input observers and the threshold logic on top.

Each host watches itself and its neighbours. Observer k in the bank of host
i is decoupled from an attack originating at k, so under a single attack
at k its residual stays near zero while every other residual rises.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Set, Tuple

import numpy as np

from core.constants import (
    DEFAULT_CALIBRATION_DURATION,
    DEFAULT_DEBOUNCE,
    DEFAULT_DT,
    DEFAULT_INTEGRATOR,
    DEFAULT_OBSERVER_POLE,
    DEFAULT_SELF_CHECK_TOLERANCE,
    DEFAULT_THRESHOLD_FLOOR,
    DEFAULT_THRESHOLD_MARGIN,
    DEFAULT_TRANSIENT_CUTOFF,
    MONITOR_MODELS,
    OBSERVER_INIT_MODES,
)
from core.errors import CalibrationError, CommunicationLossError, UioExistenceError, UioSynthesisError
from core.formation import FleetModel, closed_loop, fleet_step
from core.integrators import get_tableau
from core.models import AttackClass, Decision, ResidualRecord, Verdict
from core.topology import neighbors
from core import uio

log = logging.getLogger(__name__)

DEBOUNCE_EPSILON = 1e-9


@dataclass(frozen=True)
class MonitorConfig:
    model: str = "node"
    hosts: Optional[Tuple[int, ...]] = None  # None means every node hosts a bank
    channel: str = "x"
    observer_pole: float = DEFAULT_OBSERVER_POLE
    margin: float = DEFAULT_THRESHOLD_MARGIN
    transient: float = DEFAULT_TRANSIENT_CUTOFF
    floor: float = DEFAULT_THRESHOLD_FLOOR
    debounce: float = DEFAULT_DEBOUNCE
    calibrate: bool = True
    calibration_duration: float = DEFAULT_CALIBRATION_DURATION
    threshold: Optional[float] = None  # Fixed T_f used when calibrate is off

    def __post_init__(self):
        if self.model not in MONITOR_MODELS:
            raise ValueError(f"monitor model must be one of {MONITOR_MODELS}, got {self.model!r}")
        if not self.calibrate and self.threshold is None:
            raise ValueError("a fixed threshold is required when calibration is off")
        if self.threshold is not None and self.threshold <= 0:
            raise ValueError("threshold must be positive")
        if self.observer_pole >= 0:
            raise ValueError("observer pole must be negative")


@dataclass(frozen=True, eq=False)
class MeasurementSnapshot:
    """What one host sees over a step: stage samples then the post-step sample."""
    t: float  # Time at the end of the step
    samples: Dict[int, np.ndarray]  # node -> (stages + 1) x n
    integrator: str = DEFAULT_INTEGRATOR


@dataclass(eq=False)
class MonitorBank:
    host: int
    model: str
    channel: int
    fleet: FleetModel
    targets: List[int]
    nodes: List[int]  # Host first, then its neighbours
    designs: Dict[int, uio.UioDesign]
    keep: Dict[int, np.ndarray]  # Per target, indices into the host's full measurement
    drift: np.ndarray
    thresholds: Dict[int, float] = field(default_factory=dict)
    states: Dict[int, np.ndarray] = field(default_factory=dict)
    start_time: float = 0.0
    warmup: float = 0.0
    _candidate: Optional[int] = None
    _since: float = 0.0
    _confirmed: Set[int] = field(default_factory=set)

    def clone(self) -> "MonitorBank":
        return MonitorBank(self.host, self.model, self.channel, self.fleet, list(self.targets),
                           list(self.nodes), self.designs, self.keep, self.drift, dict(self.thresholds))

    def initialize(self, x: Optional[np.ndarray], mode: str = "exact", t: float = 0.0) -> None:
        """Reset observer states from the stacked fleet state ``x``."""
        if mode not in OBSERVER_INIT_MODES:
            raise ValueError(f"observer_init must be one of {OBSERVER_INIT_MODES}")
        stacked = None if mode == "zero" or x is None else np.asarray(x, dtype=float).reshape(-1)
        self.states = {k: self.designs[k].initial_state(stacked) for k in self.targets}
        self.start_time = t
        self._candidate = None

    def confirm(self, verdict: Verdict, debounce: float) -> Optional[int]:
        """Return k once Identified(k) has persisted for ``debounce`` seconds."""
        if verdict.decision is not Decision.IDENTIFIED:
            self._candidate = None
            return None
        if verdict.target != self._candidate:
            self._candidate = verdict.target
            self._since = verdict.t
        if verdict.t - self._since >= debounce - DEBOUNCE_EPSILON and verdict.target not in self._confirmed:
            self._confirmed.add(verdict.target)
            return verdict.target
        return None


def measurement_nodes(fleet: FleetModel, host: int) -> List[int]:
    return [host] + sorted(neighbors(fleet.graph, host))


def fault_direction(fleet: FleetModel, target: int, model: str, channel: int) -> np.ndarray:
    """Unknown-input column for an attack at ``target``.

    Node model: the target's own channel. Broadcast model: how a corrupted
    broadcast of that channel enters the neighbours' dynamics, with the
    target's own rows zeroed since it controls from clean internal data.
    """
    col = fleet.stack_index(target, channel)
    if model == "node":
        E = np.zeros(fleet.n_nodes * fleet.state_dim)
        E[col] = 1.0
        return E
    E = fleet.coupling[:, col].copy()
    start = fleet.graph.index_of(target) * fleet.state_dim
    E[start:start + fleet.state_dim] = 0.0
    return E


def _selection(fleet: FleetModel, nodes: List[int]) -> np.ndarray:
    n = fleet.state_dim
    C = np.zeros((len(nodes) * n, fleet.n_nodes * n))
    for r, node in enumerate(nodes):
        start = fleet.graph.index_of(node) * n
        C[r * n:(r + 1) * n, start:start + n] = np.eye(n)
    return C


def bank_triples(fleet: FleetModel, host: int, attack_model: str = "node",
                 channel: str = "x") -> List[Tuple[int, np.ndarray, np.ndarray]]:
    """(target, E, kept measurement rows) for every target of host's bank."""
    if attack_model not in MONITOR_MODELS:
        raise ValueError(f"unknown attack model {attack_model!r}")
    nbrs = sorted(neighbors(fleet.graph, host))
    if not nbrs:
        raise UioExistenceError(f"host {host} has no neighbours to monitor", host=host)
    slot = fleet.uav.channel_index(channel)
    nodes = [host] + nbrs
    n = fleet.state_dim
    triples = []
    for target in nbrs + [host]:
        rows = np.arange(len(nodes) * n)
        if attack_model == "broadcast" and target != host:
            # The corrupted row of the target's broadcast is not trusted.
            rows = rows[rows != nodes.index(target) * n + slot]
        triples.append((target, fault_direction(fleet, target, attack_model, slot), rows))
    return triples


def bank_certificates(fleet: FleetModel, host: int, attack_model: str = "node",
                      channel: str = "x") -> Dict[int, uio.ExistenceCertificate]:
    A, _ = closed_loop(fleet)
    C_full = _selection(fleet, measurement_nodes(fleet, host))
    return {target: uio.check_existence(A, E, C_full[rows])
            for target, E, rows in bank_triples(fleet, host, attack_model, channel)}


def build_bank(fleet: FleetModel, host: int, attack_model: str = "node", channel: str = "x",
               observer_pole: float = DEFAULT_OBSERVER_POLE) -> MonitorBank:
    """One observer per target in sorted(neighbours) + [host]."""
    triples = bank_triples(fleet, host, attack_model, channel)
    nodes = measurement_nodes(fleet, host)
    C_full = _selection(fleet, nodes)
    A, drift = closed_loop(fleet)

    designs: Dict[int, uio.UioDesign] = {}
    keep: Dict[int, np.ndarray] = {}
    for target, E, rows in triples:
        try:
            designs[target] = uio.synthesize(A, E, C_full[rows], observer_pole)
        except (UioExistenceError, UioSynthesisError) as exc:
            raise UioExistenceError(f"host {host}, target {target}: {exc}", getattr(exc, "certificate", None),
                                    host, target) from exc
        keep[target] = rows
        log.debug("Host %s target %s: %d-state observer, %d outputs", host, target,
                  designs[target].state_dim, len(rows))
    targets = [t for t, _, _ in triples]
    return MonitorBank(host, attack_model, fleet.uav.channel_index(channel), fleet, targets, nodes,
                       designs, keep, drift)


def snapshot_for(bank: MonitorBank, internal: np.ndarray, broadcast: np.ndarray, t: float,
                 integrator: str = DEFAULT_INTEGRATOR) -> MeasurementSnapshot:
    """Host's view of one plant step: its own internal samples and received broadcasts."""
    graph = bank.fleet.graph
    samples = {bank.host: internal[:, graph.index_of(bank.host)]}
    for j in bank.nodes[1:]:
        samples[j] = broadcast[:, graph.index_of(j)]
    return MeasurementSnapshot(t, samples, integrator)


def update(bank: MonitorBank, snapshot: MeasurementSnapshot, dt: float) -> List[ResidualRecord]:
    """Step every observer once and return the residual norm per target."""
    missing = [node for node in bank.nodes if node not in snapshot.samples]
    if missing:
        raise CommunicationLossError(bank.host, missing)
    Y = np.hstack([np.asarray(snapshot.samples[node], dtype=float) for node in bank.nodes])
    records = []
    for target in bank.targets:
        design = bank.designs[target]
        Yk = Y[:, bank.keep[target]]
        z, x_hat = uio.step(design, bank.states[target], bank.drift, Yk[:-1], dt,
                            y_next=Yk[-1], method=snapshot.integrator)
        bank.states[target] = z
        norm = float(np.linalg.norm(uio.residual(design, Yk[-1], x_hat)))
        records.append(ResidualRecord(snapshot.t, bank.host, target, norm))
    return records


def self_check(bank: MonitorBank, snapshot: MeasurementSnapshot, dt: float,
               tol: float = DEFAULT_SELF_CHECK_TOLERANCE) -> bool:
    """Re-integrate the host from its internal samples and the broadcasts it received.

    A mismatch with the internal post-step sample means the host's own
    dynamics carry a disturbance, i.e. a node attack on the host.
    """
    fleet = bank.fleet
    tableau = get_tableau(snapshot.integrator)
    H = fleet.formation.lifted()
    row = fleet.weights[fleet.graph.index_of(bank.host)]
    own = np.asarray(snapshot.samples[bank.host], dtype=float)
    h_i = H[fleet.graph.index_of(bank.host)]
    acc = np.zeros(fleet.state_dim)
    for s, b in enumerate(tableau.weights):
        x_s = own[s]
        avg = sum(row[fleet.graph.index_of(j)] * (snapshot.samples[j][s] - H[fleet.graph.index_of(j)])
                  for j in bank.nodes[1:])
        u = fleet.gain @ ((x_s - h_i) - avg)
        acc = acc + b * (fleet.uav.A @ x_s + fleet.uav.B @ u)
    predicted = own[0] + dt * acc
    return float(np.max(np.abs(predicted - own[-1]))) <= tol


def decide(bank: MonitorBank, records: Iterable[ResidualRecord], self_check_ok: Optional[bool] = None) -> Verdict:
    """Threshold logic. Independent of the order of ``records``."""
    records = list(records)
    norms = {r.target: r.norm for r in records}
    if sorted(norms) != sorted(bank.targets) or len(records) != len(bank.targets):
        raise ValueError(f"host {bank.host} needs exactly one record per target {bank.targets}")
    t = max(r.t for r in records)
    below = sorted(k for k, v in norms.items() if v < bank.thresholds[k])
    if len(below) == len(norms):
        return Verdict(t, bank.host, Decision.NO_FAULT)
    if len(below) != 1:
        return Verdict(t, bank.host, Decision.INCONCLUSIVE)
    k = below[0]
    if k == bank.host and self_check_ok:
        cls = AttackClass.OUTGOING_BROADCAST
    else:
        cls = AttackClass.NODE_OR_INCOMING
    return Verdict(t, bank.host, Decision.IDENTIFIED, k, cls)


def calibrate_thresholds(fleet: FleetModel, banks: List[MonitorBank], duration: float, x0: np.ndarray,
                         dt: float = DEFAULT_DT, integrator: str = DEFAULT_INTEGRATOR,
                         margin: float = DEFAULT_THRESHOLD_MARGIN,
                         transient: float = DEFAULT_TRANSIENT_CUTOFF,
                         floor: float = DEFAULT_THRESHOLD_FLOOR,
                         observer_init: str = "exact") -> Dict[int, Dict[int, float]]:
    """Fault-free rollout from ``x0``; T_f = max(margin * peak residual after the transient, floor).

    One plant run serves every bank. Returns host -> target -> threshold.
    """
    if duration < transient:
        raise CalibrationError(f"calibration run of {duration}s is shorter than the {transient}s transient")
    tableau = get_tableau(integrator)
    rehearsals = [bank.clone() for bank in banks]
    X = np.asarray(x0, dtype=float).reshape(fleet.n_nodes, fleet.state_dim)
    for rehearsal in rehearsals:
        rehearsal.initialize(X, observer_init)
    peaks = {rehearsal.host: {k: 0.0 for k in rehearsal.targets} for rehearsal in rehearsals}
    for step in range(int(round(duration / dt))):
        X, internal, broadcast = fleet_step(fleet, X, dt, tableau)
        t = (step + 1) * dt
        for rehearsal in rehearsals:
            records = update(rehearsal, snapshot_for(rehearsal, internal, broadcast, t, integrator), dt)
            if t >= transient - DEBOUNCE_EPSILON:
                for r in records:
                    peaks[rehearsal.host][r.target] = max(peaks[rehearsal.host][r.target], r.norm)
    thresholds = {host: {k: max(margin * peak, floor) for k, peak in per.items()}
                  for host, per in peaks.items()}
    log.debug("Calibrated thresholds %s", thresholds)
    return thresholds


def calibrate_threshold(fleet: FleetModel, bank: MonitorBank, duration: float, x0: np.ndarray,
                        **kwargs) -> Dict[int, float]:
    return calibrate_thresholds(fleet, [bank], duration, x0, **kwargs)[bank.host]


def deploy_banks(fleet: FleetModel, config: MonitorConfig, X: np.ndarray, t: float = 0.0,
                 dt: float = DEFAULT_DT, integrator: str = DEFAULT_INTEGRATOR,
                 observer_init: str = "exact") -> List[MonitorBank]:
    """Build, initialise and threshold the banks of every configured live host."""
    hosts = fleet.graph.node_ids if config.hosts is None else [h for h in config.hosts if h in fleet.graph.node_ids]
    banks = [build_bank(fleet, h, config.model, config.channel, config.observer_pole) for h in sorted(hosts)]
    if config.calibrate:
        thresholds = calibrate_thresholds(fleet, banks, config.calibration_duration, X, dt, integrator,
                                          config.margin, config.transient, config.floor, observer_init)
    for bank in banks:
        bank.thresholds = thresholds[bank.host] if config.calibrate else {k: config.threshold for k in bank.targets}
        bank.initialize(X, observer_init, t)
        bank.warmup = config.transient if observer_init == "zero" else 0.0
    log.info("Deployed %d %s-model banks at t=%.2fs", len(banks), config.model, t)
    return banks
