"""Time-windowed cyber attacks on one UAV.

A node attack disturbs the target's own dynamics. A broadcast attack
corrupts only what the target sends to its neighbours; the target's
internal measurement stays clean.
"""

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

import numpy as np

WINDOW_EPSILON = 1e-9


class AttackKind(Enum):
    NODE = "node"
    BROADCAST_OFFSET = "broadcast_offset"
    BROADCAST_NOISE = "broadcast_noise"

    @property
    def is_broadcast(self) -> bool:
        return self is not AttackKind.NODE


@dataclass(frozen=True)
class AttackScenario:
    """Single-channel attack on UAV ``target`` over [t_start, t_end)."""
    kind: AttackKind
    target: int
    window: Tuple[float, float]
    channel: int  # Slot in the target's state vector
    magnitude: float  # Offset size, or noise standard deviation
    state_dim: int = 4
    seed: int = 0

    def __post_init__(self):
        t_start, t_end = self.window
        if not t_start < t_end:
            raise ValueError(f"attack window must have t_start < t_end, got {self.window}")
        if not 0 <= self.channel < self.state_dim:
            raise ValueError(f"channel {self.channel} outside a {self.state_dim}-dimensional state")
        if self.kind is AttackKind.BROADCAST_NOISE and self.magnitude < 0:
            raise ValueError("noise standard deviation must be nonnegative")
        if not math.isfinite(self.magnitude):
            raise ValueError("magnitude must be finite")

    @property
    def direction(self) -> np.ndarray:
        """b_f, the unit vector selecting the attacked channel."""
        return np.eye(self.state_dim)[self.channel]

    def is_active(self, t: float) -> bool:
        t_start, t_end = self.window
        return t_start - WINDOW_EPSILON <= t < t_end - WINDOW_EPSILON


def make_noise_stream(scenario: Optional[AttackScenario]) -> np.random.Generator:
    return np.random.default_rng(0 if scenario is None else scenario.seed)


def fault_signal(scenario: AttackScenario, t: float, rng: Optional[np.random.Generator] = None) -> float:
    """f_k held over the step starting at t. Draws one noise sample only while active."""
    if not scenario.is_active(t):
        return 0.0
    if scenario.kind is AttackKind.BROADCAST_NOISE:
        if rng is None:
            raise ValueError("noise attacks need the simulation's random stream")
        return float(rng.normal(0.0, scenario.magnitude))
    return float(scenario.magnitude)


def apply_node_attack(scenario: AttackScenario, t: float, xdot_k: np.ndarray,
                      f: Optional[float] = None) -> np.ndarray:
    if scenario.kind is not AttackKind.NODE:
        raise ValueError(f"{scenario.kind.value} is not a node attack")
    if not scenario.is_active(t):
        return xdot_k
    value = scenario.magnitude if f is None else f
    return xdot_k + scenario.direction * value


def apply_broadcast_attack(scenario: AttackScenario, t: float, y_k: np.ndarray,
                           f: Optional[float] = None) -> np.ndarray:
    """Corrupted copy of what node k broadcasts. Never touches its internal measurement."""
    if not scenario.kind.is_broadcast:
        raise ValueError("node attacks do not corrupt broadcasts")
    if not scenario.is_active(t):
        return y_k
    if f is None:
        if scenario.kind is AttackKind.BROADCAST_NOISE:
            raise ValueError("noise attacks need a sampled value")
        f = scenario.magnitude
    return y_k + scenario.direction * f


def fault_terms(scenario: Optional[AttackScenario], t: float, node_ids, state_dim: int,
                rng: Optional[np.random.Generator] = None):
    """Per-step node-fault and broadcast-offset arrays (N x n) for the plant.

    Returns ``(node_fault, broadcast_offset, active)``. Nothing is injected
    when the target is no longer in the fleet.
    """
    n_nodes = len(node_ids)
    node_fault = np.zeros((n_nodes, state_dim))
    offset = np.zeros((n_nodes, state_dim))
    if scenario is None or scenario.target not in node_ids or not scenario.is_active(t):
        return node_fault, offset, False
    f = fault_signal(scenario, t, rng)
    k = list(node_ids).index(scenario.target)
    zero = np.zeros(state_dim)
    if scenario.kind is AttackKind.NODE:
        node_fault[k] = apply_node_attack(scenario, t, zero, f)
    else:
        offset[k] = apply_broadcast_attack(scenario, t, zero, f)
    return node_fault, offset, True
