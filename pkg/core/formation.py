"""UAV dynamics, formation offsets, the consensus law and gain design."""

import itertools
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional, Sequence, Tuple

import numpy as np

from core.constants import (
    DEFAULT_ALPHA,
    DEFAULT_BETA,
    DEFAULT_HEXAGON_RADIUS,
    DEFAULT_K_POS,
    DEFAULT_K_VEL,
    DEFAULT_SPATIAL_DIM,
    DEFAULT_STABILITY_MARGIN,
    GAIN_REFINE_ROUNDS,
    GAIN_SEARCH_HIGH,
    GAIN_SEARCH_LOW,
    GAIN_SEARCH_POINTS,
    CHANNELS,
)
from core.errors import ControlUndefinedError, GainDesignError
from core.integrators import RK4, Tableau, integrate_step
from core.topology import (
    FormationGraph,
    averaging_weights,
    neighbors,
    normalized_laplacian,
    normalized_spectrum,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class UavModel:
    """Homogeneous second-order UAV. State per axis is [position, velocity]."""
    spatial_dim: int = DEFAULT_SPATIAL_DIM
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA

    def __post_init__(self):
        if self.spatial_dim < 1:
            raise ValueError(f"spatial_dim must be positive, got {self.spatial_dim}")

    @property
    def state_dim(self) -> int:
        return 2 * self.spatial_dim

    @property
    def A(self) -> np.ndarray:
        block = np.array([[0.0, 1.0], [self.alpha, self.beta]])
        return np.kron(np.eye(self.spatial_dim), block)

    @property
    def B(self) -> np.ndarray:
        return np.kron(np.eye(self.spatial_dim), np.array([[0.0], [1.0]]))

    @property
    def C(self) -> np.ndarray:
        return np.eye(self.state_dim)

    @property
    def position_slots(self) -> np.ndarray:
        return np.arange(0, self.state_dim, 2)

    def channel_index(self, channel: str) -> int:
        """Map a channel name ('x', 'vx', 'y', ...) to its slot in the state."""
        try:
            idx = CHANNELS.index(channel)
        except ValueError:
            raise ValueError(f"unknown channel {channel!r}") from None
        if idx >= self.state_dim:
            raise ValueError(f"channel {channel!r} does not exist for d={self.spatial_dim}")
        return idx

    def gain_matrix(self, k_pos: float, k_vel: float) -> np.ndarray:
        return np.kron(np.eye(self.spatial_dim), np.array([[k_pos, k_vel]]))


@dataclass(frozen=True, eq=False)
class FormationSpec:
    """Desired positional offsets, one row per node label."""
    offsets: np.ndarray  # N x d
    node_ids: Tuple[int, ...]

    def __post_init__(self):
        off = np.array(self.offsets, dtype=float)
        if off.ndim != 2 or off.shape[0] != len(self.node_ids):
            raise ValueError("offsets need one row per node")
        off.setflags(write=False)
        object.__setattr__(self, "offsets", off)
        object.__setattr__(self, "node_ids", tuple(int(i) for i in self.node_ids))

    @property
    def spatial_dim(self) -> int:
        return self.offsets.shape[1]

    def lifted(self) -> np.ndarray:
        """h_i = h~_i (x) [1, 0]: offsets in position slots, zeros in velocity slots."""
        n_nodes, d = self.offsets.shape
        h = np.zeros((n_nodes, 2 * d))
        h[:, 0::2] = self.offsets
        return h

    def restrict(self, keep: Iterable[int]) -> "FormationSpec":
        keep_ids = [i for i in self.node_ids if i in set(keep)]
        rows = [self.node_ids.index(i) for i in keep_ids]
        return FormationSpec(self.offsets[rows], tuple(keep_ids))


def hexagon(node_ids: Sequence[int], center=(0.0, 0.0), radius: float = DEFAULT_HEXAGON_RADIUS) -> FormationSpec:
    """Regular polygon offsets, vertex i at angle -i * 360/N degrees."""
    n_nodes = len(node_ids)
    angles = -2.0 * np.pi * np.arange(n_nodes) / n_nodes
    pts = radius * np.column_stack([np.cos(angles), np.sin(angles)]) + np.asarray(center, dtype=float)
    return FormationSpec(pts, tuple(node_ids))


@dataclass(frozen=True)
class GainCertificate:
    """Per-eigenvalue stability of A_i + lambda B_i K_i (lambda = 0 exempt)."""
    k_pos: float
    k_vel: float
    max_real_parts: Dict[float, float]
    searched: bool = False

    @property
    def max_real_part(self) -> float:
        return max(self.max_real_parts.values()) if self.max_real_parts else -np.inf

    @property
    def stable(self) -> bool:
        return self.max_real_part < -DEFAULT_STABILITY_MARGIN

    @property
    def violating_eigenvalue(self) -> Optional[float]:
        if self.stable:
            return None
        return max(self.max_real_parts, key=self.max_real_parts.get)

    @property
    def decay_rate(self) -> float:
        """gamma > 0 bounding the formation error as C * exp(-gamma t)."""
        return -self.max_real_part


def _positive_eigs(laplacian_eigs: Iterable[float]) -> Tuple[float, ...]:
    eigs = np.asarray(list(laplacian_eigs), dtype=float)
    if np.any(eigs < -1e-9):
        raise GainDesignError("Laplacian eigenvalues must be nonnegative")
    positive = sorted({round(float(v), 12) for v in eigs if v > 1e-9})
    if not positive:
        raise GainDesignError("need at least one positive Laplacian eigenvalue")
    return tuple(positive)


def certify_gain(uav: UavModel, k_pos: float, k_vel: float, laplacian_eigs: Iterable[float]) -> GainCertificate:
    Bk = uav.B @ uav.gain_matrix(k_pos, k_vel)
    parts = {}
    for lam in _positive_eigs(laplacian_eigs):
        parts[lam] = float(np.max(np.linalg.eigvals(uav.A + lam * Bk).real))
    return GainCertificate(k_pos, k_vel, parts)


def _bisect_gain(uav: UavModel, best: GainCertificate, eigs: Tuple[float, ...], width: float) -> GainCertificate:
    """Halve a bracket around ``best`` on each gain axis in turn, keeping the better half."""
    brackets = [[float(np.clip(v - width, GAIN_SEARCH_LOW, GAIN_SEARCH_HIGH)),
                 float(np.clip(v + width, GAIN_SEARCH_LOW, GAIN_SEARCH_HIGH))]
                for v in (best.k_pos, best.k_vel)]
    for _ in range(GAIN_REFINE_ROUNDS):
        for axis, bracket in enumerate(brackets):
            lo, hi = bracket
            mid = 0.5 * (lo + hi)
            halves = []
            for trial in (0.5 * (lo + mid), 0.5 * (mid + hi)):
                point = [best.k_pos, best.k_vel]
                point[axis] = trial
                halves.append(certify_gain(uav, point[0], point[1], eigs))
            left, right = halves
            if left.max_real_part <= right.max_real_part:
                bracket[1] = mid
            else:
                bracket[0] = mid
            best = min((best, left, right), key=lambda c: c.max_real_part)
    return best


def design_gain(uav: UavModel, laplacian_eigs: Iterable[float], k_pos: float = DEFAULT_K_POS,
                k_vel: float = DEFAULT_K_VEL) -> GainCertificate:
    """Keep the requested gain if it certifies, otherwise search the gain box.

    The search is a grid over [low, high]^2 followed by coordinate bisection
    on the max real part around the best grid point, in a fixed order.
    """
    eigs = _positive_eigs(laplacian_eigs)
    cert = certify_gain(uav, k_pos, k_vel, eigs)
    if cert.stable:
        return cert

    log.info("Gain (%.3f, %.3f) fails at lambda=%.4f, searching", k_pos, k_vel, cert.violating_eigenvalue)
    grid = np.linspace(GAIN_SEARCH_LOW, GAIN_SEARCH_HIGH, GAIN_SEARCH_POINTS)
    best = min((certify_gain(uav, kp, kv, eigs) for kp, kv in itertools.product(grid, grid)),
               key=lambda c: c.max_real_part)
    best = _bisect_gain(uav, best, eigs, grid[1] - grid[0])

    if not best.stable:
        lam = best.violating_eigenvalue
        raise GainDesignError(f"no stabilising gain in the search box, lambda={lam:.4f} "
                              f"keeps max Re = {best.max_real_part:.4f}", violating_eigenvalue=lam)
    log.info("Designed gain k_pos=%.4f k_vel=%.4f (max Re %.4f)", best.k_pos, best.k_vel, best.max_real_part)
    return GainCertificate(best.k_pos, best.k_vel, best.max_real_parts, searched=True)


@dataclass(frozen=True, eq=False)
class FleetModel:
    graph: FormationGraph
    uav: UavModel
    formation: FormationSpec
    k_pos: float = DEFAULT_K_POS
    k_vel: float = DEFAULT_K_VEL
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.formation.node_ids != self.graph.node_ids:
            raise ValueError("formation offsets must be given for exactly the graph's nodes, in order")
        if self.formation.spatial_dim != self.uav.spatial_dim:
            raise ValueError("formation offsets and UAV model disagree on spatial dimension")

    @property
    def n_nodes(self) -> int:
        return self.graph.n_nodes

    @property
    def state_dim(self) -> int:
        return self.uav.state_dim

    @property
    def gain(self) -> np.ndarray:
        """K_i = I_d (x) [k_pos, k_vel]."""
        return self.uav.gain_matrix(self.k_pos, self.k_vel)

    @property
    def interaction(self) -> np.ndarray:
        if "interaction" not in self._cache:
            self._cache["interaction"] = normalized_laplacian(self.graph)
        return self._cache["interaction"]

    @property
    def weights(self) -> np.ndarray:
        if "weights" not in self._cache:
            self._cache["weights"] = averaging_weights(self.graph)
        return self._cache["weights"]

    @property
    def A(self) -> np.ndarray:
        return np.kron(np.eye(self.n_nodes), self.uav.A)

    @property
    def B(self) -> np.ndarray:
        return np.kron(np.eye(self.n_nodes), self.uav.B)

    @property
    def K(self) -> np.ndarray:
        return np.kron(np.eye(self.n_nodes), self.gain)

    @property
    def L(self) -> np.ndarray:
        return np.kron(self.interaction, np.eye(self.state_dim))

    @property
    def coupling(self) -> np.ndarray:
        """BKL, equal to (D^-1 L) (x) (B_i K_i)."""
        if "coupling" not in self._cache:
            self._cache["coupling"] = np.kron(self.interaction, self.uav.B @ self.gain)
        return self._cache["coupling"]

    def h(self) -> np.ndarray:
        return self.formation.lifted().reshape(-1)

    def stack_index(self, node: int, slot: int) -> int:
        return self.graph.index_of(node) * self.state_dim + slot

    def with_gain(self, cert: GainCertificate) -> "FleetModel":
        return FleetModel(self.graph, self.uav, self.formation, cert.k_pos, cert.k_vel)


def control_input(fleet: FleetModel, x: np.ndarray, i: int) -> np.ndarray:
    """Averaged consensus law for node i on the stacked (or N x n) state x."""
    X = np.asarray(x, dtype=float).reshape(fleet.n_nodes, fleet.state_dim)
    nbrs = neighbors(fleet.graph, i)
    if not nbrs:
        raise ControlUndefinedError(f"node {i} has no neighbours")
    H = fleet.formation.lifted()
    idx = fleet.graph.index_of(i)
    own = X[idx] - H[idx]
    diff = sum(own - (X[fleet.graph.index_of(j)] - H[fleet.graph.index_of(j)]) for j in sorted(nbrs))
    return fleet.gain @ diff / len(nbrs)


def closed_loop(fleet: FleetModel) -> Tuple[np.ndarray, np.ndarray]:
    """Return (A + BKL, -BKL h)."""
    bkl = fleet.coupling
    return fleet.A + bkl, -bkl @ fleet.h()


def block_spectrum(fleet: FleetModel) -> np.ndarray:
    """Union over the normalized Laplacian spectrum of eig(A_i + lambda B_i K_i)."""
    Bk = fleet.uav.B @ fleet.gain
    eigs = [np.linalg.eigvals(fleet.uav.A + lam * Bk) for lam in normalized_spectrum(fleet.graph)]
    return np.sort_complex(np.concatenate(eigs))


def formation_error(fleet: FleetModel, x: np.ndarray) -> np.ndarray:
    """x_pos - h~ minus its fleet mean, one row per node."""
    X = np.asarray(x, dtype=float).reshape(fleet.n_nodes, fleet.state_dim)
    rel = X[:, fleet.uav.position_slots] - fleet.formation.offsets
    return rel - rel.mean(axis=0)


def fleet_derivative(fleet: FleetModel, X: np.ndarray, broadcast: np.ndarray,
                     node_fault: Optional[np.ndarray] = None) -> np.ndarray:
    """Stacked dynamics: each node uses its own clean state and received broadcasts."""
    H = fleet.formation.lifted()
    rel = (X - H) - fleet.weights @ (broadcast - H)
    U = rel @ fleet.gain.T
    xdot = X @ fleet.uav.A.T + U @ fleet.uav.B.T
    if node_fault is not None:
        xdot = xdot + node_fault
    return xdot


def fleet_step(fleet: FleetModel, X: np.ndarray, dt: float, tableau: Tableau = RK4,
               node_fault: Optional[np.ndarray] = None,
               broadcast_offset: Optional[np.ndarray] = None):
    """One plant step with faults held constant over the step.

    Returns ``(X_next, internal, broadcast)`` where ``internal`` stacks the
    stage states followed by ``X_next`` (shape stages+1 x N x n) and
    ``broadcast`` is the same sequence as the neighbours receive it.
    """
    offset = np.zeros_like(X) if broadcast_offset is None else broadcast_offset

    def deriv(state):
        return fleet_derivative(fleet, state, state + offset, node_fault)

    X_next, stages = integrate_step(deriv, X, dt, tableau)
    internal = np.stack(stages + [X_next])
    return X_next, internal, internal + offset
