"""Unknown input observers: existence test, synthesis and stepping.

The observer is

    z' = F z + T B u + P y,    x_hat = z + H y

and, when the design conditions hold, the estimation error obeys e' = F e
whatever the unknown input d in x' = A x + B u + E d does.
"""

import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg
from scipy.signal import place_poles

from core.constants import (
    DEFAULT_OBSERVER_POLE,
    DEFAULT_OBSERVER_POLE_SPREAD,
    DEFAULT_PLACEMENT_ITERATIONS,
    DEFAULT_RANK_TOLERANCE,
    DEFAULT_STABILITY_MARGIN,
)
from core.errors import UioExistenceError, UioSynthesisError
from core.integrators import get_tableau

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExistenceCertificate:
    rank_ce: int
    rank_e: int
    detectable: bool
    transmission_rank_ok: bool
    singular_values_ce: Tuple[float, ...] = ()
    observable_dim: int = 0
    unobservable_modes: Tuple[complex, ...] = ()

    @property
    def valid(self) -> bool:
        return self.rank_ce == self.rank_e and self.detectable

    def describe(self) -> str:
        status = "valid" if self.valid else "INVALID"
        return (f"{status}: rank(CE)={self.rank_ce} rank(E)={self.rank_e} "
                f"detectable={self.detectable} rosenbrock={self.transmission_rank_ok} "
                f"observable_dim={self.observable_dim}")


@dataclass(frozen=True, eq=False)
class UioDesign:
    F: np.ndarray
    T: np.ndarray
    P: np.ndarray
    P1: np.ndarray
    P2: np.ndarray
    H: np.ndarray
    A1: np.ndarray
    E: np.ndarray
    C: np.ndarray
    B: np.ndarray  # Known-input matrix
    poles: Tuple[complex, ...]
    certificate: ExistenceCertificate
    TB: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "TB", self.T @ self.B)

    @property
    def state_dim(self) -> int:
        return self.F.shape[0]

    @property
    def output_dim(self) -> int:
        return self.C.shape[0]

    def initial_state(self, x0: Optional[np.ndarray] = None) -> np.ndarray:
        """z(0) = T x(0) gives zero initial error; no x(0) gives z(0) = 0."""
        if x0 is None:
            return np.zeros(self.state_dim)
        return self.T @ np.asarray(x0, dtype=float)


def _as_columns(E, n: int) -> np.ndarray:
    E = np.asarray(E, dtype=float)
    if E.ndim < 2:
        E = E.reshape(n, -1) if E.size else np.zeros((n, 0))
    return E


def svd_rank(M: np.ndarray, tol: float = DEFAULT_RANK_TOLERANCE) -> Tuple[int, np.ndarray]:
    """Rank with a threshold relative to the largest singular value."""
    if M.size == 0:
        return 0, np.zeros(0)
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0, s
    return int(np.sum(s > tol * s[0])), s


def decoupling_gain(E: np.ndarray, C: np.ndarray) -> np.ndarray:
    """H = E ((CE)^T CE)^-1 (CE)^T, the least-squares solution of (HC - I)E = 0."""
    return E @ np.linalg.pinv(C @ E)


def observable_basis(A: np.ndarray, C: np.ndarray, tol: float = DEFAULT_RANK_TOLERANCE) -> np.ndarray:
    """Orthonormal basis of the observable subspace of (C, A).

    Grows span{C^T, A^T C^T, ...} one Krylov block at a time with
    re-orthogonalisation instead of forming powers of A.
    """
    n = A.shape[0]
    scale = max(1.0, np.linalg.norm(A, 2), np.linalg.norm(C, 2))
    U, s, _ = np.linalg.svd(C.T, full_matrices=False)
    basis = U[:, s > tol * scale]
    block = basis
    while block.shape[1] and basis.shape[1] < n:
        W = A.T @ block
        for _ in range(2):
            W = W - basis @ (basis.T @ W)
        if W.size == 0:
            break
        U, s, _ = np.linalg.svd(W, full_matrices=False)
        block = U[:, s > tol * scale]
        basis = np.hstack([basis, block])
    return basis


def _split(A1: np.ndarray, C: np.ndarray, tol: float):
    Qo = observable_basis(A1, C, tol)
    if Qo.shape[1] < A1.shape[0]:
        Qu = scipy.linalg.null_space(Qo.T) if Qo.shape[1] else np.eye(A1.shape[0])
    else:
        Qu = np.zeros((A1.shape[0], 0))
    return Qo, Qu


def _rosenbrock_ok(A: np.ndarray, E: np.ndarray, C: np.ndarray, A1: np.ndarray, tol: float) -> bool:
    """Full column rank of [[sI - A, -E], [C, 0]] at s = 0 and at the non-decaying modes of A1."""
    n, q = E.shape
    candidates = [0.0] + [s for s in np.linalg.eigvals(A1) if s.real > -DEFAULT_STABILITY_MARGIN]
    for s in candidates:
        R = np.block([[s * np.eye(n) - A, -E], [C.astype(complex), np.zeros((C.shape[0], q))]])
        if svd_rank(R, tol)[0] < n + q:
            return False
    return True


def check_existence(A: np.ndarray, E: np.ndarray, C: np.ndarray,
                    tol: float = DEFAULT_RANK_TOLERANCE) -> ExistenceCertificate:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    E = _as_columns(E, A.shape[0])
    C = np.atleast_2d(np.asarray(C, dtype=float))
    if C.shape[1] != A.shape[0]:
        raise ValueError(f"C has {C.shape[1]} columns, expected {A.shape[0]}")
    rank_e, _ = svd_rank(E, tol)
    if E.shape[1] == 0 or rank_e < E.shape[1]:
        raise UioExistenceError("unknown-input matrix E must have full column rank")
    rank_ce, s_ce = svd_rank(C @ E, tol)

    H = decoupling_gain(E, C)
    A1 = A - H @ C @ A
    Qo, Qu = _split(A1, C, tol)
    modes: Tuple[complex, ...] = ()
    if Qu.shape[1]:
        modes = tuple(complex(v) for v in np.linalg.eigvals(Qu.T @ A1 @ Qu))
    detectable = all(m.real < -DEFAULT_STABILITY_MARGIN for m in modes)
    cert = ExistenceCertificate(
        rank_ce=rank_ce,
        rank_e=rank_e,
        detectable=detectable,
        transmission_rank_ok=_rosenbrock_ok(A, E, C, A1, tol),
        singular_values_ce=tuple(float(v) for v in s_ce),
        observable_dim=Qo.shape[1],
        unobservable_modes=modes,
    )
    log.debug("UIO certificate %s", cert.describe())
    return cert


def observer_poles(count: int, pole: float = DEFAULT_OBSERVER_POLE,
                   spread: float = DEFAULT_OBSERVER_POLE_SPREAD) -> np.ndarray:
    """Distinct real poles pole * (1 + spread * j), j = 0..count-1."""
    return pole * (1.0 + spread * np.arange(count))


def synthesize(A: np.ndarray, E: np.ndarray, C: np.ndarray,
               pole_spec: Union[float, Sequence[float]] = DEFAULT_OBSERVER_POLE,
               B: Optional[np.ndarray] = None,
               tol: float = DEFAULT_RANK_TOLERANCE) -> UioDesign:
    """Build (F, T, P, H) for the triple (A, E, C).

    ``pole_spec`` is either one base pole, spread into distinct poles over the
    observable subspace, or an explicit list with one pole per observable mode.
    Unobservable modes of A - HCA are left where they are.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    E = _as_columns(E, A.shape[0])
    C = np.atleast_2d(np.asarray(C, dtype=float))
    n = A.shape[0]
    cert = check_existence(A, E, C, tol)
    if cert.rank_ce != cert.rank_e:
        raise UioExistenceError(f"rank(CE)={cert.rank_ce} differs from rank(E)={cert.rank_e}", cert)
    if not cert.detectable:
        raise UioSynthesisError("unobservable modes of A - HCA do not decay", cert.unobservable_modes)

    H = decoupling_gain(E, C)
    T = np.eye(n) - H @ C
    A1 = A - H @ C @ A
    Qo, _ = _split(A1, C, tol)
    no = Qo.shape[1]
    if np.ndim(pole_spec) == 0:
        poles = observer_poles(no, float(pole_spec))
    else:
        poles = np.asarray(pole_spec, dtype=float)
        if poles.size != no:
            raise UioSynthesisError(f"{poles.size} poles given for {no} observable modes")
    if np.any(poles >= 0):
        raise UioSynthesisError("observer poles must lie in the open left half-plane", poles)

    if no:
        Aoo = Qo.T @ A1 @ Qo
        Co = C @ Qo
        try:
            with warnings.catch_warnings():
                # Poles are placed exactly; only the conditioning refinement may stop early.
                warnings.filterwarnings("ignore", message="Convergence was not reached", category=UserWarning)
                placed = place_poles(Aoo.T, Co.T, poles, method="KNV0", maxiter=DEFAULT_PLACEMENT_ITERATIONS)
        except (ValueError, np.linalg.LinAlgError) as exc:
            raise UioSynthesisError(f"pole placement failed: {exc}", np.linalg.eigvals(Aoo)) from exc
        P1 = Qo @ placed.gain_matrix.T
    else:
        P1 = np.zeros((n, C.shape[0]))
    F = A1 - P1 @ C
    P2 = F @ H
    eig_f = np.linalg.eigvals(F)
    if np.max(eig_f.real) >= -DEFAULT_STABILITY_MARGIN:
        raise UioSynthesisError("observer matrix F is not Hurwitz", eig_f[eig_f.real >= -DEFAULT_STABILITY_MARGIN])

    known = np.eye(n) if B is None else np.atleast_2d(np.asarray(B, dtype=float))
    return UioDesign(F=F, T=T, P=P1 + P2, P1=P1, P2=P2, H=H, A1=A1, E=E, C=C, B=known,
                     poles=tuple(eig_f), certificate=cert)


def step(design: UioDesign, z: np.ndarray, u: Optional[np.ndarray], y: np.ndarray, dt: float,
         y_next: Optional[np.ndarray] = None, method: str = "rk4") -> Tuple[np.ndarray, np.ndarray]:
    """Advance z by one fixed step and return (z', x_hat').

    ``y`` is either one measurement held over the step or the plant's stage
    measurements, one row per integrator stage. ``y_next`` is the measurement
    at the end of the step; it defaults to the last row of ``y``.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    tableau = get_tableau(method)
    y = np.asarray(y, dtype=float)
    stages = np.broadcast_to(y, (tableau.stages, design.output_dim)) if y.ndim == 1 else y
    if stages.shape[0] != tableau.stages:
        raise ValueError(f"{method} needs {tableau.stages} stage measurements, got {stages.shape[0]}")
    drive = np.zeros(design.state_dim) if u is None else design.TB @ np.asarray(u, dtype=float)

    acc = np.zeros_like(z, dtype=float)
    k = None
    for c, b, ys in zip(tableau.nodes, tableau.weights, stages):
        zs = z if k is None else z + (c * dt) * k
        k = design.F @ zs + drive + design.P @ ys
        acc = acc + b * k
    z_next = z + dt * acc
    final = stages[-1] if y_next is None else np.asarray(y_next, dtype=float)
    return z_next, z_next + design.H @ final


def residual(design: UioDesign, y: np.ndarray, x_hat: np.ndarray) -> np.ndarray:
    return np.asarray(y, dtype=float) - design.C @ x_hat


def sensitivity(design: UioDesign, directions: np.ndarray) -> np.ndarray:
    """||T b|| for each column b of ``directions``; zero means the fault is decoupled."""
    D = np.asarray(directions, dtype=float).reshape(design.state_dim, -1)
    return np.linalg.norm(design.T @ D, axis=0)
