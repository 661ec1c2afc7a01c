"""Exception hierarchy shared by every core module and the CLI."""

from typing import Optional, Sequence


class FormationGuardError(Exception):
    """Base class for all errors raised by this package."""


class StaleNodeError(FormationGuardError, KeyError):
    """A node id does not exist in the graph (never did, or was removed)."""

    def __init__(self, node: int):
        super().__init__(node)
        self.node = node

    def __str__(self) -> str:
        return f"node {self.node} is not live in this graph"


class UnsafeRemovalError(FormationGuardError, ValueError):
    """Removing the node would leave the fleet disconnected."""


class ControlUndefinedError(FormationGuardError, ValueError):
    """The consensus law has no neighbours to average over."""


class GainDesignError(FormationGuardError, ValueError):
    def __init__(self, message: str, violating_eigenvalue: Optional[float] = None):
        super().__init__(message)
        self.violating_eigenvalue = violating_eigenvalue


class UioExistenceError(FormationGuardError, ValueError):
    def __init__(self, message: str, certificate=None, host: Optional[int] = None,
                 target: Optional[int] = None):
        super().__init__(message)
        self.certificate = certificate
        self.host = host
        self.target = target


class UioSynthesisError(FormationGuardError, RuntimeError):
    def __init__(self, message: str, modes: Sequence[complex] = ()):
        super().__init__(message)
        self.modes = list(modes)


class CommunicationLossError(FormationGuardError, KeyError):
    def __init__(self, host: int, missing: Sequence[int]):
        super().__init__(host)
        self.host = host
        self.missing = list(missing)

    def __str__(self) -> str:
        return f"host {self.host} received no measurement from {self.missing}"


class CalibrationError(FormationGuardError, ValueError):
    """Calibration run is too short to get past the observer transient."""


class DivergenceError(FormationGuardError, RuntimeError):
    def __init__(self, t: float, norm: float):
        super().__init__(f"state norm {norm:.3e} exceeded the divergence bound at t={t:.3f}s")
        self.t = t
        self.norm = norm


class ScenarioError(FormationGuardError, ValueError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class TraceFormatError(FormationGuardError, ValueError):
    """A trace file is missing columns export-plots depends on."""
