from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np


class Decision(Enum):
    NO_FAULT = "NoFault"
    IDENTIFIED = "Identified"
    INCONCLUSIVE = "Inconclusive"


class AttackClass(Enum):
    NODE_OR_INCOMING = "NodeOrIncoming"
    OUTGOING_BROADCAST = "OutgoingBroadcast"
    UNKNOWN = "Unknown"


@dataclass(frozen=True)
class ResidualRecord:
    """Residual norm of one observer in a host's bank at one instant."""
    t: float
    host: int
    target: int
    norm: float

    def __post_init__(self):
        if not self.norm >= 0.0:
            raise ValueError(f"residual norm must be nonnegative, got {self.norm}")


@dataclass(frozen=True)
class Verdict:
    """Threshold decision of one host's bank at one instant."""
    t: float
    host: int
    decision: Decision
    target: Optional[int] = None  # Set only for Identified
    attack_class: AttackClass = AttackClass.UNKNOWN

    @property
    def code(self) -> str:
        if self.decision is Decision.IDENTIFIED:
            return f"Identified({self.target})"
        return self.decision.value


@dataclass(frozen=True)
class RemovalEvent:
    t: float
    node: int
    cause_host: int  # Host whose debounced verdict triggered the removal
    refused: bool = False
    reason: str = ""


@dataclass
class TraceStep:
    """Everything the engine records after one integration step."""
    t: float
    node_ids: Tuple[int, ...]
    states: np.ndarray  # N x n, one row per live node
    offsets: np.ndarray  # N x d formation offsets of the live nodes
    attack_active: bool = False
    residuals: List[ResidualRecord] = field(default_factory=list)
    verdicts: List[Verdict] = field(default_factory=list)
