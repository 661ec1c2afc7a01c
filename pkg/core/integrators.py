"""Fixed-step explicit integrators that expose their stage states.

Every scheme here evaluates stage s at ``x + c_s * dt * k_{s-1}`` (stage 0 at
``x`` itself), which covers classic RK4 and forward Euler. Observers that are
fed the plant's stage measurements can then be integrated jointly with it.
"""

from dataclasses import dataclass
from typing import Callable, List, Tuple

import numpy as np


@dataclass(frozen=True)
class Tableau:
    name: str
    nodes: Tuple[float, ...]  # c_s
    weights: Tuple[float, ...]  # b_s

    @property
    def stages(self) -> int:
        return len(self.nodes)


RK4 = Tableau("rk4", (0.0, 0.5, 0.5, 1.0), (1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0))
EULER = Tableau("euler", (0.0,), (1.0,))

TABLEAUS = {t.name: t for t in (RK4, EULER)}


def get_tableau(name: str) -> Tableau:
    try:
        return TABLEAUS[name]
    except KeyError:
        raise ValueError(f"unknown integrator {name!r}, expected one of {sorted(TABLEAUS)}") from None


def integrate_step(deriv: Callable[[np.ndarray], np.ndarray], x: np.ndarray, dt: float,
                   tableau: Tableau = RK4) -> Tuple[np.ndarray, List[np.ndarray]]:
    """Advance ``x`` by one step. Returns the new state and the stage states used."""
    stages: List[np.ndarray] = []
    acc = np.zeros_like(x, dtype=float)
    k = None
    for c, b in zip(tableau.nodes, tableau.weights):
        xs = x if k is None else x + (c * dt) * k
        stages.append(xs)
        k = deriv(xs)
        acc = acc + b * k
    return x + dt * acc, stages
