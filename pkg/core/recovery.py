"""Removal of a compromised UAV and reconfiguration of the survivors."""

import logging

import numpy as np

from core.errors import UnsafeRemovalError
from core.formation import FleetModel, certify_gain, design_gain
from core.topology import is_two_connected, normalized_spectrum, remove_node

log = logging.getLogger(__name__)


def remove_and_reconfigure(fleet: FleetModel, k: int) -> FleetModel:
    """Drop node k, keep the survivors' offsets and re-certify the gain.

    The current gain is kept when it still stabilises every nonzero mode of
    the new interaction spectrum; otherwise a new one is designed.
    """
    if not is_two_connected(fleet.graph):
        raise UnsafeRemovalError(f"graph is not 2-connected, refusing to remove node {k}")
    graph = remove_node(fleet.graph, k)
    formation = fleet.formation.restrict(graph.node_ids)
    spectrum = normalized_spectrum(graph)
    cert = certify_gain(fleet.uav, fleet.k_pos, fleet.k_vel, spectrum)
    if not cert.stable:
        log.warning("Gain no longer stabilising after removing %s (lambda=%.4f), redesigning",
                    k, cert.violating_eigenvalue)
        cert = design_gain(fleet.uav, spectrum, fleet.k_pos, fleet.k_vel)
    log.info("Removed UAV %s: %d survivors, slowest mode Re=%.4f", k, graph.n_nodes, cert.max_real_part)
    return FleetModel(graph, fleet.uav, formation, cert.k_pos, cert.k_vel)


def restrict_state(fleet: FleetModel, X: np.ndarray, survivors: FleetModel) -> np.ndarray:
    """Rows of the N x n state ``X`` that belong to the surviving nodes."""
    rows = [fleet.graph.index_of(i) for i in survivors.graph.node_ids]
    return np.asarray(X)[rows].copy()
