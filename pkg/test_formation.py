"""UAV model, consensus law, gain certificates and the fleet integrator."""

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linear_sum_assignment

from core.constants import GAIN_SEARCH_HIGH, GAIN_SEARCH_LOW, GAIN_SEARCH_POINTS
from core.errors import ControlUndefinedError, GainDesignError
from core.formation import (
    FleetModel,
    UavModel,
    block_spectrum,
    certify_gain,
    closed_loop,
    control_input,
    design_gain,
    fleet_derivative,
    fleet_step,
    formation_error,
    hexagon,
)
from core.integrators import EULER, RK4, get_tableau, integrate_step
from core.topology import from_adjacency, from_networkx, normalized_spectrum


def test_uav_blocks():
    uav = UavModel(spatial_dim=2, alpha=-1.0, beta=-0.5)
    np.testing.assert_array_equal(uav.A[:2, :2], [[0, 1], [-1, -0.5]])
    np.testing.assert_array_equal(uav.A[2:, 2:], [[0, 1], [-1, -0.5]])
    assert uav.B.shape == (4, 2)
    np.testing.assert_array_equal(uav.gain_matrix(-6, -5), [[-6, -5, 0, 0], [0, 0, -6, -5]])
    assert uav.channel_index("y") == 2
    with pytest.raises(ValueError):
        uav.channel_index("z")


def test_hexagon_offsets():
    spec = hexagon([1, 2, 3, 4, 5, 6], center=(1.0, -1.0), radius=2.0)
    np.testing.assert_allclose(spec.offsets[0], [3.0, -1.0])
    np.testing.assert_allclose(spec.offsets[1], [1.0 + 1.0, -1.0 - np.sqrt(3.0)])
    np.testing.assert_allclose(spec.offsets.mean(axis=0), [1.0, -1.0], atol=1e-12)
    lifted = spec.lifted()
    np.testing.assert_array_equal(lifted[:, 1::2], 0.0)
    np.testing.assert_array_equal(lifted[:, 0::2], spec.offsets)


def test_default_gain_certifies_on_hexagon(hexagon_fleet):
    cert = certify_gain(hexagon_fleet.uav, -6.0, -5.0, normalized_spectrum(hexagon_fleet.graph))
    assert cert.stable
    assert cert.violating_eigenvalue is None
    assert cert.max_real_part == pytest.approx(-1.25, abs=1e-9)
    assert sorted(cert.max_real_parts) == [0.5, 1.5, 2.0]


def test_positive_gain_is_rejected_then_redesigned(hexagon_fleet):
    spectrum = normalized_spectrum(hexagon_fleet.graph)
    cert = certify_gain(hexagon_fleet.uav, 1.0, 1.0, spectrum)
    assert not cert.stable
    assert cert.violating_eigenvalue in cert.max_real_parts
    designed = design_gain(hexagon_fleet.uav, spectrum, 1.0, 1.0)
    assert designed.stable and designed.searched


def test_gain_search_refines_the_grid_by_bisection(hexagon_fleet):
    """The refined gain beats every grid point and stays inside one grid cell of the box."""
    spectrum = normalized_spectrum(hexagon_fleet.graph)
    grid = np.linspace(GAIN_SEARCH_LOW, GAIN_SEARCH_HIGH, GAIN_SEARCH_POINTS)
    grid_best = min((certify_gain(hexagon_fleet.uav, kp, kv, spectrum) for kp in grid for kv in grid),
                    key=lambda c: c.max_real_part)
    designed = design_gain(hexagon_fleet.uav, spectrum, 1.0, 1.0)
    assert designed.max_real_part <= grid_best.max_real_part
    spacing = grid[1] - grid[0]
    assert abs(designed.k_pos - grid_best.k_pos) <= spacing + 1e-12
    assert abs(designed.k_vel - grid_best.k_vel) <= spacing + 1e-12
    again = design_gain(hexagon_fleet.uav, spectrum, 1.0, 1.0)
    assert (again.k_pos, again.k_vel) == (designed.k_pos, designed.k_vel)


def test_unstabilisable_dynamics_raise():
    """An unstable open loop with a tiny coupling eigenvalue beats the gain box."""
    uav = UavModel(alpha=50.0, beta=50.0)
    with pytest.raises(GainDesignError) as excinfo:
        design_gain(uav, [0.0, 1e-3], -1.0, -1.0)
    assert excinfo.value.violating_eigenvalue == pytest.approx(1e-3)


def test_design_gain_needs_a_positive_eigenvalue():
    with pytest.raises(GainDesignError):
        design_gain(UavModel(), [0.0, 0.0])


def test_control_input_matches_stacked_dynamics(hexagon_fleet):
    rng = np.random.default_rng(3)
    X = rng.normal(size=(6, 4))
    xdot = fleet_derivative(hexagon_fleet, X, X)
    for idx, node in enumerate(hexagon_fleet.graph.node_ids):
        u = control_input(hexagon_fleet, X, node)
        expected = hexagon_fleet.uav.A @ X[idx] + hexagon_fleet.uav.B @ u
        np.testing.assert_allclose(xdot[idx], expected, atol=1e-12)


def test_closed_loop_matches_derivative(hexagon_fleet):
    """(A + BKL) x - BKL h equals the per-node law."""
    rng = np.random.default_rng(4)
    X = rng.normal(size=(6, 4))
    Acl, w = closed_loop(hexagon_fleet)
    stacked = Acl @ X.reshape(-1) + w
    np.testing.assert_allclose(stacked, fleet_derivative(hexagon_fleet, X, X).reshape(-1), atol=1e-12)


def test_control_undefined_for_isolated_node():
    graph = from_adjacency([[0, 1, 0], [1, 0, 0], [0, 0, 0]])
    fleet = FleetModel(graph, UavModel(), hexagon([0, 1, 2]))
    with pytest.raises(ControlUndefinedError):
        control_input(fleet, np.zeros((3, 4)), 2)


def _connected_graph(n, seed):
    g = nx.gnp_random_graph(n, 0.4, seed=seed)
    g.add_edges_from(nx.path_graph(n).edges)
    return from_networkx(g)


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=2, max_value=8), st.integers(min_value=0, max_value=100_000))
def test_closed_loop_spectrum_is_union_of_blocks(n, seed):
    """eig(A + BKL) equals the union over lambda of eig(A_i + lambda B_i K_i)."""
    graph = _connected_graph(n, seed)
    uav = UavModel()
    spec = hexagon(graph.node_ids)
    cert = design_gain(uav, normalized_spectrum(graph))
    fleet = FleetModel(graph, uav, spec, cert.k_pos, cert.k_vel)
    full = np.linalg.eigvals(closed_loop(fleet)[0])
    blocks = block_spectrum(fleet)
    assert full.shape == blocks.shape
    cost = np.abs(full[:, None] - blocks[None, :])
    rows, cols = linear_sum_assignment(cost)
    # Jordan blocks of the rigid-body mode at zero limit attainable accuracy.
    assert cost[rows, cols].max() < 1e-6


def test_fault_free_hexagon_converges(hexagon_fleet):
    rng = np.random.default_rng(11)
    X = np.zeros((6, 4))
    X[:, 0::2] = rng.uniform(-5, 5, size=(6, 2))
    for _ in range(2000):
        X, _, _ = fleet_step(hexagon_fleet, X, 0.01)
    assert np.abs(formation_error(hexagon_fleet, X)).max() < 1e-3


def test_rk4_half_step_agreement(hexagon_fleet):
    rng = np.random.default_rng(5)
    X0 = rng.normal(size=(6, 4))
    coarse, fine = X0, X0
    for _ in range(100):
        coarse, _, _ = fleet_step(hexagon_fleet, coarse, 0.01)
    for _ in range(200):
        fine, _, _ = fleet_step(hexagon_fleet, fine, 0.005)
    assert np.abs(coarse - fine).max() < 1e-5


def test_fleet_step_exposes_stages(hexagon_fleet):
    X = np.ones((6, 4))
    offset = np.zeros((6, 4))
    offset[1, 0] = 0.5
    X_next, internal, broadcast = fleet_step(hexagon_fleet, X, 0.01, RK4, broadcast_offset=offset)
    assert internal.shape == (5, 6, 4)
    np.testing.assert_array_equal(internal[0], X)
    np.testing.assert_array_equal(internal[-1], X_next)
    np.testing.assert_allclose(broadcast - internal, np.broadcast_to(offset, internal.shape), atol=1e-12)


def test_integrators():
    x_next, stages = integrate_step(lambda x: -x, np.array([1.0]), 0.1, EULER)
    np.testing.assert_allclose(x_next, [0.9])
    assert len(stages) == 1
    x_next, stages = integrate_step(lambda x: -x, np.array([1.0]), 0.1, RK4)
    assert x_next[0] == pytest.approx(np.exp(-0.1), abs=1e-6)
    assert len(stages) == 4
    with pytest.raises(ValueError):
        get_tableau("dopri5")
