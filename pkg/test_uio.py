"""Observer existence, synthesis identities and decoupled error dynamics."""

import warnings

import networkx as nx
import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from core import uio
from core.errors import UioExistenceError
from core.formation import FleetModel, UavModel, closed_loop, hexagon
from core.integrators import RK4, integrate_step
from core.monitor import bank_certificates, bank_triples, build_bank, _selection, measurement_nodes
from core.topology import from_networkx


def test_scalar_example():
    """x' = -x + d with y = x: the observer reduces to z' = -10 z."""
    design = uio.synthesize(-1.0, 1.0, 1.0)
    np.testing.assert_allclose(design.H, [[1.0]])
    np.testing.assert_allclose(design.T, [[0.0]], atol=1e-15)
    np.testing.assert_allclose(design.F, [[-10.0]])
    np.testing.assert_allclose(design.P, [[0.0]], atol=1e-12)
    assert design.certificate.valid


def test_rank_condition_failure():
    A = np.array([[0.0, 1.0], [-2.0, -3.0]])
    C = np.array([[1.0, 0.0]])
    E = np.array([[0.0], [1.0]])
    cert = uio.check_existence(A, E, C)
    assert cert.rank_ce == 0 and cert.rank_e == 1
    assert not cert.valid
    with pytest.raises(UioExistenceError):
        uio.synthesize(A, E, C)


def test_e_must_have_full_column_rank():
    with pytest.raises(UioExistenceError):
        uio.check_existence(np.eye(2), np.array([[1.0, 2.0], [2.0, 4.0]]), np.eye(2))


def _assert_identities(design, A):
    n = A.shape[0]
    scale = max(1.0, np.linalg.norm(A, 2))
    HC = design.H @ design.C
    np.testing.assert_allclose((HC - np.eye(n)) @ design.E, 0.0, atol=1e-9 * scale)
    np.testing.assert_allclose(design.T, np.eye(n) - HC, atol=1e-12)
    np.testing.assert_allclose(design.F, A - HC @ A - design.P1 @ design.C, atol=1e-9 * scale)
    np.testing.assert_allclose(design.P2, design.F @ design.H, atol=1e-9 * scale)
    residual = design.F @ design.T - design.T @ A + design.P @ design.C
    np.testing.assert_allclose(residual, 0.0, atol=1e-9 * scale ** 2)


@pytest.mark.parametrize("model", ["node", "broadcast"])
def test_hexagon_bank_identities(hexagon_fleet, model):
    A, _ = closed_loop(hexagon_fleet)
    bank = build_bank(hexagon_fleet, 1, model)
    assert bank.targets == [2, 6, 1]
    for target in bank.targets:
        design = bank.designs[target]
        assert design.certificate.valid
        assert np.max(np.linalg.eigvals(design.F).real) < 0
        _assert_identities(design, A)


@pytest.mark.parametrize("model", ["node", "broadcast"])
def test_bank_synthesis_is_warning_free(hexagon_fleet, model):
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        banks = [build_bank(hexagon_fleet, host, model) for host in hexagon_fleet.graph.node_ids]
    for bank in banks:
        for design in bank.designs.values():
            assert design.certificate.valid
            assert np.max(np.linalg.eigvals(design.F).real) < 0


def _two_triangles():
    graph = from_networkx(nx.disjoint_union(nx.complete_graph(3), nx.complete_graph(3)))
    return FleetModel(graph, UavModel(), hexagon(graph.node_ids))


@pytest.mark.parametrize("model", ["node", "broadcast"])
def test_disconnected_fleet_has_no_valid_observer(model):
    """The other triangle's consensus modes are invisible from host 0."""
    certs = bank_certificates(_two_triangles(), 0, model)
    assert sorted(certs) == [0, 1, 2]
    for cert in certs.values():
        assert not cert.detectable
        assert not cert.valid


def test_existence_certificates_on_hexagon(hexagon_fleet):
    A, _ = closed_loop(hexagon_fleet)
    C_full = _selection(hexagon_fleet, measurement_nodes(hexagon_fleet, 1))
    for target, E, rows in bank_triples(hexagon_fleet, 1, "node"):
        cert = uio.check_existence(A, E, C_full[rows])
        assert cert.valid and cert.transmission_rank_ok
        assert cert.rank_ce == cert.rank_e == 1


def test_sensitivity_separates_targets(hexagon_fleet):
    """Observer decoupled from UAV 2 is blind to its channel but not to UAV 3's."""
    bank = build_bank(hexagon_fleet, 1, "node")
    design = bank.designs[2]
    f2 = np.zeros(24)
    f2[hexagon_fleet.stack_index(2, 0)] = 1.0
    f3 = np.zeros(24)
    f3[hexagon_fleet.stack_index(3, 0)] = 1.0
    gains = uio.sensitivity(design, np.column_stack([f2, f3]))
    assert gains[0] < 1e-12
    assert gains[1] > 0.5


def _simulate(design, A, E, x0, signal, dt, steps):
    """Plant and observer driven jointly; returns max ||x - x_hat||."""
    x = np.asarray(x0, dtype=float)
    z = design.initial_state(x)
    worst = 0.0
    for step in range(steps):
        d = signal(step * dt)
        x_next, stages = integrate_step(lambda s: A @ s + E @ d, x, dt, RK4)
        Y = np.array([design.C @ s for s in stages])
        z, x_hat = uio.step(design, z, None, Y, dt, y_next=design.C @ x_next)
        x = x_next
        worst = max(worst, float(np.linalg.norm(x - x_hat)))
    return worst


def test_error_is_decoupled_from_unknown_input(hexagon_fleet):
    """Zero initial error stays zero for 50 random unknown-input signals over 10 s."""
    A, _ = closed_loop(hexagon_fleet)
    bank = build_bank(hexagon_fleet, 1, "node")
    design = bank.designs[2]
    E = design.E
    rng = np.random.default_rng(2024)
    for _ in range(50):
        freq, phase, amp = rng.uniform(0.1, 3.0), rng.uniform(0, 2 * np.pi), rng.uniform(0.1, 5.0)
        x0 = rng.normal(size=24)
        worst = _simulate(design, A, E, x0, lambda t: np.array([amp * np.sin(freq * t + phase)]), 0.1, 100)
        assert worst < 1e-6


def test_error_follows_observer_matrix():
    """Discrete error after one RK4 step equals the RK4 map of e' = F e."""
    rng = np.random.default_rng(7)
    A = rng.normal(size=(4, 4))
    C = np.eye(4)
    E = rng.normal(size=(4, 1))
    design = uio.synthesize(A, E, C, -3.0)
    x = rng.normal(size=4)
    z = rng.normal(size=4)
    dt = 0.05
    e0 = design.T @ x - z
    d = np.array([1.7])
    x_next, stages = integrate_step(lambda s: A @ s + E @ d, x, dt, RK4)
    z_next, x_hat = uio.step(design, z, None, np.array([C @ s for s in stages]), dt, y_next=C @ x_next)
    e_rk4, _ = integrate_step(lambda e: design.F @ e, e0, dt, RK4)
    np.testing.assert_allclose(x_next - x_hat, e_rk4, atol=1e-10)
    bound = np.linalg.norm(scipy.linalg.expm(design.F * dt), 2) * np.linalg.norm(e0)
    assert np.linalg.norm(e_rk4) <= bound + 1e-3 * np.linalg.norm(e0)


def test_zero_initial_state_decays():
    design = uio.synthesize(-1.0, 1.0, 1.0)
    z = design.initial_state()
    np.testing.assert_array_equal(z, [0.0])
    z, x_hat = uio.step(design, np.array([5.0]), None, np.array([2.0]), 0.01)
    assert abs(z[0]) < 5.0
    np.testing.assert_allclose(x_hat, z + 2.0)


def test_step_rejects_bad_arguments():
    design = uio.synthesize(-1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        uio.step(design, np.zeros(1), None, np.zeros(1), 0.0)
    with pytest.raises(ValueError):
        uio.step(design, np.zeros(1), None, np.zeros((2, 1)), 0.01)


def test_observer_poles_are_distinct():
    poles = uio.observer_poles(5, -10.0)
    assert len(set(poles.tolist())) == 5
    assert poles.max() == -10.0


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_random_full_measurement_designs(seed):
    """With every state measured, any full-rank E yields a valid Hurwitz design."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 6))
    A = rng.normal(size=(n, n))
    E = rng.normal(size=(n, 1))
    design = uio.synthesize(A, E, np.eye(n))
    _assert_identities(design, A)
    assert np.max(np.linalg.eigvals(design.F).real) < 0
    assert uio.sensitivity(design, E)[0] < 1e-9
