"""Bank construction, threshold logic, debounce, calibration and the self-check."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from core.errors import CalibrationError, CommunicationLossError, UioExistenceError
from core.formation import FleetModel, UavModel, fleet_step, hexagon
from core.models import AttackClass, Decision, ResidualRecord, Verdict
from core.monitor import (
    MeasurementSnapshot,
    MonitorConfig,
    build_bank,
    calibrate_threshold,
    calibrate_thresholds,
    decide,
    deploy_banks,
    fault_direction,
    self_check,
    snapshot_for,
    update,
)
from core.topology import from_adjacency


@pytest.fixture(scope='module')
def bank(hexagon_fleet):
    b = build_bank(hexagon_fleet, 1, "node")
    b.thresholds = {k: 1.0 for k in b.targets}
    return b


def _records(norms, t=1.0, host=1):
    return [ResidualRecord(t, host, k, v) for k, v in norms.items()]


def _initial_state(seed=0):
    rng = np.random.default_rng(seed)
    X = np.zeros((6, 4))
    X[:, 0::2] = rng.uniform(-5, 5, size=(6, 2))
    return X


def test_decide_truth_table(bank):
    assert decide(bank, _records({2: 0.1, 6: 0.2, 1: 0.3})).decision is Decision.NO_FAULT
    v = decide(bank, _records({2: 0.1, 6: 5.0, 1: 7.0}))
    assert v.decision is Decision.IDENTIFIED and v.target == 2
    assert v.code == "Identified(2)"
    assert v.attack_class is AttackClass.NODE_OR_INCOMING
    assert decide(bank, _records({2: 0.1, 6: 0.2, 1: 7.0})).decision is Decision.INCONCLUSIVE
    assert decide(bank, _records({2: 3.0, 6: 5.0, 1: 7.0})).code == "Inconclusive"


def test_threshold_is_strict(bank):
    """A residual equal to its threshold counts as above it."""
    v = decide(bank, _records({2: 0.5, 6: 1.0, 1: 1.0}))
    assert v.code == "Identified(2)"


def test_host_identification_uses_self_check(bank):
    norms = {2: 4.0, 6: 4.0, 1: 0.0}
    assert decide(bank, _records(norms), True).attack_class is AttackClass.OUTGOING_BROADCAST
    assert decide(bank, _records(norms), False).attack_class is AttackClass.NODE_OR_INCOMING


def test_decide_requires_every_target(bank):
    with pytest.raises(ValueError):
        decide(bank, _records({2: 0.1, 6: 0.2}))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(min_value=0.0, max_value=3.0), min_size=3, max_size=3), st.permutations([0, 1, 2]))
def test_decide_ignores_record_order(bank, norms, order):
    records = _records(dict(zip([2, 6, 1], norms)))
    shuffled = [records[i] for i in order]
    assert decide(bank, records) == decide(bank, shuffled)


def test_debounce(hexagon_fleet):
    b = build_bank(hexagon_fleet, 1, "node")
    hits = [b.confirm(Verdict(0.01 * k, 1, Decision.IDENTIFIED, 2), 0.2) for k in range(1, 30)]
    confirmed_at = [0.01 * (i + 1) for i, k in enumerate(hits) if k is not None]
    assert confirmed_at == [pytest.approx(0.21)]


def test_debounce_resets_on_interruption(hexagon_fleet):
    b = build_bank(hexagon_fleet, 1, "node")
    for k in range(1, 15):
        assert b.confirm(Verdict(0.01 * k, 1, Decision.IDENTIFIED, 2), 0.2) is None
    assert b.confirm(Verdict(0.15, 1, Decision.INCONCLUSIVE), 0.2) is None
    for k in range(16, 30):
        assert b.confirm(Verdict(0.01 * k, 1, Decision.IDENTIFIED, 2), 0.2) is None


def test_fault_directions(hexagon_fleet):
    node = fault_direction(hexagon_fleet, 2, "node", 0)
    assert node.sum() == 1.0 and node[hexagon_fleet.stack_index(2, 0)] == 1.0
    bcast = fault_direction(hexagon_fleet, 2, "broadcast", 0)
    start = hexagon_fleet.stack_index(2, 0)
    assert not bcast[start:start + 4].any()
    # Neighbours 1 and 3 see -k_pos / 2 on their x-velocity rows.
    assert bcast[hexagon_fleet.stack_index(1, 1)] == pytest.approx(3.0)
    assert bcast[hexagon_fleet.stack_index(3, 1)] == pytest.approx(3.0)
    assert not bcast[hexagon_fleet.stack_index(4, 1)]


def test_bank_needs_neighbours():
    graph = from_adjacency([[0, 1, 0], [1, 0, 0], [0, 0, 0]])
    fleet = FleetModel(graph, UavModel(), hexagon([0, 1, 2]))
    with pytest.raises(UioExistenceError):
        build_bank(fleet, 2)


@pytest.mark.parametrize("model", ["node", "broadcast"])
def test_failed_observer_names_host_and_target(model):
    """A bank that cannot be synthesised reports the first failing pair."""
    graph = from_adjacency(np.kron(np.eye(2, dtype=int), np.ones((3, 3), dtype=int) - np.eye(3, dtype=int)))
    fleet = FleetModel(graph, UavModel(), hexagon(graph.node_ids))
    with pytest.raises(UioExistenceError) as excinfo:
        build_bank(fleet, 0, model)
    assert excinfo.value.host == 0
    assert excinfo.value.target == 1
    assert "host 0, target 1" in str(excinfo.value)


def test_fault_free_residuals_stay_small(hexagon_fleet):
    b = build_bank(hexagon_fleet, 1, "node")
    X = _initial_state()
    b.initialize(X)
    for step in range(200):
        X, internal, broadcast = fleet_step(hexagon_fleet, X, 0.01)
        records = update(b, snapshot_for(b, internal, broadcast, (step + 1) * 0.01), 0.01)
        assert max(r.norm for r in records) < 1e-8
        assert self_check(b, snapshot_for(b, internal, broadcast, (step + 1) * 0.01), 0.01)


def test_self_check_flags_host_node_attack(hexagon_fleet):
    b = build_bank(hexagon_fleet, 1, "node")
    X = _initial_state()
    fault = np.zeros((6, 4))
    fault[0, 0] = 1.0
    _, internal, broadcast = fleet_step(hexagon_fleet, X, 0.01, node_fault=fault)
    assert not self_check(b, snapshot_for(b, internal, broadcast, 0.01), 0.01)


def test_missing_measurement_raises(hexagon_fleet):
    b = build_bank(hexagon_fleet, 1, "node")
    b.initialize(_initial_state())
    samples = {1: np.zeros((5, 4)), 2: np.zeros((5, 4))}
    with pytest.raises(CommunicationLossError) as excinfo:
        update(b, MeasurementSnapshot(0.01, samples), 0.01)
    assert excinfo.value.missing == [6]


def test_calibration_hits_floor_with_exact_init(hexagon_fleet):
    b = build_bank(hexagon_fleet, 1, "node")
    thresholds = calibrate_threshold(hexagon_fleet, b, 2.0, _initial_state(), floor=1e-6)
    assert set(thresholds) == {2, 6, 1}
    assert all(v == 1e-6 for v in thresholds.values())


def test_calibration_with_observer_error(hexagon_fleet):
    """Zero-initialised observers leave a decaying transient above the floor."""
    b = build_bank(hexagon_fleet, 1, "node")
    X = _initial_state()
    exact = calibrate_threshold(hexagon_fleet, b, 2.0, X)
    zero = calibrate_threshold(hexagon_fleet, b, 2.0, X, observer_init="zero")
    assert max(zero.values()) > max(exact.values())
    assert b.states == {}


def test_calibration_too_short(hexagon_fleet):
    b = build_bank(hexagon_fleet, 1, "node")
    with pytest.raises(CalibrationError):
        calibrate_thresholds(hexagon_fleet, [b], 0.5, _initial_state(), transient=1.0)


def test_deploy_with_fixed_threshold(hexagon_fleet):
    config = MonitorConfig(hosts=(1, 3), calibrate=False, threshold=0.01)
    banks = deploy_banks(hexagon_fleet, config, _initial_state())
    assert [b.host for b in banks] == [1, 3]
    assert banks[1].targets == [2, 4, 3]
    assert all(v == 0.01 for b in banks for v in b.thresholds.values())


def test_monitor_config_validation():
    with pytest.raises(ValueError):
        MonitorConfig(model="sensor")
    with pytest.raises(ValueError):
        MonitorConfig(calibrate=False)
    with pytest.raises(ValueError):
        MonitorConfig(observer_pole=1.0)
