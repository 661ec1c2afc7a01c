"""Shared fixtures: the six-UAV hexagon fleet and cached scenario runs."""

import dataclasses
from pathlib import Path

import pytest

from cli.commands import certified_fleet
from cli.scenario import load_scenario
from core.formation import FleetModel, UavModel, hexagon
from core.simkit import run
from core.topology import cycle_graph

SCENARIO_DIR = Path(__file__).parent / "scenarios"
HEXAGON_LABELS = (1, 2, 3, 4, 5, 6)


@pytest.fixture(scope='session')
def scenario_dir():
    return SCENARIO_DIR


@pytest.fixture(scope='session')
def hexagon_fleet():
    """C6 with labels 1..6 flying the radius-2 hexagon with the default gain."""
    graph = cycle_graph(6, HEXAGON_LABELS)
    return FleetModel(graph, UavModel(), hexagon(HEXAGON_LABELS))


def run_scenario(name: str, attack_seed=None, **sim_changes):
    """Run a bundled scenario, optionally reseeding its attack or changing sim settings."""
    scenario = load_scenario(SCENARIO_DIR / f"{name}.json")
    sim = dataclasses.replace(scenario.sim, **sim_changes) if sim_changes else scenario.sim
    attack = scenario.attack
    if attack_seed is not None:
        attack = dataclasses.replace(attack, seed=attack_seed)
    return run(certified_fleet(scenario.fleet), attack, scenario.monitors, sim)


@pytest.fixture(scope='session')
def fault_free_trace():
    return run_scenario("hexagon_fault_free")


@pytest.fixture(scope='session')
def node_attack_trace():
    return run_scenario("hexagon_node_attack")


@pytest.fixture(scope='session')
def broadcast_offset_trace():
    return run_scenario("hexagon_broadcast_offset")


@pytest.fixture(scope='session')
def removal_trace():
    return run_scenario("hexagon_removal")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: seeded sweeps over many full-length runs")
