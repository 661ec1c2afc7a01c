"""The three CLI commands: run, check and export-plots."""

import csv
import json
import logging
from collections import OrderedDict
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from cli.scenario import Scenario, apply_overrides, load_scenario
from core.charts import create_position_error_chart, create_residual_chart, create_trajectory_chart
from core.constants import MANIFEST_FILE
from core.errors import (
    CalibrationError,
    DivergenceError,
    GainDesignError,
    ScenarioError,
    UioExistenceError,
    UioSynthesisError,
)
from core.formation import FleetModel, block_spectrum, design_gain
from core.monitor import bank_certificates
from core.persistence import TraceStore, load_trace
from core.simkit import run
from core.topology import is_two_connected, laplacian_spectrum, normalized_spectrum

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_DIVERGED = 3


def _fmt_values(values) -> str:
    return ", ".join(f"{(round(float(v), 9) + 0.0):g}" for v in values)


def certified_fleet(fleet: FleetModel) -> FleetModel:
    """Fleet with a gain certified (or redesigned) for its interaction spectrum."""
    cert = design_gain(fleet.uav, normalized_spectrum(fleet.graph), fleet.k_pos, fleet.k_vel)
    return fleet.with_gain(cert)


def cmd_run(scenario_path: Path, out_dir: Path, seed: Optional[int] = None, dt: Optional[float] = None,
            no_removal: bool = False) -> int:
    try:
        scenario = apply_overrides(load_scenario(scenario_path), seed, dt, no_removal)
        fleet = certified_fleet(scenario.fleet)
        trace = run(fleet, scenario.attack, scenario.monitors, scenario.sim)
    except ScenarioError as exc:
        log.error("Invalid scenario %s: %s", scenario_path, exc)
        return EXIT_INVALID
    except UioExistenceError as exc:
        log.error("Observer bank cannot be built (host %s, target %s): %s", exc.host, exc.target, exc)
        return EXIT_INVALID
    except (GainDesignError, UioSynthesisError, CalibrationError) as exc:
        log.error("Design failed: %s", exc)
        return EXIT_INVALID
    except DivergenceError as exc:
        log.error("Simulation diverged: %s", exc)
        return EXIT_DIVERGED

    config = scenario.resolved()
    config["gains"] = {"k_pos": fleet.k_pos, "k_vel": fleet.k_vel}
    seeds = {"sim": scenario.sim.seed, "attack": scenario.attack.seed if scenario.attack else None}
    paths = TraceStore(Path(out_dir)).write(trace, scenario.name, config, seeds)

    summary = trace.summary()
    print(f"{scenario.name}: {len(trace.steps) - 1} steps, digest {trace.digest()[:16]}")
    if summary["no_fault_throughout"]:
        print("  NoFault throughout")
    for host, v in summary["first_confirmed"].items():
        print(f"  host {host}: {v['verdict']} at t={v['t']:.2f}s ({v['attack_class']})")
    for event in summary["removals"]:
        status = "refused" if event["refused"] else "removed"
        print(f"  UAV {event['node']} {status} at t={event['t']:.2f}s")
    print(f"  wrote {paths['trace']}")
    return EXIT_OK


def check_report(scenario: Scenario) -> List[str]:
    fleet = scenario.fleet
    graph = fleet.graph
    lines = [
        f"scenario: {scenario.name}",
        f"nodes: {list(graph.node_ids)}",
        f"2-connected: {str(is_two_connected(graph)).lower()}",
        f"laplacian spectrum: {_fmt_values(laplacian_spectrum(graph))}",
        f"normalized spectrum: {_fmt_values(normalized_spectrum(graph))}",
    ]
    try:
        cert = design_gain(fleet.uav, normalized_spectrum(graph), fleet.k_pos, fleet.k_vel)
        fleet = fleet.with_gain(cert)
        status = "redesigned" if cert.searched else "certified"
        lines.append(f"gain: {status} k_pos={cert.k_pos:g} k_vel={cert.k_vel:g} max Re={cert.max_real_part:.4f}")
        lines.append(f"closed-loop blocks: {len(block_spectrum(fleet))} eigenvalues")
    except GainDesignError as exc:
        lines.append(f"gain: FAILED ({exc})")

    hosts = scenario.monitors.hosts or graph.node_ids
    for host in hosts:
        try:
            certs = bank_certificates(fleet, host, scenario.monitors.model, scenario.monitors.channel)
        except UioExistenceError as exc:
            lines.append(f"bank {host}: FAILED ({exc})")
            continue
        for target, cert in certs.items():
            lines.append(f"bank {host} target {target}: {cert.describe()}")
    return lines


def cmd_check(scenario_path: Path) -> List[str]:
    """Pre-flight report; only an unreadable scenario raises."""
    return check_report(load_scenario(scenario_path))


def _write_csv(path: Path, header: List[str], rows: List[List[str]]) -> Path:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    return path


def _host_thresholds(trace_path: Path) -> Dict[int, float]:
    manifest = trace_path.parent / MANIFEST_FILE
    if not manifest.exists():
        return {}
    data = json.loads(manifest.read_text(encoding="utf-8"))
    entries = data.get("thresholds") or []
    if not entries:
        return {}
    return {int(h): max(per.values()) for h, per in entries[0]["hosts"].items() if per}


def cmd_export_plots(trace_path: Path, out_dir: Path) -> List[Path]:
    """Per-figure data files plus matching PNG figures."""
    trace_path = Path(trace_path)
    rows = load_trace(trace_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    columns = list(rows[0].keys()) if rows else []
    written: List[Path] = []

    by_time: "OrderedDict[str, List[Dict[str, str]]]" = OrderedDict()
    for row in rows:
        by_time.setdefault(row["t"], []).append(row)

    traj_rows = [[r["t"], r["node"], r["x"], r.get("y", "0.0")] for r in rows]
    written.append(_write_csv(out_dir / "trajectories.csv", ["t", "node", "x", "y"], traj_rows))

    err_rows = []
    err_series: Dict[int, List[float]] = {}
    err_times: Dict[int, List[float]] = {}
    for t, group in by_time.items():
        rel = np.array([float(r["x"]) - float(r["hx"]) for r in group])
        for r, e in zip(group, rel - rel.mean()):
            err_rows.append([t, r["node"], repr(float(e))])
            err_series.setdefault(int(r["node"]), []).append(float(e))
            err_times.setdefault(int(r["node"]), []).append(float(t))
    written.append(_write_csv(out_dir / "x_position_error.csv", ["t", "node", "x_error"], err_rows))

    residual_cols = [c for c in columns if c.startswith("r_")]
    hosts = sorted({int(c.split("_")[1]) for c in residual_cols})
    for host in hosts:
        cols = [c for c in residual_cols if int(c.split("_")[1]) == host]
        host_rows = []
        for t, group in by_time.items():
            values = [group[0][c] for c in cols]
            if any(values):
                host_rows.append([t] + values)
        written.append(_write_csv(out_dir / f"residuals_host_{host}.csv", ["t"] + cols, host_rows))

    paths: Dict[int, tuple] = {}
    for node in sorted({int(r["node"]) for r in rows}):
        own = [r for r in rows if int(r["node"]) == node]
        paths[node] = ([float(r["x"]) for r in own], [float(r.get("y", 0.0)) for r in own])
    last_nodes = {int(r["node"]) for r in by_time[next(reversed(by_time))]} if by_time else set()
    removed = [n for n in paths if n not in last_nodes]
    if paths:
        written.append(create_trajectory_chart(paths, out_dir / "trajectories.png", removed))
        written.append(create_position_error_chart(err_times, err_series, out_dir / "x_position_error.png"))

    thresholds = _host_thresholds(trace_path)
    for host in hosts:
        cols = [c for c in residual_cols if int(c.split("_")[1]) == host]
        times = [float(t) for t in by_time]
        series = {int(c.split("_")[2]): [float(g[0][c]) if g[0][c] else float("nan") for g in by_time.values()]
                  for c in cols}
        written.append(create_residual_chart(host, times, series, out_dir / f"residuals_host_{host}.png",
                                             thresholds.get(host)))
    log.info("Exported %d files to %s", len(written), out_dir)
    return written
