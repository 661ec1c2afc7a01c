import csv
import json
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from core.constants import MANIFEST_FILE, SUMMARY_FILE, TRACE_AXES, TRACE_FILE, TRACE_REQUIRED_COLUMNS
from core.errors import TraceFormatError
from core.simkit import SimTrace

COLUMN_DOCS = {
    "t": "simulation time in seconds",
    "node": "UAV label from the scenario file",
    "x": "x position (m)",
    "y": "y position (m), planar and spatial fleets",
    "z": "z position (m), spatial fleets",
    "vx": "x velocity (m/s)",
    "vy": "y velocity (m/s)",
    "vz": "z velocity (m/s)",
    "hx": "formation offset x (m)",
    "hy": "formation offset y (m)",
    "hz": "formation offset z (m)",
    "attack_active": "1 while the attack window is open and its target is in the fleet",
    "r_<host>_<target>": "residual norm of the observer at <host> decoupled from <target>, blank when absent",
    "verdict_<host>": "threshold verdict at <host>: NoFault, Identified(k) or Inconclusive",
}


def _fmt(value: float) -> str:
    return repr(float(value))


def state_columns(spatial_dim: int) -> List[str]:
    """Position, velocity and offset columns for a fleet of the given dimension."""
    if not 1 <= spatial_dim <= len(TRACE_AXES):
        raise ValueError(f"traces support 1 to {len(TRACE_AXES)} spatial axes, got {spatial_dim}")
    axes = TRACE_AXES[:spatial_dim]
    return list(axes) + [f"v{a}" for a in axes] + [f"h{a}" for a in axes]


class TraceStore:
    """Writes one run's trace CSV, manifest and summary into a directory."""

    def __init__(self, out_dir: Path):
        self.out_dir = Path(out_dir)
        self.manifest: Dict[str, object] = {
            "name": "",
            "config": {},
            "seeds": {},
            "columns": [],
            "column_docs": COLUMN_DOCS,
            "digest": "",
            "removals": [],
            "thresholds": [],
            "fleets": [],
            "files": {"trace": TRACE_FILE, "summary": SUMMARY_FILE},
        }

    @staticmethod
    def columns(trace: SimTrace) -> List[str]:
        spatial_dim = trace.steps[0].offsets.shape[1] if trace.steps else 2
        residual_cols = [f"r_{h}_{k}" for h, k in trace.residual_keys()]
        verdict_cols = [f"verdict_{h}" for h in trace.hosts()]
        return ["t", "node"] + state_columns(spatial_dim) + ["attack_active"] + residual_cols + verdict_cols

    def write_trace(self, trace: SimTrace) -> Path:
        columns = self.columns(trace)
        path = self.out_dir / TRACE_FILE
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(columns)
            for step in trace.steps:
                shared = {f"r_{r.host}_{r.target}": _fmt(r.norm) for r in step.residuals}
                shared.update({f"verdict_{v.host}": v.code for v in step.verdicts})
                axes = TRACE_AXES[:step.offsets.shape[1]]
                for row_idx, node in enumerate(step.node_ids):
                    state = step.states[row_idx]
                    offset = step.offsets[row_idx]
                    row = {"t": _fmt(step.t), "node": str(node),
                           "attack_active": "1" if step.attack_active else "0"}
                    for a, axis in enumerate(axes):
                        row[axis] = _fmt(state[2 * a])
                        row[f"v{axis}"] = _fmt(state[2 * a + 1])
                        row[f"h{axis}"] = _fmt(offset[a])
                    row.update(shared)
                    writer.writerow([row.get(col, "") for col in columns])
        return path

    def write_designs(self, trace: SimTrace) -> Optional[Path]:
        """Observer matrices of every deployment as one .npz bundle."""
        arrays: Dict[str, np.ndarray] = {}
        for idx, (_, _, banks) in enumerate(trace.deployments):
            for bank in banks:
                for target, design in bank.designs.items():
                    for name in ("F", "T", "P", "H", "C", "E"):
                        arrays[f"d{idx}_h{bank.host}_t{target}_{name}"] = getattr(design, name)
        if not arrays:
            return None
        path = self.out_dir / "designs.npz"
        np.savez(path, **arrays)
        return path

    def write(self, trace: SimTrace, name: str, config: Dict[str, object],
              seeds: Dict[str, int]) -> Dict[str, Path]:
        """Write every artifact of a run. I/O errors propagate."""
        self.out_dir.mkdir(parents=True, exist_ok=True)
        paths = {"trace": self.write_trace(trace)}
        designs = self.write_designs(trace)
        if designs is not None:
            paths["designs"] = designs
            self.manifest["files"]["designs"] = designs.name

        self.manifest.update({
            "name": name,
            "config": config,
            "seeds": seeds,
            "columns": self.columns(trace),
            "digest": trace.digest(),
            "removals": trace.summary()["removals"],
            "thresholds": [{"t": t, "hosts": {str(h): {str(k): v for k, v in per.items()}
                                               for h, per in hosts.items()}}
                           for t, hosts in trace.thresholds()],
            "fleets": [{"t": t, "nodes": list(fleet.graph.node_ids),
                        "adjacency": fleet.graph.adjacency.tolist(),
                        "gains": {"k_pos": fleet.k_pos, "k_vel": fleet.k_vel}}
                       for t, fleet, _ in trace.deployments],
        })
        paths["manifest"] = self.out_dir / MANIFEST_FILE
        paths["manifest"].write_text(json.dumps(self.manifest, indent=2), encoding="utf-8")
        paths["summary"] = self.out_dir / SUMMARY_FILE
        paths["summary"].write_text(json.dumps(trace.summary(), indent=2), encoding="utf-8")
        return paths


def load_trace(path: Path) -> List[Dict[str, str]]:
    """Read a trace CSV back as rows, checking the columns export depends on."""
    path = Path(path)
    if not path.exists():
        raise TraceFormatError(f"trace file {path} does not exist")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in TRACE_REQUIRED_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise TraceFormatError(f"trace {path.name} is missing columns {missing}")
        return list(reader)
