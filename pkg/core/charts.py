"""Figures written next to the exported plot data, using matplotlib."""

from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple

import matplotlib
matplotlib.use('Agg')  # Use non-interactive backend
import matplotlib.pyplot as plt
from matplotlib.figure import Figure

PALETTE = ["#1e88e5", "#e53935", "#43a047", "#fb8c00", "#8e24aa", "#00acc1", "#6d4c41", "#546e7a"]


def save_figure(fig: Figure, path: Path) -> Path:
    fig.savefig(path, format='png', dpi=100, bbox_inches='tight')
    plt.close(fig)
    return path


def _style(ax, xlabel: str, ylabel: str, title: str) -> None:
    ax.set_xlabel(xlabel, fontsize=10)
    ax.set_ylabel(ylabel, fontsize=10)
    ax.set_title(title, fontsize=12, fontweight='bold')
    ax.grid(True, alpha=0.3)


def create_trajectory_chart(paths: Dict[int, Tuple[Sequence[float], Sequence[float]]], path: Path,
                            removed: Sequence[int] = ()) -> Path:
    """XY path per UAV. Start marked with a circle, end with a square."""
    fig, ax = plt.subplots(figsize=(7, 7))
    for idx, (node, (xs, ys)) in enumerate(sorted(paths.items())):
        color = PALETTE[idx % len(PALETTE)]
        style = '--' if node in removed else '-'
        ax.plot(xs, ys, style, linewidth=1.5, color=color, label=f'UAV-{node}')
        ax.plot(xs[0], ys[0], 'o', color=color, markersize=5)
        ax.plot(xs[-1], ys[-1], 's', color=color, markersize=7)
    _style(ax, 'x (m)', 'y (m)', 'UAV Trajectories')
    ax.set_aspect('equal', adjustable='datalim')
    ax.legend(fontsize=8, loc='best')
    plt.tight_layout()
    return save_figure(fig, path)


def create_position_error_chart(times: Dict[int, Sequence[float]], errors: Dict[int, Sequence[float]],
                                path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(8, 4))
    for idx, node in enumerate(sorted(errors)):
        ax.plot(times[node], errors[node], linewidth=1.5, color=PALETTE[idx % len(PALETTE)], label=f'UAV-{node}')
    _style(ax, 'Time (s)', 'x error (m)', 'X-Position Formation Error')
    ax.legend(fontsize=8, loc='best')
    plt.tight_layout()
    return save_figure(fig, path)


def create_residual_chart(host: int, times: Sequence[float], residuals: Dict[int, Sequence[float]],
                          path: Path, threshold: Optional[float] = None) -> Path:
    """Residual norms of one host's bank on a log scale."""
    fig, ax = plt.subplots(figsize=(8, 4))
    for idx, target in enumerate(sorted(residuals)):
        values = [max(v, 1e-16) for v in residuals[target]]
        ax.semilogy(times, values, linewidth=1.5, color=PALETTE[idx % len(PALETTE)],
                    label=f'decoupled from UAV-{target}')
    if threshold is not None:
        ax.axhline(threshold, color='#424242', linestyle=':', linewidth=1, label='threshold')
    _style(ax, 'Time (s)', 'Residual norm', f'Residuals Generated at UAV-{host}')
    ax.legend(fontsize=8, loc='best')
    plt.tight_layout()
    return save_figure(fig, path)
