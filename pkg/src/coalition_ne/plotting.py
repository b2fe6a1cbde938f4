"""Report figures rendered to PNG files (non-interactive backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .game import project_nonneg  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_positions(log, path, battlefield=None):
    """Planar paths for r >= 2, otherwise actions against time."""
    xs = log.series("x")
    fig, ax = plt.subplots(figsize=(6, 5))
    n = xs.shape[1]
    colors = plt.cm.tab20(np.linspace(0, 1, max(n, 2)))
    if xs.shape[2] >= 2:
        for p in range(n):
            ax.plot(xs[:, p, 0], xs[:, p, 1], color=colors[p], lw=1.2, label=f"agent {p + 1}")
            ax.plot(xs[0, p, 0], xs[0, p, 1], "o", color=colors[p], ms=4)
            ax.plot(xs[-1, p, 0], xs[-1, p, 1], "s", color=colors[p], ms=5)
        if battlefield is not None:
            x0, x1, y0, y1 = battlefield
            ax.plot([x0, x1, x1, x0, x0], [y0, y0, y1, y1, y0], "k--", lw=0.8)
        ax.set_xlabel("x")
        ax.set_ylabel("y")
        ax.set_aspect("equal", adjustable="datalim")
    else:
        for p in range(n):
            ax.plot(log.times, xs[:, p, 0], color=colors[p], label=f"agent {p + 1}")
        ax.set_xlabel("t [s]")
        ax.set_ylabel("x")
    ax.legend(fontsize=7, ncol=2)
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_actions(log, path):
    """Every coordinate of the physical action and its auxiliary reference."""
    xs, es = log.series("x"), log.series("eta")
    r = xs.shape[2]
    fig, axes = plt.subplots(r, 1, figsize=(7, 2.4 * r), sharex=True, squeeze=False)
    for c in range(r):
        ax = axes[c, 0]
        for p in range(xs.shape[1]):
            line, = ax.plot(log.times, xs[:, p, c], lw=1.0)
            ax.plot(log.times, es[:, p, c], ls=":", color=line.get_color(), lw=1.0)
        ax.set_ylabel(f"x{c + 1} (solid), eta{c + 1} (dotted)", fontsize=8)
        ax.grid(alpha=0.3)
    axes[-1, 0].set_xlabel("t [s]")
    return _save(fig, path)


def plot_multipliers(log, path):
    loop = log.loop
    lam = np.array([[np.linalg.norm(project_nonneg(v)) for v in loop.seeker_state(y).lam]
                    for y in log.states])
    om = np.array([[np.linalg.norm(v) for v in loop.seeker_state(y).omega] for y in log.states])
    fig, (a1, a2) = plt.subplots(2, 1, figsize=(7, 5), sharex=True)
    a1.plot(log.times, lam, lw=1.0)
    a1.set_ylabel("|P+(lambda)|")
    a2.plot(log.times, om, lw=1.0)
    a2.set_ylabel("|omega|")
    a2.set_xlabel("t [s]")
    for a in (a1, a2):
        a.grid(alpha=0.3)
    return _save(fig, path)


def plot_residuals(log, path):
    fig, ax = plt.subplots(figsize=(7, 4))
    floor = 1e-16
    ax.semilogy(log.times, np.maximum(log.kkt_stationarity.max(axis=1), floor), label="stationarity")
    ax.semilogy(log.times, np.maximum(log.kkt_coupling.max(axis=1), floor), label="coupling")
    ax.semilogy(log.times, np.maximum(log.kkt_local.max(axis=1), floor), label="local")
    ax.semilogy(log.times, np.maximum(np.linalg.norm(log.e_norm, axis=1), floor), label="|e|")
    gap = log.gap()
    if gap is not None:
        ax.semilogy(log.times, np.maximum(gap, floor), "k", lw=1.5, label="|x - x*|")
    ax.set_xlabel("t [s]")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3, which="both")
    return _save(fig, path)


def render_report(log, out_dir, battlefield=None) -> list:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return [
        plot_positions(log, out / "positions.png", battlefield),
        plot_actions(log, out / "actions.png"),
        plot_multipliers(log, out / "multipliers.png"),
        plot_residuals(log, out / "residuals.png"),
    ]
