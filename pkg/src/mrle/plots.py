"""Deterministic SVG figures for a simulation report.

The Agg backend, a fixed hash salt, and a cleared Date field keep the SVG
output byte-identical across reruns of the same report on one install.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")

from matplotlib import pyplot as plt  # noqa: E402

matplotlib.rcParams["svg.hashsalt"] = "mrle"

_SVG_METADATA = {"Date": None}
_FIGSIZE = (6.0, 4.0)

PLOT_NAMES = ("kl_loss_hist.svg", "noise_dual_hist.svg", "bound_vs_loss.svg")


def _save(fig, path: Path) -> Path:
    fig.savefig(path, format="svg", metadata=_SVG_METADATA)
    plt.close(fig)
    return path


def write_plots(report, plots_dir) -> list[Path]:
    """Write the KL-loss histogram, the noise-dual distribution with the
    r level marked, and the bound-vs-loss scatter; failed replicates are
    left out."""
    plots_dir = Path(plots_dir)
    plots_dir.mkdir(parents=True, exist_ok=True)
    ok = [rec for rec in report.records if not rec.failed]
    kl = np.array([rec.kl_loss for rec in ok], dtype=np.float64)
    duals = np.array([rec.noise_dual for rec in ok], dtype=np.float64)
    levels = np.array([rec.r for rec in ok], dtype=np.float64)
    bounds = np.array(
        [rec.bound_value + rec.solver_gap for rec in ok], dtype=np.float64
    )
    family = report.config.family
    paths = []

    fig, ax = plt.subplots(figsize=_FIGSIZE)
    ax.hist(kl, bins=30, color="#4878d0", edgecolor="white")
    ax.set_xlabel("KL loss")
    ax.set_ylabel("replicates")
    ax.set_title(f"KL loss, {family}")
    fig.tight_layout()
    paths.append(_save(fig, plots_dir / PLOT_NAMES[0]))

    fig, ax = plt.subplots(figsize=_FIGSIZE)
    ax.hist(duals, bins=30, color="#6acc64", edgecolor="white")
    level = float(np.median(levels))
    ax.axvline(level, color="#d65f5f", linestyle="--", label=f"r = {level:.6g}")
    ax.set_xlabel("gauge dual of the noise term")
    ax.set_ylabel("replicates")
    ax.set_title(f"noise dual vs r, {family}")
    ax.legend()
    fig.tight_layout()
    paths.append(_save(fig, plots_dir / PLOT_NAMES[1]))

    fig, ax = plt.subplots(figsize=_FIGSIZE)
    ax.scatter(bounds, kl, s=14, alpha=0.7, color="#4878d0", edgecolors="none")
    top = float(max(bounds.max(), kl.max(), 1e-12))
    ax.plot([0.0, top], [0.0, top], color="#d65f5f", linewidth=1.0, label="loss = bound")
    ax.set_xlabel("bound value plus solver gap")
    ax.set_ylabel("KL loss")
    ax.set_title(f"oracle bound vs loss, {family}")
    ax.legend()
    fig.tight_layout()
    paths.append(_save(fig, plots_dir / PLOT_NAMES[2]))
    return paths
