"""Figure rendering for the report paths.

Each command that writes delimited output can also render a matplotlib
figure next to it; these helpers do the drawing and always save to file
(Agg backend, no display needed).
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def profile_figure(coeff_sets, path: str | Path) -> Path:
    """Invariant profile and its weight for every computed parameter set."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.4))
    for cs in coeff_sets:
        sol = cs.gci
        label = f"d={cs.params.d:g}"
        ax1.plot(sol.theta, sol.values, label=label)
        mtilde = (
            np.asarray(cs.params.nu.nu(0.5 + np.cos(sol.theta)))
            * np.sin(sol.theta) ** 2
            * cs.params.m_scaled(sol.theta)
            * sol.values
        )
        ax2.plot(sol.theta, mtilde, label=label)
    ax1.set_xlabel("angle")
    ax1.set_ylabel("profile")
    ax2.set_xlabel("angle")
    ax2.set_ylabel("coefficient weight")
    ax1.legend(fontsize=8)
    return _save(fig, path)


def coefficients_figure(rows, path: str | Path) -> Path:
    """Transport constants against the noise parameter (log axis)."""
    fig, ax = plt.subplots(figsize=(5.5, 3.6))
    d = [row["d"] for row in rows]
    for name in ("c1", "c2", "c3", "c4"):
        ax.plot(d, [row[name] for row in rows], marker="o", label=name)
    ax.set_xscale("log")
    ax.set_xlabel("noise d")
    ax.set_ylabel("coefficient")
    ax.legend(fontsize=8)
    return _save(fig, path)


def angle_histogram_figure(samples, table, path: str | Path, bins: int = 50) -> Path:
    """Sampled angle histogram against the analytic marginal."""
    fig, ax = plt.subplots(figsize=(5.5, 3.6))
    ax.hist(samples, bins=bins, range=(0.0, np.pi), density=True, alpha=0.6,
            label="samples")
    ax.plot(table.theta, table.density, "k-", lw=1.2, label="marginal")
    ax.set_xlabel("angle")
    ax.set_ylabel("density")
    ax.legend(fontsize=8)
    return _save(fig, path)


def order_parameter_figure(times, c1_hat, path: str | Path, c1=None) -> Path:
    """Alignment order over time, optionally against the predicted constant."""
    fig, ax = plt.subplots(figsize=(5.5, 3.6))
    ax.plot(times, c1_hat, lw=1.0)
    if c1 is not None:
        ax.axhline(c1, color="k", ls="--", lw=1.0, label="equilibrium value")
        ax.legend(fontsize=8)
    ax.set_xlabel("time")
    ax.set_ylabel("alignment order")
    ax.set_ylim(0.0, 1.05)
    return _save(fig, path)


def density_snapshots_figure(snapshots, path: str | Path) -> Path:
    """Density profiles of 1-d snapshots over time."""
    fig, ax = plt.subplots(figsize=(5.5, 3.6))
    for t, field in snapshots:
        rho = field.rho.ravel()
        x = field.dx * np.arange(rho.size)
        ax.plot(x, rho, label=f"t={t:.3g}", lw=1.0)
    ax.set_xlabel("x")
    ax.set_ylabel("density")
    if len(snapshots) <= 8:
        ax.legend(fontsize=7)
    return _save(fig, path)


def mass_drift_figure(times, mass, path: str | Path) -> Path:
    fig, ax = plt.subplots(figsize=(5.5, 3.6))
    ax.plot(times, np.asarray(mass) - mass[0], lw=1.0)
    ax.set_xlabel("time")
    ax.set_ylabel("total mass drift")
    return _save(fig, path)
