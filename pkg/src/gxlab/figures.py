"""Matplotlib renderings of the report objects, written next to the CSVs.

All figures are rasterized deterministically: fixed size and dpi, the Agg
backend, and PNG metadata pinned so repeated runs produce byte-identical
files.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

DPI = 110
_PNG_META = {"Software": "gxlab"}


def _save(fig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=DPI, metadata=_PNG_META)
    plt.close(fig)
    return path


def heat_profile(field, path: Path) -> Path:
    """Initial and final layers of a solved field, plus a few in between."""
    xs = field.grid.xs()
    fig, ax = plt.subplots(figsize=(7, 4.5))
    picks = np.unique(np.linspace(0, len(field.times) - 1, 5).astype(int))
    for k in picks:
        ax.plot(xs, field.values[k], lw=1.2, label=f"t = {field.times[k]:.3g}")
    ax.set_xlabel("x")
    ax.set_ylabel("u(t, x)")
    ax.legend(loc="best", fontsize=8)
    ax.grid(alpha=0.3)
    return _save(fig, path)


def bsde_fields(solution, path: Path) -> Path:
    """Y and Z at the first stored layer."""
    xs = solution.grid.xs()
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 4))
    ax1.plot(xs, solution.field.values[0], lw=1.2)
    ax1.axvline(solution.x0, color="gray", ls=":", lw=0.8)
    ax1.set_title(f"Y at t = {solution.field.times[0]:.3g}  (y0 = {solution.y0:.5g})")
    ax1.set_xlabel("x")
    ax2.plot(xs, solution.z_values[0], lw=1.2, color="tab:orange")
    ax2.set_title("Z = sigma u_x")
    ax2.set_xlabel("x")
    for ax in (ax1, ax2):
        ax.grid(alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)


def k_trajectories(trajectories, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for traj in trajectories:
        ax.plot(traj.times, traj.values, lw=1.2, label=traj.scenario_id)
    ax.axhline(0.0, color="gray", lw=0.8)
    ax.set_xlabel("t")
    ax.set_ylabel("K")
    ax.legend(loc="best", fontsize=8)
    ax.grid(alpha=0.3)
    return _save(fig, path)


def slope_fit(estimate, path: Path) -> Path:
    """D(eps) samples, the fitted model, and the closed-form target."""
    eps = np.asarray(estimate.eps)
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(eps, estimate.d_eps, "o", ms=5, label="D(eps)")
    grid = np.linspace(0.0, eps.max() * 1.05, 200)
    model = (estimate.fitted_limit + estimate.c_half * np.sqrt(grid)
             + estimate.c_one * grid)
    ax.plot(grid, model, lw=1.2, label="fit")
    ax.axhline(estimate.fitted_limit, color="tab:green", ls="--", lw=1.0,
               label=f"fitted limit {estimate.fitted_limit:.5g}")
    ax.axhline(estimate.rhs, color="tab:red", ls=":", lw=1.0,
               label=f"closed form {estimate.rhs:.5g}")
    ax.set_xlabel("eps")
    ax.set_ylabel("D(eps)")
    ax.legend(loc="best", fontsize=8)
    ax.grid(alpha=0.3)
    return _save(fig, path)


def predicate_summary(reports, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(7, 4.5))
    names = [r.predicate for r in reports]
    worsts = [max(r.worst_violation, 1e-16) for r in reports]
    colors = ["tab:green" if r.holds else "tab:red" for r in reports]
    ax.bar(range(len(names)), worsts, color=colors)
    ax.set_yscale("log")
    ax.axhline(1e-10, color="gray", ls="--", lw=0.8, label="tolerance")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel("worst violation")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3, axis="y")
    return _save(fig, path)


def oracle_diffs(report, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ids = [r.payoff_id for r in report.rows]
    diffs = [max(r.abs_diff, 1e-18) for r in report.rows]
    ax.bar(range(len(ids)), diffs, color="tab:blue")
    ax.set_yscale("log")
    ax.axhline(report.tolerance, color="tab:red", ls="--", lw=1.0, label="tolerance")
    ax.set_xticks(range(len(ids)))
    ax.set_xticklabels(ids, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel("|oracle - pde|")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3, axis="y")
    return _save(fig, path)


def acceptance_summary(results, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(7, 4.5))
    nums = [r.number for r in results]
    vals = [1.0 for _ in results]
    colors = ["tab:green" if r.passed else "tab:red" for r in results]
    ax.bar(nums, vals, color=colors)
    ax.set_xticks(nums)
    ax.set_xticklabels([f"{r.number}" for r in results])
    ax.set_yticks([])
    ax.set_xlabel("criterion")
    ax.set_title("acceptance: green = pass, red = fail")
    return _save(fig, path)
