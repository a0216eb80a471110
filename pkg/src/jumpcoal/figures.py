"""Figure rendering for the command-line report paths.

All plots go straight to files through the Agg backend; nothing here opens
a window. Figures are a convenience companion to the delimited output, so
they favor quick legibility over polish.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .configspace import SymmetricGridFamily
from .kernels import KernelConstants, ScaleParams, scale_growth_rate

__all__ = [
    "fig_growth_rate",
    "fig_series",
    "fig_count_distribution",
    "fig_correlation_estimate",
    "fig_family_orders",
    "fig_check_residuals",
]


def _save(fig, path: Union[str, Path]) -> str:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return str(path)


def fig_growth_rate(
    constants: KernelConstants, scale: ScaleParams, path: Union[str, Path]
) -> str:
    """Norm growth rate over the scale interval, with the horizon in the title."""
    thetas = np.linspace(scale.alpha0, scale.alpha_star, 200)
    rates = [scale_growth_rate(t, constants) for t in thetas]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(thetas, rates)
    ax.set_xlabel("scale")
    ax.set_ylabel("growth rate")
    horizon = scale.horizon(constants)
    ax.set_title(f"existence horizon {horizon:.4g}")
    ax.grid(True, alpha=0.3)
    return _save(fig, path)


def fig_series(
    times: Sequence[float],
    series: dict,
    path: Union[str, Path],
    ylabel: str = "",
) -> str:
    """Aligned time series (e.g. mass and minimum value) on one axis."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, values in series.items():
        ax.plot(times, values, marker=".", label=label)
    ax.set_xlabel("t")
    if ylabel:
        ax.set_ylabel(ylabel)
    ax.legend()
    ax.grid(True, alpha=0.3)
    return _save(fig, path)


def fig_count_distribution(
    dist: dict,
    path: Union[str, Path],
    reference: Optional[Sequence[float]] = None,
) -> str:
    """Empirical count probabilities with errors, optional reference pmf."""
    pmf = np.asarray(dist["pmf"])
    se = np.asarray(dist["se"])
    ns = np.arange(pmf.size)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(ns, pmf, yerr=3 * se, capsize=4, alpha=0.7, label="ensemble")
    if reference is not None:
        ref = np.asarray(reference)
        ax.plot(np.arange(ref.size), ref, "k_", markersize=18, label="reference")
    ax.set_xlabel("particle count")
    ax.set_ylabel("probability")
    ax.legend()
    return _save(fig, path)


def fig_correlation_estimate(estimate, path: Union[str, Path]) -> str:
    """Binned one-point correlation estimate with three-sigma error bars."""
    edges = np.asarray(estimate.bin_edges)
    mids = 0.5 * (edges[:-1] + edges[1:])
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.errorbar(mids, estimate.k1, yerr=3 * estimate.k1_se, fmt="o-", capsize=3)
    ax.set_xlabel("position")
    ax.set_ylabel("one-point correlation")
    ax.grid(True, alpha=0.3)
    return _save(fig, path)


def fig_family_orders(
    fam: SymmetricGridFamily, path: Union[str, Path], title: str = ""
) -> str:
    """First two orders of a family: a curve and, if present, a heat map."""
    mids = fam.grid.axis_midpoints
    has_two = fam.n_max >= 2
    fig, axes = plt.subplots(1, 2 if has_two else 1, figsize=(10 if has_two else 6, 4))
    axes = np.atleast_1d(axes)
    if fam.n_max >= 1 and fam.grid.d == 1:
        axes[0].plot(mids, fam.comps[1], marker=".")
        axes[0].set_xlabel("position")
        axes[0].set_ylabel("order 1")
        axes[0].grid(True, alpha=0.3)
    if has_two and fam.grid.d == 1:
        im = axes[1].imshow(
            fam.comps[2],
            origin="lower",
            extent=[mids[0], mids[-1], mids[0], mids[-1]],
            aspect="auto",
        )
        axes[1].set_xlabel("position")
        axes[1].set_ylabel("position")
        axes[1].set_title("order 2")
        fig.colorbar(im, ax=axes[1])
    if title:
        fig.suptitle(title)
    return _save(fig, path)


def fig_check_residuals(report, path: Union[str, Path]) -> str:
    """Residual-to-tolerance ratios for every named check, log scale."""
    names = [c.name for c in report.checks]
    ratios = [max(c.residual / max(c.tolerance, 1e-300), 1e-18) for c in report.checks]
    colors = ["tab:blue" if c.passed else "tab:red" for c in report.checks]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(names, ratios, color=colors)
    ax.axhline(1.0, color="k", linestyle="--", linewidth=1)
    ax.set_yscale("log")
    ax.set_ylabel("residual / tolerance")
    ax.tick_params(axis="x", rotation=45)
    return _save(fig, path)
