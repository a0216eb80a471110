"""Command-line entry points.

Five subcommands drive the library from one JSON configuration file:
simulate (stochastic ensembles), hierarchy (correlation-function evolution),
fokker-planck (finite-volume density evolution), bounds (growth rates,
horizon, and series bounds), and validate (the named self-checks).

Exit codes: 0 on success, 1 when a validation check fails or a run blows
up, 2 for configuration problems (including a requested series evaluation
at or past the existence horizon).
"""

from __future__ import annotations

import dataclasses
import sys
from pathlib import Path

import click
import numpy as np

from . import figures
from .config import RunConfig, config_hash, load_config
from .configspace import random_family, save_family
from .errors import (
    BlowUpError,
    ConfigError,
    HorizonExceededError,
    InvalidScaleError,
    TruncationError,
    UnsupportedSamplingError,
)
from .fokker_planck import integrate_fp
from .hierarchy import (
    dyson_evolve,
    rk4_evolve,
    series_tail_bound,
    truncation_bound,
    verify_operator_bounds,
)
from .kernels import scale_growth_rate
from .kmc import (
    EnsembleSpec,
    InitialState,
    count_distribution,
    estimate_correlations,
    run_ensemble,
)
from .report import (
    write_count_distribution_csv,
    write_correlation_csv,
    write_manifest,
    write_pair_correlation_csv,
    write_series_csv,
    write_snapshot_csv,
)
from .validate import run_validation

_CONFIG_FAULTS = (
    ConfigError,
    InvalidScaleError,
    HorizonExceededError,
    TruncationError,
    UnsupportedSamplingError,
)


def _common(f):
    f = click.option(
        "--config", "config_path", required=True, type=click.Path(), help="JSON run configuration"
    )(f)
    f = click.option("--out", "out_dir", default="out", show_default=True, help="output directory")(f)
    f = click.option("--threads", default=1, show_default=True, type=int, help="worker threads")(f)
    f = click.option("--seed", default=None, type=int, help="override ensemble.master_seed")(f)
    f = click.option(
        "--figures/--no-figures",
        "with_figures",
        default=True,
        show_default=True,
        help="also render figures next to the delimited output",
    )(f)
    return f


def _load(config_path: str, seed) -> RunConfig:
    config = load_config(config_path)
    if seed is not None:
        ensemble = dataclasses.replace(config.ensemble, master_seed=int(seed))
        config = dataclasses.replace(config, ensemble=ensemble)
    return config


def _fail(exc: Exception, code: int):
    click.echo(f"error: {exc}", err=True)
    sys.exit(code)


def _guarded(body, config_path: str, seed):
    try:
        config = _load(config_path, seed)
    except _CONFIG_FAULTS as exc:
        _fail(exc, 2)
    try:
        return body(config)
    except _CONFIG_FAULTS as exc:
        _fail(exc, 2)
    except BlowUpError as exc:
        _fail(exc, 1)


@click.group()
def main():
    """Jump-coalescence dynamics: simulation, hierarchies, and checks."""


@main.command()
@_common
def simulate(config_path, out_dir, threads, seed, with_figures):
    """Run the stochastic ensemble and write snapshot and estimate CSVs."""

    def body(config: RunConfig):
        out = Path(out_dir)
        digest = config_hash(config)
        kernels = config.kernels()
        if config.initial.kind == "poisson":
            initial = InitialState(
                kind="poisson", rho=config.initial.rho, box=config.domain.lambda_box
            )
        else:
            initial = InitialState(kind="explicit", positions=config.explicit_points())
        spec = EnsembleSpec(
            n_traj=config.ensemble.n_traj,
            t_end=config.evolution.t_end,
            snapshot_times=tuple(config.evolution.snapshot_times),
            master_seed=config.ensemble.master_seed,
            initial=initial,
        )
        records = run_ensemble(spec, kernels, config.model.sigma, threads=threads)

        by_time = {t: [r["snapshots"][t] for r in records] for t in spec.snapshot_times}
        finals = [r["final"] for r in records]
        by_time[spec.t_end] = finals
        write_snapshot_csv(out / "snapshots.csv", by_time, digest)

        lo, hi = config.domain.lambda_box
        grid = config.grid()
        n_bins = max(1, int(round((hi - lo) / grid.h)))
        bins = np.linspace(lo, hi, n_bins + 1)
        estimate = estimate_correlations(finals, bins)
        write_correlation_csv(out / "correlation_final.csv", estimate, digest)
        write_pair_correlation_csv(out / "pair_correlation_final.csv", estimate, digest)
        dist = count_distribution(finals)
        write_count_distribution_csv(out / "counts_final.csv", dist, digest)

        write_manifest(
            out / "manifest.json",
            config,
            {
                "command": "simulate",
                "threads": threads,
                "snapshot_times": list(spec.snapshot_times) + [spec.t_end],
                "mean_final_count": float(np.mean([len(f) for f in finals])),
            },
        )
        if with_figures:
            figures.fig_correlation_estimate(estimate, out / "correlation_final.png")
            figures.fig_count_distribution(dist, out / "counts_final.png")
        click.echo(f"simulate: {spec.n_traj} trajectories to t={spec.t_end} -> {out}")

    _guarded(body, config_path, seed)


@main.command()
@_common
def hierarchy(config_path, out_dir, threads, seed, with_figures):
    """Evolve the correlation functions and write family bundles."""

    def body(config: RunConfig):
        out = Path(out_dir)
        digest = config_hash(config)
        kernels = config.kernels()
        constants = config.constants()
        scale = config.scale_params()
        sigma = config.model.sigma
        ev = config.evolution
        k0 = config.initial_correlation()
        horizon = scale.horizon(constants)

        diagnostics = {"method": ev.method, "horizon": horizon}
        if ev.method == "rk4":
            k_final, snaps = rk4_evolve(
                k0,
                kernels,
                sigma,
                ev.t_end,
                ev.dt,
                m_cluster=config.truncation.m_cluster,
                scale=scale,
                constants=constants,
                snapshot_times=ev.snapshot_times,
            )
        else:
            spec = config.dyson_spec()
            k_final, terms = dyson_evolve(
                k0, kernels, sigma, spec, ev.t_end, return_terms=True, constants=constants
            )
            snaps = {
                t: dyson_evolve(k0, kernels, sigma, spec, t, constants=constants)
                for t in ev.snapshot_times
            }
            tail, converged = series_tail_bound(spec.n_terms, ev.t_end, scale, constants)
            diagnostics.update(
                {
                    "series_tail_bound": tail,
                    "series_converged": converged,
                    "term_bounds": [
                        truncation_bound(n, ev.t_end, scale, constants)
                        for n in range(1, spec.n_terms + 1)
                    ],
                }
            )

        paths = {"final": save_family(k_final, str(out), name="k_final", config_hash=digest)}
        for i, (t, fam) in enumerate(sorted(snaps.items())):
            paths[f"t={t}"] = save_family(
                fam, str(out), name=f"k_snapshot{i}", config_hash=digest
            )
        write_manifest(
            out / "manifest.json",
            config,
            {
                "command": "hierarchy",
                "truncation": {
                    "n_max": config.truncation.n_max,
                    "m_cluster": config.truncation.m_cluster,
                },
                "bundles": {k: str(v) for k, v in paths.items()},
                **diagnostics,
            },
        )
        if with_figures:
            figures.fig_family_orders(
                k_final, out / "k_final.png", title=f"correlations at t={ev.t_end}"
            )
            figures.fig_growth_rate(constants, scale, out / "growth_rate.png")
        click.echo(f"hierarchy ({ev.method}): t={ev.t_end} -> {out}")

    _guarded(body, config_path, seed)


@main.command(name="fokker-planck")
@_common
def fokker_planck_cmd(config_path, out_dir, threads, seed, with_figures):
    """Evolve the finite-volume density and write bundles plus mass series."""

    def body(config: RunConfig):
        out = Path(out_dir)
        digest = config_hash(config)
        kernels = config.kernels()
        ev = config.evolution
        R0 = config.initial_density()
        R_final, info = integrate_fp(
            R0,
            kernels,
            config.local(),
            ev.t_end,
            ev.dt,
            snapshot_times=ev.snapshot_times,
        )
        paths = {"final": save_family(R_final, str(out), name="R_final", config_hash=digest)}
        for i, (t, fam) in enumerate(sorted(info["snapshots"].items())):
            paths[f"t={t}"] = save_family(
                fam, str(out), name=f"R_snapshot{i}", config_hash=digest
            )
        write_series_csv(
            out / "mass_series.csv",
            ["t", "mass", "min_value"],
            [info["times"], info["mass"], info["min_value"]],
            digest,
        )
        write_manifest(
            out / "manifest.json",
            config,
            {
                "command": "fokker-planck",
                "bundles": {k: str(v) for k, v in paths.items()},
                "mass_drift": float(max(abs(m - info["mass"][0]) for m in info["mass"])),
                "min_value": float(min(info["min_value"])),
                "target_leakage": info["target_leakage"],
            },
        )
        if with_figures:
            figures.fig_series(
                info["times"],
                {"mass": info["mass"], "min value": info["min_value"]},
                out / "mass_series.png",
            )
            figures.fig_family_orders(
                R_final, out / "R_final.png", title=f"density at t={ev.t_end}"
            )
        click.echo(f"fokker-planck: t={ev.t_end} -> {out}")

    _guarded(body, config_path, seed)


@main.command()
@_common
def bounds(config_path, out_dir, threads, seed, with_figures):
    """Write growth rates, the horizon, and series/operator bounds as JSON."""

    def body(config: RunConfig):
        out = Path(out_dir)
        constants = config.constants()
        scale = config.scale_params()
        horizon = scale.horizon(constants)
        thetas = np.linspace(scale.alpha0, scale.alpha_star, 21)
        beta_table = [[float(t), scale_growth_rate(float(t), constants)] for t in thetas]

        t_end = config.evolution.t_end
        tail, converged = series_tail_bound(
            config.evolution.dyson.n_terms, t_end, scale, constants
        )
        rng = np.random.default_rng([config.ensemble.master_seed, 99])
        k = random_family(rng, config.grid(), config.truncation.n_max, decay=0.7)
        op_report = verify_operator_bounds(
            k, scale.alpha0, scale.alpha_star, config.kernels(), sigma=config.model.sigma
        )
        write_manifest(
            out / "bounds.json",
            config,
            {
                "command": "bounds",
                "constants": {
                    "c1_int": constants.c1_int,
                    "c1_max": constants.c1_max,
                    "c2_int": constants.c2_int,
                    "phi_int": constants.phi_int,
                    "phi_sup": constants.phi_sup,
                },
                "beta_table": beta_table,
                "horizon": horizon,
                "t_end_within_horizon": bool(t_end < horizon),
                "truncation_bounds": [
                    truncation_bound(n, t_end, scale, constants) for n in range(1, 5)
                ],
                "series_tail_bound": tail,
                "series_converged": converged,
                "operator_bounds": op_report,
            },
        )
        if with_figures:
            figures.fig_growth_rate(constants, scale, out / "growth_rate.png")
        click.echo(f"bounds: horizon {horizon:.6g} -> {out}")

    _guarded(body, config_path, seed)


@main.command()
@_common
def validate(config_path, out_dir, threads, seed, with_figures):
    """Run every named self-check; exit 1 if any fails."""

    def body(config: RunConfig):
        out = Path(out_dir)
        report = run_validation(config, threads=threads)
        write_manifest(
            out / "report.json",
            config,
            {"command": "validate", "report": report.to_dict()},
        )
        if with_figures:
            figures.fig_check_residuals(report, out / "report.png")
        for c in report.checks:
            status = "pass" if c.passed else "FAIL"
            click.echo(
                f"{status} {c.name}: residual {c.residual:.3e} vs tolerance {c.tolerance:.1e}"
                f" ({c.seconds:.2f}s)"
            )
        if not report.passed:
            sys.exit(1)
        click.echo("all checks passed")

    _guarded(body, config_path, seed)


if __name__ == "__main__":
    main()
