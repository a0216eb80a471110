"""Named self-checks over a configured run.

Each check recomputes one structural property of the implementation by two
independent routes (or against a guaranteed bound) and reports a residual,
its tolerance, a pass flag, and the wall time. The assembled report is
ordered by check name, carries the configuration hash, and is meant to be
serialized as JSON by the command-line layer.

Checks never mutate shared state; with several worker threads they run
concurrently and still produce identical reports, because every check seeds
its own generator from the master seed and the check name.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .config import RunConfig, config_hash
from .configspace import (
    GridSpec,
    SymmetricGridFamily,
    lp_integral,
    minlos1_check,
    minlos2_check,
    pairing,
    random_family,
    sample_k_positive_cone,
    weighted_l1_norm,
    weighted_sup_norm,
)
from .errors import HorizonExceededError
from .fokker_planck import (
    LocalSpec,
    consistency_check,
    density_to_correlation,
    integrate_fp,
    project_density,
    restrict_correlation,
)
from .hierarchy import (
    correlation_generator,
    dyson_evolve,
    quasi_observable_generator,
    rk4_evolve,
    truncation_bound,
)
from .kernels import kernel_constants

__all__ = [
    "CHECK_NAMES",
    "CheckResult",
    "ValidationReport",
    "run_validation",
]

CHECK_NAMES = (
    "consistency",
    "duality",
    "dyson_bound",
    "kernel_constants",
    "lambda_n_limit",
    "mass",
    "minlos1",
    "minlos2",
    "positivity_cone",
    "sigma_limit",
)

_HUGE = 1e300


@dataclass(frozen=True)
class CheckResult:
    """Outcome of one named check."""

    name: str
    residual: float
    tolerance: float
    passed: bool
    seconds: float
    detail: str = ""

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "residual": self.residual,
            "tolerance": self.tolerance,
            "passed": self.passed,
            "seconds": self.seconds,
            "detail": self.detail,
        }


@dataclass(frozen=True)
class ValidationReport:
    """All check outcomes for one configuration."""

    checks: tuple
    config_hash: str
    passed: bool

    def to_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "passed": self.passed,
            "checks": [c.to_dict() for c in self.checks],
        }

    def __getitem__(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)


@dataclass
class _Env:
    """Shared read-only inputs derived from the configuration once."""

    config: RunConfig
    kernels: object
    grid: GridSpec
    constants: object
    scale: object
    sigma: float
    horizon: float


def _rel(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


def _rng(env: _Env, salt: int) -> np.random.Generator:
    return np.random.default_rng([env.config.ensemble.master_seed, salt])


def _mask_to_box(fam: SymmetricGridFamily, box: tuple) -> SymmetricGridFamily:
    """Zero out every component entry with any position outside the box."""
    grid = fam.grid
    pts = grid.points
    keep = np.all((pts >= box[0]) & (pts < box[1]), axis=-1).astype(float)
    comps = [np.asarray(float(fam.comps[0]))]
    for n in range(1, fam.n_max + 1):
        arr = fam.comps[n].copy()
        for ax in range(n):
            shape = [1] * n
            shape[ax] = grid.n_cells
            arr = arr * keep.reshape(shape)
        comps.append(arr)
    return SymmetricGridFamily(grid, comps, check_symmetry=False)


def _truncate_orders(fam: SymmetricGridFamily, cap: int) -> SymmetricGridFamily:
    comps = [c.copy() for c in fam.comps[: cap + 1]]
    return SymmetricGridFamily(fam.grid, comps, check_symmetry=False)


def _check_kernel_constants(env: _Env) -> tuple:
    closed = env.constants
    if env.config.model.d != 1:
        return 0.0, 1e-8, "closed-form constants only (quadrature oracle is 1-d)"
    quad = kernel_constants(env.kernels, method="quadrature")
    fields = ("c1_int", "c1_max", "c2_int", "phi_int", "phi_sup")
    worst = 0.0
    for f in fields:
        a, b = getattr(closed, f), getattr(quad, f)
        worst = max(worst, abs(a - b) / max(abs(a), abs(b), 1.0))
    return worst, 1e-8, f"closed vs quadrature over {fields}"


def _random_h2(rng: np.random.Generator) -> Callable:
    a, b, c = rng.normal(size=3)

    def h2(x, eta_pts):
        base = 1.0 + 0.5 * math.sin(a * float(np.sum(x)) + b)
        rest = np.prod(1.0 + 0.3 * np.cos(c * np.sum(np.atleast_2d(eta_pts), axis=-1)))
        return base * float(rest)

    return h2


def _random_h3(rng: np.random.Generator) -> Callable:
    a, b, c = rng.normal(size=3)

    def h3(x, y, eta_pts):
        sx, sy = float(np.sum(x)), float(np.sum(y))
        base = 1.0 + 0.4 * math.cos(a * (sx + sy)) + 0.2 * math.sin(b * sx * sy)
        rest = np.prod(1.0 + 0.3 * np.cos(c * np.sum(np.atleast_2d(eta_pts), axis=-1)))
        return base * float(rest)

    return h3


def _check_minlos1(env: _Env) -> tuple:
    rng = _rng(env, 1)
    grid = env.grid
    n_max = min(env.config.truncation.n_max, 3)
    worst = 0.0
    for _ in range(20):
        G = random_family(rng, grid, n_max)
        lhs, rhs = minlos1_check(G, _random_h2(rng), grid)
        worst = max(worst, _rel(lhs, rhs))
    return worst, 1e-10, "20 random draws, one-point augmentation"


def _check_minlos2(env: _Env) -> tuple:
    rng = _rng(env, 2)
    grid = env.grid
    n_max = min(env.config.truncation.n_max, 3)
    worst = 0.0
    for _ in range(20):
        G = random_family(rng, grid, n_max)
        lhs, rhs = minlos2_check(G, _random_h3(rng), grid)
        worst = max(worst, _rel(lhs, rhs))
    return worst, 1e-10, "20 random draws, two-point augmentation"


def _check_duality(env: _Env) -> tuple:
    rng = _rng(env, 3)
    grid = env.grid
    n_max = env.config.truncation.n_max
    worst = 0.0
    for sigma in (0.0, env.sigma):
        for _ in range(10):
            k = random_family(rng, grid, n_max, decay=0.7)
            G = random_family(rng, grid, n_max, decay=0.7)
            lhs = pairing(quasi_observable_generator(G, env.kernels, sigma=sigma), k)
            rhs = pairing(G, correlation_generator(k, env.kernels, sigma=sigma))
            worst = max(worst, _rel(lhs, rhs))
    return worst, 1e-10, "generator adjointness, untapered and tapered"


def _check_mass(env: _Env) -> tuple:
    cfg = env.config
    R0 = cfg.initial_density()
    t_end = min(cfg.evolution.t_end, 0.5)
    _, info = integrate_fp(R0, env.kernels, cfg.local(), t_end, cfg.evolution.dt)
    drift = max(abs(m - info["mass"][0]) for m in info["mass"])
    return drift, 1e-6, f"total-mass drift over [0, {t_end}]"


def _check_consistency(env: _Env) -> tuple:
    cfg = env.config
    R0 = cfg.initial_density()
    t_end = min(cfg.evolution.t_end, 0.1)
    out = consistency_check(
        R0,
        env.kernels,
        cfg.local(),
        t_end,
        cfg.evolution.dt,
        m_cluster=cfg.truncation.m_cluster,
    )
    detail = "per-order " + np.array2string(out["per_order"], precision=3)
    return out["max_rel"], 1e-3, detail


def _check_positivity_cone(env: _Env) -> tuple:
    cfg = env.config
    rng = _rng(env, 4)
    t = min(cfg.evolution.t_end, 0.4 * env.horizon)
    k0 = cfg.initial_correlation()
    k_t, _ = rk4_evolve(
        k0,
        env.kernels,
        env.sigma,
        t,
        cfg.evolution.dt,
        m_cluster=cfg.truncation.m_cluster,
    )
    k_norm = weighted_sup_norm(k_t, 0.0)
    worst = 0.0
    for _ in range(100):
        G = sample_k_positive_cone(rng, env.grid, min(cfg.truncation.n_max, 3))
        value = pairing(G, k_t)
        scale = max(weighted_l1_norm(G, 0.0) * k_norm, 1e-300)
        worst = max(worst, max(0.0, -value) / scale)
    return worst, 1e-8, f"100 cone draws against k at t={t:.4g}"


def _evolved_pair_value(env: _Env, G, k0, sigma: float, t: float) -> float:
    k_t, _ = rk4_evolve(
        k0,
        env.kernels,
        sigma,
        t,
        env.config.evolution.dt,
        m_cluster=env.config.truncation.m_cluster,
    )
    return pairing(G, k_t)


def _check_sigma_limit(env: _Env) -> tuple:
    cfg = env.config
    rng = _rng(env, 5)
    t = min(cfg.evolution.t_end, 0.4 * env.horizon)
    G = random_family(rng, env.grid, min(2, cfg.truncation.n_max))
    G = _mask_to_box(G, cfg.domain.lambda_box)
    k0 = cfg.initial_correlation()
    base = _evolved_pair_value(env, G, k0, 0.0, t)
    gaps = [
        abs(_evolved_pair_value(env, G, k0, s, t) - base) for s in (1.0, 0.3, 0.1, 0.03)
    ]
    slack = 1e-12 * max(1.0, gaps[0])
    increase = max(
        [b - a - slack for a, b in zip(gaps, gaps[1:])] + [0.0]
    )
    scale = max(abs(base), 1e-300)
    residual = max(gaps[-1] / scale, increase / scale)
    detail = f"gaps {['%.3e' % g for g in gaps]} vs pairing {base:.6g}"
    return residual, 1e-2, detail


def _check_lambda_n_limit(env: _Env) -> tuple:
    cfg = env.config
    rng = _rng(env, 6)
    grid = env.grid
    h = grid.h
    lo, hi = cfg.domain.lambda_box
    cells = int(round((hi - lo) / h))
    peel2 = min(2, max(0, (cells - 2) // 2))
    peel1 = min(1, peel2)
    boxes = [
        (lo + peel2 * h, hi - peel2 * h),
        (lo + peel1 * h, hi - peel1 * h),
        (lo, hi),
    ]
    n_cap = cfg.truncation.n_cap
    caps = [max(1, n_cap - 1), n_cap, n_cap + 1]
    t = min(cfg.evolution.t_end, 0.1)
    dt = cfg.evolution.dt

    R0 = cfg.initial_density()
    R_ref, _ = integrate_fp(R0, env.kernels, cfg.local(), t, dt)
    k_ref = density_to_correlation(R_ref)

    G = random_family(rng, grid, min(2, min(caps)))
    G = _mask_to_box(G, boxes[0])
    reference = pairing(G, k_ref)

    gaps = []
    for box, cap in zip(boxes, caps):
        R_loc = _truncate_orders(project_density(R0, box), min(cap, R0.n_max))
        local = LocalSpec(lambda_box=box, n_cap=R_loc.n_max, sigma=env.sigma)
        R_t, _ = integrate_fp(R_loc, env.kernels, local, t, dt)
        k_loc = density_to_correlation(R_t)
        value = pairing(restrict_correlation(G, box), k_loc)
        gaps.append(abs(value - reference))
    slack = 1e-12 * max(1.0, gaps[0])
    residual = max([b - a - slack for a, b in zip(gaps, gaps[1:])] + [0.0])
    detail = (
        f"gaps {['%.3e' % g for g in gaps]} for boxes {boxes} and caps {caps}"
    )
    return residual, 1e-9, detail


def _check_dyson_bound(env: _Env) -> tuple:
    cfg = env.config
    T = env.horizon
    if cfg.evolution.t_end >= T:
        raise HorizonExceededError(
            f"evolution.t_end={cfg.evolution.t_end} is not below the horizon {T:.6g}"
        )
    spec = cfg.dyson_spec()
    q = spec.scale.q
    t = min(cfg.evolution.t_end, 0.8 * T / q if math.isfinite(T) else cfg.evolution.t_end)
    k0 = cfg.initial_correlation()
    _, terms = dyson_evolve(
        k0, env.kernels, env.sigma, spec, t, return_terms=True, constants=env.constants
    )
    alpha_star = spec.scale.alpha_star
    ratios, lines = [], []
    for n in range(1, len(terms)):
        norm = weighted_sup_norm(terms[n], alpha_star)
        bound = truncation_bound(n, t, spec.scale, env.constants)
        if bound == 0.0:
            ratio = 0.0 if norm <= 1e-15 else math.inf
        else:
            ratio = norm / bound
        ratios.append(ratio)
        lines.append(f"n={n}: norm {norm:.3e} bound {bound:.3e}")
    residual = max(ratios) if ratios else 0.0
    detail = f"t={t:.4g}, horizon {T:.6g}; " + "; ".join(lines)
    return residual, 1.0 + 1e-9, detail


_CHECK_FUNCS = {
    "consistency": _check_consistency,
    "duality": _check_duality,
    "dyson_bound": _check_dyson_bound,
    "kernel_constants": _check_kernel_constants,
    "lambda_n_limit": _check_lambda_n_limit,
    "mass": _check_mass,
    "minlos1": _check_minlos1,
    "minlos2": _check_minlos2,
    "positivity_cone": _check_positivity_cone,
    "sigma_limit": _check_sigma_limit,
}


def _run_one(name: str, env: _Env) -> CheckResult:
    start = time.perf_counter()
    try:
        residual, tolerance, detail = _CHECK_FUNCS[name](env)
        passed = residual <= tolerance
    except Exception as exc:  # a failing check must not kill the report
        residual, tolerance = _HUGE, 0.0
        passed = False
        detail = f"{type(exc).__name__}: {exc}"
    seconds = time.perf_counter() - start
    residual = min(float(residual), _HUGE)
    return CheckResult(
        name=name,
        residual=residual,
        tolerance=float(tolerance),
        passed=bool(passed),
        seconds=seconds,
        detail=detail,
    )


def run_validation(
    config: RunConfig,
    threads: int = 1,
    check_names: Optional[Sequence[str]] = None,
) -> ValidationReport:
    """Run the named checks and assemble the report ordered by check name."""
    names = tuple(check_names) if check_names is not None else CHECK_NAMES
    unknown = set(names) - set(CHECK_NAMES)
    if unknown:
        raise ValueError(f"unknown check names: {sorted(unknown)}")
    names = tuple(sorted(names))
    env = _Env(
        config=config,
        kernels=config.kernels(),
        grid=config.grid(),
        constants=config.constants(),
        scale=config.scale_params(),
        sigma=config.model.sigma,
        horizon=config.scale_params().horizon(config.constants()),
    )
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda n: _run_one(n, env), names))
    else:
        results = [_run_one(n, env) for n in names]
    results.sort(key=lambda r: r.name)
    return ValidationReport(
        checks=tuple(results),
        config_hash=config_hash(config),
        passed=all(r.passed for r in results),
    )
