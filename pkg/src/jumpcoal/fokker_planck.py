"""Finite-volume evolution of configuration densities.

Inside a bounded box with a particle-count cap, the state of the dynamics
is an ordinary density over configurations: one symmetric tensor per count.
Coalescence only lowers the count, so a cap respected by the initial state
is respected forever and the capped evolution is closed, not truncated.
The adjoint relation with the correlation-side generator holds exactly on
the grid, which makes mass conservation and the correlation consistency
checks sharp.

The taper strength sigma must be positive here: it is what keeps jump
targets inside the modeled region with controllable leakage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .configspace import GridSpec, SymmetricGridFamily, lp_integral
from .errors import ConfigError
from .gridkernels import kernel_tables
from .kernels import (
    KernelSet,
    gaussian_taper,
    jump_weight_integral,
    total_coalescence_rate,
)
from .tensorops import broadcast_into_slots, gather_slot_diagonal, spread_last_axis

__all__ = [
    "LocalSpec",
    "poisson_density",
    "project_density",
    "restrict_correlation",
    "density_to_correlation",
    "count_marginal",
    "loss_rate_split",
    "density_generator",
    "observable_generator",
    "integrate_fp",
    "consistency_check",
    "consistency_residuals",
]


@dataclass(frozen=True)
class LocalSpec:
    """Box, count cap, and taper strength of a finite-volume run."""

    lambda_box: tuple
    n_cap: int
    sigma: float

    def __post_init__(self):
        lo, hi = self.lambda_box
        if not hi > lo:
            raise ConfigError("lambda_box must satisfy low < high")
        if self.n_cap < 0:
            raise ConfigError("n_cap must be nonnegative")
        if not self.sigma > 0:
            raise ConfigError("finite-volume runs need a positive taper strength sigma")


def poisson_density(grid: GridSpec, rho, lambda_box: tuple, n_cap: int) -> SymmetricGridFamily:
    """Poisson density of intensity rho on a sub-box, truncated at n_cap.

    rho may be a constant, a callable evaluated at cell midpoints, or an
    array of per-cell values. The truncation simply drops counts above the
    cap; the family is not renormalized, so its total mass is the Poisson
    probability of at most n_cap points in the box (with the intensity
    integral taken cell by cell).
    """
    lo, hi = float(lambda_box[0]), float(lambda_box[1])
    if not hi > lo:
        raise ValueError("lambda_box must satisfy low < high")
    pts = grid.points
    inside = np.all((pts >= lo) & (pts < hi), axis=-1)
    if callable(rho):
        field = np.asarray([float(rho(p)) for p in pts])
    else:
        field = np.asarray(rho, dtype=float)
        if field.ndim == 0:
            field = np.full(grid.n_cells, float(field))
        elif field.shape != (grid.n_cells,):
            raise ValueError("rho array must have one value per grid cell")
    if np.any(field < 0):
        raise ValueError("rho must be nonnegative")
    intensity = np.where(inside, field, 0.0)
    norm = math.exp(-grid.cell_volume * float(np.sum(intensity)))
    comps = [np.asarray(norm)]
    for n in range(1, n_cap + 1):
        prod = np.full((grid.n_cells,) * n, norm)
        for ax in range(n):
            prod = prod * broadcast_into_slots(intensity, (ax,), n, grid.n_cells)
        comps.append(prod)
    return SymmetricGridFamily(grid, comps, check_symmetry=False)


def _region_cells(grid: GridSpec, region: tuple) -> np.ndarray:
    lo, hi = float(region[0]), float(region[1])
    pts = grid.points
    return np.where(np.all((pts >= lo) & (pts < hi), axis=-1))[0]


def project_density(R: SymmetricGridFamily, region: tuple) -> SymmetricGridFamily:
    """Law of the configuration restricted to a sub-box.

    Marginalizes out every particle in cells outside the region and slices
    the tensors to the region's cells. For d = 1 the region must align with
    whole grid cells; the result lives on the sub-grid over the region.
    """
    grid = R.grid
    if grid.d != 1:
        raise ValueError("density projection is implemented for d=1 grids")
    lo, hi = float(region[0]), float(region[1])
    h = grid.h
    for edge in (lo, hi):
        steps = (edge - grid.low) / h
        if abs(steps - round(steps)) > 1e-9:
            raise ValueError(f"region edge {edge} does not align with the grid cells")
    inside_idx = _region_cells(grid, region)
    if inside_idx.size == 0:
        raise ValueError("region contains no grid cells")
    outside = np.ones(grid.n_cells)
    outside[inside_idx] = 0.0
    w = grid.cell_volume
    N = R.n_max

    sub_grid = GridSpec(low=lo, high=hi, m=inside_idx.size, d=1)
    comps = []
    for n in range(N + 1):
        total = np.zeros((grid.n_cells,) * n) if n else np.zeros(())
        fact = 1.0
        for j in range(0, N - n + 1):
            if j:
                fact *= j
            sub = R.comps[n + j]
            for _ in range(j):
                sub = np.tensordot(sub, outside, axes=([-1], [0]))
            total = total + (w**j / fact) * sub
        if n:
            total = total[np.ix_(*([inside_idx] * n))]
        comps.append(total)
    return SymmetricGridFamily(sub_grid, comps, check_symmetry=False)


def restrict_correlation(k: SymmetricGridFamily, region: tuple) -> SymmetricGridFamily:
    """Slice a correlation family to the cells of a sub-box (d = 1).

    Correlation functions restrict by plain evaluation, no marginalization.
    """
    grid = k.grid
    if grid.d != 1:
        raise ValueError("restriction is implemented for d=1 grids")
    inside_idx = _region_cells(grid, region)
    if inside_idx.size == 0:
        raise ValueError("region contains no grid cells")
    lo, hi = float(region[0]), float(region[1])
    sub_grid = GridSpec(low=lo, high=hi, m=inside_idx.size, d=1)
    comps = [np.asarray(float(k.comps[0]))]
    for n in range(1, k.n_max + 1):
        comps.append(k.comps[n][np.ix_(*([inside_idx] * n))])
    return SymmetricGridFamily(sub_grid, comps, check_symmetry=False)


def density_to_correlation(R: SymmetricGridFamily) -> SymmetricGridFamily:
    """Correlation family of a density: augment by all extra particles.

    Order n sums the density over every way of adding j more particles,
    weighted by cell volume to the j over j factorial. Exact on the grid.
    """
    w = R.grid.cell_volume
    N = R.n_max
    ones = np.ones(R.grid.n_cells)
    comps = []
    for n in range(N + 1):
        total = np.zeros((R.grid.n_cells,) * n) if n else np.zeros(())
        fact = 1.0
        for j in range(0, N - n + 1):
            if j:
                fact *= j
            sub = R.comps[n + j]
            for _ in range(j):
                sub = np.tensordot(sub, ones, axes=([-1], [0]))
            total = total + (w**j / fact) * sub
        comps.append(total)
    return SymmetricGridFamily(R.grid, comps, check_symmetry=False)


def count_marginal(R: SymmetricGridFamily) -> np.ndarray:
    """Probability of each particle count under a configuration density."""
    w = R.grid.cell_volume
    out = np.empty(R.n_max + 1)
    out[0] = float(R.comps[0])
    for n in range(1, R.n_max + 1):
        out[n] = (w**n / math.factorial(n)) * float(np.sum(R.comps[n]))
    return out


def loss_rate_split(
    positions,
    kernels: KernelSet,
    sigma: float,
    grid: Optional[GridSpec] = None,
) -> tuple[float, float]:
    """Total loss rate of a configuration, split by mechanism.

    Returns (coalescence part, jump part) for actual particle positions.
    The coalescence part is the tapered pair-rate sum; the jump part
    integrates the tapered jump kernel times the repulsion of the others.
    With a grid the jump integral is the cell sum used by the finite-volume
    generator; without one it falls back to adaptive quadrature (d = 1),
    which serves as an independent oracle for the grid path.
    """
    pts = np.asarray(positions, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    n = pts.shape[0]
    e1 = total_coalescence_rate(pts, kernels, sigma)
    if n == 0:
        return 0.0, 0.0

    if grid is not None:
        y = grid.points
        taper = gaussian_taper(y, sigma, grid.d)
        e2 = 0.0
        for p in range(n):
            c2v = np.asarray(kernels.c2(pts[p][None, :] - y), dtype=float)
            rep = np.ones(grid.n_cells)
            for u in range(n):
                if u == p:
                    continue
                rep *= np.exp(-np.asarray(kernels.phi(y - pts[u][None, :]), dtype=float))
            e2 += grid.cell_volume * float(np.sum(taper * c2v * rep))
        return float(e1), float(e2)

    if kernels.d != 1:
        raise ValueError("quadrature loss rates are implemented for d=1 only")
    from scipy import integrate

    span = 12.0 * (kernels.params.s3 if kernels.is_gaussian else 1.0)
    if kernels.integration_box is not None:
        lo_box, hi_box = kernels.integration_box
    else:
        lo_box = float(np.min(pts)) - span
        hi_box = float(np.max(pts)) + span
    e2 = 0.0
    for p in range(n):
        others = np.delete(pts, p, axis=0)

        def integrand(yv, xp=pts[p, 0], rest=others[:, 0]):
            rep = float(np.prod(np.exp(-np.asarray(kernels.phi(yv - rest)))))
            return math.exp(-sigma * yv * yv) * float(kernels.c2(xp - yv)) * rep

        val, _ = integrate.quad(integrand, lo_box, hi_box, limit=200)
        e2 += val
    return float(e1), float(e2)


def density_generator(
    R: SymmetricGridFamily, kernels: KernelSet, sigma: float
) -> SymmetricGridFamily:
    """Forward generator for configuration densities on the grid.

    Each count n gains mass from coalescence at count n + 1 (a pair merges
    onto one slot) and from jumps at the same count (the landing slot is in
    the configuration, the origin is summed out), and loses mass at the
    configuration's own total event rate. The empty configuration only
    gains. Exactly adjoint to the observable-side generator under the
    configuration integral, so total mass is conserved to rounding.
    """
    grid = R.grid
    T = kernel_tables(kernels, grid, sigma)
    M = grid.n_cells
    w = T.w
    N = R.n_max
    psi = T.taper
    A = psi[:, None, None] * T.c1t
    repT = T.rep.T
    c2_over_rep = T.c2mat / repT

    out = []
    for n in range(N + 1):
        acc = np.zeros((M,) * n) if n else np.zeros(())

        # coalescence gain: a pair at count n + 1 merges onto one slot, so
        # the empty configuration (no slots) never gains
        if n and n + 1 <= N:
            gain = 0.5 * w * w * np.einsum("...xy,zxy->...z", R.comps[n + 1], A, optimize=True)
            acc = acc + spread_last_axis(gain)

        if n:
            kn = R.comps[n]

            # jump gain: the landing site is a slot, the origin is summed out
            X = w * np.einsum("...x,xy->...y", kn, T.c2mat, optimize=True)
            X = X * psi
            for a in range(n - 1):
                X = X * broadcast_into_slots(repT, (a, n - 1), n, M)
            acc = acc + spread_last_axis(X)

            # loss at the configuration's total rate, both mechanisms
            acc = acc - T.pair_rate_field(n) * kn

            rep_all = np.ones((M,) * (n + 1))
            for a in range(n):
                rep_all *= broadcast_into_slots(repT, (a, n), n + 1, M)
            origin = np.zeros((M,) * (n + 1))
            for p in range(n):
                origin += broadcast_into_slots(c2_over_rep, (p, n), n + 1, M)
            e2_field = w * np.einsum("...y,y->...", rep_all * origin, psi, optimize=True)
            acc = acc - e2_field * kn

        out.append(acc if n else np.asarray(float(acc)))
    return SymmetricGridFamily(grid, out, check_symmetry=False)


def observable_generator(
    F: SymmetricGridFamily, kernels: KernelSet, sigma: float
) -> SymmetricGridFamily:
    """Generator on observables, by direct enumeration over configurations.

    For every configuration (multiset of cells) this sums, over each
    unordered pair, the tapered merge rate times the observable change, and
    over each particle, the tapered repelled jump rate times the change.
    Deliberately written with plain loops and no shared tensor machinery:
    it is the independent route for adjointness checks against the density
    generator, so it must not reuse that code path.
    """
    grid = F.grid
    if F.n_max < 0:
        raise ValueError("family must have at least order 0")
    pts = grid.points
    M = grid.n_cells
    w = grid.cell_volume
    taper = np.asarray(gaussian_taper(pts, sigma, grid.d), dtype=float)

    out = [np.zeros((M,) * n) if n else np.zeros(()) for n in range(F.n_max + 1)]
    import itertools as _it

    for n in range(1, F.n_max + 1):
        res = out[n]
        for eta in _it.product(range(M), repeat=n):
            f_here = F.value_at(eta)
            total = 0.0
            # pair merges
            for p in range(n):
                for q in range(p + 1, n):
                    rest = tuple(eta[i] for i in range(n) if i != p and i != q)
                    for z in range(M):
                        rate = w * taper[z] * float(
                            kernels.c1(pts[eta[p]], pts[eta[q]], pts[z])
                        )
                        if rate == 0.0:
                            continue
                        total += rate * (F.value_at(rest + (z,)) - f_here)
            # single-particle jumps
            for p in range(n):
                rest = tuple(eta[i] for i in range(n) if i != p)
                for y in range(M):
                    rep = 1.0
                    for u in rest:
                        rep *= math.exp(-float(kernels.phi(pts[y] - pts[u])))
                    rate = w * taper[y] * float(kernels.c2(pts[eta[p]] - pts[y])) * rep
                    if rate == 0.0:
                        continue
                    total += rate * (F.value_at(rest + (y,)) - f_here)
            res[eta] = total
    return SymmetricGridFamily(grid, out, check_symmetry=False)


def integrate_fp(
    R0: SymmetricGridFamily,
    kernels: KernelSet,
    local: LocalSpec,
    t_end: float,
    dt: float,
    snapshot_times: Sequence[float] = (),
) -> tuple[SymmetricGridFamily, dict]:
    """Integrate the density evolution with classical fourth-order steps.

    Returns (final density, info); info collects the mass and the most
    negative cell value after every recorded time, a one-off estimate of
    the jump-target probability leaking outside the box, and the requested
    snapshots. Mass stays constant to rounding; small negative values decay
    with dt and are reported, not clipped.
    """
    lo, hi = float(local.lambda_box[0]), float(local.lambda_box[1])
    g = R0.grid
    if lo < g.low - 1e-12 or hi > g.high + 1e-12:
        raise ValueError("the initial-support box must sit inside the density grid")
    if R0.n_max != local.n_cap:
        raise ValueError(f"density has n_max={R0.n_max}, the local cap is {local.n_cap}")
    if t_end < 0 or dt <= 0:
        raise ValueError("need t_end >= 0 and dt > 0")
    sigma = local.sigma

    snaps_wanted = sorted(set(float(s) for s in snapshot_times))
    for s in snaps_wanted:
        if not 0.0 <= s <= t_end:
            raise ValueError(f"snapshot time {s} outside [0, {t_end}]")

    # share of the free tapered jump law landing outside the grid cells,
    # worst case over origins
    leak = 0.0
    tbl = kernel_tables(kernels, g, sigma)
    for ix in range(g.n_cells):
        full = float(jump_weight_integral(g.points[ix], kernels, sigma))
        in_box = tbl.w * float(np.sum(tbl.taper * tbl.c2mat[ix, :]))
        if full > 0:
            leak = max(leak, (full - in_box) / full)

    def rhs(R):
        return density_generator(R, kernels, sigma)

    def min_value(R):
        vals = [float(R.comps[0])]
        for n in range(1, R.n_max + 1):
            if R.comps[n].size:
                vals.append(float(np.min(R.comps[n])))
        return min(vals)

    times = [0.0]
    masses = [lp_integral(R0)]
    minima = [min_value(R0)]
    snapshots = {}
    R = R0.copy()
    t = 0.0
    events = sorted(set(snaps_wanted) | {t_end})
    for ev in events:
        while t < ev - 1e-12 * max(1.0, t_end):
            step = min(dt, ev - t)
            k1 = rhs(R)
            k2 = rhs(R + (0.5 * step) * k1)
            k3 = rhs(R + (0.5 * step) * k2)
            k4 = rhs(R + step * k3)
            R = R + (step / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            t += step
        times.append(t)
        masses.append(lp_integral(R))
        minima.append(min_value(R))
        if ev in snaps_wanted:
            snapshots[ev] = R.copy()
    info = {
        "times": times,
        "mass": masses,
        "min_value": minima,
        "target_leakage": leak,
        "snapshots": snapshots,
    }
    return R, info


def consistency_check(
    R0: SymmetricGridFamily,
    kernels: KernelSet,
    local: LocalSpec,
    t_end: float,
    dt: float,
    m_cluster: Optional[int] = None,
) -> dict:
    """Evolve the same initial state along two independent routes and compare.

    Route one turns the initial density into correlation functions and runs
    the correlation-side stepper; route two runs the density stepper and
    converts at the end. The per-order relative sup distances between the
    results quantify how consistent the two descriptions are.
    """
    from .hierarchy import rk4_evolve

    k0 = density_to_correlation(R0)
    k_direct, _ = rk4_evolve(
        k0, kernels, local.sigma, t_end, dt, m_cluster=m_cluster
    )
    R_t, info = integrate_fp(R0, kernels, local, t_end, dt)
    k_via_density = density_to_correlation(R_t)
    residuals = consistency_residuals(k_direct, k_via_density)
    return {
        "per_order": residuals,
        "max_rel": float(np.max(residuals)),
        "mass_drift": abs(info["mass"][-1] - info["mass"][0]),
        "min_value": min(info["min_value"]),
        "correlation_route": k_direct,
        "density_route": k_via_density,
    }


def consistency_residuals(a: SymmetricGridFamily, b: SymmetricGridFamily) -> np.ndarray:
    """Per-order relative sup distance between two families.

    Order n contributes max |a - b| over entries divided by the larger of
    the two sup norms (or 1 when both vanish).
    """
    if a.grid != b.grid:
        raise ValueError("families live on different grids")
    n_top = min(a.n_max, b.n_max)
    out = np.empty(n_top + 1)
    for n in range(n_top + 1):
        diff = float(np.max(np.abs(a.comps[n] - b.comps[n]))) if n else abs(
            float(a.comps[0]) - float(b.comps[0])
        )
        scale = max(
            float(np.max(np.abs(a.comps[n]))) if n else abs(float(a.comps[0])),
            float(np.max(np.abs(b.comps[n]))) if n else abs(float(b.comps[0])),
            1e-300,
        )
        out[n] = diff / scale if scale > 1e-290 else 0.0
    return out
