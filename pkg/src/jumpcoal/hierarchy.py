"""Evolution of correlation families and their dual quasi-observables.

The jump-coalescence dynamics induces a lower-triangular-plus-one hierarchy
on correlation families: each order couples to the next order through the
coalescence gain and loss, and to all higher orders through the cluster
series of the jump repulsion. This module applies that generator on the
grid, applies its exact discrete adjoint on quasi-observables, and sums the
time-ordered perturbation series around the pure-loss part, whose terms obey
explicit scale-dependent bounds with a finite guaranteed horizon.

All operators here are built from one shared table of kernel values, so
adjointness and duality identities hold at rounding level on the grid.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .configspace import GridSpec, SymmetricGridFamily
from .errors import BlowUpError, HorizonExceededError, TruncationError
from .gridkernels import KernelTables, kernel_tables
from .kernels import (
    KernelConstants,
    KernelSet,
    ScaleParams,
    horizon,
    kernel_constants,
    scale_growth_rate,
    total_coalescence_rate,
)
from .tensorops import (
    broadcast_into_slots,
    gather_slot_diagonal,
    spread_last_axis,
    spread_last_pair,
)

__all__ = [
    "TruncationSpec",
    "DysonSpec",
    "correlation_generator",
    "quasi_observable_generator",
    "cluster_expansion",
    "rk4_evolve",
    "dyson_evolve",
    "dyson_evolve_dual",
    "truncation_bound",
    "series_tail_bound",
    "verify_operator_bounds",
    "total_coalescence_rate",
]

_SLOT_LETTERS = "abcdefghijkl"


@dataclass(frozen=True)
class TruncationSpec:
    """Order cap and grid for a truncated hierarchy run."""

    n_max: int
    grid: GridSpec
    m_cluster: Optional[int] = None

    def __post_init__(self):
        if self.n_max < 0:
            raise ValueError("n_max must be nonnegative")
        if self.m_cluster is not None and self.m_cluster < 0:
            raise ValueError("m_cluster must be nonnegative")


@dataclass(frozen=True)
class DysonSpec:
    """Depth and quadrature order for the time-ordered series."""

    scale: ScaleParams
    n_terms: int
    quad_order: int = 8

    def __post_init__(self):
        if not 0 <= self.n_terms <= 4:
            raise ValueError(
                "series depth must be between 0 and 4; cost grows as quad_order**depth"
            )
        if self.quad_order < 1:
            raise ValueError("quadrature order must be at least 1")


def _cluster_depth(n: int, n_max: int, m_cluster: Optional[int]) -> int:
    avail = n_max - n
    return avail if m_cluster is None else min(m_cluster, avail)


def _contract_cluster(B: np.ndarray, repm1: np.ndarray, j: int) -> np.ndarray:
    """Contract the last j axes of B against the cluster increment.

    Every contracted axis couples to one new shared axis (the landing
    point), which ends up last.
    """
    out = np.einsum("...u,yu->...y", B, repm1, optimize=True)
    for _ in range(j - 1):
        out = np.einsum("...uy,yu->...y", out, repm1, optimize=True)
    return out


def correlation_generator(
    k: SymmetricGridFamily,
    kernels: KernelSet,
    sigma: float = 0.0,
    m_cluster: Optional[int] = None,
) -> SymmetricGridFamily:
    """Apply the hierarchy generator to a correlation family.

    Order n of the result collects six contributions: the coalescence gain
    (a pair integrated out at order n + 1, landing on one slot), two
    symmetric coalescence losses against an integrated partner, the
    total-pair-rate loss on the configuration itself, and the jump gain and
    loss, each dressed by the cluster series of the repulsion over higher
    orders. Orders above k.n_max are treated as zero; ``m_cluster`` caps the
    cluster depth below that closure.

    The empty-configuration output is exactly zero: every mechanism needs
    at least one particle.
    """
    grid = k.grid
    T = kernel_tables(kernels, grid, sigma)
    M = grid.n_cells
    w = T.w
    N = k.n_max
    psi = T.taper
    A = psi[:, None, None] * T.c1t
    repT = T.rep.T
    c2_over_rep = T.c2mat / repT

    out = [np.zeros((M,) * n) for n in range(N + 1)]
    for n in range(1, N + 1):
        kn = k.comps[n]
        acc = np.zeros((M,) * n)

        if n + 1 <= N:
            gain = 0.5 * w * w * np.einsum("...xy,zxy->...z", k.comps[n + 1], A, optimize=True)
            acc += spread_last_axis(gain)

            Z = w * np.einsum("...v,pv->...p", k.comps[n + 1], T.pair_rate, optimize=True)
            for p in range(n):
                acc -= gather_slot_diagonal(Z, p)

        acc -= T.pair_rate_field(n) * kn

        jmax = _cluster_depth(n, N, m_cluster)

        # jump gain: the landing site is a slot, the origin is integrated;
        # axes of the cluster sum are (kept slots, origin, landing site)
        Qsum = np.zeros((M,) * (n + 1))
        Qsum += kn[..., None]
        fact = 1.0
        for j in range(1, jmax + 1):
            fact *= j
            Qsum += (w**j / fact) * _contract_cluster(k.comps[n + j], T.repm1, j)
        R = w * np.einsum("...xy,xy->...y", Qsum, T.c2mat, optimize=True)
        R = R * psi
        for a in range(n - 1):
            R = R * broadcast_into_slots(repT, (a, n - 1), n, M)
        acc += spread_last_axis(R)

        # jump loss: the origin is a slot, the landing site is integrated;
        # axes of the cluster sum are (all slots, landing site)
        Q0 = np.zeros((M,) * (n + 1))
        Q0 += kn[..., None]
        fact = 1.0
        for j in range(1, jmax + 1):
            fact *= j
            Q0 += (w**j / fact) * _contract_cluster(k.comps[n + j], T.repm1, j)
        for a in range(n):
            Q0 *= broadcast_into_slots(repT, (a, n), n + 1, M)
        origin_sum = np.zeros((M,) * (n + 1))
        for p in range(n):
            origin_sum += broadcast_into_slots(c2_over_rep, (p, n), n + 1, M)
        Q0 *= origin_sum
        acc -= w * np.einsum("...y,y->...", Q0, psi, optimize=True)

        out[n] = acc
    return SymmetricGridFamily(grid, out, check_symmetry=False)


def quasi_observable_generator(
    G: SymmetricGridFamily,
    kernels: KernelSet,
    sigma: float = 0.0,
    n_cap: Optional[int] = None,
    drop_loss_diagonal: bool = False,
) -> SymmetricGridFamily:
    """Apply the exact grid adjoint of the hierarchy generator.

    Acts on quasi-observables (subset-sum preimages of observables). The
    coalescence part reads one order down plus the diagonal; the jump part
    reads all orders up to the current one through explicit subset sums, so
    the operator is lower triangular in order. ``n_cap`` (default G.n_max)
    truncates the output; ``drop_loss_diagonal`` omits the multiplication
    by the total pair rate, leaving the off-diagonal interaction part used
    by the dual time-ordered series.
    """
    grid = G.grid
    T = kernel_tables(kernels, grid, sigma)
    M = grid.n_cells
    w = T.w
    psi = T.taper
    N_in = G.n_max
    n_cap = N_in if n_cap is None else n_cap
    if n_cap < 0:
        raise ValueError("n_cap must be nonnegative")
    A = psi[:, None, None] * T.c1t

    def comp(j: int) -> np.ndarray:
        if j <= N_in:
            return G.comps[j]
        return np.zeros((M,) * j)

    out = [np.zeros((M,) * n) for n in range(n_cap + 1)]
    for n in range(1, n_cap + 1):
        acc = np.zeros((M,) * n)
        letters = _SLOT_LETTERS[:n]

        if n >= 2:
            Gm1 = comp(n - 1)
            merged = w * np.einsum("...z,zab->...ab", Gm1, A, optimize=True)
            acc += spread_last_pair(merged)

            # losing one of the pair: the survivor's rate sums over the rest
            D = np.zeros((M,) * n)
            for a in range(n - 1):
                D += broadcast_into_slots(T.pair_rate, (a, n - 1), n, M)
            acc -= spread_last_axis(Gm1[..., None] * D)

        if not drop_loss_diagonal:
            acc -= T.pair_rate_field(n) * comp(n)

        # jump part: for each origin slot and each subset of the others,
        # the kept subset is repelled, the complement forms a cluster
        for p in range(n):
            others = [i for i in range(n) if i != p]
            for r in range(len(others) + 1):
                if r + 1 > N_in:
                    continue
                Gr = comp(r + 1)
                for S in itertools.combinations(others, r):
                    rest = [b for b in others if b not in S]
                    s_letters = "".join(letters[a] for a in S)
                    common = (
                        ["y" + letters[a] for a in S]
                        + ["y" + letters[b] for b in rest]
                        + [letters[p] + "y", "y"]
                    )
                    ops_common = (
                        [T.rep] * len(S) + [T.repm1] * len(rest) + [T.c2mat, psi]
                    )
                    sub1 = ",".join([s_letters + "y"] + common) + "->" + letters
                    term1 = np.einsum(sub1, Gr, *ops_common, optimize=True)
                    sub2 = ",".join([s_letters + letters[p]] + common) + "->" + letters
                    term2 = np.einsum(sub2, Gr, *ops_common, optimize=True)
                    acc += w * (term1 - term2)
        out[n] = acc
    return SymmetricGridFamily(grid, out, check_symmetry=False)


def cluster_expansion(
    k: SymmetricGridFamily,
    kernels: KernelSet,
    y_index: int,
    eta: Sequence[int],
    m_cluster: int,
) -> tuple[float, float]:
    """Repulsion cluster series of k around a landing cell, truncated.

    Computes the sum over added clusters of k(eta plus cluster) weighted by
    the product of repulsion increments toward the landing cell, up to
    ``m_cluster`` added particles. Returns (value, tail_bound) where the
    bound controls the dropped part of the series assuming entries beyond
    the stored orders stay below the largest stored entry.
    """
    eta = tuple(int(i) for i in eta)
    n = len(eta)
    if n + m_cluster > k.n_max:
        raise TruncationError(
            f"cluster depth {m_cluster} on a {n}-point configuration needs "
            f"orders up to {n + m_cluster}, but the family stops at {k.n_max}"
        )
    T = kernel_tables(kernels, k.grid, 0.0)
    w = T.w
    v = T.repm1[int(y_index)]

    value = k.value_at(eta)
    for j in range(1, m_cluster + 1):
        sub = k.comps[n + j][eta] if n else k.comps[j]
        for _ in range(j):
            sub = sub @ v
        value += (w**j / math.factorial(j)) * float(sub)

    s_mass = w * float(np.sum(np.abs(v)))
    k_sup = max(float(np.max(np.abs(c))) if c.size else 0.0 for c in k.comps)
    j1 = m_cluster + 1
    tail = k_sup * s_mass**j1 / math.factorial(j1) * math.exp(s_mass)
    return value, tail


def _psi_multiply(k: SymmetricGridFamily, T: KernelTables) -> SymmetricGridFamily:
    comps = [k.comps[n] * T.pair_rate_field(n) for n in range(k.n_max + 1)]
    return SymmetricGridFamily(k.grid, comps, check_symmetry=False)


def _loss_semigroup(k: SymmetricGridFamily, T: KernelTables, tau: float) -> SymmetricGridFamily:
    comps = [k.comps[n] * np.exp(-tau * T.pair_rate_field(n)) for n in range(k.n_max + 1)]
    return SymmetricGridFamily(k.grid, comps, check_symmetry=False)


def _check_finite(k: SymmetricGridFamily, t: float, horizon_time: Optional[float]):
    for arr in k.comps:
        if not np.all(np.isfinite(arr)):
            hint = (
                f"; the guaranteed horizon for the supplied scales is {horizon_time:.6g}"
                if horizon_time is not None
                else ""
            )
            raise BlowUpError(f"correlation family became non-finite near t={t:.6g}{hint}")


def rk4_evolve(
    k0: SymmetricGridFamily,
    kernels: KernelSet,
    sigma: float,
    t_end: float,
    dt: float,
    m_cluster: Optional[int] = None,
    scale: Optional[ScaleParams] = None,
    constants: Optional[KernelConstants] = None,
    snapshot_times: Sequence[float] = (),
) -> tuple[SymmetricGridFamily, dict]:
    """Integrate the truncated hierarchy with classical fourth-order steps.

    Returns (final family, snapshots) where snapshots maps each requested
    time to a copy of the family there. If a scale window is supplied the
    run warns when t_end reaches the guaranteed horizon, and a blow-up
    (non-finite values) raises with the horizon quoted.
    """
    if t_end < 0:
        raise ValueError("t_end must be nonnegative")
    if dt <= 0:
        raise ValueError("dt must be positive")
    horizon_time = None
    if scale is not None:
        c = constants if constants is not None else kernel_constants(kernels)
        horizon_time = scale.horizon(c)
        if t_end >= horizon_time:
            warnings.warn(
                f"t_end={t_end:.6g} meets or exceeds the guaranteed horizon "
                f"{horizon_time:.6g}; the truncated hierarchy may leave the bounded regime",
                stacklevel=2,
            )

    snaps_wanted = sorted(set(float(s) for s in snapshot_times))
    for s in snaps_wanted:
        if not 0.0 <= s <= t_end:
            raise ValueError(f"snapshot time {s} outside [0, {t_end}]")

    def rhs(k):
        return correlation_generator(k, kernels, sigma, m_cluster)

    snapshots = {}
    k = k0.copy()
    t = 0.0
    events = sorted(set(snaps_wanted) | {t_end})
    for ev in events:
        while t < ev - 1e-12 * max(1.0, t_end):
            step = min(dt, ev - t)
            k1 = rhs(k)
            k2 = rhs(k + (0.5 * step) * k1)
            k3 = rhs(k + (0.5 * step) * k2)
            k4 = rhs(k + step * k3)
            k = k + (step / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            t += step
        _check_finite(k, t, horizon_time)
        if ev in snaps_wanted:
            snapshots[ev] = k.copy()
    return k, snapshots


def dyson_evolve(
    k0: SymmetricGridFamily,
    kernels: KernelSet,
    sigma: float,
    spec: DysonSpec,
    t: float,
    return_terms: bool = False,
    constants: Optional[KernelConstants] = None,
):
    """Sum the time-ordered series around the pure-loss semigroup.

    Term n is an n-fold iterated integral, evaluated with nested
    Gauss-Legendre rules of the requested order. Requesting a time at or past
    the guaranteed horizon raises; a time whose inflated value q*t reaches
    the horizon only warns, since the term bounds then no longer sum.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    c = constants if constants is not None else kernel_constants(kernels)
    T_h = spec.scale.horizon(c)
    if t >= T_h:
        raise HorizonExceededError(
            f"requested time {t:.6g} is at or past the guaranteed horizon {T_h:.6g}"
        )
    if spec.scale.q * t >= T_h:
        warnings.warn(
            f"inflated time q*t={spec.scale.q * t:.6g} reaches the horizon "
            f"{T_h:.6g}; the series term bounds no longer sum",
            stacklevel=2,
        )
    tables = kernel_tables(kernels, k0.grid, sigma)
    nodes, wts = np.polynomial.legendre.leggauss(spec.quad_order)

    def apply_B(k):
        return correlation_generator(k, kernels, sigma) + _psi_multiply(k, tables)

    def term(j: int, s: float) -> SymmetricGridFamily:
        if j == 0:
            return _loss_semigroup(k0, tables, s)
        half = 0.5 * s
        acc = SymmetricGridFamily.zeros(k0.grid, k0.n_max)
        for xi, wi in zip(nodes, wts):
            u = half * (xi + 1.0)
            acc = acc + (half * wi) * _loss_semigroup(apply_B(term(j - 1, u)), tables, s - u)
        return acc

    terms = [term(j, t) for j in range(spec.n_terms + 1)]
    total = terms[0]
    for extra in terms[1:]:
        total = total + extra
    return (total, terms) if return_terms else total


def dyson_evolve_dual(
    G0: SymmetricGridFamily,
    kernels: KernelSet,
    sigma: float,
    spec: DysonSpec,
    t: float,
    n_cap: Optional[int] = None,
    return_terms: bool = False,
    constants: Optional[KernelConstants] = None,
):
    """Sum the adjoint time-ordered series acting on a quasi-observable.

    Uses the same nested quadrature tree as the forward series, so pairing
    the dual sum against the initial family reproduces pairing the initial
    observable against the forward sum at rounding level, term by term.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    c = constants if constants is not None else kernel_constants(kernels)
    T_h = spec.scale.horizon(c)
    if t >= T_h:
        raise HorizonExceededError(
            f"requested time {t:.6g} is at or past the guaranteed horizon {T_h:.6g}"
        )
    n_cap = G0.n_max if n_cap is None else n_cap
    tables = kernel_tables(kernels, G0.grid, sigma)
    nodes, wts = np.polynomial.legendre.leggauss(spec.quad_order)

    def apply_B_dual(Gf):
        return quasi_observable_generator(
            Gf, kernels, sigma, n_cap=n_cap, drop_loss_diagonal=True
        )

    def term(j: int, s: float, V: SymmetricGridFamily) -> SymmetricGridFamily:
        if j == 0:
            return _loss_semigroup(V, tables, s)
        half = 0.5 * s
        acc = SymmetricGridFamily.zeros(V.grid, V.n_max)
        for xi, wi in zip(nodes, wts):
            u = half * (xi + 1.0)
            acc = acc + (half * wi) * term(j - 1, u, apply_B_dual(_loss_semigroup(V, tables, s - u)))
        return acc

    terms = [term(j, t, G0) for j in range(spec.n_terms + 1)]
    total = terms[0]
    for extra in terms[1:]:
        total = total + extra
    return (total, terms) if return_terms else total


def truncation_bound(n: int, t: float, scale: ScaleParams, constants: KernelConstants) -> float:
    """Norm bound on the depth-n series term at time t.

    Valid between the scale endpoints: the term maps the stronger-norm
    space at the lower scale into the weaker one at the upper scale with
    norm at most (1/n!) (n/e)^n (q t / T)^n.
    """
    if n <= 0:
        raise ValueError("the bound applies to depth n >= 1")
    T_h = scale.horizon(constants)
    x = scale.q * t / T_h
    return (1.0 / math.factorial(n)) * (n / math.e) ** n * x**n


def series_tail_bound(
    n_terms: int, t: float, scale: ScaleParams, constants: KernelConstants
) -> tuple[float, bool]:
    """Bound on everything past depth n_terms, with a summability flag.

    Successive term bounds grow by at most the ratio x = q t / T, so for
    x < 1 the tail is dominated by a geometric series; otherwise the bound
    is infinite and the flag is False.
    """
    if n_terms < 0:
        raise ValueError("n_terms must be nonnegative")
    T_h = scale.horizon(constants)
    x = scale.q * t / T_h
    if x >= 1.0:
        return math.inf, False
    first = truncation_bound(n_terms + 1, t, scale, constants)
    return first / (1.0 - x), True


def verify_operator_bounds(
    k: SymmetricGridFamily,
    theta: float,
    theta_prime: float,
    kernels: KernelSet,
    sigma: float = 0.0,
) -> dict:
    """Measure the generator parts against their scale-jump norm bounds.

    Splits the generator into the diagonal loss (multiplication by the
    total pair rate) and the interaction remainder, applies both to k, and
    compares weighted sup norms between the scales: the loss part is bounded
    by 2 c1_max / (e^2 (theta' - theta)^2) and the interaction part by
    beta(theta) / (e (theta' - theta)), each times the norm of k at the
    lower scale.
    """
    if theta_prime <= theta:
        raise ValueError("theta_prime must exceed theta")
    from .configspace import weighted_sup_norm

    c = kernel_constants(kernels)
    T = kernel_tables(kernels, k.grid, sigma)
    delta = theta_prime - theta
    norm_in = weighted_sup_norm(k, theta)

    loss = -1.0 * _psi_multiply(k, T)
    loss_norm = weighted_sup_norm(loss, theta_prime)
    loss_bound = 2.0 * c.c1_max / (math.e**2 * delta**2) * norm_in

    inter = correlation_generator(k, kernels, sigma) + _psi_multiply(k, T)
    inter_norm = weighted_sup_norm(inter, theta_prime)
    inter_bound = scale_growth_rate(theta, c) / (math.e * delta) * norm_in

    return {
        "delta": delta,
        "input_norm": norm_in,
        "loss_part_norm": loss_norm,
        "loss_part_bound": loss_bound,
        "loss_part_ok": loss_norm <= loss_bound * (1.0 + 1e-12),
        "interaction_part_norm": inter_norm,
        "interaction_part_bound": inter_bound,
        "interaction_part_ok": inter_norm <= inter_bound * (1.0 + 1e-12),
    }
