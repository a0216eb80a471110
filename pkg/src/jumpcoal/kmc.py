"""Exact event-driven simulation of the jump-coalescence dynamics.

Trajectories are simulated without time discretization: waiting times are
exponential in the total event rate, coalescence pairs are picked by their
exact tapered rates (closed form for the built-in kernel family), and jumps
use rejection from the free jump law, with the taper times the repulsion of
the other particles as the acceptance probability. Rejected proposals are
null events that still advance time, which is what keeps the scheme exact.

Ensembles are reproducible: one master seed spawns one child stream per
trajectory, and reductions run in trajectory order, so results are
identical for any thread count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import UnsupportedSamplingError
from .kernels import (
    KernelSet,
    coalescence_rate,
    coalescence_target_law,
    gaussian_taper,
)

__all__ = [
    "SimState",
    "Event",
    "InitialState",
    "EnsembleSpec",
    "sample_poisson_configuration",
    "total_rates",
    "step",
    "run_trajectory",
    "run_ensemble",
    "CorrelationEstimate",
    "estimate_correlations",
    "count_distribution",
]


@dataclass(frozen=True)
class Event:
    """One realized transition: a merge or an accepted jump."""

    kind: str
    t: float
    x: np.ndarray
    y: np.ndarray
    z: Optional[np.ndarray] = None


@dataclass
class SimState:
    """Mutable simulation state with a cached pair-rate matrix."""

    positions: np.ndarray
    t: float
    rng: np.random.Generator
    sigma: float
    _rates: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim == 0:
            pos = pos.reshape(1, 1)
        elif pos.ndim == 1:
            pos = pos.reshape(-1, 1)
        if pos.ndim != 2:
            raise ValueError(f"positions must be (n, d), got shape {pos.shape}")
        self.positions = pos.copy()

    def pair_rates(self, kernels: KernelSet) -> np.ndarray:
        """Symmetric matrix of tapered pair rates, maintained incrementally."""
        n = self.positions.shape[0]
        if self._rates is None or self._rates.shape != (n, n):
            rates = np.zeros((n, n))
            if n >= 2:
                iu, ju = np.triu_indices(n, k=1)
                vals = coalescence_rate(self.positions[iu], self.positions[ju], kernels, self.sigma)
                rates[iu, ju] = vals
                rates[ju, iu] = vals
            self._rates = rates
        return self._rates

    def _refresh_row(self, kernels: KernelSet, i: int):
        n = self.positions.shape[0]
        others = np.arange(n) != i
        if others.any():
            vals = np.atleast_1d(
                coalescence_rate(
                    self.positions[others], self.positions[i][None, :], kernels, self.sigma
                )
            )
        else:
            vals = np.zeros(0)
        row = np.zeros(n)
        row[others] = vals
        self._rates[i, :] = row
        self._rates[:, i] = row

    def apply_jump(self, kernels: KernelSet, i: int, target: np.ndarray):
        self.positions[i] = target
        if self._rates is not None:
            self._refresh_row(kernels, i)

    def apply_coalescence(self, kernels: KernelSet, i: int, j: int, child: np.ndarray):
        keep = [p for p in range(self.positions.shape[0]) if p not in (i, j)]
        self.positions = np.vstack([self.positions[keep], child[None, :]])
        if self._rates is not None:
            self._rates = self._rates[np.ix_(keep, keep)]
            n = self.positions.shape[0]
            rates = np.zeros((n, n))
            rates[: n - 1, : n - 1] = self._rates
            self._rates = rates
            self._refresh_row(kernels, n - 1)


@dataclass(frozen=True)
class InitialState:
    """Either a Poisson draw (rho, box) or explicit positions."""

    kind: str
    rho: Optional[float] = None
    box: Optional[tuple] = None
    positions: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in ("poisson", "explicit"):
            raise ValueError(f"unknown initial state kind {self.kind!r}")
        if self.kind == "poisson" and (self.rho is None or self.box is None):
            raise ValueError("poisson initial state needs rho and box")
        if self.kind == "explicit" and self.positions is None:
            raise ValueError("explicit initial state needs positions")


@dataclass(frozen=True)
class EnsembleSpec:
    """Trajectory count, time span, snapshots, seeding, and initial law."""

    n_traj: int
    t_end: float
    snapshot_times: tuple
    master_seed: int
    initial: InitialState

    def __post_init__(self):
        if self.n_traj < 1:
            raise ValueError("need at least one trajectory")
        if self.t_end < 0:
            raise ValueError("t_end must be nonnegative")
        snaps = tuple(float(s) for s in self.snapshot_times)
        if any(b < a for a, b in zip(snaps, snaps[1:])):
            raise ValueError("snapshot_times must be sorted")
        if any(not 0.0 <= s <= self.t_end for s in snaps):
            raise ValueError("snapshot_times must lie in [0, t_end]")


def sample_poisson_configuration(
    rng: np.random.Generator, rho: float, box: tuple, d: int = 1
) -> np.ndarray:
    """Draw a homogeneous Poisson configuration with intensity rho in a box."""
    lo, hi = float(box[0]), float(box[1])
    volume = (hi - lo) ** d
    n = rng.poisson(rho * volume)
    return rng.uniform(lo, hi, size=(n, d))


def total_rates(state: SimState, kernels: KernelSet) -> tuple[dict, float]:
    """Tapered pair rates by index pair, plus the jump-proposal bound.

    The bound is the particle count times the total jump kernel mass; the
    actual jump rate is recovered by rejection inside step().
    """
    if not kernels.is_gaussian:
        raise UnsupportedSamplingError("event-driven simulation requires the gaussian family")
    rates = state.pair_rates(kernels)
    n = state.positions.shape[0]
    pair_dict = {
        (i, j): float(rates[i, j]) for i in range(n) for j in range(i + 1, n)
    }
    return pair_dict, n * kernels.params.kappa2


def step(state: SimState, kernels: KernelSet) -> Optional[Event]:
    """Advance to the next proposed event; apply it if accepted.

    Draws the exponential waiting time for the combined rate of all pair
    merges plus the jump-proposal bound, then picks the channel. A merge is
    always accepted and samples its child from the tilted Gaussian law. A
    jump proposes a free-kernel displacement and accepts with the taper
    times the repulsion of the other particles; rejections return None with
    time already advanced. When no clocks are active (no particles, or a
    lone particle with the jump channel switched off) the waiting time is
    infinite: the state is absorbing, time is set to inf, and None is
    returned.
    """
    if not kernels.is_gaussian:
        raise UnsupportedSamplingError("event-driven simulation requires the gaussian family")
    n = state.positions.shape[0]
    if n == 0:
        state.t = math.inf
        return None
    rng = state.rng
    rates = state.pair_rates(kernels)
    coal_total = 0.5 * float(np.sum(rates))
    jump_bound = n * kernels.params.kappa2
    total = coal_total + jump_bound
    if total <= 0:
        state.t = math.inf
        return None

    state.t += rng.exponential(1.0 / total)

    if rng.uniform() * total < coal_total:
        iu, ju = np.triu_indices(n, k=1)
        vals = rates[iu, ju]
        pick = rng.choice(vals.size, p=vals / vals.sum())
        i, j = int(iu[pick]), int(ju[pick])
        xi, xj = state.positions[i].copy(), state.positions[j].copy()
        mean, std = coalescence_target_law(xi, xj, kernels, state.sigma)
        child = np.asarray(mean).reshape(-1) + std * rng.standard_normal(kernels.d)
        state.apply_coalescence(kernels, i, j, child)
        return Event(kind="coalesce", t=state.t, x=xi, y=xj, z=child)

    i = int(rng.integers(n))
    xi = state.positions[i].copy()
    target = xi + kernels.params.s3 * rng.standard_normal(kernels.d)
    accept = float(gaussian_taper(target, state.sigma, kernels.d))
    others = np.delete(state.positions, i, axis=0)
    if others.size:
        accept *= float(np.prod(np.exp(-np.asarray(kernels.phi(target[None, :] - others)))))
    if accept > 1.0 + 1e-12:
        raise RuntimeError(f"thinning acceptance {accept} above one; rates are inconsistent")
    if rng.uniform() < accept:
        state.apply_jump(kernels, i, target)
        return Event(kind="jump", t=state.t, x=xi, y=target.copy())
    return None


def run_trajectory(
    initial_positions: np.ndarray,
    kernels: KernelSet,
    sigma: float,
    t_end: float,
    snapshot_times: Sequence[float],
    seed,
) -> dict:
    """Simulate one trajectory; returns snapshots, events, final positions.

    Snapshot times get the configuration in force at that instant; the
    particle count is non-increasing in time.
    """
    rng = np.random.default_rng(seed)
    d = kernels.d
    pos = np.asarray(initial_positions, dtype=float).reshape(-1, d)
    state = SimState(positions=pos.copy(), t=0.0, rng=rng, sigma=sigma)
    pending = sorted(float(s) for s in snapshot_times)
    for s in pending:
        if not 0.0 <= s <= t_end:
            raise ValueError(f"snapshot time {s} outside [0, {t_end}]")
    snaps = {}
    events = []
    idx = 0
    while True:
        if state.positions.shape[0] == 0:
            break
        pos_before = state.positions.copy()
        ev = step(state, kernels)
        # times strictly before the transition see the previous configuration
        while idx < len(pending) and pending[idx] < min(state.t, t_end):
            snaps[pending[idx]] = pos_before.copy()
            idx += 1
        if state.t >= t_end:
            state.positions = pos_before
            state.t = t_end
            break
        if ev is not None:
            events.append(ev)
    while idx < len(pending):
        snaps[pending[idx]] = state.positions.copy()
        idx += 1
    return {"snapshots": snaps, "events": events, "final": state.positions.copy()}


def run_ensemble(
    spec: EnsembleSpec, kernels: KernelSet, sigma: float, threads: int = 1
) -> list:
    """Run independent trajectories with spawned seeds; ordered results.

    The trajectory list is indexed by trajectory number whatever the thread
    count, and each trajectory's randomness (including its Poisson initial
    draw) comes only from its own spawned stream, so outputs are
    reproducible bit for bit.
    """
    ss = np.random.SeedSequence(spec.master_seed)
    children = ss.spawn(spec.n_traj)

    def one(i: int) -> dict:
        child_rng = np.random.default_rng(children[i])
        if spec.initial.kind == "poisson":
            init = sample_poisson_configuration(
                child_rng, spec.initial.rho, spec.initial.box, kernels.d
            )
        else:
            init = np.asarray(spec.initial.positions, dtype=float).reshape(-1, kernels.d)
        return run_trajectory(
            init, kernels, sigma, spec.t_end, spec.snapshot_times, child_rng
        )

    if threads <= 1:
        return [one(i) for i in range(spec.n_traj)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, range(spec.n_traj)))


@dataclass(frozen=True)
class CorrelationEstimate:
    """Binned one- and two-point estimates with their standard errors."""

    bin_edges: np.ndarray
    k1: np.ndarray
    k1_se: np.ndarray
    k2: np.ndarray
    k2_se: np.ndarray
    n_traj: int


def estimate_correlations(configs: Sequence[np.ndarray], bins: np.ndarray) -> CorrelationEstimate:
    """Binned one- and two-point correlation estimates with standard errors.

    configs is one configuration per trajectory (d = 1). The one-point
    estimate divides bin counts by bin width; the two-point estimate uses
    ordered pair counts, subtracting the diagonal self-pairs, divided by
    the width product. Standard errors come from the spread across
    trajectories; an empty ensemble gives all-zero estimates.
    """
    edges = np.asarray(bins, dtype=float)
    nb = edges.size - 1
    widths = np.diff(edges)
    n_traj = len(configs)
    if n_traj == 0:
        zero1, zero2 = np.zeros(nb), np.zeros((nb, nb))
        return CorrelationEstimate(edges, zero1, zero1.copy(), zero2, zero2.copy(), 0)
    k1_samples = np.zeros((n_traj, nb))
    k2_samples = np.zeros((n_traj, nb, nb))
    for t, cfg in enumerate(configs):
        x = np.asarray(cfg, dtype=float).reshape(-1)
        counts, _ = np.histogram(x, edges)
        k1_samples[t] = counts / widths
        pair = np.outer(counts, counts) - np.diag(counts)
        k2_samples[t] = pair / np.outer(widths, widths)
    k1 = k1_samples.mean(axis=0)
    k2 = k2_samples.mean(axis=0)
    k1_se = k1_samples.std(axis=0, ddof=1) / math.sqrt(n_traj) if n_traj > 1 else np.zeros(nb)
    k2_se = (
        k2_samples.std(axis=0, ddof=1) / math.sqrt(n_traj)
        if n_traj > 1
        else np.zeros((nb, nb))
    )
    return CorrelationEstimate(edges, k1, k1_se, k2, k2_se, n_traj)


def _n_points(cfg) -> int:
    arr = np.asarray(cfg)
    return arr.shape[0] if arr.ndim == 2 else arr.reshape(-1).size


def count_distribution(configs: Sequence[np.ndarray], n_max: Optional[int] = None) -> dict:
    """Empirical particle-count distribution with binomial standard errors."""
    counts = np.array([_n_points(c) for c in configs], dtype=int)
    n_traj = counts.size
    if n_max is None:
        top = int(counts.max()) if n_traj else 0
    else:
        top = int(n_max)
    pmf = np.zeros(top + 1)
    if n_traj == 0:
        return {"pmf": pmf, "se": pmf.copy(), "n_traj": 0}
    for c in counts:
        if c <= top:
            pmf[c] += 1.0
    pmf /= n_traj
    se = np.sqrt(pmf * (1.0 - pmf) / n_traj)
    return {"pmf": pmf, "se": se, "n_traj": n_traj}
