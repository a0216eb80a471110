"""Run configuration: strict JSON schema, resolved defaults, and hashing.

A run is described by one nested JSON document. Parsing is strict: unknown
keys raise, values are type- and range-checked, and the result is a frozen
tree of sections. Every output artifact embeds the hash of the fully
resolved configuration so that results can be traced back to their inputs
and mismatched artifacts are refused at comparison time.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .configspace import GridSpec, SymmetricGridFamily, lp_integral, snap_to_grid
from .errors import ConfigError
from .fokker_planck import LocalSpec, density_to_correlation, poisson_density
from .hierarchy import DysonSpec
from .kernels import (
    KernelConstants,
    KernelSet,
    ScaleParams,
    gaussian_kernels,
    kernel_constants,
)

__all__ = [
    "ModelSection",
    "DomainSection",
    "TruncationSection",
    "DysonSection",
    "EvolutionSection",
    "ScaleSection",
    "EnsembleSection",
    "InitialSection",
    "RunConfig",
    "config_from_dict",
    "config_to_dict",
    "config_hash",
    "canonical_json",
    "load_config",
    "save_config",
    "default_config",
]


def _require_keys(section: str, data: dict, allowed) -> None:
    if not isinstance(data, dict):
        raise ConfigError(f"section '{section}' must be a JSON object")
    unknown = set(data) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in '{section}': {sorted(unknown)}")


def _number(section: str, key: str, value, default: float) -> float:
    if value is None:
        return float(default)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"'{section}.{key}' must be a number")
    return float(value)


def _integer(section: str, key: str, value, default: int) -> int:
    if value is None:
        return int(default)
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"'{section}.{key}' must be an integer")
    return int(value)


def _interval(section: str, key: str, value, default: tuple) -> tuple:
    if value is None:
        return (float(default[0]), float(default[1]))
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigError(f"'{section}.{key}' must be a [low, high] pair")
    lo, hi = float(value[0]), float(value[1])
    if not hi > lo:
        raise ConfigError(f"'{section}.{key}' needs low < high")
    return (lo, hi)


@dataclass(frozen=True)
class ModelSection:
    """Kernel family, its parameters, and the taper strength."""

    d: int = 1
    family: str = "gaussian"
    kappa1: float = 1.0
    s1: float = 0.3
    s2: float = 0.2
    kappa2: float = 1.0
    s3: float = 0.3
    amp: float = 1.0
    s4: float = 0.3
    sigma: float = 0.5

    @staticmethod
    def from_dict(data: dict) -> "ModelSection":
        _require_keys(
            "model",
            data,
            {"d", "family", "kappa1", "s1", "s2", "kappa2", "s3", "amp", "s4", "sigma"},
        )
        d = _integer("model", "d", data.get("d"), 1)
        if d < 1:
            raise ConfigError("'model.d' must be at least 1")
        family = data.get("family", "gaussian")
        if family != "gaussian":
            raise ConfigError(f"unsupported kernel family '{family}'")
        vals = {
            key: _number("model", key, data.get(key), getattr(ModelSection, key))
            for key in ("kappa1", "s1", "s2", "kappa2", "s3", "amp", "s4", "sigma")
        }
        if vals["sigma"] < 0:
            raise ConfigError("'model.sigma' must be nonnegative")
        for key in ("s1", "s2", "s3", "s4"):
            if vals[key] <= 0:
                raise ConfigError(f"'model.{key}' must be positive")
        for key in ("kappa1", "kappa2", "amp"):
            if vals[key] < 0:
                raise ConfigError(f"'model.{key}' must be nonnegative")
        return ModelSection(d=d, family=family, **vals)


@dataclass(frozen=True)
class DomainSection:
    """Computational box, its grid resolution, and the inner box."""

    lambda_c: tuple = (-0.5, 1.5)
    m: int = 12
    lambda_box: tuple = (0.0, 1.0)

    @staticmethod
    def from_dict(data: dict) -> "DomainSection":
        _require_keys("domain", data, {"lambda_c", "m", "lambda_box"})
        lambda_c = _interval("domain", "lambda_c", data.get("lambda_c"), (-0.5, 1.5))
        m = _integer("domain", "m", data.get("m"), 12)
        if m < 1:
            raise ConfigError("'domain.m' must be at least 1")
        lambda_box = _interval("domain", "lambda_box", data.get("lambda_box"), (0.0, 1.0))
        if lambda_box[0] < lambda_c[0] - 1e-12 or lambda_box[1] > lambda_c[1] + 1e-12:
            raise ConfigError("'domain.lambda_box' must sit inside 'domain.lambda_c'")
        h = (lambda_c[1] - lambda_c[0]) / m
        for edge in lambda_box:
            ratio = (edge - lambda_c[0]) / h
            if abs(ratio - round(ratio)) > 1e-9:
                raise ConfigError(
                    "'domain.lambda_box' edges must align with whole grid cells"
                )
        return DomainSection(lambda_c=lambda_c, m=m, lambda_box=lambda_box)


@dataclass(frozen=True)
class TruncationSection:
    """Hierarchy cutoff, cluster-sum depth, and density count cap."""

    n_max: int = 3
    m_cluster: Optional[int] = None
    n_cap: int = 3

    @staticmethod
    def from_dict(data: dict) -> "TruncationSection":
        _require_keys("truncation", data, {"n_max", "m_cluster", "n_cap"})
        n_max = _integer("truncation", "n_max", data.get("n_max"), 3)
        if n_max < 1:
            raise ConfigError("'truncation.n_max' must be at least 1")
        m_cluster = data.get("m_cluster")
        if m_cluster is not None:
            m_cluster = _integer("truncation", "m_cluster", m_cluster, 0)
            if m_cluster < 0:
                raise ConfigError("'truncation.m_cluster' must be nonnegative")
        n_cap = _integer("truncation", "n_cap", data.get("n_cap"), 3)
        if n_cap < 0:
            raise ConfigError("'truncation.n_cap' must be nonnegative")
        if n_cap > n_max:
            raise ConfigError("'truncation.n_cap' cannot exceed 'truncation.n_max'")
        return TruncationSection(n_max=n_max, m_cluster=m_cluster, n_cap=n_cap)


@dataclass(frozen=True)
class DysonSection:
    """Scale inflation and depth of the time-ordered series."""

    q: float = 2.0
    n_terms: int = 3
    quad_order: int = 8

    @staticmethod
    def from_dict(data: dict) -> "DysonSection":
        _require_keys("evolution.dyson", data, {"q", "n_terms", "quad_order"})
        q = _number("evolution.dyson", "q", data.get("q"), 2.0)
        if not q > 1:
            raise ConfigError("'evolution.dyson.q' must exceed 1")
        n_terms = _integer("evolution.dyson", "n_terms", data.get("n_terms"), 3)
        if not 0 <= n_terms <= 4:
            raise ConfigError("'evolution.dyson.n_terms' must be between 0 and 4")
        quad_order = _integer("evolution.dyson", "quad_order", data.get("quad_order"), 8)
        if quad_order < 2:
            raise ConfigError("'evolution.dyson.quad_order' must be at least 2")
        return DysonSection(q=q, n_terms=n_terms, quad_order=quad_order)


@dataclass(frozen=True)
class EvolutionSection:
    """Time stepping method and span."""

    method: str = "rk4"
    t_end: float = 0.02
    dt: float = 5e-4
    snapshot_times: tuple = (0.01,)
    dyson: DysonSection = DysonSection()

    @staticmethod
    def from_dict(data: dict) -> "EvolutionSection":
        _require_keys(
            "evolution", data, {"method", "t_end", "dt", "snapshot_times", "dyson"}
        )
        method = data.get("method", "rk4")
        if method not in ("rk4", "dyson"):
            raise ConfigError("'evolution.method' must be 'rk4' or 'dyson'")
        t_end = _number("evolution", "t_end", data.get("t_end"), 0.02)
        if t_end < 0:
            raise ConfigError("'evolution.t_end' must be nonnegative")
        dt = _number("evolution", "dt", data.get("dt"), 5e-4)
        if dt <= 0:
            raise ConfigError("'evolution.dt' must be positive")
        snaps_raw = data.get("snapshot_times")
        if snaps_raw is None:
            snaps = tuple(s for s in EvolutionSection.snapshot_times if s <= t_end)
        else:
            if not isinstance(snaps_raw, (list, tuple)):
                raise ConfigError("'evolution.snapshot_times' must be a list")
            snaps = tuple(
                _number("evolution", "snapshot_times", s, 0.0) for s in snaps_raw
            )
            if any(b < a for a, b in zip(snaps, snaps[1:])):
                raise ConfigError("'evolution.snapshot_times' must be sorted")
            if any(not 0.0 <= s <= t_end for s in snaps):
                raise ConfigError("'evolution.snapshot_times' must lie in [0, t_end]")
        dyson = DysonSection.from_dict(data.get("dyson", {}))
        return EvolutionSection(
            method=method, t_end=t_end, dt=dt, snapshot_times=snaps, dyson=dyson
        )


@dataclass(frozen=True)
class ScaleSection:
    """Weighted-space scale interval for the series bounds."""

    alpha0: float = 0.0
    alpha_star: float = 1.0

    @staticmethod
    def from_dict(data: dict) -> "ScaleSection":
        _require_keys("scale", data, {"alpha0", "alpha_star"})
        alpha0 = _number("scale", "alpha0", data.get("alpha0"), 0.0)
        alpha_star = _number("scale", "alpha_star", data.get("alpha_star"), 1.0)
        if not alpha_star > alpha0:
            raise ConfigError("'scale.alpha_star' must exceed 'scale.alpha0'")
        return ScaleSection(alpha0=alpha0, alpha_star=alpha_star)


@dataclass(frozen=True)
class EnsembleSection:
    """Stochastic ensemble size and seeding."""

    n_traj: int = 500
    master_seed: int = 20260817

    @staticmethod
    def from_dict(data: dict) -> "EnsembleSection":
        _require_keys("ensemble", data, {"n_traj", "master_seed"})
        n_traj = _integer("ensemble", "n_traj", data.get("n_traj"), 500)
        if n_traj < 1:
            raise ConfigError("'ensemble.n_traj' must be at least 1")
        master_seed = _integer("ensemble", "master_seed", data.get("master_seed"), 20260817)
        if master_seed < 0:
            raise ConfigError("'ensemble.master_seed' must be nonnegative")
        return EnsembleSection(n_traj=n_traj, master_seed=master_seed)


@dataclass(frozen=True)
class InitialSection:
    """Initial law: constant-intensity Poisson in the inner box, or fixed points."""

    kind: str = "poisson"
    rho: Optional[float] = 1.0
    points: Optional[tuple] = None

    @staticmethod
    def from_dict(data: dict) -> "InitialSection":
        _require_keys("initial", data, {"kind", "rho", "points"})
        kind = data.get("kind", "poisson")
        if kind not in ("poisson", "explicit"):
            raise ConfigError("'initial.kind' must be 'poisson' or 'explicit'")
        if kind == "poisson":
            if data.get("points") is not None:
                raise ConfigError("'initial.points' is only valid with kind='explicit'")
            rho = _number("initial", "rho", data.get("rho"), 1.0)
            if rho < 0:
                raise ConfigError("'initial.rho' must be nonnegative")
            return InitialSection(kind="poisson", rho=rho, points=None)
        if data.get("rho") is not None:
            raise ConfigError("'initial.rho' is only valid with kind='poisson'")
        raw = data.get("points")
        if not isinstance(raw, (list, tuple)):
            raise ConfigError("'initial.points' must be a list of positions")
        points = []
        for item in raw:
            if isinstance(item, (list, tuple)):
                points.append(tuple(float(v) for v in item))
            elif isinstance(item, (int, float)) and not isinstance(item, bool):
                points.append((float(item),))
            else:
                raise ConfigError("'initial.points' entries must be numbers or vectors")
        return InitialSection(kind="explicit", rho=None, points=tuple(points))


@dataclass(frozen=True)
class RunConfig:
    """A complete, validated run description."""

    model: ModelSection = ModelSection()
    domain: DomainSection = DomainSection()
    truncation: TruncationSection = TruncationSection()
    evolution: EvolutionSection = EvolutionSection()
    scale: ScaleSection = ScaleSection()
    ensemble: EnsembleSection = EnsembleSection()
    initial: InitialSection = InitialSection()

    def kernels(self) -> KernelSet:
        m = self.model
        return gaussian_kernels(
            d=m.d,
            kappa1=m.kappa1,
            s1=m.s1,
            s2=m.s2,
            kappa2=m.kappa2,
            s3=m.s3,
            amp=m.amp,
            s4=m.s4,
        )

    def grid(self) -> GridSpec:
        dom = self.domain
        return GridSpec(dom.lambda_c[0], dom.lambda_c[1], dom.m, d=self.model.d)

    def constants(self) -> KernelConstants:
        return kernel_constants(self.kernels())

    def scale_params(self) -> ScaleParams:
        return ScaleParams(
            alpha0=self.scale.alpha0,
            alpha_star=self.scale.alpha_star,
            q=self.evolution.dyson.q,
        )

    def dyson_spec(self) -> DysonSpec:
        dy = self.evolution.dyson
        return DysonSpec(
            scale=self.scale_params(), n_terms=dy.n_terms, quad_order=dy.quad_order
        )

    def local(self) -> LocalSpec:
        return LocalSpec(
            lambda_box=self.domain.lambda_box,
            n_cap=self.truncation.n_cap,
            sigma=self.model.sigma,
        )

    def explicit_points(self) -> np.ndarray:
        if self.initial.kind != "explicit":
            raise ConfigError("initial law is not an explicit configuration")
        pts = np.asarray(self.initial.points, dtype=float)
        if pts.size == 0:
            return np.empty((0, self.model.d))
        if pts.shape[1] != self.model.d:
            raise ConfigError(
                f"initial points have dimension {pts.shape[1]}, model.d={self.model.d}"
            )
        return pts

    def initial_density(self) -> SymmetricGridFamily:
        """The starting configuration density on the full grid.

        Poisson initials are masked to the inner box and truncated at the
        count cap; explicit points become the symmetrized product of cell
        indicators, each normalized by the cell volume.
        """
        grid = self.grid()
        cap = self.truncation.n_cap
        if self.initial.kind == "poisson":
            return poisson_density(grid, self.initial.rho, self.domain.lambda_box, cap)
        pts = self.explicit_points()
        n = pts.shape[0]
        if n > cap:
            raise ConfigError(
                f"{n} initial points exceed the count cap 'truncation.n_cap'={cap}"
            )
        lo, hi = self.domain.lambda_box
        if np.any(pts < lo) or np.any(pts >= hi):
            raise ConfigError("explicit initial points must lie in 'domain.lambda_box'")
        cells = snap_to_grid(pts, grid)
        comps = [np.zeros((grid.n_cells,) * j) for j in range(cap + 1)]
        comps[0] = np.asarray(1.0 if n == 0 else 0.0)
        if n:
            weight = 1.0 / grid.cell_volume**n
            for perm in itertools.permutations(cells.tolist()):
                comps[n][tuple(perm)] += weight
        fam = SymmetricGridFamily(grid, comps, check_symmetry=False)
        total = lp_integral(fam)
        if abs(total - 1.0) > 1e-9:
            raise ConfigError("explicit initial density failed to normalize")
        return fam

    def initial_correlation(self) -> SymmetricGridFamily:
        """Correlation functions of the initial state, derived from the density."""
        R0 = self.initial_density()
        k0 = density_to_correlation(R0)
        if k0.n_max < self.truncation.n_max:
            comps = [c.copy() for c in k0.comps]
            grid = self.grid()
            for n in range(k0.n_max + 1, self.truncation.n_max + 1):
                comps.append(np.zeros((grid.n_cells,) * n))
            return SymmetricGridFamily(grid, comps, check_symmetry=False)
        return k0


_SECTION_PARSERS = {
    "model": ModelSection.from_dict,
    "domain": DomainSection.from_dict,
    "truncation": TruncationSection.from_dict,
    "evolution": EvolutionSection.from_dict,
    "scale": ScaleSection.from_dict,
    "ensemble": EnsembleSection.from_dict,
    "initial": InitialSection.from_dict,
}


def config_from_dict(data: dict) -> RunConfig:
    """Parse and validate a configuration document."""
    _require_keys("config", data, _SECTION_PARSERS)
    sections = {
        name: parser(data.get(name, {})) for name, parser in _SECTION_PARSERS.items()
    }
    return RunConfig(**sections)


def config_to_dict(config: RunConfig) -> dict:
    """The fully resolved configuration as plain JSON-ready data."""
    ev = config.evolution
    return {
        "model": {
            "d": config.model.d,
            "family": config.model.family,
            "kappa1": config.model.kappa1,
            "s1": config.model.s1,
            "s2": config.model.s2,
            "kappa2": config.model.kappa2,
            "s3": config.model.s3,
            "amp": config.model.amp,
            "s4": config.model.s4,
            "sigma": config.model.sigma,
        },
        "domain": {
            "lambda_c": list(config.domain.lambda_c),
            "m": config.domain.m,
            "lambda_box": list(config.domain.lambda_box),
        },
        "truncation": {
            "n_max": config.truncation.n_max,
            "m_cluster": config.truncation.m_cluster,
            "n_cap": config.truncation.n_cap,
        },
        "evolution": {
            "method": ev.method,
            "t_end": ev.t_end,
            "dt": ev.dt,
            "snapshot_times": list(ev.snapshot_times),
            "dyson": {
                "q": ev.dyson.q,
                "n_terms": ev.dyson.n_terms,
                "quad_order": ev.dyson.quad_order,
            },
        },
        "scale": {
            "alpha0": config.scale.alpha0,
            "alpha_star": config.scale.alpha_star,
        },
        "ensemble": {
            "n_traj": config.ensemble.n_traj,
            "master_seed": config.ensemble.master_seed,
        },
        "initial": {
            "kind": config.initial.kind,
            "rho": config.initial.rho,
            "points": None
            if config.initial.points is None
            else [list(p) for p in config.initial.points],
        },
    }


def canonical_json(data: dict) -> str:
    """Deterministic JSON rendering used for hashing and manifests."""
    return json.dumps(data, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_hash(config: RunConfig) -> str:
    """Hex digest identifying the fully resolved configuration."""
    return hashlib.sha256(canonical_json(config_to_dict(config)).encode()).hexdigest()


def load_config(path: Union[str, Path]) -> RunConfig:
    """Read and validate a JSON configuration file."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config document must be a JSON object")
    return config_from_dict(data)


def save_config(config: RunConfig, path: Union[str, Path]) -> None:
    """Write the fully resolved configuration as readable JSON."""
    Path(path).write_text(
        json.dumps(config_to_dict(config), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


def default_config() -> RunConfig:
    """The repository's reference configuration."""
    return RunConfig()
