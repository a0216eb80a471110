"""Finite configuration space over a midpoint grid.

A function on finite point configurations is stored as a family of symmetric
tensors, one per particle count: order n lives on the n-fold product of the
grid cells. All integrals over positions become cell sums weighted by the
cell volume, so combinatorial identities (subset sums, adjunctions, order
lowering) hold exactly up to floating-point rounding rather than up to a
quadrature error.

Conventions used throughout the package:

* configurations are multisets of grid cells; tensors are symmetric, so an
  ordered index tuple represents its multiset,
* the measure of an n-point configuration carries weight h^{dn} / n! over
  ordered tuples, matching the usual exclusion-free multiset expansion,
* order 0 (the empty configuration) is a scalar entry in every family.
"""

from __future__ import annotations

import csv
import functools
import itertools
import json
import math
import os
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from numpy.typing import NDArray

from .errors import CombinatorialBlowupError

__all__ = [
    "GridSpec",
    "SymmetricGridFamily",
    "symmetrize",
    "random_family",
    "lp_integral",
    "pairing",
    "k_transform",
    "k_inverse",
    "k_transform_family",
    "k_inverse_family",
    "exponential_vector",
    "bogoliubov",
    "minlos1_check",
    "minlos2_check",
    "sample_k_positive_cone",
    "weighted_sup_norm",
    "weighted_l1_norm",
    "factorial_weighted_l1_norm",
    "taper_weighted_sup_norm",
    "save_family",
    "load_family",
    "snap_to_grid",
]

_SUBSET_CAP = 12


@dataclass(frozen=True)
class GridSpec:
    """Cubic midpoint grid on [low, high)^d with m cells per axis."""

    low: float
    high: float
    m: int
    d: int = 1

    def __post_init__(self):
        if self.high <= self.low:
            raise ValueError("grid needs low < high")
        if self.m < 1:
            raise ValueError("grid needs at least one cell per axis")
        if self.d < 1:
            raise ValueError("grid dimension must be at least 1")

    @property
    def h(self) -> float:
        """Cell edge length."""
        return (self.high - self.low) / self.m

    @property
    def cell_volume(self) -> float:
        return self.h**self.d

    @property
    def n_cells(self) -> int:
        return self.m**self.d

    @property
    def axis_midpoints(self) -> NDArray[np.float64]:
        return self.low + (np.arange(self.m) + 0.5) * self.h

    @property
    def points(self) -> NDArray[np.float64]:
        """Midpoints of all cells, shape (n_cells, d), C-order flattening."""
        return _grid_points(self)


@functools.lru_cache(maxsize=None)
def _grid_points(grid: GridSpec) -> NDArray[np.float64]:
    axes = [grid.axis_midpoints] * grid.d
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack(mesh, axis=-1).reshape(grid.n_cells, grid.d)
    pts.setflags(write=False)
    return pts


def snap_to_grid(points, grid: GridSpec) -> NDArray[np.intp]:
    """Flat cell indices of points, clipped into the box."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None] if grid.d == 1 else pts[None, :]
    per_axis = np.floor((pts - grid.low) / grid.h).astype(np.intp)
    per_axis = np.clip(per_axis, 0, grid.m - 1)
    return np.ravel_multi_index(tuple(per_axis.T), (grid.m,) * grid.d)


def symmetrize(arr: NDArray[np.float64]) -> NDArray[np.float64]:
    """Average a tensor over all axis permutations.

    The average is then canonicalized so that every permutation of an index
    tuple reads the exact same float (the value at the sorted tuple); plain
    averaging leaves last-ulp asymmetries because the summation order of the
    permuted views differs from entry to entry.
    """
    n = arr.ndim
    if n <= 1:
        return np.asarray(arr, dtype=float)
    acc = np.zeros_like(arr, dtype=float)
    for perm in itertools.permutations(range(n)):
        acc += np.transpose(arr, perm)
    acc /= math.factorial(n)
    idx = np.sort(np.indices(acc.shape), axis=0)
    return acc[tuple(idx)]


class SymmetricGridFamily:
    """A function of finite configurations: one symmetric tensor per order.

    ``comps[n]`` has shape (n_cells,) * n; ``comps[0]`` is a scalar array.
    Families support addition, subtraction, and scalar multiplication, which
    is all the evolution code needs.
    """

    __slots__ = ("grid", "comps")

    def __init__(self, grid: GridSpec, comps: Sequence[np.ndarray], check_symmetry: bool = True):
        self.grid = grid
        cleaned = []
        for n, c in enumerate(comps):
            arr = np.asarray(c, dtype=float)
            if arr.shape != (grid.n_cells,) * n:
                raise ValueError(f"order {n} tensor has shape {arr.shape}, expected {(grid.n_cells,) * n}")
            cleaned.append(arr)
        self.comps = cleaned
        if check_symmetry:
            self._check_symmetry()

    def _check_symmetry(self):
        rng = np.random.default_rng(0)
        for n, arr in enumerate(self.comps):
            if n < 2:
                continue
            for _ in range(min(3, n)):
                perm = tuple(rng.permutation(n))
                swapped = np.transpose(arr, perm)
                scale = np.max(np.abs(arr)) or 1.0
                if np.max(np.abs(arr - swapped)) > 1e-8 * scale:
                    raise ValueError(f"order {n} tensor is not symmetric under permutation {perm}")

    @property
    def n_max(self) -> int:
        return len(self.comps) - 1

    @classmethod
    def zeros(cls, grid: GridSpec, n_max: int) -> "SymmetricGridFamily":
        comps = [np.zeros((grid.n_cells,) * n) for n in range(n_max + 1)]
        return cls(grid, comps, check_symmetry=False)

    def value_at(self, indices: Sequence[int]) -> float:
        """Value on the multiset of cells given by ``indices`` (any order)."""
        idx = tuple(sorted(int(i) for i in indices))
        n = len(idx)
        if n > self.n_max:
            return 0.0
        return float(self.comps[n][idx]) if n else float(self.comps[0])

    def copy(self) -> "SymmetricGridFamily":
        return SymmetricGridFamily(self.grid, [c.copy() for c in self.comps], check_symmetry=False)

    def _binary(self, other, op) -> "SymmetricGridFamily":
        if not isinstance(other, SymmetricGridFamily):
            return NotImplemented
        if other.grid != self.grid:
            raise ValueError("families live on different grids")
        n = max(self.n_max, other.n_max)
        comps = []
        for k in range(n + 1):
            a = self.comps[k] if k <= self.n_max else np.zeros((self.grid.n_cells,) * k)
            b = other.comps[k] if k <= other.n_max else np.zeros((self.grid.n_cells,) * k)
            comps.append(op(a, b))
        return SymmetricGridFamily(self.grid, comps, check_symmetry=False)

    def __add__(self, other):
        return self._binary(other, np.add)

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __mul__(self, scalar):
        if not np.isscalar(scalar):
            return NotImplemented
        return SymmetricGridFamily(
            self.grid, [c * float(scalar) for c in self.comps], check_symmetry=False
        )

    __rmul__ = __mul__

    def __neg__(self):
        return self * (-1.0)

    def __repr__(self):
        return f"SymmetricGridFamily(n_max={self.n_max}, n_cells={self.grid.n_cells})"


def random_family(
    rng: np.random.Generator, grid: GridSpec, n_max: int, decay: float = 1.0
) -> SymmetricGridFamily:
    """Symmetric standard-normal family, order n scaled by decay^n / n!."""
    comps = [np.asarray(rng.standard_normal())]
    for n in range(1, n_max + 1):
        raw = rng.standard_normal((grid.n_cells,) * n)
        comps.append(symmetrize(raw) * (decay**n / math.factorial(n)))
    return SymmetricGridFamily(grid, comps, check_symmetry=False)


def lp_integral(G: SymmetricGridFamily) -> float:
    """Integral of G over all finite configurations.

    Order n contributes (cell_volume^n / n!) times the full ordered-tuple
    sum of its tensor.
    """
    w = G.grid.cell_volume
    total = float(G.comps[0])
    for n in range(1, G.n_max + 1):
        total += (w**n / math.factorial(n)) * float(np.sum(G.comps[n]))
    return total


def pairing(G: SymmetricGridFamily, k: SymmetricGridFamily) -> float:
    """Duality pairing: the integral of G * k, matched order by order."""
    if G.grid != k.grid:
        raise ValueError("pairing requires a common grid")
    w = G.grid.cell_volume
    n_top = min(G.n_max, k.n_max)
    total = float(G.comps[0]) * float(k.comps[0])
    for n in range(1, n_top + 1):
        total += (w**n / math.factorial(n)) * float(np.sum(G.comps[n] * k.comps[n]))
    return total


def _position_subsets(eta: Sequence[int]):
    n = len(eta)
    for mask in range(1 << n):
        yield [eta[i] for i in range(n) if mask >> i & 1], bin(mask).count("1")


def k_transform(G: SymmetricGridFamily, eta: Sequence[int], cap: int = _SUBSET_CAP) -> float:
    """Sum of G over all position subsets of the multiset eta of cells."""
    eta = [int(i) for i in eta]
    if len(eta) > cap:
        raise CombinatorialBlowupError(
            f"subset sum over {len(eta)} positions exceeds the cap of {cap} "
            f"(2^{len(eta)} terms); raise cap explicitly if intended"
        )
    return sum(G.value_at(sub) for sub, _ in _position_subsets(eta))


def k_inverse(H: SymmetricGridFamily, eta: Sequence[int], cap: int = _SUBSET_CAP) -> float:
    """Moebius inversion of the subset sum on the multiset eta of cells."""
    eta = [int(i) for i in eta]
    n = len(eta)
    if n > cap:
        raise CombinatorialBlowupError(
            f"subset sum over {n} positions exceeds the cap of {cap} "
            f"(2^{n} terms); raise cap explicitly if intended"
        )
    return sum((-1.0) ** (n - size) * H.value_at(sub) for sub, size in _position_subsets(eta))


def _broadcast_into_slots(T: np.ndarray, slots: Sequence[int], n: int, M: int) -> np.ndarray:
    """View a j-axis tensor as an n-axis broadcastable tensor on given axes."""
    shape = [1] * n
    for ax, s in enumerate(slots):
        shape[s] = M
    return T.reshape(shape)


def k_transform_family(G: SymmetricGridFamily) -> SymmetricGridFamily:
    """Order-wise subset-sum transform of a whole family."""
    M = G.grid.n_cells
    comps = [np.asarray(float(G.comps[0]))]
    for n in range(1, G.n_max + 1):
        out = np.full((M,) * n, float(G.comps[0]))
        for j in range(1, n + 1):
            Tj = G.comps[j]
            for slots in itertools.combinations(range(n), j):
                out = out + _broadcast_into_slots(Tj, slots, n, M)
        comps.append(out)
    return SymmetricGridFamily(G.grid, comps, check_symmetry=False)


def k_inverse_family(H: SymmetricGridFamily) -> SymmetricGridFamily:
    """Order-wise Moebius inversion of the subset-sum transform."""
    M = H.grid.n_cells
    comps = [np.asarray(float(H.comps[0]))]
    for n in range(1, H.n_max + 1):
        out = np.full((M,) * n, (-1.0) ** n * float(H.comps[0]))
        for j in range(1, n + 1):
            Tj = H.comps[j]
            sign = (-1.0) ** (n - j)
            for slots in itertools.combinations(range(n), j):
                out = out + sign * _broadcast_into_slots(Tj, slots, n, M)
        comps.append(out)
    return SymmetricGridFamily(H.grid, comps, check_symmetry=False)


def exponential_vector(
    grid: GridSpec, omega, n_max: int
) -> SymmetricGridFamily:
    """Product family: order n is the n-fold outer power of omega.

    ``omega`` is a callable on points or an array of per-cell values; the
    order-0 entry is 1.
    """
    if callable(omega):
        vals = np.asarray([float(omega(p)) for p in grid.points])
    else:
        vals = np.asarray(omega, dtype=float)
        if vals.shape != (grid.n_cells,):
            raise ValueError(f"omega array must have shape ({grid.n_cells},)")
    comps = [np.asarray(1.0)]
    cur = np.asarray(1.0)
    for n in range(1, n_max + 1):
        cur = np.multiply.outer(cur, vals) if n > 1 else vals.copy()
        comps.append(cur)
    return SymmetricGridFamily(grid, comps, check_symmetry=False)


def bogoliubov(G: SymmetricGridFamily, omega) -> float:
    """Generating functional of G at the test function omega.

    Integrates G against the product family of omega; with G the subset-sum
    preimage of a correlation family this is the moment generating
    functional of the state.
    """
    e = exponential_vector(G.grid, omega, G.n_max)
    return pairing(G, e)


def minlos1_check(
    G: SymmetricGridFamily, h2: Callable, grid: GridSpec
) -> tuple[float, float]:
    """Both sides of the one-point augmentation identity.

    Left side integrates G(eta with one extra point x) h(x, eta) over x and
    eta; right side re-reads the same mass as a sum over the points of eta
    with h evaluated at the punctured configuration. The two loops run in
    deliberately different orders so agreement is evidence, not tautology.
    """
    pts = grid.points
    M = grid.n_cells
    w = grid.cell_volume

    lhs = 0.0
    for ix in range(M):
        x = pts[ix]
        for n in range(0, G.n_max):
            coef = w ** (n + 1) / math.factorial(n)
            for eta in itertools.product(range(M), repeat=n):
                g = G.value_at(eta + (ix,))
                lhs += coef * g * float(h2(x, pts[list(eta)]))

    rhs = 0.0
    for n in range(1, G.n_max + 1):
        coef = w**n / math.factorial(n)
        for eta in itertools.product(range(M), repeat=n):
            g = G.value_at(eta)
            if g == 0.0:
                continue
            for p in range(n):
                rest = eta[:p] + eta[p + 1 :]
                rhs += coef * g * float(h2(pts[eta[p]], pts[list(rest)]))
    return lhs, rhs


def minlos2_check(
    G: SymmetricGridFamily, h3: Callable, grid: GridSpec
) -> tuple[float, float]:
    """Both sides of the two-point augmentation identity.

    Left side carries the 1/2 for the unordered pair of added points; h3
    must be symmetric in its first two arguments.
    """
    pts = grid.points
    M = grid.n_cells
    w = grid.cell_volume

    lhs = 0.0
    for ix in range(M):
        for iy in range(M):
            x, y = pts[ix], pts[iy]
            for n in range(0, G.n_max - 1):
                coef = 0.5 * w ** (n + 2) / math.factorial(n)
                for eta in itertools.product(range(M), repeat=n):
                    g = G.value_at(eta + (ix, iy))
                    lhs += coef * g * float(h3(x, y, pts[list(eta)]))

    rhs = 0.0
    for n in range(2, G.n_max + 1):
        coef = w**n / math.factorial(n)
        for eta in itertools.product(range(M), repeat=n):
            g = G.value_at(eta)
            if g == 0.0:
                continue
            for p in range(n):
                for q in range(p + 1, n):
                    rest = tuple(eta[i] for i in range(n) if i != p and i != q)
                    rhs += coef * g * float(h3(pts[eta[p]], pts[eta[q]], pts[list(rest)]))
    return lhs, rhs


def sample_k_positive_cone(
    rng: np.random.Generator,
    grid: GridSpec,
    n_max: int,
    support: Optional[np.ndarray] = None,
) -> SymmetricGridFamily:
    """Draw a quasi-observable whose subset-sum transform is nonnegative.

    Draws a nonnegative family H (uniform entries, symmetrized, optionally
    masked to ``support`` cells) and returns its Moebius preimage, so the
    transform of the result reproduces H exactly on every multiset.
    """
    M = grid.n_cells
    mask = None
    if support is not None:
        mask = np.zeros(M, dtype=bool)
        mask[np.asarray(support)] = True
    comps = [np.asarray(float(rng.uniform()))]
    for n in range(1, n_max + 1):
        raw = rng.uniform(size=(M,) * n)
        arr = symmetrize(raw)
        if mask is not None:
            keep = mask.copy()
            for ax in range(n):
                arr = arr * _broadcast_into_slots(keep.astype(float), (ax,), n, M)
        comps.append(arr)
    H = SymmetricGridFamily(grid, comps, check_symmetry=False)
    return k_inverse_family(H)


def weighted_sup_norm(k: SymmetricGridFamily, theta: float) -> float:
    """sup over orders of exp(-theta n) times the max absolute entry."""
    out = abs(float(k.comps[0]))
    for n in range(1, k.n_max + 1):
        arr = k.comps[n]
        m = float(np.max(np.abs(arr))) if arr.size else 0.0
        out = max(out, math.exp(-theta * n) * m)
    return out


def weighted_l1_norm(G: SymmetricGridFamily, theta: float) -> float:
    """Integral of |G| with weight exp(theta * particle count)."""
    w = G.grid.cell_volume
    total = abs(float(G.comps[0]))
    for n in range(1, G.n_max + 1):
        total += math.exp(theta * n) * (w**n / math.factorial(n)) * float(np.sum(np.abs(G.comps[n])))
    return total


def factorial_weighted_l1_norm(G: SymmetricGridFamily, theta: float) -> float:
    """As the weighted integral norm, with an extra factor n! at order n."""
    w = G.grid.cell_volume
    total = abs(float(G.comps[0]))
    for n in range(1, G.n_max + 1):
        total += math.exp(theta * n) * w**n * float(np.sum(np.abs(G.comps[n])))
    return total


def taper_weighted_sup_norm(
    u: SymmetricGridFamily, theta: float, sigma: float
) -> float:
    """Sup norm with weight exp(-theta n) divided by the product taper.

    Dividing by exp(-sigma |x|^2) per point makes the norm finite exactly
    when u inherits the taper decay in every argument.
    """
    pts = u.grid.points
    inv_taper = np.exp(sigma * np.sum(pts * pts, axis=-1))
    out = abs(float(u.comps[0]))
    for n in range(1, u.n_max + 1):
        arr = np.abs(u.comps[n]).copy()
        for ax in range(n):
            arr *= _broadcast_into_slots(inv_taper, (ax,), n, u.grid.n_cells)
        out = max(out, math.exp(-theta * n) * float(np.max(arr)))
    return out


def save_family(
    fam: SymmetricGridFamily,
    directory: str,
    name: str = "family",
    config_hash: Optional[str] = None,
) -> str:
    """Write a family as a JSON header plus one CSV per order.

    Only sorted index tuples are stored (the tensors are symmetric); float
    values are written with repr so a reload is bit-exact. Returns the
    header path.
    """
    os.makedirs(directory, exist_ok=True)
    g = fam.grid
    order_files = []
    for n in range(fam.n_max + 1):
        fname = f"{name}_order{n}.csv"
        order_files.append(fname)
        with open(os.path.join(directory, fname), "w", newline="", encoding="utf-8") as fh:
            if config_hash is not None:
                fh.write(f"# config_hash={config_hash}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow([f"i{j + 1}" for j in range(n)] + ["value"])
            if n == 0:
                writer.writerow([repr(float(fam.comps[0]))])
            else:
                arr = fam.comps[n]
                for idx in itertools.combinations_with_replacement(range(g.n_cells), n):
                    writer.writerow(list(idx) + [repr(float(arr[idx]))])
    header = {
        "grid": {"low": g.low, "high": g.high, "m": g.m, "d": g.d},
        "n_max": fam.n_max,
        "orders": order_files,
    }
    if config_hash is not None:
        header["config_hash"] = config_hash
    header_path = os.path.join(directory, f"{name}.json")
    with open(header_path, "w") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return header_path


def load_family(header_path: str) -> tuple[SymmetricGridFamily, Optional[str]]:
    """Reload a family saved by save_family; returns (family, config_hash)."""
    with open(header_path) as fh:
        header = json.load(fh)
    gdict = header["grid"]
    grid = GridSpec(low=gdict["low"], high=gdict["high"], m=gdict["m"], d=gdict["d"])
    directory = os.path.dirname(os.path.abspath(header_path))
    comps = []
    stored_hash = header.get("config_hash")
    for n, fname in enumerate(header["orders"]):
        with open(os.path.join(directory, fname), newline="", encoding="utf-8") as fh:
            first = fh.readline()
            if first.startswith("# config_hash="):
                line_hash = first[len("# config_hash=") :].strip()
                if stored_hash is not None and line_hash != stored_hash:
                    raise ValueError(
                        f"{fname} carries config hash {line_hash}, header says {stored_hash}"
                    )
            else:
                fh.seek(0)
            reader = csv.reader(fh)
            head = next(reader)
            if head != [f"i{j + 1}" for j in range(n)] + ["value"]:
                raise ValueError(f"unexpected columns in {fname}: {head}")
            if n == 0:
                row = next(reader)
                comps.append(np.asarray(float(row[0])))
            else:
                arr = np.zeros((grid.n_cells,) * n)
                for row in reader:
                    idx = tuple(int(v) for v in row[:n])
                    val = float(row[n])
                    for perm in set(itertools.permutations(idx)):
                        arr[perm] = val
                comps.append(arr)
    fam = SymmetricGridFamily(grid, comps, check_symmetry=False)
    return fam, header.get("config_hash")
