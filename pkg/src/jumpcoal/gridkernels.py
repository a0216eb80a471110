"""Kernel evaluations tabulated on a grid, shared by all operators.

Every generator application reduces to contractions against a handful of
fixed tables: the taper per cell, the jump kernel and repulsion factor per
cell pair, and the coalescence intensity per cell triple. Tabulating them
once per (kernels, grid, sigma) keeps the discrete operators exactly
consistent with each other, which is what makes adjointness and duality
checks meaningful at rounding level.
"""

from __future__ import annotations

import functools
import math
from typing import Dict

import numpy as np

from .configspace import GridSpec
from .kernels import KernelSet, gaussian_taper
from .tensorops import broadcast_into_slots

__all__ = ["KernelTables", "kernel_tables"]


class KernelTables:
    """Tabulated kernels on a grid for one taper strength.

    Attributes:
        grid: the underlying GridSpec.
        w: cell volume (the quadrature weight of every position integral).
        taper: (M,) localization weight per cell.
        c2mat: (M, M) jump kernel, entry [x, y] = c2 at displacement x - y.
        rep: (M, M) repulsion factor, entry [y, u] = exp(-phi(y - u)).
        repm1: rep - 1, the cluster-expansion increment.
        c1t: (M, M, M) coalescence intensity, entry [z, x, y] = c1(x, y; z).
        pair_rate: (M, M) taper-weighted total rate for a pair to coalesce,
            the z-sum of taper * c1t times the cell volume.
    """

    def __init__(self, kernels: KernelSet, grid: GridSpec, sigma: float):
        if sigma < 0:
            raise ValueError("taper strength sigma must be nonnegative")
        self.kernels = kernels
        self.grid = grid
        self.sigma = float(sigma)
        self.w = grid.cell_volume

        pts = grid.points
        M = grid.n_cells
        self.taper = np.asarray(gaussian_taper(pts, sigma, grid.d), dtype=float)

        diff = pts[:, None, :] - pts[None, :, :]
        self.c2mat = np.asarray(kernels.c2(diff), dtype=float)
        phi_vals = np.asarray(kernels.phi(diff), dtype=float)
        self.rep = np.exp(-phi_vals)
        self.repm1 = self.rep - 1.0

        z = pts[:, None, None, :]
        x = pts[None, :, None, :]
        y = pts[None, None, :, :]
        self.c1t = np.asarray(kernels.c1(x, y, z), dtype=float)
        if self.c1t.shape != (M, M, M):
            raise ValueError(f"c1 table has shape {self.c1t.shape}, expected {(M, M, M)}")

        self.pair_rate = self.w * np.einsum("z,zxy->xy", self.taper, self.c1t)
        self._pair_fields: Dict[int, np.ndarray] = {}

    def pair_rate_field(self, n: int) -> np.ndarray:
        """Total coalescence rate of an n-point configuration, as a tensor.

        Entry at (i_1, ..., i_n) is the sum of pair_rate over all unordered
        slot pairs. Cached per order.
        """
        if n < 0:
            raise ValueError("order must be nonnegative")
        field = self._pair_fields.get(n)
        if field is None:
            M = self.grid.n_cells
            field = np.zeros((M,) * n)
            for p in range(n):
                for q in range(p + 1, n):
                    field = field + broadcast_into_slots(self.pair_rate, (p, q), n, M)
            self._pair_fields[n] = field
        return field


@functools.lru_cache(maxsize=32)
def kernel_tables(kernels: KernelSet, grid: GridSpec, sigma: float) -> KernelTables:
    """Build (or fetch cached) tables for one (kernels, grid, sigma) triple."""
    return KernelTables(kernels, grid, float(sigma))
