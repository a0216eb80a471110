"""Axis bookkeeping for symmetric configuration tensors.

The generator code repeatedly builds a tensor whose last axis (or last two
axes) plays a distinguished role (an inserted particle, a merged pair) and
then symmetrizes that role over all particle slots. Keeping those moves in
one place makes each operator term a single readable line.
"""

from __future__ import annotations

import itertools
from typing import Sequence

import numpy as np

__all__ = [
    "spread_last_axis",
    "spread_last_pair",
    "broadcast_into_slots",
    "gather_slot_diagonal",
]


def spread_last_axis(T: np.ndarray) -> np.ndarray:
    """Sum of copies of T with its last axis moved to every slot.

    T must be symmetric in its leading axes; the result is then symmetric
    in all axes.
    """
    n = T.ndim
    out = np.zeros_like(T)
    for p in range(n):
        out += np.moveaxis(T, -1, p)
    return out


def spread_last_pair(T: np.ndarray) -> np.ndarray:
    """Sum over unordered slot pairs of T with its last two axes moved there.

    T must be symmetric in its last two axes and in its leading axes.
    """
    n = T.ndim
    out = np.zeros_like(T)
    for p, q in itertools.combinations(range(n), 2):
        out += np.moveaxis(T, (n - 2, n - 1), (p, q))
    return out


def broadcast_into_slots(T: np.ndarray, slots: Sequence[int], n: int, M: int) -> np.ndarray:
    """View a j-axis tensor as an n-axis broadcastable tensor on given axes."""
    shape = [1] * n
    for s in slots:
        shape[s] = M
    return T.reshape(shape)


def gather_slot_diagonal(U: np.ndarray, slot: int) -> np.ndarray:
    """Tie the last axis of U to the given slot axis.

    U has n + 1 axes (n particle slots plus a trailing value axis); the
    result has n axes with entry U[..., i_slot] read at the slot's own
    index. Used when a summand depends both on a slot's position and on the
    full configuration including that slot.
    """
    n = U.ndim - 1
    diag = np.diagonal(U, axis1=slot, axis2=n)
    return np.moveaxis(diag, -1, slot)
