"""Compiled O(n) loops of the event-driven simulator."""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from numba import njit

def _int_power(beta):
    e0 = int(beta)

    @njit(inline="always")
    def gain(d, tab_d, tab_g):
        base = 1.0 / (1.0 + d)
        e = e0
        out = 1.0
        while e:
            if e & 1:
                out *= base
            base *= base
            e >>= 1
        return out

    return gain


def _power(beta):
    @njit(inline="always")
    def gain(d, tab_d, tab_g):
        return (1.0 + d) ** (-beta)

    return gain


@njit(inline="always")
def _tabulated(d, tab_d, tab_g):
    return np.interp(d, tab_d, tab_g)


@njit(cache=True, inline="always")
def _wrap(dx, side):
    # coordinates live in [0, side), so one shift reaches the nearest image
    if dx > 0.5 * side:
        return dx - side
    if dx < -0.5 * side:
        return dx + side
    return dx


@njit(cache=True, inline="always")
def _dist(ax, ay, bx, by, side):
    dx = _wrap(ax - bx, side)
    dy = _wrap(ay - by, side)
    return np.sqrt(dx * dx + dy * dy)


def _make(gain):
    # one compiled pair per path-loss law keeps the gain branch out of the loops
    @njit
    def add_update(rx, tx, cls, interf, n, new_rx, new_tx, C, overlap, side, same_point, tab_d, tab_g):
        total = 0.0
        for i in range(n):
            ov = overlap[C, cls[i]]
            g_in = gain(_dist(tx[i, 0], tx[i, 1], new_rx[0], new_rx[1], side), tab_d, tab_g)
            if same_point:
                g_out = g_in
            else:
                g_out = gain(_dist(rx[i, 0], rx[i, 1], new_tx[0], new_tx[1], side), tab_d, tab_g)
            total += ov * g_in
            interf[i] += ov * g_out
        return total

    @njit
    def remove_update(rx, cls, interf, n, old_tx, C, overlap, side, tab_d, tab_g):
        for i in range(n):
            ov = overlap[C, cls[i]]
            interf[i] -= ov * gain(_dist(rx[i, 0], rx[i, 1], old_tx[0], old_tx[1], side), tab_d, tab_g)

    return add_update, remove_update


@lru_cache(maxsize=None)
def _kernels_for(kind, beta):
    if kind == "tabulated":
        return _make(_tabulated)
    if float(beta).is_integer() and 0 < beta <= 64:
        return _make(_int_power(beta))
    return _make(_power(beta))


class PathLossKernels:
    """Interference update loops specialised to one path loss.

    ``add`` returns the new receiver's interference and adds the new
    transmitter's signal to the first ``n`` receivers; ``remove`` subtracts a
    departed transmitter's signal. Integer exponents use a multiplication-only
    gain, equal to ``pow`` up to rounding and several times faster.
    """

    def __init__(self, pl):
        if pl.kind == "power_law":
            self._add, self._remove = _kernels_for("power_law", float(pl.beta))
            self.tab_d = self.tab_g = np.zeros(1)
        else:
            self._add, self._remove = _kernels_for("tabulated", 0.0)
            self.tab_d = np.asarray(pl.distances, dtype=float)
            self.tab_g = np.asarray(pl.gains, dtype=float)

    def add(self, rx, tx, cls, interf, n, new_rx, new_tx, C, overlap, side, same_point):
        return self._add(rx, tx, cls, interf, n, new_rx, new_tx, C, overlap, side, same_point, self.tab_d, self.tab_g)

    def remove(self, rx, cls, interf, n, old_tx, C, overlap, side):
        self._remove(rx, cls, interf, n, old_tx, C, overlap, side, self.tab_d, self.tab_g)


@njit(cache=True)
def race(expo, cls, interf, ids, n, hold, N0):
    """Earliest of the clocks ``expo[i] / rate_i``; ties go to the lowest id.

    ``hold[c] = L_c / (|c| l(r))``, so ``1 / rate_i = (N0 + I_i) hold[c_i]``.
    """
    best = np.inf
    k = -1
    for i in range(n):
        t = expo[i] * ((N0 + interf[i]) * hold[cls[i]])
        if t < best:
            best = t
            k = i
        elif t == best and ids[i] < ids[k]:
            k = i
    return best, k
