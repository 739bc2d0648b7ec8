"""Lattice bounding chains on an ``eps``-tessellation of the torus.

Cell ``i = a * m + b`` (``m = side / eps``) has center ``(eps a, eps b)``
wrapped into ``[-side/2, side/2)``, so the origin is the center of cell 0.
Interaction between cells uses a perturbed path loss: the max (``upper``) or
min (``lower``) of ``l`` over the five points ``{a, a +- eps e1, a +- eps e2}``
around each of the two centers. Both kernels depend only on the cell offset,
hence every row has the same sum.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DegenerateInput, DomainError, ExplosionStop, NonSymmetricWarning
from .model import ClassProfile, PathLoss, TorusDomain, cardinalities, load_factor, overlap_matrix, wrap_delta
from .rng import Streams
from .simulation import ARRIVAL, DEPARTURE, KIND_NAMES, DEFAULT_CAP

UPPER, LOWER = "upper", "lower"
_PERTURB = np.array([[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])


@dataclass(frozen=True)
class Tessellation:
    dom: TorusDomain
    eps: float

    def __post_init__(self):
        if not self.eps > 0:
            raise DomainError("cell side must be positive")
        ratio = self.dom.side / self.eps
        m = round(ratio)
        if m < 1 or abs(ratio - m) > 1e-9 * max(1.0, ratio):
            raise DomainError(f"side / eps must be a positive integer, got {ratio}")

    @property
    def m(self) -> int:
        return round(self.dom.side / self.eps)

    @property
    def n_cells(self) -> int:
        return self.m**2

    @property
    def cell_area(self) -> float:
        return self.eps**2

    @property
    def centers(self) -> np.ndarray:
        j = np.arange(self.m)
        c = wrap_delta(self.eps * j, self.dom.side)
        c = np.where(c >= self.dom.side / 2, c - self.dom.side, c)
        a, b = np.meshgrid(c, c, indexing="ij")
        return np.column_stack([a.ravel(), b.ravel()])

    def cell_of(self, points) -> np.ndarray:
        """Index of the cell containing each point (coordinates in ``[0, side)``)."""
        pts = np.asarray(points, dtype=float)
        g = np.floor(pts / self.eps + 0.5).astype(np.int64) % self.m
        return g[..., 0] * self.m + g[..., 1]


@dataclass(frozen=True, eq=False)
class DiscretePathLoss:
    """Translation-invariant lattice kernel; ``offsets[da, db]`` is the gain between cells ``(da, db)`` apart."""

    tess: Tessellation
    mode: str
    offsets: np.ndarray = field(repr=False)

    @property
    def matrix(self) -> np.ndarray:
        """Dense ``(N, N)`` kernel with ``matrix[k, i] = kernel(a_k, a_i)``."""
        m = self.tess.m
        idx = np.arange(m)
        da = (idx[None, :] - idx[:, None]) % m
        full = self.offsets[da[:, None, :, None], da[None, :, None, :]]
        return full.reshape(m * m, m * m)

    @property
    def row_sum(self) -> float:
        return float(self.offsets.sum())

    @property
    def mean_pathloss(self) -> float:
        """Lattice analogue of the torus path-loss integral, ``eps^2`` times a row sum."""
        return self.tess.cell_area * self.row_sum

    @property
    def self_gain(self) -> float:
        return float(self.offsets[0, 0])


def build_discrete_pathloss(tess: Tessellation, pl: PathLoss, mode: str) -> DiscretePathLoss:
    if mode not in (UPPER, LOWER):
        raise DomainError(f"mode must be {UPPER!r} or {LOWER!r}")
    m, eps, side = tess.m, tess.eps, tess.dom.side
    j = eps * np.arange(m)
    base = np.stack(np.meshgrid(j, j, indexing="ij"), axis=-1)  # (m, m, 2)
    shifts = eps * (_PERTURB[None, :, :] - _PERTURB[:, None, :]).reshape(-1, 2)  # v - u
    d = wrap_delta(base[:, :, None, :] + shifts[None, None, :, :], side)
    g = pl(np.hypot(d[..., 0], d[..., 1]))
    offsets = g.max(axis=-1) if mode == UPPER else g.min(axis=-1)
    offsets.setflags(write=False)
    return DiscretePathLoss(tess, mode, offsets)


def _check_counts(x, tess, K):
    x = np.asarray(x)
    if x.shape != (tess.n_cells, 2**K - 1):
        raise DomainError(f"state must have shape ({tess.n_cells}, {2**K - 1})")
    return x


def lattice_rate(counts, i: int, C: int, dpl: DiscretePathLoss, N0: float) -> float:
    """Per-user rate of class ``C`` in cell ``i``, excluding the user itself from the interference."""
    counts = np.asarray(counts, dtype=float)
    nC = counts.shape[1]
    K = nC.bit_length()
    ov = overlap_matrix(K)[C - 1]
    col = dpl.matrix[:, i]
    interf = col @ (counts @ ov) - ov[C - 1] * col[i]
    return float(ov[C - 1] / (N0 + interf))


def lattice_thresholds(tess, pl, profile, upper=None, lower=None):
    """``(lam_bar, lam_underbar)``: stability threshold of the dominating chain and
    transience threshold of the dominated one."""
    upper = upper or build_discrete_pathloss(tess, pl, UPPER)
    lower = lower or build_discrete_pathloss(tess, pl, LOWER)
    load = load_factor(profile)
    return profile.K / (load * upper.mean_pathloss), profile.K / (load * lower.mean_pathloss)


def transience_threshold(tess: Tessellation, pl: PathLoss, profile: ClassProfile) -> float:
    """Rate above which the dominated lattice chain is transient."""
    if not profile.symmetric:
        warnings.warn("transience threshold is only established for symmetric profiles",
                      NonSymmetricWarning, stacklevel=2)
    return lattice_thresholds(tess, pl, profile)[1]


def r_score(x, i: int, C: int, tess: Tessellation, dpl_lower: DiscretePathLoss, profile: ClassProfile) -> float:
    """Normalised service-to-arrival ratio of queue ``(i, C)``; 0-homogeneous in ``x``."""
    x = _check_counts(x, tess, profile.K).astype(float)
    if np.any(x < 0):
        raise DomainError("state must be non-negative")
    pc = profile.p[C - 1]
    ov = overlap_matrix(profile.K)[C - 1]
    denom = dpl_lower.matrix[:, i] @ (x @ ov)
    if not denom > 0 or pc == 0:
        raise DegenerateInput(f"score of queue ({i}, {C}) undefined at this state")
    return float(ov[C - 1] * x[i, C - 1] / denom / (pc * profile.L[C - 1] * tess.cell_area))


@dataclass
class LatticeTrajectory:
    times: np.ndarray
    kinds: np.ndarray
    cells: np.ndarray
    classes: np.ndarray
    totals: np.ndarray
    initial_total: int
    t_end: float
    final_counts: np.ndarray = field(repr=False)

    @property
    def n_events(self) -> int:
        return int(self.times.size)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "kind", "cell_index", "class_bitmask", "total_count"])
            for row in zip(self.times, self.kinds, self.cells, self.classes, self.totals):
                w.writerow([repr(float(row[0])), KIND_NAMES[row[1]], int(row[2]), int(row[3]), int(row[4])])


def lattice_simulate(tess: Tessellation, dpl: DiscretePathLoss, profile: ClassProfile, lam: float, N0: float,
                     max_events: int | None = None, max_time: float | None = None, seed: int = 0,
                     initial=None, cap: int = DEFAULT_CAP) -> LatticeTrajectory:
    """Gillespie simulation of the lattice chain driven by kernel ``dpl``.

    Arrivals hit each cell-class pair at rate ``lam p_C eps^2``; the users of
    cell-class ``(i, C)`` leave at total rate ``X_iC R_iC / L_C``.
    """
    if not lam >= 0 or not N0 > 0:
        raise ConfigError("need lam >= 0 and N0 > 0")
    if max_events is None and max_time is None:
        raise ConfigError("lattice simulation needs an event or time budget")
    K = profile.K
    nC = 2**K - 1
    N = tess.n_cells
    X = np.zeros((N, nC), dtype=np.int64) if initial is None else _check_counts(initial, tess, K).astype(np.int64).copy()
    if np.any(X < 0):
        raise DomainError("initial counts must be non-negative")
    M = dpl.matrix
    O = overlap_matrix(K).astype(float)
    card = cardinalities(K).astype(float)
    self_term = card[None, :] * np.diag(M)[:, None]
    F = M.T @ X.astype(float) @ O  # F[i, C] = sum_{k,U} |C∩U| M[k,i] X[k,U]
    arr_rate = lam * tess.dom.area
    cdf = np.cumsum(profile.p)
    streams = Streams(seed)
    t, total = 0.0, int(X.sum())
    initial_total = total
    n_max = max_events if max_events is not None else np.iinfo(np.int64).max
    t_max = max_time if max_time is not None else np.inf
    rows = []
    while len(rows) < n_max:
        busy = X > 0
        denom = np.where(busy, N0 + F - self_term, 1.0)
        dep = np.where(busy, X * card[None, :] / denom / profile.L[None, :], 0.0)
        dep_total = dep.sum()
        rate = arr_rate + dep_total
        if rate <= 0:
            t = t_max if t_max < np.inf else t
            break
        dt = streams.departures.exponential(1.0 / rate)
        if t + dt > t_max:
            t = t_max
            break
        t += dt
        if streams.departures.random() * rate < arr_rate:
            C = int(np.searchsorted(cdf, streams.arrivals.random() * cdf[-1], side="right")) + 1
            i = int(streams.placement.integers(N))
            sign, kind = 1, ARRIVAL
        else:
            flat = np.cumsum(dep.ravel())
            j = min(int(np.searchsorted(flat, streams.departures.random() * flat[-1], side="right")), flat.size - 1)
            i, C = divmod(j, nC)
            C += 1
            sign, kind = -1, DEPARTURE
        X[i, C - 1] += sign
        F += sign * np.outer(M[i], O[C - 1])
        total += sign
        rows.append((t, kind, i, C, total))
        if total > cap:
            break
    if rows:
        tt, kk, ii, cc, nn = (np.array(c) for c in zip(*rows))
    else:
        tt = np.empty(0)
        kk = ii = cc = nn = np.empty(0, dtype=np.int64)
    traj = LatticeTrajectory(tt.astype(float), kk.astype(np.int8), ii.astype(np.int64), cc.astype(np.int64),
                             nn.astype(np.int64), initial_total, float(t), X)
    if total > cap:
        raise ExplosionStop(f"lattice population exceeded cap {cap}", traj)
    return traj
