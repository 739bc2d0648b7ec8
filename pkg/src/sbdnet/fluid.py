"""Fluid limit of the dominating lattice chain.

State ``x`` is an ``(N, 2**K - 1)`` array of masses per cell and class with
drift

    x'_iC = lam p_C eps^2 - (1/L_C) |C| x_iC / sum_{k,U} |C ∩ U| l(a_k, a_i) x_kU.

The death term is 0-homogeneous in ``x`` and undefined at ``x = 0``.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInput, DomainError, NonSymmetricWarning
from .lattice import DiscretePathLoss, Tessellation
from .model import ClassProfile, cardinalities, load_factor, overlap_matrix


def _denominators(x, dpl, K):
    return dpl.matrix.T @ x @ overlap_matrix(K).astype(float)


def _check_state(x, tess, K):
    x = np.asarray(x, dtype=float)
    if x.shape != (tess.n_cells, 2**K - 1):
        raise DomainError(f"fluid state must have shape ({tess.n_cells}, {2**K - 1})")
    return x


def death_terms(x, tess: Tessellation, dpl: DiscretePathLoss, profile: ClassProfile) -> np.ndarray:
    x = _check_state(x, tess, profile.K)
    if not np.any(x):
        raise DegenerateInput("fluid dynamics are not defined at x = 0")
    D = _denominators(x, dpl, profile.K)
    if np.any(D <= 0):
        raise DegenerateInput("zero interference denominator in the fluid drift")
    card = cardinalities(profile.K)
    return card[None, :] * x / D / profile.L[None, :]


def fluid_drift(x, tess: Tessellation, dpl_upper: DiscretePathLoss, profile: ClassProfile, lam: float) -> np.ndarray:
    """Drift matrix at ``x``; raises DegenerateInput where it is undefined."""
    return lam * profile.p[None, :] * tess.cell_area - death_terms(x, tess, dpl_upper, profile)


class _SafeDrift:
    """Drift used inside the integrator: a zero coordinate with zero denominator has no departures."""

    def __init__(self, tess, dpl, profile, lam):
        self.M = dpl.matrix.T.copy()
        self.O = overlap_matrix(profile.K).astype(float)
        self.birth = lam * profile.p[None, :] * tess.cell_area
        self.scale = cardinalities(profile.K)[None, :] / profile.L[None, :]
        self.evals = 0

    def __call__(self, x):
        self.evals += 1
        D = self.M @ x @ self.O
        with np.errstate(invalid="ignore", divide="ignore"):
            death = np.where(x > 0, self.scale * x / D, 0.0)
        return self.birth - death


@dataclass
class FluidTrajectory:
    times: np.ndarray
    states: np.ndarray
    clipped: bool
    drained_at: float | None
    steps: int

    @property
    def total_mass(self) -> np.ndarray:
        return self.states.reshape(self.states.shape[0], -1).sum(axis=1)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def to_csv(self, path):
        flat = self.states.reshape(self.states.shape[0], -1)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time"] + [f"x{j}" for j in range(flat.shape[1])] + ["total_mass"])
            for t, row, tot in zip(self.times, flat, self.total_mass):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in row] + [repr(float(tot))])


def _rk4(f, x, h):
    k1 = f(x)
    k2 = f(np.maximum(x + 0.5 * h * k1, 0.0))
    k3 = f(np.maximum(x + 0.5 * h * k2, 0.0))
    k4 = f(np.maximum(x + h * k3, 0.0))
    return x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate_fluid(x0, T: float, tess: Tessellation, dpl: DiscretePathLoss, profile: ClassProfile, lam: float,
                    rtol: float = 1e-10, atol: float = 1e-12, h0: float | None = None, h_max: float | None = None,
                    fixed_step: float | None = None, drain_tol: float = 1e-12) -> FluidTrajectory:
    """Integrate the fluid equations on ``[0, T]`` with classical RK4.

    The default is adaptive step doubling: each step is compared with two
    half steps and accepted when the difference is within ``atol + rtol |x|``
    (the accepted value is the Richardson-corrected half-step result). With
    ``fixed_step`` every step has that length. Negative overshoots are clipped
    to 0 and reported through ``clipped``. Integration stops early when the
    total mass falls below ``drain_tol`` times its initial value; the time is
    stored in ``drained_at``.
    """
    x = _check_state(x0, tess, profile.K).copy()
    if np.any(x <= 0):
        raise DomainError("fluid integration needs a strictly positive initial state")
    if not T >= 0:
        raise DomainError("horizon must be non-negative")
    f = _SafeDrift(tess, dpl, profile, lam)
    mass0 = x.sum()
    times, states = [0.0], [x.copy()]
    clipped = False
    drained = None
    t = 0.0
    h_max = h_max if h_max is not None else max(T / 50, 1e-300)
    h = fixed_step if fixed_step is not None else (h0 if h0 is not None else min(h_max, T / 100 if T > 0 else 1.0))
    steps = 0
    while t < T:
        h = min(h, T - t)
        if fixed_step is not None:
            x_new = _rk4(f, x, h)
        else:
            full = _rk4(f, x, h)
            half = _rk4(f, np.maximum(_rk4(f, x, h / 2), 0.0), h / 2)
            err = np.max(np.abs(half - full) / (atol + rtol * np.abs(half))) / 15
            if err > 1 and h > 1e-14 * max(1.0, T):
                h *= max(0.2, 0.9 * err ** -0.2)
                continue
            x_new = half + (half - full) / 15
        if np.any(x_new < 0):
            clipped = True
            x_new = np.maximum(x_new, 0.0)
        t = t + h
        x = x_new
        steps += 1
        times.append(t)
        states.append(x.copy())
        if x.sum() <= drain_tol * mass0:
            x[:] = 0.0
            states[-1] = x.copy()
            drained = t
            break
        if fixed_step is None:
            h = min(h_max, h * (2.0 if err == 0 else min(2.0, 0.9 * err ** -0.2)))
    return FluidTrajectory(np.array(times), np.array(states), clipped, drained, steps)


def witness(profile: ClassProfile, tess: Tessellation) -> np.ndarray:
    """The vector ``z_iC = p_C L_C`` in every cell."""
    return np.tile(profile.p * profile.L, (tess.n_cells, 1))


def stability_threshold(tess: Tessellation, dpl_upper: DiscretePathLoss, profile: ClassProfile) -> float:
    """``K / (load * <l^eps_D>)``."""
    return profile.K / (load_factor(profile) * dpl_upper.mean_pathloss)


@dataclass(frozen=True)
class WitnessResult:
    stable: bool
    witness: np.ndarray
    threshold: float
    slack: float

    @property
    def verdict(self) -> str:
        return "Stable" if self.stable else "NotCertified"


def stability_witness_check(tess: Tessellation, dpl_upper: DiscretePathLoss, profile: ClassProfile, lam: float,
                            rtol: float = 1e-12) -> WitnessResult:
    """Check the per-queue inequality ``lam p_C eps^2 <= death_iC(z)`` at ``z = p L``.

    ``slack`` is the smallest ``death - birth`` over all queues. Equality up
    to ``rtol`` counts as satisfied.
    """
    if not profile.symmetric:
        warnings.warn("the witness argument is only established for symmetric profiles",
                      NonSymmetricWarning, stacklevel=2)
    z = witness(profile, tess)
    D = _denominators(z, dpl_upper, profile.K)
    card = cardinalities(profile.K)
    with np.errstate(invalid="ignore", divide="ignore"):
        death = np.where(z > 0, card[None, :] * z / D / profile.L[None, :], 0.0)
    birth = lam * profile.p[None, :] * tess.cell_area
    gap = death - birth
    ok = bool(np.all(gap >= -rtol * np.maximum(birth, death)))
    return WitnessResult(ok, z, stability_threshold(tess, dpl_upper, profile), float(gap.min()))
