"""Stationary-density fixed points.

Poisson heuristic: every class is treated as an independent Poisson process
of intensity ``mu_U``, giving for every class ``C``

    mu_C J_C(mu) = lam p_C L_C / (|C| l(r)),
    J_C(mu) = int_0^inf exp(-z N0 - sum_U mu_U I(z, |C ∩ U|)) dz,

with ``I(z, k) = int_D (1 - exp(-z k l(|x|))) dx``. The symmetric version
groups classes by cardinality. The cavity heuristic instead closes the
system on the mean interference ``I_C`` seen by a typical user, through an
approximate pair correlation.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from math import comb

import numpy as np

from .errors import DomainError, NoConvergence
from .model import (ClassProfile, PathLoss, SymmetricProfile, TorusDomain, cardinalities, hypergeometric_alpha,
                    lambda_bounds, load_factor, overlap_matrix)
from .quadrature import LaplaceRule, QuadratureSettings, get_integrator, pathloss_integral

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverSettings:
    """Fixed-point controls.

    An iteration is declared infeasible when an iterate exceeds ``blowup``
    times the low-load estimate ``rhs * N0`` or when it has not met the
    relative Cauchy tolerance ``tol`` after ``max_iter`` steps.
    """

    damping: float = 0.5
    tol: float = 1e-12
    max_iter: int = 10_000
    blowup: float = 1e6
    laplace_step: float = 1.0 / 16
    quadrature: QuadratureSettings | None = None

    def __post_init__(self):
        if not 0 < self.damping <= 1:
            raise DomainError("damping must lie in (0, 1]")
        if not (self.tol > 0 and self.max_iter >= 1 and self.blowup > 1):
            raise DomainError("invalid solver tolerances")


DEFAULT_SOLVER = SolverSettings()


@dataclass
class PoissonSolution:
    mu: np.ndarray
    residual: float
    iterations: int
    converged: bool
    lam: float = 0.0
    index: str = "class"
    n_equations: int = 0
    kernel_evaluations: int = 0
    diverged: bool = False
    second_fixed_point: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        out = {"lambda": self.lam, "index": self.index, "mu": self.mu.tolist(), "residual": self.residual,
               "iterations": self.iterations, "converged": self.converged}
        if self.second_fixed_point is not None:
            out["second_fixed_point"] = self.second_fixed_point.tolist()
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


@dataclass
class CavitySolution:
    mu_s: np.ndarray
    I: np.ndarray
    residual: float
    iterations: int
    converged: bool
    lam: float = 0.0

    def to_dict(self) -> dict:
        return {"lambda": self.lam, "mu": self.mu_s.tolist(), "I": self.I.tolist(), "residual": self.residual,
                "iterations": self.iterations, "converged": self.converged}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


class _PoissonSystem:
    """Equations ``mu_a J_a(mu) = rhs_a`` whose exponent is ``sum_k I(z, k) sum_b G[k, a, b] mu_b``."""

    def __init__(self, dom, pl, N0, rhs, G, settings: SolverSettings):
        if not N0 > 0:
            raise DomainError("noise power must be positive")
        self.rhs = np.asarray(rhs, dtype=float)
        self.G = np.asarray(G, dtype=float)  # (K + 1, n, n), slice 0 unused
        self.settings = settings
        self.rule = LaplaceRule(N0, step=settings.laplace_step)
        integ = get_integrator(dom, pl, settings.quadrature)
        kmax = self.G.shape[0] - 1
        self.table = integ.interference_table(self.rule.z, kmax)[:, 1:]  # (nz, K)
        self.N0 = N0
        self.kernel_evaluations = 0

    @property
    def n(self) -> int:
        return self.rhs.size

    def integrals(self, mu):
        A = np.tensordot(self.G[1:], mu, axes=([2], [0]))  # (K, n)
        E = self.table @ A
        self.kernel_evaluations += self.n
        return self.rule.weights @ np.exp(-E)

    def defect(self, mu):
        return float(np.max(np.abs(mu * self.integrals(mu) - self.rhs)))

    def iterate(self, start=None, history=None):
        """Damped Picard iteration; returns ``(mu, iterations, converged, diverged)``."""
        s = self.settings
        mu = np.zeros(self.n) if start is None else np.array(start, dtype=float)
        if not np.any(self.rhs > 0):
            return np.zeros(self.n), 0, True, False
        limit = s.blowup * np.max(self.rhs * self.N0)
        for it in range(1, s.max_iter + 1):
            J = self.integrals(mu)
            with np.errstate(divide="ignore", over="ignore"):
                target = self.rhs / J
            if not np.all(np.isfinite(target)) or np.max(target) > limit:
                return mu, it, False, True
            nxt = (1 - s.damping) * mu + s.damping * target
            step = np.max(np.abs(nxt - mu))
            mu = nxt
            if history is not None:
                history.append(mu.copy())
            if step <= s.tol * np.max(np.abs(mu)):
                return mu, it, True, False
        return mu, s.max_iter, False, False


def _full_system(profile, dom, pl, lam, N0, settings):
    K = profile.K
    O = overlap_matrix(K)
    G = np.stack([(O == k).astype(float) for k in range(K + 1)])
    rhs = lam * profile.p * profile.L / (cardinalities(K) * pl(dom.r))
    return _PoissonSystem(dom, pl, N0, rhs, G, settings)


def _symmetric_system(sym: SymmetricProfile, dom, pl, lam, N0, settings):
    K = sym.K
    G = np.zeros((K + 1, K, K))
    for j in range(1, K + 1):
        for l in range(1, K + 1):
            for m in range(1, min(j, l) + 1):
                G[m, j - 1, l - 1] = float(hypergeometric_alpha(K, j, l, m))
    j = np.arange(1, K + 1)
    rhs = lam * sym.p * sym.L / (j * pl(dom.r))
    return _PoissonSystem(dom, pl, N0, rhs, G, settings)


def _solve(system, lam, index, settings, start=None, detect_second=False, history=None):
    mu, it, conv, div = system.iterate(start, history)
    sol = PoissonSolution(mu, system.defect(mu), it, conv, float(lam), index, system.n, 0, div)
    if conv and detect_second and np.any(mu > 0):
        hi, _, conv_hi, _ = system.iterate(start=mu * 1e3 + system.rhs * system.N0 * 1e3)
        if conv_hi and np.max(np.abs(hi - mu)) > 1e-6 * np.max(mu):
            log.info("second fixed point detected at lam=%g: %s (smallest %s)", lam, hi, mu)
            sol.second_fixed_point = hi
        else:
            log.info("no second fixed point found from above at lam=%g", lam)
    sol.kernel_evaluations = system.kernel_evaluations
    return sol


def poisson_fixed_point(profile: ClassProfile, dom: TorusDomain, pl: PathLoss, lam: float, N0: float = 1.0,
                        settings: SolverSettings | None = None, start=None, detect_second: bool = False,
                        history: list | None = None) -> PoissonSolution:
    """Smallest solution of the per-class Poisson system, by damped Picard iteration from 0."""
    if not lam >= 0:
        raise DomainError("arrival rate must be non-negative")
    settings = settings or DEFAULT_SOLVER
    system = _full_system(profile, dom, pl, lam, N0, settings)
    return _solve(system, lam, "class", settings, start, detect_second, history)


def poisson_fixed_point_symmetric(profile, dom: TorusDomain, pl: PathLoss, lam: float, N0: float = 1.0,
                                  settings: SolverSettings | None = None, start=None,
                                  detect_second: bool = False) -> PoissonSolution:
    """Cardinality-indexed system: ``mu[j-1]`` is the total density of ``j``-band users."""
    if not lam >= 0:
        raise DomainError("arrival rate must be non-negative")
    sym = profile if isinstance(profile, SymmetricProfile) else SymmetricProfile.from_profile(profile)
    settings = settings or DEFAULT_SOLVER
    system = _symmetric_system(sym, dom, pl, lam, N0, settings)
    return _solve(system, lam, "cardinality", settings, start, detect_second)


def aggregate_by_cardinality(mu, K: int) -> np.ndarray:
    """Sum a per-class vector over classes of equal size."""
    card = cardinalities(K)
    return np.array([mu[card == j].sum() for j in range(1, K + 1)])


def expand_cardinality(mu_j, K: int) -> np.ndarray:
    """Spread cardinality totals evenly over the classes of each size."""
    card = cardinalities(K)
    binom = np.array([comb(K, j) for j in range(1, K + 1)], dtype=float)
    return np.asarray(mu_j)[card - 1] / binom[card - 1]


@dataclass(frozen=True)
class BisectionSettings:
    rel_width: float = 1e-3


def poisson_critical_rate(profile: ClassProfile, dom: TorusDomain, pl: PathLoss, N0: float = 1.0,
                          bisection: BisectionSettings | None = None, settings: SolverSettings | None = None,
                          symmetric: bool | None = None, return_bracket: bool = False):
    """Largest ``lam`` at which the Poisson system has a solution, by bisection.

    The search interval is ``[0, 2 * upper]`` with ``upper`` the general upper
    bound on the critical rate. Feasibility means a converged iteration. The
    smallest solution grows with ``lam``, so each feasible solve seeds the
    next one from below. Symmetric profiles use the reduced system unless
    ``symmetric=False``.
    """
    bisection = bisection or BisectionSettings()
    settings = settings or DEFAULT_SOLVER
    use_sym = profile.symmetric if symmetric is None else symmetric
    sym = SymmetricProfile.from_profile(profile) if use_sym else None
    make = (lambda lam: _symmetric_system(sym, dom, pl, lam, N0, settings)) if use_sym else \
        (lambda lam: _full_system(profile, dom, pl, lam, N0, settings))
    _, upper = lambda_bounds(profile, dom, pl, settings.quadrature)
    mean_loss = pathloss_integral(dom, pl, settings.quadrature).value
    scale = profile.K * pl(dom.r) / (mean_loss * load_factor(profile))
    lo, hi = 0.0, 2 * upper
    warm = None
    while hi - lo >= bisection.rel_width * scale:
        mid = 0.5 * (lo + hi)
        mu, _, conv, _ = make(mid).iterate(start=warm)
        if conv:
            lo, warm = mid, mu
        else:
            hi = mid
    return (lo, hi) if return_bracket else 0.5 * (lo + hi)


# --- cavity heuristic ------------------------------------------------------

def cavity_fixed_point(profile: ClassProfile, dom: TorusDomain, pl: PathLoss, lam: float, N0: float = 1.0,
                       settings: SolverSettings | None = None, tol: float = 1e-8,
                       max_iter: int | None = None) -> CavitySolution:
    """Second-order density estimate with pair correlations closed on mean interference.

    Given the interference vector ``I``,

        mu_C = lam p_C L_C (N0 + I_C) / (|C| l(r))
        rho_CU(x) = lam (mu_U p_C + mu_C p_U) / d_CU(x)
        d_CU(x) = (|C| l(r) / L_C) / (N0 + |C∩U| l(|x|) + I_C)
                + (|U| l(r) / L_U) / (N0 + |C∩U| l(|x|) + I_U)
        I_C = sum_U |C∩U| / mu_C  int_D l(|x|) rho_CU(x) dx,

    iterated with damping from ``I = 0``. Densities are carried as ``mu / lam``
    so classes with vanishing density stay well defined.
    """
    if not lam >= 0:
        raise DomainError("arrival rate must be non-negative")
    if not N0 > 0:
        raise DomainError("noise power must be positive")
    settings = settings or DEFAULT_SOLVER
    max_iter = max_iter or settings.max_iter
    K = profile.K
    n = 2**K - 1
    if lam == 0:
        return CavitySolution(np.zeros(n), np.zeros(n), 0.0, 0, True, 0.0)
    integ = get_integrator(dom, pl, settings.quadrature)
    W = integ.weights * integ.gains  # l(|x|) dx
    g = integ.gains
    O = overlap_matrix(K).astype(float)
    card = cardinalities(K).astype(float)
    gain_r = pl(dom.r)
    p, L = profile.p, profile.L
    serve = card * gain_r / L  # |C| l(r) / L_C
    Og = O[:, :, None] * g[None, None, :]  # |C∩U| l(|x|)

    def update(I):
        m = p * L * (N0 + I) / (card * gain_r)  # mu / lam
        a = serve / (N0 + I)  # p_C / m_C
        d = serve[:, None, None] / (N0 + Og + I[:, None, None]) + serve[None, :, None] / (N0 + Og + I[None, :, None])
        num = lam * (m[None, :] * a[:, None] + p[None, :])  # rho / mu_C, without 1/d
        return np.einsum("cu,cu,cuq,q->c", O, num, 1.0 / d, W), m

    I = np.zeros(n)
    limit = settings.blowup * (N0 + 1.0)
    for it in range(1, max_iter + 1):
        target, m = update(I)
        if not np.all(np.isfinite(target)) or np.max(target) > limit:
            raise NoConvergence(f"cavity interference diverges at lam={lam:g}",
                                state={"I": I, "iterations": it})
        res = float(np.max(np.abs(target - I)) / max(np.max(I), N0))
        if res < tol:
            return CavitySolution(lam * m, I, res, it, True, float(lam))
        I = (1 - settings.damping) * I + settings.damping * target
    raise NoConvergence(f"cavity iteration did not converge in {max_iter} steps at lam={lam:g}",
                        state={"I": I, "iterations": max_iter})
