"""Deterministic integration over the torus and along the half line.

Every torus integral here has a radial integrand ``g(||x||)``, so it reduces
exactly to a one-dimensional integral against the arc length of the circle
of radius ``rho`` that lies inside the square ``[-a, a]^2`` (``a = side/2``)::

    rho <= a:            2 pi rho
    a < rho <= a sqrt 2: rho (2 pi - 8 arccos(a / rho))

The outer band is parametrised by ``rho = a / cos(phi)`` which removes the
square-root behaviour of ``arccos`` at ``rho = a``. Both pieces use composite
Gauss-Legendre panels on a uniform grid that is doubled until two successive
grids agree.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DomainError, NumericalFailure
from .model import PathLoss, TorusDomain

_GL_ORDER = 16
_GL_X, _GL_W = np.polynomial.legendre.leggauss(_GL_ORDER)
# extra integrands the radial rule must resolve before it is accepted
_PROBE_Z = (1.0, 1e2, 1e4)


@dataclass(frozen=True)
class QuadratureSettings:
    abs_tol: float = 1e-9
    rel_tol: float = 1e-8
    max_refinement: int = 20

    def __post_init__(self):
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise DomainError("quadrature tolerances must be positive")
        if self.max_refinement < 1:
            raise DomainError("max_refinement must be at least 1")


DEFAULT_SETTINGS = QuadratureSettings()


@dataclass(frozen=True)
class QuadResult:
    value: float
    error: float


def _panels(lo, hi, m):
    """Gauss-Legendre nodes and weights for ``m`` equal panels on ``[lo, hi]``."""
    edges = np.linspace(lo, hi, m + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    x = (mid[:, None] + half[:, None] * _GL_X[None, :]).ravel()
    w = (half[:, None] * _GL_W[None, :]).ravel()
    return x, w


def _pieces(breaks, lo, hi):
    inner = sorted(b for b in breaks if lo < b < hi)
    pts = [lo, *inner, hi]
    return list(zip(pts[:-1], pts[1:]))


def radial_rule(dom: TorusDomain, breakpoints=(), m: int = 1):
    """Nodes ``rho`` and weights ``W`` with ``sum W g(rho) ~ int_D g(||x||) dx``."""
    a = dom.half
    rho_parts, w_parts = [], []
    for lo, hi in _pieces(breakpoints, 0.0, a):
        x, w = _panels(lo, hi, m)
        rho_parts.append(x)
        w_parts.append(w * 2 * np.pi * x)
    phi_breaks = [np.arccos(a / b) for b in breakpoints if a < b < a * np.sqrt(2)]
    for lo, hi in _pieces(phi_breaks, 0.0, np.pi / 4):
        phi, w = _panels(lo, hi, m)
        c = np.cos(phi)
        rho = a / c
        rho_parts.append(rho)
        w_parts.append(w * rho * (2 * np.pi - 8 * phi) * a * np.sin(phi) / c**2)
    return np.concatenate(rho_parts), np.concatenate(w_parts)


class TorusIntegrator:
    """Radial quadrature on one torus for one path loss, refined once and reused.

    The rule is accepted when doubling the panel count changes the path-loss
    integral and the probe functionals ``I(z, 1)`` by less than the tolerance.
    """

    def __init__(self, dom: TorusDomain, pl: PathLoss, settings: QuadratureSettings | None = None):
        self.dom = dom
        self.pl = pl
        self.settings = settings or DEFAULT_SETTINGS
        self.panels, self.nodes, self.weights, self.error = self._build()
        self.gains = pl(self.nodes)

    def _probe(self, rho, w):
        g = self.pl(rho)
        vals = [w @ g]
        vals += [w @ -np.expm1(-z * g) for z in _PROBE_Z]
        return np.array(vals)

    def _build(self):
        s = self.settings
        bp = self.pl.breakpoints
        m = 1
        rho, w = radial_rule(self.dom, bp, m)
        prev = self._probe(rho, w)
        for _ in range(s.max_refinement):
            m *= 2
            rho, w = radial_rule(self.dom, bp, m)
            cur = self._probe(rho, w)
            if not np.all(np.isfinite(cur)):
                raise NumericalFailure("path-loss integral is not finite", partial=cur[0])
            diff = np.abs(cur - prev)
            if np.all(diff <= np.maximum(s.abs_tol, s.rel_tol * np.abs(cur))):
                return m, rho, w, float(diff[0])
            prev = cur
        raise NumericalFailure(
            f"radial quadrature not converged after {s.max_refinement} refinements",
            partial=float(cur[0]), error=float(diff[0]))

    def integrate(self, g) -> float:
        """``int_D g(||x||) dx`` for a vectorised ``g``."""
        return float(self.weights @ g(self.nodes))

    @property
    def mean_pathloss(self) -> QuadResult:
        return QuadResult(float(self.weights @ self.gains), self.error)

    def interference(self, z, k):
        """``I(z, k) = int_D (1 - exp(-z k l(||x||))) dx``, broadcasting over ``z`` and ``k``."""
        z = np.asarray(z, dtype=float)
        k = np.asarray(k, dtype=float)
        if np.any(z < 0) or np.any(k < 0):
            raise DomainError("interference functional needs z >= 0 and k >= 0")
        zk = (z * k)[..., None]
        out = -np.expm1(-zk * self.gains) @ self.weights
        return float(out) if out.ndim == 0 else out

    def interference_table(self, z, kmax: int) -> np.ndarray:
        """``I(z_i, k)`` for ``k = 0..kmax``; shape ``(len(z), kmax + 1)``."""
        z = np.asarray(z, dtype=float)
        k = np.arange(kmax + 1, dtype=float)
        return self.interference(z[:, None], k[None, :])


@lru_cache(maxsize=64)
def get_integrator(dom: TorusDomain, pl: PathLoss, settings: QuadratureSettings | None = None):
    return TorusIntegrator(dom, pl, settings)


def pathloss_integral(dom: TorusDomain, pl: PathLoss, settings: QuadratureSettings | None = None) -> QuadResult:
    """``<l_D> = int_D l(||x||) dx`` with the difference of the last two grids as error bound."""
    return get_integrator(dom, pl, settings).mean_pathloss


def interference_functional(dom: TorusDomain, pl: PathLoss, z, k, settings: QuadratureSettings | None = None):
    return get_integrator(dom, pl, settings).interference(z, k)


# --- half-line integrals ---------------------------------------------------

def laplace_integral(f, c: float, settings: QuadratureSettings | None = None, init_level: int = 5):
    """``int_0^inf exp(-z c) f(z) dz`` for ``f`` bounded by 1.

    ``f`` takes an array of ``z`` and returns an array of the same length, or
    of shape ``(len(z), m)`` for a vector of integrals computed together. The
    half line is mapped to ``[0, 1)`` by ``u = z / (1 + z)`` and integrated by
    adaptive Simpson, refining every interval whose local error exceeds its
    share of the tolerance.
    """
    if not c > 0:
        raise DomainError(f"decay rate must be positive, got {c}")
    s = settings or DEFAULT_SETTINGS

    def h(u):
        u = np.asarray(u, dtype=float)
        out = np.zeros((u.size,) + shape)
        inner = u < 1.0
        ui = u[inner]
        z = ui / (1.0 - ui)
        vals = np.asarray(f(z), dtype=float).reshape((ui.size,) + shape)
        scale = np.exp(-c * z) / (1.0 - ui) ** 2
        out[inner] = vals * scale.reshape((-1,) + (1,) * len(shape))
        return out

    shape = np.asarray(f(np.array([0.0])), dtype=float).shape[1:]

    n0 = 2**init_level
    grid = np.linspace(0.0, 1.0, 2 * n0 + 1)
    vals = h(grid)
    lo, hi = grid[:-1:2], grid[2::2]
    f_lo, f_mid, f_hi = vals[:-1:2], vals[1::2], vals[2::2]
    width = hi - lo
    wshape = (-1,) + (1,) * len(shape)
    whole = (width.reshape(wshape) / 6) * (f_lo + 4 * f_mid + f_hi)
    tol = np.maximum(s.abs_tol, s.rel_tol * np.abs(whole.sum(axis=0)))

    total = np.zeros(shape)
    err_total = np.zeros(shape)
    for _ in range(s.max_refinement):
        mid = 0.5 * (lo + hi)
        q = h(np.concatenate([0.5 * (lo + mid), 0.5 * (mid + hi)]))
        n = lo.size
        f_q1, f_q3 = q[:n], q[n:]
        hw = (width / 12).reshape(wshape)
        left = hw * (f_lo + 4 * f_q1 + f_mid)
        right = hw * (f_mid + 4 * f_q3 + f_hi)
        fine = left + right
        err = np.abs(fine - whole) / 15
        local = tol * width.reshape(wshape)
        ok = np.all(err <= local, axis=tuple(range(1, err.ndim)))
        total += (fine[ok] + (fine[ok] - whole[ok]) / 15).sum(axis=0)
        err_total += err[ok].sum(axis=0)
        if ok.all():
            out = total if shape else float(total)
            return out
        bad = ~ok
        lo, mid, hi = lo[bad], mid[bad], hi[bad]
        lo, hi = np.concatenate([lo, mid]), np.concatenate([mid, hi])
        f_lo, f_mid, f_hi = (np.concatenate([f_lo[bad], f_mid[bad]]),
                             np.concatenate([f_q1[bad], f_q3[bad]]),
                             np.concatenate([f_mid[bad], f_hi[bad]]))
        whole = np.concatenate([left[bad], right[bad]])
        width = hi - lo
    partial = total + whole.sum(axis=0)
    raise NumericalFailure("adaptive Simpson did not converge", partial=partial,
                           error=err_total + np.abs(whole).sum(axis=0))


class LaplaceRule:
    """Fixed trapezoid rule in ``t = log z`` for ``int_0^inf exp(-c z) f(z) dz``.

    The substitution makes the rule insensitive to the scale on which ``f``
    decays, so one node set serves a whole fixed-point iteration. ``error``
    compares the rule with its every-other-node subrule.
    """

    def __init__(self, c: float, step: float = 1.0 / 16, t_min: float = -40.0, decay: float = 40.0):
        if not c > 0:
            raise DomainError(f"decay rate must be positive, got {c}")
        self.c = c
        self.step = step
        t_max = np.log(decay / c)
        n = int(np.ceil((t_max - t_min) / step))
        n += n % 2
        t = t_min + step * np.arange(n + 1)
        self.z = np.exp(t)
        self.weights = step * self.z * np.exp(-c * self.z)

    def integrate(self, values):
        """Integrate samples of ``f`` at ``self.z`` (leading axis) and return ``(value, error)``."""
        values = np.asarray(values, dtype=float)
        fine = np.tensordot(self.weights, values, axes=(0, 0))
        coarse = 2 * np.tensordot(self.weights[::2], values[::2], axes=(0, 0))
        return fine, np.abs(fine - coarse)
