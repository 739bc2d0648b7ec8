"""Geometry, path loss, class profiles and the closed-form stability quantities.

Classes (sets of frequency bands) are encoded as bitmasks ``1 .. 2**K - 1``;
band ``b`` (1-based) is bit ``b - 1``. Per-class vectors are indexed by
``mask - 1`` and always iterate in increasing mask order.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from math import comb, lcm
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, DomainError, NonSymmetricWarning

MAX_BANDS = 16
_SUM_TOL = 1e-12


@dataclass(frozen=True)
class TorusDomain:
    """Square torus ``[0, side)^2`` with receiver-transmitter distance ``r``."""

    side: float
    r: float = 0.0

    def __post_init__(self):
        if not self.side > 0:
            raise DomainError(f"torus side must be positive, got {self.side}")
        if not 0 <= self.r < self.side / 2:
            raise DomainError(f"dipole distance must lie in [0, side/2), got {self.r}")

    @property
    def area(self) -> float:
        return self.side * self.side

    @property
    def half(self) -> float:
        return self.side / 2


def wrap_delta(delta, side):
    """Map coordinate differences to the nearest periodic image, in [-side/2, side/2]."""
    return delta - side * np.round(delta / side)


def torus_distance(p, q, dom: TorusDomain):
    """Euclidean distance between ``p`` and ``q`` through the nearest periodic image.

    Points are ``(..., 2)`` arrays with coordinates in ``[0, side)``.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    for pt in (p, q):
        if pt.shape[-1] != 2:
            raise DomainError("points must have two coordinates")
        if np.any(pt < 0) or np.any(pt >= dom.side):
            raise DomainError(f"coordinates must lie in [0, {dom.side})")
    d = wrap_delta(p - q, dom.side)
    out = np.hypot(d[..., 0], d[..., 1])
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class PathLoss:
    """Radial attenuation ``distance -> gain`` with ``gain(0) == 1``.

    Use :meth:`power_law` for ``(1 + d)**-beta`` or :meth:`tabulated` for a
    piecewise-linear table that is held constant past its last distance.
    """

    kind: str
    beta: float | None = None
    distances: tuple = ()
    gains: tuple = ()

    def __post_init__(self):
        if self.kind == "power_law":
            if self.beta is None or not self.beta > 0:
                raise DomainError("power-law exponent must be positive")
        elif self.kind == "tabulated":
            d = np.asarray(self.distances, dtype=float)
            g = np.asarray(self.gains, dtype=float)
            if d.ndim != 1 or d.shape != g.shape or d.size < 1:
                raise DomainError("tabulated path loss needs matching 1-D distance and gain tables")
            if d[0] != 0.0 or np.any(np.diff(d) <= 0):
                raise DomainError("table distances must start at 0 and strictly increase")
            if g[0] != 1.0:
                raise DomainError("path loss must equal 1 at distance 0")
            if np.any(g < 0) or np.any(np.diff(g) > 0):
                raise DomainError("path loss must be non-negative and non-increasing")
        else:
            raise DomainError(f"unknown path-loss family {self.kind!r}")

    @classmethod
    def power_law(cls, beta: float) -> "PathLoss":
        return cls("power_law", beta=float(beta))

    @classmethod
    def tabulated(cls, distances: Sequence[float], gains: Sequence[float]) -> "PathLoss":
        return cls("tabulated", distances=tuple(map(float, distances)), gains=tuple(map(float, gains)))

    @classmethod
    def constant(cls) -> "PathLoss":
        """The clipped constant ``gain == 1`` at every distance."""
        return cls.tabulated([0.0], [1.0])

    def __call__(self, d):
        d = np.asarray(d, dtype=float)
        if self.kind == "power_law":
            out = (1.0 + d) ** (-self.beta)
        else:
            out = np.interp(d, self.distances, self.gains)
        return float(out) if out.ndim == 0 else out

    @property
    def breakpoints(self) -> tuple:
        """Distances where the gain may be non-smooth."""
        return self.distances[1:] if self.kind == "tabulated" else ()

    def to_dict(self) -> dict:
        if self.kind == "power_law":
            return {"power_law": {"beta": self.beta}}
        return {"tabulated": {"distances": list(self.distances), "gains": list(self.gains)}}

    @classmethod
    def from_dict(cls, data: Mapping) -> "PathLoss":
        if "power_law" in data:
            return cls.power_law(data["power_law"]["beta"])
        if "tabulated" in data:
            t = data["tabulated"]
            return cls.tabulated(t["distances"], t["gains"])
        raise ConfigError("path loss needs a 'power_law' or 'tabulated' block")

    def __eq__(self, other):
        if not isinstance(other, PathLoss):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def __hash__(self):
        return hash(repr(self.to_dict()))


# --- class combinatorics ---------------------------------------------------

def n_classes(K: int) -> int:
    return 2**K - 1


def class_masks(K: int) -> np.ndarray:
    return np.arange(1, 2**K, dtype=np.int64)


def popcount(x):
    x = np.asarray(x, dtype=np.int64)
    out = np.zeros_like(x)
    while np.any(x):
        out += x & 1
        x = x >> 1
    return out


def cardinalities(K: int) -> np.ndarray:
    """``|C|`` for every class, in mask order."""
    return popcount(class_masks(K))


def overlap_matrix(K: int) -> np.ndarray:
    """``|C ∩ U|`` for every ordered pair of classes, shape ``(2^K-1, 2^K-1)``."""
    m = class_masks(K)
    return popcount(m[:, None] & m[None, :])


def subset_to_mask(subset: Iterable[int], K: int) -> int:
    mask = 0
    for b in subset:
        b = int(b)
        if not 1 <= b <= K:
            raise DomainError(f"band {b} outside 1..{K}")
        mask |= 1 << (b - 1)
    if mask == 0:
        raise DomainError("a class must contain at least one band")
    return mask


def mask_to_subset(mask: int) -> list[int]:
    return [b + 1 for b in range(mask.bit_length()) if mask >> b & 1]


def _check_K(K):
    if not (isinstance(K, (int, np.integer)) and 1 <= K <= MAX_BANDS):
        raise DomainError(f"band count must be an integer in 1..{MAX_BANDS}, got {K!r}")
    return int(K)


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ClassProfile:
    """Arrival probabilities ``p`` and mean file sizes ``L`` per class.

    ``p`` and ``L`` are indexed by ``mask - 1``. Zero-probability classes are
    allowed; their ``L`` must still be positive.
    """

    K: int
    p: np.ndarray
    L: np.ndarray

    def __post_init__(self):
        K = _check_K(self.K)
        object.__setattr__(self, "K", K)
        p, L = _frozen(self.p), _frozen(self.L)
        if p.shape != (n_classes(K),) or L.shape != (n_classes(K),):
            raise DomainError(f"p and L need {n_classes(K)} entries for K={K}")
        if np.any(p < 0) or abs(p.sum() - 1.0) > _SUM_TOL:
            raise DomainError("class probabilities must be non-negative and sum to 1")
        if np.any(~(L > 0)):
            raise DomainError("mean file sizes must be positive")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "L", L)

    @classmethod
    def from_classes(cls, K: int, classes: Mapping, default_L: float = 1.0) -> "ClassProfile":
        """Build from ``{subset: (p, L)}``; subsets are iterables of 1-based bands or masks."""
        K = _check_K(K)
        p = np.zeros(n_classes(K))
        L = np.full(n_classes(K), float(default_L))
        for key, (pc, lc) in classes.items():
            mask = int(key) if isinstance(key, (int, np.integer)) else subset_to_mask(key, K)
            if not 1 <= mask < 2**K:
                raise DomainError(f"class mask {mask} out of range for K={K}")
            p[mask - 1] = pc
            L[mask - 1] = lc
        return cls(K, p, L)

    @property
    def card(self) -> np.ndarray:
        return cardinalities(self.K)

    @property
    def symmetric(self) -> bool:
        card = self.card
        for j in range(1, self.K + 1):
            sel = card == j
            if np.any(self.p[sel] != self.p[sel][0]) or np.any(self.L[sel] != self.L[sel][0]):
                return False
        return True

    def reduce(self) -> "SymmetricProfile":
        return SymmetricProfile.from_profile(self)

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "classes": [
                {"subset": mask_to_subset(m), "p": float(self.p[m - 1]), "L": float(self.L[m - 1])}
                for m in class_masks(self.K).tolist()
            ],
        }

    def __eq__(self, other):
        if not isinstance(other, ClassProfile):
            return NotImplemented
        return self.K == other.K and np.array_equal(self.p, other.p) and np.array_equal(self.L, other.L)

    def __hash__(self):
        return hash((self.K, self.p.tobytes(), self.L.tobytes()))


@dataclass(frozen=True, eq=False)
class SymmetricProfile:
    """Per-cardinality description: ``p[j-1]`` is the total probability of all
    classes with ``j`` bands, ``L[j-1]`` their common mean file size."""

    K: int
    p: np.ndarray
    L: np.ndarray

    def __post_init__(self):
        K = _check_K(self.K)
        object.__setattr__(self, "K", K)
        p, L = _frozen(self.p), _frozen(self.L)
        if p.shape != (K,) or L.shape != (K,):
            raise DomainError(f"symmetric profile needs {K} per-cardinality entries")
        if np.any(p < 0) or abs(p.sum() - 1.0) > _SUM_TOL:
            raise DomainError("cardinality probabilities must be non-negative and sum to 1")
        if np.any(~(L > 0)):
            raise DomainError("mean file sizes must be positive")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "L", L)

    def expand(self) -> ClassProfile:
        card = cardinalities(self.K)
        binoms = np.array([comb(self.K, j) for j in range(1, self.K + 1)], dtype=float)
        return ClassProfile(self.K, self.p[card - 1] / binoms[card - 1], self.L[card - 1])

    @classmethod
    def from_profile(cls, profile: ClassProfile) -> "SymmetricProfile":
        if not profile.symmetric:
            raise DomainError("profile is not symmetric")
        card = profile.card
        p = np.empty(profile.K)
        L = np.empty(profile.K)
        for j in range(1, profile.K + 1):
            first = int(np.flatnonzero(card == j)[0])
            p[j - 1] = profile.p[first] * comb(profile.K, j)
            L[j - 1] = profile.L[first]
        return cls(profile.K, p, L)

    def to_dict(self) -> dict:
        return {"K": self.K, "symmetric": {"p": self.p.tolist(), "L": self.L.tolist()}}


def profile_from_dict(data: Mapping) -> ClassProfile:
    """Parse ``{K, classes: [{subset, p, L}]}`` or ``{K, symmetric: {p, L}}``."""
    try:
        K = data["K"]
    except (KeyError, TypeError):
        raise ConfigError("profile needs an integer 'K'") from None
    if "symmetric" in data:
        sym = data["symmetric"]
        return SymmetricProfile(K, sym["p"], sym["L"]).expand()
    if "classes" in data:
        entries = {}
        for entry in data["classes"]:
            mask = subset_to_mask(entry["subset"], K)
            if mask in entries:
                raise ConfigError(f"class {sorted(entry['subset'])} listed twice")
            entries[mask] = (float(entry["p"]), float(entry.get("L", 1.0)))
        return ClassProfile.from_classes(K, entries)
    raise ConfigError("profile needs a 'classes' list or a 'symmetric' block")


# --- closed forms ----------------------------------------------------------

def load_factor(profile: ClassProfile) -> float:
    """Mean time-space load per arrival, ``sum_C p_C |C| L_C``."""
    return float(np.sum(profile.p * profile.card * profile.L))


def critical_rate(profile: ClassProfile, dom: TorusDomain, pl: PathLoss, settings=None) -> float:
    """Critical arrival rate ``K l(r) / (<l_D> load)`` per unit area and time.

    The closed form holds for symmetric profiles; other profiles get the same
    number with a :class:`NonSymmetricWarning`.
    """
    from .quadrature import pathloss_integral

    if not profile.symmetric:
        warnings.warn("critical rate is only established for symmetric profiles",
                      NonSymmetricWarning, stacklevel=2)
    mean_loss = pathloss_integral(dom, pl, settings).value
    return profile.K * pl(dom.r) / (mean_loss * load_factor(profile))


def lambda_bounds(profile: ClassProfile, dom: TorusDomain, pl: PathLoss, settings=None):
    """Lower and upper bounds on the critical rate valid for any profile."""
    from .quadrature import pathloss_integral

    mean_loss = pathloss_integral(dom, pl, settings).value
    gain = pl(dom.r)
    K = profile.K
    return gain / (K * profile.L.max() * mean_loss), K * gain / (profile.L.min() * mean_loss)


def _common_denominator(y):
    """``(numerators, den)`` with ``y[i] = numerators[i] / den`` when ``y`` is exact, else None."""
    if len(y) == 0 or not all(isinstance(v, (int, Fraction)) for v in y):
        return None
    den = lcm(*(Fraction(v).denominator for v in y))
    return [Fraction(v).numerator * (den // Fraction(v).denominator) for v in y], den


def _weighted(y, C):
    total = 0
    for U, yU in enumerate(y, start=1):
        k = (C & U).bit_count()
        if k:
            total = total + k * yU
    return total


def overlap_sum(y: Sequence, C: int):
    """``sum_U |C ∩ U| y_U`` for ``y`` indexed by ``mask - 1``.

    Exact (a Fraction) when ``y`` holds ints or Fractions.
    """
    C = int(C)
    if not 1 <= C <= len(y):
        raise DomainError(f"class mask {C} out of range")
    exact = _common_denominator(y)
    if exact is None:
        return _weighted(y, C)
    num, den = exact
    return Fraction(_weighted(num, C), den)


def overlap_sums(y: Sequence) -> list:
    """:func:`overlap_sum` for every class at once, sharing the conversion to integers."""
    exact = _common_denominator(y)
    if exact is None:
        return [_weighted(y, C) for C in range(1, len(y) + 1)]
    num, den = exact
    return [Fraction(_weighted(num, C), den) for C in range(1, len(y) + 1)]


def hypergeometric_alpha(K: int, j: int, l: int, m: int) -> Fraction:
    """Fraction of the ``l``-band classes that share exactly ``m`` bands with a fixed ``j``-band class."""
    K = _check_K(K)
    if not (1 <= j <= K and 1 <= l <= K):
        raise DomainError(f"cardinalities must lie in 1..{K}")
    if not 1 <= m <= min(j, l):
        raise DomainError(f"overlap m={m} outside 1..{min(j, l)}")
    return Fraction(comb(j, m) * comb(K - j, l - m), comb(K, l))
