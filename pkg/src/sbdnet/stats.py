"""Post-processing of simulated trajectories.

Densities are time averages of the class populations divided by the torus
area, with batch-means standard errors. Stability is judged from the
staying times of departing users: in a stable system their level settles,
in an unstable one it grows roughly linearly with time.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

from .errors import DomainError, InconclusiveWarning
from .simulation import ARRIVAL, DEPARTURE, DEFAULT_CAP, Trajectory

#: Palm-bias correction used for the published density curves.
PALM_BIAS_FACTOR = 1.28
STABLE, UNSTABLE, INCONCLUSIVE = "Stable", "Unstable", "Inconclusive"


def _integral(t, n, x):
    """``int_{t[0]}^{x} n(s) ds`` for the right-continuous step function with jumps at ``t``."""
    area = np.concatenate([[0.0], np.cumsum(n[:-1] * np.diff(t))])
    j = np.searchsorted(t, x, side="right") - 1
    j = np.clip(j, 0, t.size - 1)
    return area[j] + n[j] * (x - t[j])


def time_average(t, n, a, b):
    """Average of a step path over ``[a, b]``; ``a`` and ``b`` may be arrays."""
    t = np.asarray(t, dtype=float)
    n = np.asarray(n, dtype=float)
    return (_integral(t, n, b) - _integral(t, n, a)) / (np.asarray(b) - np.asarray(a))


@dataclass
class DensityEstimate:
    density: float
    stderr: float
    window: tuple
    bias_factor: float
    n_batches: int
    inconclusive: bool = False
    batch_means: np.ndarray = field(default=None, repr=False)

    @property
    def ci95(self):
        return self.density - 1.96 * self.stderr, self.density + 1.96 * self.stderr

    def to_dict(self) -> dict:
        return {"density": self.density, "stderr": self.stderr, "window": list(self.window),
                "bias_factor": self.bias_factor, "n_batches": self.n_batches, "inconclusive": self.inconclusive}


def _window(traj: Trajectory, warmup, window):
    u = traj.t_start + 0.2 * traj.span if warmup is None else traj.t_start + warmup
    t = traj.t_end - u if window is None else window
    if not (t > 0 and u >= traj.t_start and u + t <= traj.t_end * (1 + 1e-12)):
        raise DomainError(f"window [{u}, {u + t}] outside trajectory span [{traj.t_start}, {traj.t_end}]")
    return u, min(u + t, traj.t_end)


def ergodic_density(traj: Trajectory, C: int | None = None, warmup: float | None = None,
                    window: float | None = None, bias_factor: float = 1.0, n_batches: int = 20,
                    min_events_per_batch: int = 5) -> DensityEstimate:
    """Time-averaged density of class ``C`` (all classes when None) times ``bias_factor``.

    ``warmup`` is measured from the trajectory start and defaults to 20% of
    the span; ``window`` defaults to the rest. The standard error comes from
    ``n_batches`` equal-length time batches. If the window holds fewer than
    ``min_events_per_batch`` events per batch the estimate is flagged
    inconclusive and a warning is issued.
    """
    if not bias_factor > 0:
        raise DomainError("bias factor must be positive")
    a, b = _window(traj, warmup, window)
    t, n = traj.count_path(C)
    edges = np.linspace(a, b, n_batches + 1)
    means = time_average(t, n, edges[:-1], edges[1:]) * bias_factor / traj.area
    density = float(time_average(t, n, a, b)) * bias_factor / traj.area
    events = np.count_nonzero((traj.times >= a) & (traj.times <= b))
    inconclusive = events < n_batches * min_events_per_batch
    if inconclusive:
        warnings.warn(f"only {events} events in the window; density estimate is inconclusive",
                      InconclusiveWarning, stacklevel=2)
    stderr = float(np.std(means, ddof=1) / np.sqrt(n_batches)) if n_batches > 1 else float("nan")
    return DensityEstimate(density, stderr, (a, b), bias_factor, n_batches, inconclusive, means)


def staying_times(traj: Trajectory) -> dict:
    """Running mean staying time per class: ``{mask: (departure_times, running_mean)}``.

    Classes without departures map to empty arrays. Key ``0`` pools all classes.
    """
    dep = traj.kinds == DEPARTURE
    out = {}
    for C in range(0, 2**traj.K):
        sel = dep if C == 0 else dep & (traj.classes == C)
        s = traj.staying[sel]
        out[C] = (traj.times[sel], np.cumsum(s) / np.arange(1, s.size + 1))
    return out


@dataclass(frozen=True)
class StabilitySettings:
    """Batch-means slope test on staying times over the second half of the run."""

    level: float = 0.99
    n_batches: int = 10
    min_per_batch: int = 5
    min_span: float = 0.0
    cap: int = DEFAULT_CAP


@dataclass
class SlopeFit:
    slope: float
    ci: tuple
    n: int

    def to_dict(self):
        return {"slope": self.slope, "ci": list(self.ci), "n": self.n}


@dataclass
class StabilityVerdict:
    verdict: str
    slope: float
    ci: tuple
    per_class: dict
    max_count: int
    running_mean_slope: float = float("nan")

    def to_dict(self) -> dict:
        return {"verdict": self.verdict, "slope": self.slope, "ci": list(self.ci), "max_count": self.max_count,
                "running_mean_slope": self.running_mean_slope,
                "per_class": {str(k): v for k, v in self.per_class.items()}}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def ols_slope(x, y, level: float = 0.95) -> SlopeFit:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = x.size
    if n < 3:
        return SlopeFit(float("nan"), (float("nan"), float("nan")), n)
    fit = sps.linregress(x, y)
    q = sps.t.ppf(0.5 + level / 2, n - 2)
    return SlopeFit(float(fit.slope), (float(fit.slope - q * fit.stderr), float(fit.slope + q * fit.stderr)), n)


def _batch_fit(times, stays, a, b, s: StabilitySettings):
    edges = np.linspace(a, b, s.n_batches + 1)
    idx = np.searchsorted(edges, times, side="right") - 1
    idx = np.clip(idx, 0, s.n_batches - 1)
    counts = np.bincount(idx, minlength=s.n_batches)
    if np.any(counts < s.min_per_batch):
        return None
    means = np.bincount(idx, weights=stays, minlength=s.n_batches) / counts
    mids = 0.5 * (edges[1:] + edges[:-1])
    return ols_slope(mids, means, s.level)


def _decide(fit, max_count, s):
    if fit is None or not np.isfinite(fit.slope):
        return INCONCLUSIVE
    if fit.ci[0] > 0:
        return UNSTABLE
    if fit.ci[0] <= 0 <= fit.ci[1] and max_count < s.cap:
        return STABLE
    return INCONCLUSIVE


def classify_stability(traj: Trajectory, settings: StabilitySettings | None = None) -> StabilityVerdict:
    """Stable / Unstable / Inconclusive from the trend of staying times.

    Departures in the second half of the run are grouped into equal-length
    time batches; the OLS slope of the batch means against time, with a
    Student-t interval at ``settings.level``, decides: an interval above 0
    means Unstable, one containing 0 (and a population below the cap) means
    Stable. The pooled verdict is reported with one verdict per class.
    """
    s = settings or StabilitySettings()
    max_count = int(max(traj.totals.max(initial=0), traj.initial_counts.sum()))
    if traj.span < s.min_span or traj.n_events == 0:
        return StabilityVerdict(INCONCLUSIVE, float("nan"), (float("nan"),) * 2, {}, max_count)
    a, b = traj.t_start + 0.5 * traj.span, traj.t_end
    dep = (traj.kinds == DEPARTURE) & (traj.times >= a)
    fit = _batch_fit(traj.times[dep], traj.staying[dep], a, b, s)
    per_class = {}
    for C in range(1, 2**traj.K):
        sel = dep & (traj.classes == C)
        if not sel.any():
            continue
        fc = _batch_fit(traj.times[sel], traj.staying[sel], a, b, s)
        per_class[C] = {"verdict": _decide(fc, max_count, s), **(fc.to_dict() if fc else {})}
    series_t, series_m = staying_times(traj)[0]
    late = series_t >= a
    rm_slope = float(np.polyfit(series_t[late], series_m[late], 1)[0]) if late.sum() >= 2 else float("nan")
    if fit is None:
        return StabilityVerdict(INCONCLUSIVE, float("nan"), (float("nan"),) * 2, per_class, max_count, rm_slope)
    return StabilityVerdict(_decide(fit, max_count, s), fit.slope, fit.ci, per_class, max_count, rm_slope)


@dataclass
class LittleCheck:
    """Mean population against arrival rate times mean staying time for one class."""

    mean_count: float
    mean_count_se: float
    predicted: float
    predicted_se: float

    @property
    def z_score(self) -> float:
        return (self.mean_count - self.predicted) / np.hypot(self.mean_count_se, self.predicted_se)


def little_check(traj: Trajectory, C: int, p_C: float, warmup: float | None = None, n_batches: int = 20) -> LittleCheck:
    """Compare the time-average count of class ``C`` with ``lam p_C |D| W_C``.

    ``W_C`` is the mean staying time of users who arrived and left inside the
    window, with a batch-means standard error over their departure times.
    """
    est = ergodic_density(traj, C, warmup=warmup, n_batches=n_batches)
    a, b = est.window
    sel = (traj.kinds == DEPARTURE) & (traj.classes == C) & (traj.times >= a) & (traj.times <= b)
    sel &= traj.times - traj.staying >= a
    times, stays = traj.times[sel], traj.staying[sel]
    rate = traj.lam * p_C * traj.area
    idx = np.clip(((times - a) / (b - a) * n_batches).astype(int), 0, n_batches - 1)
    counts = np.bincount(idx, minlength=n_batches)
    means = np.bincount(idx, weights=stays, minlength=n_batches) / np.maximum(counts, 1)
    W = float(stays.mean())
    se = float(np.std(means, ddof=1) / np.sqrt(n_batches))
    return LittleCheck(est.density * traj.area, est.stderr * traj.area, rate * W, rate * se)
