"""Event-driven simulation of the multiclass spatial birth-death process.

Users are receiver/transmitter dipoles on the torus. A user of class ``C``
(bitmask of bands) at receiver ``x`` sees interference

    I(x) = sum over other transmitters z of |C ∩ C_z| l(|x - z|)

and is served at rate ``|C| l(r) / (N0 + I(x))``; with exponential files of
mean ``L_C`` it leaves at rate ``R / L_C``. Arrivals form a Poisson rain of
intensity ``lam`` per unit area and time.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ConfigError, DomainError, ExplosionStop
from .model import ClassProfile, PathLoss, TorusDomain, popcount, wrap_delta
from .rng import Streams, check_seed

log = logging.getLogger(__name__)

ARRIVAL, DEPARTURE = 0, 1
KIND_NAMES = ("arrival", "departure")
DEFAULT_CAP = 10**6


def _dist_to(points, x, side):
    d = wrap_delta(points - x, side)
    return np.hypot(d[:, 0], d[:, 1])


def _overlap_table(K):
    m = np.arange(2**K, dtype=np.int64)
    return popcount(m[:, None] & m[None, :]).astype(float)


@dataclass(frozen=True)
class Dipole:
    receiver: tuple
    transmitter: tuple
    cls: int
    arrival_time: float
    id: int


class NetworkState:
    """Array store of the current dipoles with incrementally maintained interference.

    Removal swaps the last dipole into the freed slot, so array positions are
    not stable; ``ids`` are.
    """

    def __init__(self, dom: TorusDomain, pl: PathLoss, K: int, capacity: int = 64):
        self.dom = dom
        self.pl = pl
        self.K = K
        self.overlap = _overlap_table(K)
        self.card = popcount(np.arange(2**K)).astype(float)
        self.n = 0
        self.clock = 0.0
        self.next_id = 0
        self.counts = np.zeros(2**K - 1, dtype=np.int64)
        self._kern = _kernels.PathLossKernels(pl)
        self.serve = self.card * pl(dom.r)
        self._alloc(capacity)

    def _alloc(self, cap):
        def grow(a, shape, dtype):
            new = np.zeros(shape, dtype=dtype)
            if a is not None:
                new[: self.n] = a[: self.n]
            return new

        g = lambda name: getattr(self, name, None)
        self.rx = grow(g("rx"), (cap, 2), float)
        self.tx = grow(g("tx"), (cap, 2), float)
        self.cls = grow(g("cls"), cap, np.int64)
        self.ids = grow(g("ids"), cap, np.int64)
        self.t_arr = grow(g("t_arr"), cap, float)
        self.interf = grow(g("interf"), cap, float)

    def __len__(self):
        return self.n

    def add(self, rx, tx, C: int, time: float | None = None) -> int:
        """Insert a dipole and update every cache in O(n). Returns its id."""
        n = self.n
        if n == self.rx.shape[0]:
            self._alloc(2 * n)
        rx = np.asarray(rx, dtype=float)
        tx = np.asarray(tx, dtype=float)
        self.interf[n] = self._kern.add(self.rx, self.tx, self.cls, self.interf, n, rx, tx, C, self.overlap,
                                         float(self.dom.side), self.dom.r == 0)
        self.rx[n] = rx
        self.tx[n] = tx
        self.cls[n] = C
        self.ids[n] = self.next_id
        self.t_arr[n] = self.clock if time is None else time
        self.next_id += 1
        self.n += 1
        self.counts[C - 1] += 1
        return int(self.ids[n])

    def remove_index(self, k: int):
        """Delete the dipole stored at position ``k``; returns ``(id, class, arrival_time)``."""
        out = (int(self.ids[k]), int(self.cls[k]), float(self.t_arr[k]))
        C = out[1]
        tx_k = self.tx[k].copy()
        n = self.n - 1
        for a in (self.rx, self.tx, self.cls, self.ids, self.t_arr, self.interf):
            a[k] = a[n]
        self.n = n
        self.counts[C - 1] -= 1
        self._kern.remove(self.rx, self.cls, self.interf, n, tx_k, C, self.overlap, float(self.dom.side))
        return out

    def index_of(self, dipole_id: int) -> int:
        hits = np.flatnonzero(self.ids[: self.n] == dipole_id)
        if hits.size == 0:
            raise KeyError(dipole_id)
        return int(hits[0])

    def remove(self, dipole_id: int):
        return self.remove_index(self.index_of(dipole_id))

    # from-scratch evaluations --------------------------------------------
    def interference_at(self, x, C: int, own_id=None) -> float:
        n = self.n
        if n == 0:
            return 0.0
        g = self.pl(_dist_to(self.tx[:n], np.asarray(x, dtype=float), self.dom.side))
        w = self.overlap[C, self.cls[:n]] * g
        if own_id is not None:
            w[self.ids[:n] == own_id] = 0.0
        return float(w.sum())

    def recompute(self) -> np.ndarray:
        """Interference at every receiver, O(n^2)."""
        n = self.n
        d = wrap_delta(self.rx[:n, None, :] - self.tx[None, :n, :], self.dom.side)
        g = self.pl(np.hypot(d[..., 0], d[..., 1]))
        w = self.overlap[self.cls[:n, None], self.cls[None, :n]] * g
        np.fill_diagonal(w, 0.0)
        return w.sum(axis=1)

    def audit(self, rtol: float = 1e-9) -> float:
        """Largest relative cache error; raises AssertionError above ``rtol``."""
        if self.n == 0:
            return 0.0
        ref = self.recompute()
        err = np.abs(self.interf[: self.n] - ref) / np.maximum(1.0, np.abs(ref))
        worst = float(err.max())
        if worst > rtol:
            raise AssertionError(f"interference cache drifted: relative error {worst:.3e}")
        return worst

    def rates(self, N0: float) -> np.ndarray:
        """Transmission rate of every dipole."""
        n = self.n
        return self.card[self.cls[:n]] * self.pl(self.dom.r) / (N0 + self.interf[:n])

    def dipoles(self) -> list[Dipole]:
        return [
            Dipole(tuple(self.rx[i]), tuple(self.tx[i]), int(self.cls[i]), float(self.t_arr[i]), int(self.ids[i]))
            for i in range(self.n)
        ]

    @classmethod
    def from_dipoles(cls, dom, pl, K, dipoles, clock: float = 0.0) -> "NetworkState":
        st = cls(dom, pl, K, capacity=max(64, len(dipoles)))
        for dp in sorted(dipoles, key=lambda d: d.id):
            if not 1 <= dp.cls < 2**K:
                raise DomainError(f"class mask {dp.cls} out of range for K={K}")
            st.next_id = dp.id
            st.add(dp.receiver, dp.transmitter, dp.cls, dp.arrival_time)
        st.clock = clock
        return st


def interference_at(x, C: int, own_id, state: NetworkState) -> float:
    """Interference at ``x`` for class ``C`` from every transmitter except ``own_id``'s."""
    return state.interference_at(x, C, own_id)


def transmission_rate(x, C: int, own_id, state: NetworkState, N0: float) -> float:
    if not N0 > 0:
        raise DomainError("noise power must be positive")
    card = int(C).bit_count()
    return card * state.pl(state.dom.r) / (N0 + interference_at(x, C, own_id, state))


@dataclass(frozen=True)
class SimConfig:
    """One simulation run. At least one of ``max_events`` and ``max_time`` must be set."""

    dom: TorusDomain
    pl: PathLoss
    profile: ClassProfile
    lam: float
    N0: float = 1.0
    seed: int = 0
    max_events: int | None = None
    max_time: float | None = None
    cap: int = DEFAULT_CAP

    def __post_init__(self):
        if not self.lam >= 0:
            raise ConfigError(f"arrival rate must be non-negative, got {self.lam}")
        if not self.N0 > 0:
            raise ConfigError(f"noise power must be positive, got {self.N0}")
        if self.max_events is None and self.max_time is None:
            raise ConfigError("simulation needs an event or time budget")
        if self.max_events is not None and self.max_events < 0:
            raise ConfigError("event budget must be non-negative")
        if self.max_time is not None and not self.max_time >= 0:
            raise ConfigError("time budget must be non-negative")
        check_seed(self.seed)

    def replace(self, **kw) -> "SimConfig":
        from dataclasses import replace

        return replace(self, **kw)


@dataclass
class Trajectory:
    """Event log of one run.

    ``staying`` is the sojourn of the departing dipole and NaN for arrivals;
    ``totals`` is the population right after each event.
    """

    times: np.ndarray
    kinds: np.ndarray
    classes: np.ndarray
    ids: np.ndarray
    totals: np.ndarray
    staying: np.ndarray
    initial_counts: np.ndarray
    t_start: float
    t_end: float
    area: float
    K: int
    lam: float = float("nan")
    final_state: NetworkState | None = field(default=None, repr=False, compare=False)

    @property
    def n_events(self) -> int:
        return int(self.times.size)

    @property
    def span(self) -> float:
        return self.t_end - self.t_start

    def class_counts(self) -> np.ndarray:
        """Per-class population after each event, shape ``(n_events, 2**K - 1)``."""
        delta = np.zeros((self.n_events, 2**self.K - 1), dtype=np.int64)
        sign = np.where(self.kinds == ARRIVAL, 1, -1)
        delta[np.arange(self.n_events), self.classes - 1] = sign
        return self.initial_counts[None, :] + np.cumsum(delta, axis=0)

    def count_path(self, C: int | None = None):
        """Step function ``(times, counts)`` with the initial level first."""
        if C is None:
            level0 = int(self.initial_counts.sum())
            vals = self.totals
        else:
            level0 = int(self.initial_counts[C - 1])
            vals = self.class_counts()[:, C - 1]
        t = np.concatenate([[self.t_start], self.times])
        return t, np.concatenate([[level0], vals])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "kind", "class_bitmask", "dipole_id", "total_count", "staying_time_if_departure"])
            for t, k, c, i, n, s in zip(self.times, self.kinds, self.classes, self.ids, self.totals, self.staying):
                w.writerow([repr(float(t)), KIND_NAMES[k], int(c), int(i), int(n), "" if np.isnan(s) else repr(float(s))])


class _Recorder:
    def __init__(self):
        self.rows = []

    def add(self, t, kind, C, did, total, stay=np.nan):
        self.rows.append((t, kind, C, did, total, stay))

    def build(self, initial_counts, t_start, t_end, area, K, lam, state=None) -> Trajectory:
        if self.rows:
            t, k, c, i, n, s = (np.array(col) for col in zip(*self.rows))
        else:
            t, s = np.empty(0), np.empty(0)
            k = c = i = n = np.empty(0, dtype=np.int64)
        return Trajectory(t.astype(float), k.astype(np.int8), c.astype(np.int64), i.astype(np.int64),
                          n.astype(np.int64), s.astype(float), np.asarray(initial_counts, dtype=np.int64).copy(),
                          float(t_start), float(t_end), area, K, lam, state)


class _ClassSampler:
    def __init__(self, p):
        self.cdf = np.cumsum(p)

    def __call__(self, gen) -> int:
        v = gen.random() * self.cdf[-1]
        return int(np.searchsorted(self.cdf, v, side="right")) + 1


def _place(dom: TorusDomain, gen):
    rx = gen.random(2) * dom.side
    if dom.r == 0:
        return rx, rx.copy()
    theta = 2 * np.pi * gen.random()
    tx = np.mod(rx + dom.r * np.array([np.cos(theta), np.sin(theta)]), dom.side)
    return rx, tx


def _check_state(state: NetworkState, config: SimConfig):
    if state.dom != config.dom or state.pl != config.pl or state.K != config.profile.K:
        raise ConfigError("initial state does not match the simulation domain, path loss or band count")


def departure_rates(state: NetworkState, config: SimConfig) -> np.ndarray:
    L = config.profile.L[state.cls[: state.n] - 1]
    return state.rates(config.N0) / L


def _holding(state, config):
    """``L_C / (|C| l(r))`` indexed by class mask (entry 0 unused)."""
    hold = np.zeros(2**state.K)
    hold[1:] = config.profile.L / state.serve[1:]
    return hold


def draw_event(state: NetworkState, config: SimConfig, streams: Streams):
    """Sample the next event without changing the state.

    Returns ``(dt, kind, index)``: a fresh exponential clock is drawn for the
    next arrival and for every present dipole and the earliest wins; ties go
    to the lowest dipole id. ``dt`` is infinite when nothing can happen.
    """
    n = state.n
    arr_rate = config.lam * config.dom.area
    dt_arr = streams.arrivals.exponential(1.0 / arr_rate) if arr_rate > 0 else np.inf
    dt_dep, k = np.inf, -1
    if n:
        expo = streams.departures.standard_exponential(n)
        dt_dep, k = _kernels.race(expo, state.cls, state.interf, state.ids, n, _holding(state, config),
                                  float(config.N0))
    if dt_arr < dt_dep:
        return dt_arr, ARRIVAL, -1
    return dt_dep, DEPARTURE, k


def apply_event(state, config, streams, dt, kind, k, sampler=None):
    """Apply a drawn event; returns ``(kind, class, id, staying)``."""
    state.clock += dt
    if kind == ARRIVAL:
        sampler = sampler or _ClassSampler(config.profile.p)
        C = sampler(streams.arrivals)
        rx, tx = _place(config.dom, streams.placement)
        return ARRIVAL, C, state.add(rx, tx, C), np.nan
    did, C, t0 = state.remove_index(k)
    return DEPARTURE, C, did, state.clock - t0


def step(state: NetworkState, config: SimConfig, streams: Streams, sampler=None):
    """Advance by one event and return ``(kind, class, id, staying)``, or None if nothing can happen."""
    dt, kind, k = draw_event(state, config, streams)
    if dt == np.inf:
        return None
    return apply_event(state, config, streams, dt, kind, k, sampler)


def simulate(config: SimConfig, initial: NetworkState | None = None, audit_every: int = 0) -> Trajectory:
    """Run until the event or time budget is spent.

    With ``max_time`` set the clock stops at ``max_time`` and the event that
    would overshoot it is discarded. ``audit_every > 0`` recomputes all
    interference caches from scratch with that event period.
    """
    prof = config.profile
    if initial is None:
        state = NetworkState(config.dom, config.pl, prof.K)
    else:
        _check_state(initial, config)
        state = initial
    streams = Streams(config.seed)
    sampler = _ClassSampler(prof.p)
    rec = _Recorder()
    init_counts = state.counts.copy()
    t_start = state.clock
    max_events = config.max_events if config.max_events is not None else np.iinfo(np.int64).max
    t_max = config.max_time if config.max_time is not None else np.inf

    def finish():
        return rec.build(init_counts, t_start, state.clock, config.dom.area, prof.K, config.lam, state)

    done = 0
    while done < max_events:
        dt, kind, k = draw_event(state, config, streams)
        if state.clock + dt > t_max:
            state.clock = t_max
            break
        if dt == np.inf:
            break
        kind, C, did, stay = apply_event(state, config, streams, dt, kind, k, sampler)
        rec.add(state.clock, kind, C, did, state.n, stay)
        done += 1
        if state.n > config.cap:
            raise ExplosionStop(f"population exceeded cap {config.cap} at t={state.clock:.6g}", finish())
        if audit_every and done % audit_every == 0:
            state.audit()
    return finish()


# --- monotone coupling -----------------------------------------------------

def check_comparable(low: SimConfig, high: SimConfig, n_grid: int = 2049):
    """Raise ConfigError unless ``high`` dominates ``low`` in the coupling order."""
    if low.dom != high.dom:
        raise ConfigError("coupled systems must share the torus and dipole distance")
    if low.profile.K != high.profile.K or not np.array_equal(low.profile.p, high.profile.p):
        raise ConfigError("coupled systems must share the band count and class probabilities")
    if np.any(low.profile.L > high.profile.L):
        raise ConfigError("mean file sizes of the dominated system must not exceed the dominating ones")
    if low.lam > high.lam:
        raise ConfigError("arrival rate of the dominated system must not exceed the dominating one")
    if low.N0 > high.N0:
        raise ConfigError("noise of the dominated system must not exceed the dominating one")
    r = low.dom.r
    if low.pl(r) < high.pl(r):
        raise ConfigError("signal gain l(r) of the dominated system must not be smaller")
    d = np.union1d(np.linspace(0.0, low.dom.side * np.sqrt(0.5), n_grid),
                   np.array(low.pl.breakpoints + high.pl.breakpoints, dtype=float))
    if np.any(low.pl(d) > high.pl(d)):
        raise ConfigError("interference path loss of the dominated system must not exceed the dominating one")


class _CoupledStore:
    """Union of both systems' dipoles with membership flags and one cache per system."""

    def __init__(self, dom, pl_low, pl_high, K):
        self.dom = dom
        self.pl = (pl_low, pl_high)
        self.overlap = _overlap_table(K)
        self.card = popcount(np.arange(2**K)).astype(float)
        self.n = 0
        self.next_id = 0
        cap = 64
        self.rx = np.zeros((cap, 2))
        self.tx = np.zeros((cap, 2))
        self.cls = np.zeros(cap, dtype=np.int64)
        self.ids = np.zeros(cap, dtype=np.int64)
        self.t_arr = np.zeros(cap)
        self.member = np.zeros((2, cap), dtype=bool)
        self.interf = np.zeros((2, cap))

    def _grow(self):
        n = self.n
        for name in ("rx", "tx", "cls", "ids", "t_arr"):
            a = getattr(self, name)
            new = np.zeros((2 * a.shape[0],) + a.shape[1:], dtype=a.dtype)
            new[:n] = a[:n]
            setattr(self, name, new)
        for name in ("member", "interf"):
            a = getattr(self, name)
            new = np.zeros((2, 2 * a.shape[1]), dtype=a.dtype)
            new[:, :n] = a[:, :n]
            setattr(self, name, new)

    def _gains(self, s, points, x):
        return self.pl[s](_dist_to(points, x, self.dom.side))

    def add(self, rx, tx, C, t, systems):
        n = self.n
        if n == self.rx.shape[0]:
            self._grow()
        for s in (0, 1):
            if n:
                ov = self.overlap[C, self.cls[:n]]
                g_in = self._gains(s, self.tx[:n], rx)
                self.interf[s, n] = (ov * self.member[s, :n]) @ g_in
                if s in systems:
                    g_out = g_in if self.dom.r == 0 else self._gains(s, self.rx[:n], tx)
                    self.interf[s, :n] += ov * g_out
            else:
                self.interf[s, n] = 0.0
            self.member[s, n] = s in systems
        self.rx[n], self.tx[n], self.cls[n], self.ids[n], self.t_arr[n] = rx, tx, C, self.next_id, t
        self.next_id += 1
        self.n += 1
        return int(self.ids[n])

    def leave(self, k, s):
        """Remove dipole at position ``k`` from system ``s``; drop it from the store if it left both."""
        n = self.n
        C = self.cls[k]
        g = self._gains(s, self.rx[:n], self.tx[k]) * self.overlap[C, self.cls[:n]]
        g[k] = 0.0
        self.interf[s, :n] -= g
        self.member[s, k] = False
        if not self.member[:, k].any():
            last = n - 1
            for a in (self.rx, self.tx, self.cls, self.ids, self.t_arr):
                a[k] = a[last]
            self.member[:, k] = self.member[:, last]
            self.interf[:, k] = self.interf[:, last]
            self.n = last

    def rates(self, s, config: SimConfig):
        n = self.n
        cls = self.cls[:n]
        R = self.card[cls] * self.pl[s](self.dom.r) / (config.N0 + self.interf[s, :n])
        return np.where(self.member[s, :n], R / config.profile.L[cls - 1], 0.0)

    def counts(self, s, K):
        out = np.zeros(2**K - 1, dtype=np.int64)
        np.add.at(out, self.cls[: self.n][self.member[s, : self.n]] - 1, 1)
        return out


def coupled_simulate(config_low: SimConfig, config_high: SimConfig, seed: int | None = None,
                     max_events: int | None = None):
    """Run two ordered systems on shared randomness; returns ``(traj_low, traj_high, violations)``.

    Both systems receive the arrivals of a Poisson rain of intensity
    ``lam_low``; the dominating system also receives an independent top-up
    rain of intensity ``lam_high - lam_low``. Departures of both systems are
    thinned from one Poisson embedding: each dipole carries marks at rate
    ``max(rate_low, rate_high)`` and a mark with uniform height ``V`` removes
    it from every system whose departure rate exceeds ``V``. ``violations``
    counts the events after which some dipole is present in the dominated
    system but not in the dominating one.
    """
    check_comparable(config_low, config_high)
    seed = config_low.seed if seed is None else seed
    budget = max_events if max_events is not None else config_low.max_events
    if budget is None:
        raise ConfigError("coupled simulation needs an event budget")
    dom = config_low.dom
    K = config_low.profile.K
    streams = Streams(seed)
    sampler = _ClassSampler(config_low.profile.p)
    store = _CoupledStore(dom, config_low.pl, config_high.pl, K)
    recs = (_Recorder(), _Recorder())
    base_rate = config_low.lam * dom.area
    topup_rate = (config_high.lam - config_low.lam) * dom.area
    cfgs = (config_low, config_high)
    clock = 0.0
    violations = 0
    done = 0
    while done < budget:
        dt_base = streams.arrivals.exponential(1 / base_rate) if base_rate > 0 else np.inf
        dt_top = streams.topup.exponential(1 / topup_rate) if topup_rate > 0 else np.inf
        n = store.n
        if n:
            rl, rh = store.rates(0, config_low), store.rates(1, config_high)
            env = np.maximum(rl, rh)
            cum = np.cumsum(env)
            dt_mark = streams.departures.exponential(1 / cum[-1])
        else:
            dt_mark = np.inf
        dt = min(dt_base, dt_top, dt_mark)
        if dt == np.inf:
            break
        clock += dt
        if dt == dt_base:
            C = sampler(streams.arrivals)
            rx, tx = _place(dom, streams.placement)
            did = store.add(rx, tx, C, clock, (0, 1))
            for s in (0, 1):
                recs[s].add(clock, ARRIVAL, C, did, int(store.member[s, : store.n].sum()))
        elif dt == dt_top:
            C = sampler(streams.topup)
            rx, tx = _place(dom, streams.topup)
            did = store.add(rx, tx, C, clock, (1,))
            recs[1].add(clock, ARRIVAL, C, did, int(store.member[1, : store.n].sum()))
        else:
            k = min(int(np.searchsorted(cum, streams.departures.random() * cum[-1], side="right")), n - 1)
            V = streams.departures.random() * env[k]
            did, C, t0 = int(store.ids[k]), int(store.cls[k]), float(store.t_arr[k])
            leaving = [s for s, rate in ((0, rl[k]), (1, rh[k])) if V < rate]
            if not leaving:
                continue
            for s in leaving:
                store.leave(k, s)
                if store.ids[k] != did:
                    break
            for s in leaving:
                recs[s].add(clock, DEPARTURE, C, did, int(store.member[s, : store.n].sum()), clock - t0)
        done += 1
        m = store.member[:, : store.n]
        if np.any(m[0] & ~m[1]):
            violations += 1
        if store.n > config_high.cap:
            raise ExplosionStop(f"population exceeded cap {config_high.cap}")
    zero = np.zeros(2**K - 1, dtype=np.int64)
    trajs = tuple(recs[s].build(zero, 0.0, clock, dom.area, K, cfgs[s].lam) for s in (0, 1))
    return trajs[0], trajs[1], violations
