"""Experiment configuration files.

A configuration is a YAML mapping::

    scenario: two-band
    domain: {side: 10, r: 0}
    pathloss: {power_law: {beta: 4}}
    profile:
      K: 2
      classes:
        - {subset: [1], p: 0.4, L: 1}
        - {subset: [2], p: 0.4, L: 1}
        - {subset: [1, 2], p: 0.2, L: 2}
    noise: 1.0
    lambda: {relative: 0.9}      # or {absolute: 1.2}
    seeds: [1, 2, 3, 4, 5]
    budget: {events: 100000}     # and/or {time: 500}

Optional blocks: ``lattice`` (``eps``, ``eps_list``, ``mode``), ``fluid``
(``T``, ``scale``), ``sweep`` (``lambda_rel``), ``quadrature``, ``solver``,
``stability``, ``density``, ``output``, ``cap``. Validation errors carry the
line of the offending entry.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import yaml

from .errors import ConfigError, DomainError
from .heuristics import SolverSettings
from .model import ClassProfile, PathLoss, TorusDomain, critical_rate, profile_from_dict
from .quadrature import QuadratureSettings
from .simulation import DEFAULT_CAP
from .stats import StabilitySettings

_TOP_KEYS = {"scenario", "domain", "pathloss", "profile", "noise", "lambda", "seeds", "budget", "lattice", "fluid",
             "sweep", "quadrature", "solver", "stability", "density", "output", "cap"}


def _plain(node, lines, path):
    """Convert a composed YAML node to Python data, recording each entry's line under its key path."""
    lines[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        out = {}
        for k, v in node.value:
            key = yaml.safe_load(yaml.serialize(k))
            if key in out:
                raise ConfigError(f"duplicate key {key!r}", line=k.start_mark.line + 1)
            out[key] = _plain(v, lines, path + (key,))
            lines[path + (key,)] = k.start_mark.line + 1
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_plain(v, lines, path + (i,)) for i, v in enumerate(node.value)]
    return yaml.safe_load(yaml.serialize(node))


def parse_yaml(text: str):
    """Return ``(data, lines)`` where ``lines`` maps key paths to 1-based line numbers."""
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"malformed YAML: {getattr(exc, 'problem', exc)}",
                          line=mark.line + 1 if mark else None) from None
    lines = {}
    if node is None:
        raise ConfigError("empty configuration", line=1)
    data = _plain(node, lines, ())
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a mapping", line=1)
    return data, lines


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str
    dom: TorusDomain
    pl: PathLoss
    profile: ClassProfile
    N0: float = 1.0
    lam_kind: str = "relative"
    lam_value: float = 0.9
    seeds: tuple = (1,)
    max_events: int | None = 100_000
    max_time: float | None = None
    eps: float | None = None
    eps_list: tuple = (2.0, 1.0, 0.5, 0.25)
    lattice_mode: str = "upper"
    fluid_T: float = 100.0
    fluid_scale: float = 10.0
    sweep_rel: tuple = (0.9, 1.1)
    quadrature: QuadratureSettings = field(default_factory=QuadratureSettings)
    solver: SolverSettings = field(default_factory=SolverSettings)
    stability: StabilitySettings = field(default_factory=StabilitySettings)
    bias_factor: float = 1.0
    warmup: float | None = None
    output: str = "sbdnet_out"
    cap: int = DEFAULT_CAP

    @property
    def lattice_eps(self) -> float:
        """Cell side; defaults to ``side / 20``."""
        return self.eps if self.eps is not None else self.dom.side / 20

    def critical_rate(self) -> float:
        return critical_rate(self.profile, self.dom, self.pl, self.quadrature)

    def resolve_lambda(self, rel: float | None = None) -> float:
        """Absolute arrival rate; ``rel`` overrides the configured value as a multiple of the critical rate."""
        if rel is not None:
            return rel * self.critical_rate()
        if self.lam_kind == "absolute":
            return self.lam_value
        return self.lam_value * self.critical_rate()

    def to_dict(self) -> dict:
        budget = {}
        if self.max_events is not None:
            budget["events"] = self.max_events
        if self.max_time is not None:
            budget["time"] = self.max_time
        q, s, st = self.quadrature, self.solver, self.stability
        return {
            "scenario": self.scenario,
            "domain": {"side": self.dom.side, "r": self.dom.r},
            "pathloss": self.pl.to_dict(),
            "profile": self.profile.to_dict(),
            "noise": self.N0,
            "lambda": {self.lam_kind: self.lam_value},
            "seeds": list(self.seeds),
            "budget": budget,
            "lattice": {"eps_list": list(self.eps_list), "mode": self.lattice_mode,
                        **({"eps": self.eps} if self.eps is not None else {})},
            "fluid": {"T": self.fluid_T, "scale": self.fluid_scale},
            "sweep": {"lambda_rel": list(self.sweep_rel)},
            "quadrature": {"abs_tol": q.abs_tol, "rel_tol": q.rel_tol, "max_refinement": q.max_refinement},
            "solver": {"damping": s.damping, "tol": s.tol, "max_iter": s.max_iter, "blowup": s.blowup},
            "stability": {"level": st.level, "n_batches": st.n_batches, "min_per_batch": st.min_per_batch},
            "density": {"bias_factor": self.bias_factor, "warmup": self.warmup},
            "output": self.output,
            "cap": self.cap,
        }

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    def digest(self) -> str:
        """Stable hash of the normalised configuration."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


class _Validator:
    def __init__(self, data, lines):
        self.data = data
        self.lines = lines

    def line(self, *path):
        while path and path not in self.lines:
            path = path[:-1]
        return self.lines.get(path)

    def fail(self, msg, *path):
        raise ConfigError(msg, line=self.line(*path))

    def get(self, *path, default=None, required=False):
        cur = self.data
        for i, key in enumerate(path):
            if not isinstance(cur, dict):
                self.fail(f"'{'.'.join(map(str, path[:i]))}' must be a mapping", *path[:i])
            if key not in cur:
                if required:
                    self.fail(f"missing required entry '{'.'.join(map(str, path))}'", *path[:i])
                return default
            cur = cur[key]
        return cur

    def number(self, *path, default=None, required=False, positive=False, nonneg=False, integer=False):
        v = self.get(*path, default=default, required=required)
        if v is None:
            return None
        name = ".".join(map(str, path))
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.fail(f"'{name}' must be a number, got {v!r}", *path)
        if integer and not float(v).is_integer():
            self.fail(f"'{name}' must be an integer", *path)
        if positive and not v > 0:
            self.fail(f"'{name}' must be positive", *path)
        if nonneg and not v >= 0:
            self.fail(f"'{name}' must be non-negative", *path)
        return int(v) if integer else float(v)

    def block(self, name, cls, fields):
        raw = self.get(name, default={})
        if not isinstance(raw, dict):
            self.fail(f"'{name}' must be a mapping", name)
        kw = {}
        for key, kind in fields.items():
            if key in raw:
                kw[key] = self.number(name, key, integer=kind is int)
        unknown = set(raw) - set(fields)
        if unknown:
            self.fail(f"unknown entries in '{name}': {sorted(unknown)}", name, sorted(unknown)[0])
        try:
            return cls(**kw)
        except (DomainError, ValueError) as exc:
            self.fail(str(exc), name)


def config_from_dict(data: dict, lines: dict | None = None) -> ExperimentConfig:
    v = _Validator(data, lines or {})
    unknown = set(data) - _TOP_KEYS
    if unknown:
        key = sorted(unknown)[0]
        v.fail(f"unknown top-level entry {key!r}", key)
    try:
        dom = TorusDomain(v.number("domain", "side", required=True, positive=True),
                          v.number("domain", "r", default=0.0, nonneg=True))
    except DomainError as exc:
        v.fail(str(exc), "domain")
    pl_raw = v.get("pathloss", required=True)
    try:
        if not isinstance(pl_raw, dict):
            raise ConfigError("'pathloss' must be a mapping")
        pl = PathLoss.from_dict(pl_raw)
    except (ConfigError, DomainError, KeyError, TypeError) as exc:
        v.fail(f"invalid path loss: {exc}", "pathloss")
    prof_raw = v.get("profile", required=True)
    try:
        profile = profile_from_dict(prof_raw)
    except (ConfigError, DomainError, KeyError, TypeError) as exc:
        v.fail(f"invalid profile: {exc}", "profile")
    N0 = v.number("noise", default=1.0, positive=True)

    lam_raw = v.get("lambda", default={"relative": 0.9})
    if not isinstance(lam_raw, dict) or len(lam_raw) != 1 or next(iter(lam_raw)) not in ("relative", "absolute"):
        v.fail("'lambda' must be {relative: x} or {absolute: x}", "lambda")
    lam_kind = next(iter(lam_raw))
    lam_value = v.number("lambda", lam_kind, nonneg=True)
    if lam_kind == "relative" and not profile.symmetric:
        v.fail("a relative arrival rate needs a symmetric profile", "lambda")

    seeds = v.get("seeds", default=[1])
    if isinstance(seeds, int) and not isinstance(seeds, bool):
        seeds = [seeds]
    if not isinstance(seeds, list) or not seeds or not all(
            isinstance(s, int) and not isinstance(s, bool) and 0 <= s < 2**64 for s in seeds):
        v.fail("'seeds' must be a non-empty list of non-negative integers", "seeds")

    max_events = v.number("budget", "events", integer=True, nonneg=True)
    max_time = v.number("budget", "time", nonneg=True)
    if max_events is None and max_time is None:
        max_events = 100_000

    lat = v.get("lattice", default={})
    eps = v.number("lattice", "eps", positive=True)
    eps_list = v.get("lattice", "eps_list", default=[2.0, 1.0, 0.5, 0.25])
    mode = v.get("lattice", "mode", default="upper")
    if mode not in ("upper", "lower"):
        v.fail("'lattice.mode' must be 'upper' or 'lower'", "lattice", "mode")
    if not isinstance(eps_list, list) or not all(isinstance(e, (int, float)) and e > 0 for e in eps_list):
        v.fail("'lattice.eps_list' must be a list of positive numbers", "lattice", "eps_list")
    if isinstance(lat, dict) and set(lat) - {"eps", "eps_list", "mode"}:
        v.fail(f"unknown entries in 'lattice': {sorted(set(lat) - {'eps', 'eps_list', 'mode'})}", "lattice")

    sweep_rel = v.get("sweep", "lambda_rel", default=[0.9, 1.1])
    if not isinstance(sweep_rel, list) or not all(isinstance(x, (int, float)) and x >= 0 for x in sweep_rel):
        v.fail("'sweep.lambda_rel' must be a list of non-negative numbers", "sweep", "lambda_rel")

    quad = v.block("quadrature", QuadratureSettings, {"abs_tol": float, "rel_tol": float, "max_refinement": int})
    solver = v.block("solver", SolverSettings, {"damping": float, "tol": float, "max_iter": int, "blowup": float})
    stab = v.block("stability", StabilitySettings, {"level": float, "n_batches": int, "min_per_batch": int})
    cap = v.number("cap", default=DEFAULT_CAP, integer=True, positive=True)
    stab = StabilitySettings(stab.level, stab.n_batches, stab.min_per_batch, stab.min_span, cap)

    output = v.get("output", default="sbdnet_out")
    if not isinstance(output, str):
        v.fail("'output' must be a path string", "output")
    scenario = v.get("scenario", default="unnamed")
    if not isinstance(scenario, str):
        v.fail("'scenario' must be a string", "scenario")

    return ExperimentConfig(
        scenario=scenario, dom=dom, pl=pl, profile=profile, N0=N0, lam_kind=lam_kind, lam_value=lam_value,
        seeds=tuple(seeds), max_events=max_events, max_time=max_time, eps=eps,
        eps_list=tuple(float(e) for e in eps_list), lattice_mode=mode,
        fluid_T=v.number("fluid", "T", default=100.0, positive=True),
        fluid_scale=v.number("fluid", "scale", default=10.0, positive=True),
        sweep_rel=tuple(float(x) for x in sweep_rel), quadrature=quad, solver=solver, stability=stab,
        bias_factor=v.number("density", "bias_factor", default=1.0, positive=True),
        warmup=v.number("density", "warmup", nonneg=True), output=output, cap=cap,
    )


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        text = fh.read()
    return loads(text)


def loads(text: str) -> ExperimentConfig:
    data, lines = parse_yaml(text)
    return config_from_dict(data, lines)


TWO_BAND_YAML = """\
scenario: two-band
domain: {side: 10, r: 0}
pathloss: {power_law: {beta: 4}}
profile:
  K: 2
  classes:
    - {subset: [1], p: 0.4, L: 1}
    - {subset: [2], p: 0.4, L: 1}
    - {subset: [1, 2], p: 0.2, L: 2}
noise: 1.0
lambda: {relative: 0.9}
seeds: [1, 2, 3, 4, 5]
budget: {events: 100000}
"""


def two_band_config() -> ExperimentConfig:
    """Two bands, classes {1}, {2}, {1,2} with p = (0.4, 0.4, 0.2), L = (1, 1, 2), l(x) = (1+x)^-4, side 10."""
    return loads(TWO_BAND_YAML)
