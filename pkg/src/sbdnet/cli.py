"""Command-line entry point ``sbdnet``.

Every subcommand writes CSV/JSON artifacts into the output directory together
with ``manifest.json`` (config hash, seeds, ``git describe``, wall time).
Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import subprocess
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, load_config, two_band_config
from .errors import ConfigError, DomainError, ExplosionStop, NoConvergence, NumericalFailure
from .fluid import integrate_fluid, stability_witness_check, witness
from .heuristics import cavity_fixed_point, poisson_critical_rate, poisson_fixed_point
from .lattice import build_discrete_pathloss, lattice_simulate, lattice_thresholds, Tessellation
from .model import ClassProfile, lambda_bounds, load_factor
from .quadrature import pathloss_integral
from .simulation import SimConfig, simulate
from .stats import classify_stability, ergodic_density, staying_times

log = logging.getLogger("sbdnet")

EXIT_CONFIG, EXIT_NUMERIC = 2, 3


def _git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], capture_output=True, text=True,
                             timeout=10, cwd=Path(__file__).resolve().parent)
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


class Run:
    """Output directory plus manifest bookkeeping for one command."""

    def __init__(self, command: str, cfg: ExperimentConfig, out: Path, seeds):
        self.command = command
        self.cfg = cfg
        self.out = out
        self.seeds = list(seeds)
        self.files = []
        self.start = time.perf_counter()
        out.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        self.files.append(name)
        return self.out / name

    def write_json(self, name: str, data):
        with open(self.path(name), "w") as fh:
            json.dump(data, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_rows(self, name: str, header, rows):
        with open(self.path(name), "w") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(_fmt(v) for v in row) + "\n")

    def finish(self, extra=None):
        manifest = {
            "command": self.command,
            "config_hash": self.cfg.digest(),
            "seeds": self.seeds,
            "git_describe": _git_describe(),
            "version": __version__,
            "wall_time_s": time.perf_counter() - self.start,
            "outputs": sorted(self.files),
        }
        manifest.update(extra or {})
        with open(self.out / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(self.out / "config.yaml", "w") as fh:
            fh.write(self.cfg.to_yaml())


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def _lambda(cfg: ExperimentConfig, args) -> float:
    return cfg.resolve_lambda(args.lambda_rel)


def _sim_config(cfg: ExperimentConfig, lam: float, seed: int) -> SimConfig:
    return SimConfig(cfg.dom, cfg.pl, cfg.profile, lam, N0=cfg.N0, seed=seed, max_events=cfg.max_events,
                     max_time=cfg.max_time, cap=cfg.cap)


# --- subcommands -------------------------------------------------------------

def cmd_lambda_c(cfg, args, run):
    mean = pathloss_integral(cfg.dom, cfg.pl, cfg.quadrature)
    lo, hi = lambda_bounds(cfg.profile, cfg.dom, cfg.pl, cfg.quadrature)
    data = {"load_factor": load_factor(cfg.profile), "mean_pathloss": mean.value, "mean_pathloss_error": mean.error,
            "lower_bound": lo, "upper_bound": hi, "symmetric": cfg.profile.symmetric}
    if cfg.profile.symmetric:
        data["lambda_c"] = cfg.critical_rate()
    rows = []
    for eps in cfg.eps_list:
        try:
            tess = Tessellation(cfg.dom, eps)
        except DomainError as exc:
            raise ConfigError(f"lattice.eps_list: {exc}") from None
        upper, lower = lattice_thresholds(tess, cfg.pl, cfg.profile)
        rows.append((eps, upper, lower))
    data["lattice"] = [{"eps": e, "lambda_upper_chain": u, "lambda_lower_chain": l} for e, u, l in rows]
    run.write_json("lambda_c.json", data)
    run.write_rows("lattice_thresholds.csv", ["eps", "lambda_bar", "lambda_underbar"], rows)
    if "lambda_c" in data:
        print(f"lambda_c = {data['lambda_c']:.12g}")
    print(f"bounds = [{lo:.12g}, {hi:.12g}]")
    for e, u, l in rows:
        print(f"eps = {e:g}: [{u:.6g}, {l:.6g}]")


def _simulate_one(cfg: ExperimentConfig, lam: float, seed: int, rel):
    """Worker for ``simulate`` and ``sweep``: returns a summary dict and the trajectory."""
    try:
        traj = simulate(_sim_config(cfg, lam, seed))
        exploded = False
    except ExplosionStop as exc:
        traj, exploded = exc.trajectory, True
    verdict = classify_stability(traj, cfg.stability)
    summary = {"lambda": lam, "lambda_rel": rel, "seed": seed, "events": traj.n_events, "t_end": traj.t_end,
               "exploded": exploded, **verdict.to_dict()}
    if traj.n_events and not exploded:
        try:
            est = ergodic_density(traj, warmup=cfg.warmup, bias_factor=cfg.bias_factor)
            summary["density"] = est.to_dict()
        except DomainError:
            pass
    return summary, traj


def _sweep_task(payload):
    cfg_yaml, lam, seed, rel, out = payload
    from .config import loads
    cfg = loads(cfg_yaml)
    summary, traj = _simulate_one(cfg, lam, seed, rel)
    name = f"traj_rel{rel:g}_seed{seed}.csv" if rel is not None else f"traj_lam{lam:g}_seed{seed}.csv"
    traj.to_csv(Path(out) / name)
    return summary, name


def cmd_simulate(cfg, args, run):
    lam = _lambda(cfg, args)
    rel = args.lambda_rel if args.lambda_rel is not None else (cfg.lam_value if cfg.lam_kind == "relative" else None)
    summaries = []
    for seed in run.seeds:
        summary, traj = _simulate_one(cfg, lam, seed, rel)
        traj.to_csv(run.path(f"traj_seed{seed}.csv"))
        summaries.append(summary)
        print(f"seed {seed}: {summary['verdict']} (slope {summary['slope']:.4g}, {traj.n_events} events)")
    run.write_json("summary.json", summaries)


def cmd_sweep(cfg, args, run):
    lam_c = cfg.critical_rate()
    tasks = [(cfg.to_yaml(), rel * lam_c, seed, rel, str(run.out)) for rel in cfg.sweep_rel for seed in run.seeds]
    jobs = max(1, args.jobs or 1)
    if jobs == 1:
        results = [_sweep_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_task, tasks))
    rows = []
    for summary, name in results:
        run.files.append(name)
        dens = summary.get("density", {})
        rows.append((summary["lambda_rel"], summary["lambda"], summary["seed"], summary["verdict"], summary["slope"],
                     summary["ci"][0], summary["ci"][1], summary["max_count"], dens.get("density", float("nan")),
                     dens.get("stderr", float("nan"))))
    run.write_rows("sweep.csv", ["lambda_rel", "lambda", "seed", "verdict", "slope", "ci_low", "ci_high",
                                 "max_count", "density", "density_stderr"], rows)
    for rel in cfg.sweep_rel:
        verdicts = [r[3] for r in rows if r[0] == rel]
        print(f"{rel:g} lambda_c: " + " ".join(verdicts))


def cmd_lattice_sim(cfg, args, run):
    tess = Tessellation(cfg.dom, cfg.lattice_eps)
    dpl = build_discrete_pathloss(tess, cfg.pl, cfg.lattice_mode)
    lam = _lambda(cfg, args)
    for seed in run.seeds:
        try:
            traj = lattice_simulate(tess, dpl, cfg.profile, lam, cfg.N0, max_events=cfg.max_events,
                                    max_time=cfg.max_time, seed=seed, cap=cfg.cap)
        except ExplosionStop as exc:
            traj = exc.trajectory
        traj.to_csv(run.path(f"lattice_seed{seed}.csv"))
        print(f"seed {seed}: {traj.n_events} events, final population {int(traj.final_counts.sum())}")


def cmd_fluid(cfg, args, run):
    tess = Tessellation(cfg.dom, cfg.lattice_eps)
    upper = build_discrete_pathloss(tess, cfg.pl, "upper")
    lam = _lambda(cfg, args)
    check = stability_witness_check(tess, upper, cfg.profile, lam)
    x0 = cfg.fluid_scale * witness(cfg.profile, tess)
    traj = integrate_fluid(x0, cfg.fluid_T, tess, upper, cfg.profile, lam)
    traj.to_csv(run.path("fluid.csv"))
    run.write_json("fluid.json", {"lambda": lam, "threshold": check.threshold, "verdict": check.verdict,
                                  "slack": check.slack, "clipped": traj.clipped, "drained_at": traj.drained_at,
                                  "steps": traj.steps, "final_mass": float(traj.total_mass[-1])})
    print(f"witness check: {check.verdict} (threshold {check.threshold:.6g}); final mass {traj.total_mass[-1]:.6g}")


def cmd_heuristic(cfg, args, run):
    lam = _lambda(cfg, args)
    if args.kind == "poisson":
        sol = poisson_fixed_point(cfg.profile, cfg.dom, cfg.pl, lam, cfg.N0, cfg.solver)
        if not sol.converged:
            raise NumericalFailure(f"Poisson iteration infeasible at lambda={lam:g}", partial=sol.mu)
        mu = sol.mu
        run.write_json("poisson.json", sol.to_dict())
    else:
        sol = cavity_fixed_point(cfg.profile, cfg.dom, cfg.pl, lam, cfg.N0, cfg.solver)
        mu = sol.mu_s
        run.write_json("cavity.json", sol.to_dict())
    print(f"{args.kind} densities at lambda={lam:.6g}: " + " ".join(f"{m:.6g}" for m in mu))


def cmd_lambda_p(cfg, args, run):
    lo, hi = poisson_critical_rate(cfg.profile, cfg.dom, cfg.pl, cfg.N0, settings=cfg.solver, return_bracket=True)
    data = {"lambda_p": 0.5 * (lo + hi), "bracket": [lo, hi]}
    if cfg.profile.symmetric:
        data["lambda_c"] = cfg.critical_rate()
    run.write_json("lambda_p.json", data)
    print(f"lambda_P in [{lo:.6g}, {hi:.6g}]")


# --- presets -------------------------------------------------------------------

def _preset_pop(cfg, args, run, delay=False):
    seed = run.seeds[0]
    lam_c = cfg.critical_rate()
    rows = []
    for rel in (0.9, 1.1):
        summary, traj = _simulate_one(cfg, rel * lam_c, seed, rel)
        if delay:
            series = staying_times(traj)
            for C, (t, m) in sorted(series.items()):
                step = max(1, t.size // 2000)
                rows += [(rel, C, tt, mm) for tt, mm in zip(t[::step], m[::step])]
        else:
            step = max(1, traj.n_events // 2000)
            counts = traj.class_counts()
            rows += [(rel, t, n, *c) for t, n, c in zip(traj.times[::step], traj.totals[::step], counts[::step])]
        print(f"{rel:g} lambda_c: {summary['verdict']}")
    if delay:
        run.write_rows("fig_delay.csv", ["lambda_rel", "class_bitmask", "time", "mean_staying_time"], rows)
    else:
        classes = [f"count_{C}" for C in range(1, 2**cfg.profile.K)]
        run.write_rows("fig_pop.csv", ["lambda_rel", "time", "total_count", *classes], rows)


def _preset_density(cfg, args, run):
    lam_c = cfg.critical_rate()
    seed = run.seeds[0]
    rows = []
    for rel in cfg.sweep_rel:
        lam = rel * lam_c
        summary, traj = _simulate_one(cfg, lam, seed, rel)
        dens = summary.get("density", {}).get("density", float("nan"))
        poisson = poisson_fixed_point(cfg.profile, cfg.dom, cfg.pl, lam, cfg.N0, cfg.solver)
        try:
            cav = float(cavity_fixed_point(cfg.profile, cfg.dom, cfg.pl, lam, cfg.N0, cfg.solver).mu_s.sum())
        except NoConvergence:
            cav = float("nan")
        rows.append((rel, lam, dens, float(poisson.mu.sum()) if poisson.converged else float("nan"), cav))
        print(f"{rel:g} lambda_c: simulated {dens:.4g}, Poisson {rows[-1][3]:.4g}, cavity {cav:.4g}")
    run.write_rows("fig_density.csv", ["lambda_rel", "lambda", "simulated", "poisson", "cavity"], rows)


def _preset_lambda(cfg, args, run):
    """Critical rates against the weight of the two-band class in a two-band profile."""
    rows = []
    for q in np.round(np.arange(0.1, 1.0, 0.1), 10):
        prof = ClassProfile(2, [(1 - q) / 2, (1 - q) / 2, q], [1.0, 1.0, 2.0])
        c = cfg.__class__(**{**cfg.__dict__, "profile": prof})
        lam_p = poisson_critical_rate(prof, c.dom, c.pl, c.N0, settings=c.solver)
        rows.append((q, c.critical_rate(), lam_p))
        print(f"p12 = {q:.1f}: lambda_c {rows[-1][1]:.5g}, lambda_P {lam_p:.5g}")
    run.write_rows("fig_lambda.csv", ["p12", "lambda_c", "lambda_p"], rows)


PRESETS = {
    "fig-pop": lambda cfg, args, run: _preset_pop(cfg, args, run),
    "fig-delay": lambda cfg, args, run: _preset_pop(cfg, args, run, delay=True),
    "fig-density": _preset_density,
    "fig-lambda": _preset_lambda,
}


def cmd_preset(cfg, args, run):
    PRESETS[args.name](cfg, args, run)


# --- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    # SUPPRESS keeps a flag given before the subcommand from being reset by the subparser's default
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", type=Path, help="YAML experiment file (default: built-in two-band scenario)")
    common.add_argument("--seed", type=int, action="append", help="seed; repeat for several (overrides config)")
    common.add_argument("--out", type=Path, help="output directory (overrides config)")
    common.add_argument("--jobs", type=int, help="worker processes for sweeps (default 1)")
    common.add_argument("--lambda-rel", type=float, help="arrival rate as a multiple of lambda_c")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="sbdnet", description="Spatial birth-death wireless network tools.",
                                     parents=[common])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("lambda-c", parents=[common], help="critical rate, bounds and lattice thresholds")
    sub.add_parser("simulate", parents=[common], help="simulate the network and classify stability")
    sub.add_parser("lattice-sim", parents=[common], help="simulate a lattice bounding chain")
    sub.add_parser("fluid", parents=[common], help="integrate the fluid limit and run the witness check")
    h = sub.add_parser("heuristic", parents=[common], help="density heuristics")
    h.add_argument("kind", choices=["poisson", "cavity"])
    sub.add_parser("lambda-p", parents=[common], help="critical rate of the Poisson heuristic")
    sub.add_parser("sweep", parents=[common], help="simulate over the lambda grid and seeds")
    p = sub.add_parser("preset", parents=[common], help="reproduce a figure data set")
    p.add_argument("name", choices=sorted(PRESETS))
    return parser


COMMANDS = {"lambda-c": cmd_lambda_c, "simulate": cmd_simulate, "lattice-sim": cmd_lattice_sim, "fluid": cmd_fluid,
            "heuristic": cmd_heuristic, "lambda-p": cmd_lambda_p, "sweep": cmd_sweep, "preset": cmd_preset}


_DEFAULTS = {"config": None, "seed": None, "out": None, "jobs": 1, "lambda_rel": None, "verbose": False}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    for name, default in _DEFAULTS.items():
        if not hasattr(args, name):
            setattr(args, name, default)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config) if args.config else two_band_config()
        seeds = args.seed or list(cfg.seeds)
        if any(s < 0 for s in seeds):
            raise ConfigError("seeds must be non-negative")
        if args.jobs is not None and args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        if args.lambda_rel is not None and not cfg.profile.symmetric:
            raise ConfigError("--lambda-rel needs a symmetric profile")
        out = args.out or Path(cfg.output)
        name = args.command + (f"-{args.kind}" if args.command == "heuristic" else "") + \
            (f"-{args.name}" if args.command == "preset" else "")
        run = Run(name, cfg, out, seeds)
        COMMANDS[args.command](cfg, args, run)
        run.finish({"lambda_rel": args.lambda_rel})
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalFailure, NoConvergence) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


if __name__ == "__main__":
    sys.exit(main())
