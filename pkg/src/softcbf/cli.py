"""Command-line front end: ``run``, ``validate`` and ``sweep``.

Exit codes are stable for scripting: 0 when every monitor passes, 1 when a
monitor fails, 2 for a bad configuration and 3 when an episode aborts.
The default output directory comes from ``SOFTCBF_OUT`` (else ``./softcbf_out``).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from multiprocessing import get_context
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .cbf_chain import NonClassKWarning, relative_degree_audit
from .input_aug import DECOUPLING_COND_MAX, audit_controller
from .sim.episode import TrajectoryLog, run_episode
from .sim.scenario import (
    DATA_DIR,
    REFERENCE_GOALS,
    ConfigError,
    ScenarioConfig,
    apply_overrides,
    build_scenario,
    load_config,
    sample_states,
)

logger = logging.getLogger("softcbf")

EXIT_OK, EXIT_MONITOR, EXIT_CONFIG, EXIT_ABORT = 0, 1, 2, 3
OUT_ENV = "SOFTCBF_OUT"
SAFETY_TOL = 1e-6
INPUT_TOL = 1e-6
GOAL_TOL = 0.1
AUDIT_TOL = 1e-8


@dataclass
class RunReport:
    """Summary of one episode and its monitor verdicts."""

    scenario: str
    goal: Tuple[float, float]
    seed: int
    duration: float
    n_rows: int
    min_h: float
    min_b: float
    min_hj: float
    v_range: Tuple[float, float]
    max_abs_uhat: Optional[Tuple[float, float]]
    final_goal_dist: float
    x0_admissible: bool
    failure: Optional[str]
    wall_clock: float
    monitors: Dict[str, Optional[bool]] = field(default_factory=dict)

    @property
    def exit_code(self) -> int:
        return report_exit_code(self.failure, self.monitors)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["exit_code"] = self.exit_code
        return d


def report_exit_code(failure: Optional[str], monitors: Dict[str, Optional[bool]]) -> int:
    if failure is not None:
        return EXIT_ABORT
    return EXIT_OK if all(v is not False for v in monitors.values()) else EXIT_MONITOR


def _nan_min(a: np.ndarray) -> float:
    return float(np.min(a)) if a.size else math.nan


def make_report(cfg: ScenarioConfig, log: TrajectoryLog, seed: int, wall_clock: float) -> RunReport:
    """Evaluate the safety, input-bound and convergence monitors on a log."""
    min_h = _nan_min(log.column("h"))
    min_b = _nan_min(log.column("min_b"))
    min_hj = _nan_min(log.column("min_hj"))
    v = log.column("v")
    lo, hi = cfg.speed_bounds
    v_range = (_nan_min(v), float(np.max(v)) if v.size else math.nan)
    safety = (
        log.failure is None
        and len(log) > 0
        and min(min_h, min_b, min_hj) >= -SAFETY_TOL
        and v_range[0] >= lo - SAFETY_TOL
        and v_range[1] <= hi + SAFETY_TOL
    )
    uhat = None
    inputs: Optional[bool] = None
    if cfg.augmented:
        u1, u2 = np.abs(log.column("uhat1")), np.abs(log.column("uhat2"))
        uhat = (float(u1.max()) if u1.size else math.nan, float(u2.max()) if u2.size else math.nan)
        inputs = True
        for name, col in (("u1", "uhat1"), ("u2", "uhat2")):
            b_lo, b_hi = cfg.input_bounds[name]
            c = log.column(col)
            inputs = inputs and bool(np.all(c >= b_lo - INPUT_TOL) and np.all(c <= b_hi + INPUT_TOL))
    final = float(log.column("goal_dist")[-1]) if len(log) else math.nan
    # A zero-length episode has no time to converge, so the monitor does not apply.
    converged = None if cfg.duration == 0 else bool(log.failure is None and final < GOAL_TOL)
    return RunReport(
        scenario=cfg.name,
        goal=tuple(cfg.goal),
        seed=seed,
        duration=cfg.duration,
        n_rows=len(log),
        min_h=min_h,
        min_b=min_b,
        min_hj=min_hj,
        v_range=v_range,
        max_abs_uhat=uhat,
        final_goal_dist=final,
        x0_admissible=log.x0_admissible,
        failure=log.failure,
        wall_clock=wall_clock,
        monitors={"safety": bool(safety), "input_bounds": inputs, "convergence": converged},
    )


def resolve_config(spec: str, overrides: Sequence[str] = ()) -> ScenarioConfig:
    """Load a config file, or a bundled scenario by name (``example1``, ``example3``)."""
    path = Path(spec)
    if not path.exists() and (DATA_DIR / f"{spec}.json").exists():
        path = DATA_DIR / f"{spec}.json"
    cfg = load_config(path)
    return apply_overrides(cfg, list(overrides)) if overrides else cfg


def write_outputs(out: Path, cfg: ScenarioConfig, log: TrajectoryLog, report: RunReport) -> None:
    out.mkdir(parents=True, exist_ok=True)
    log.to_csv(out / "trace.csv")
    plot = out / "plot"
    plot.mkdir(exist_ok=True)
    t = log.column("t")
    for name in log.header[1:]:
        col = log.column(name)
        with open(plot / f"{name}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", name])
            for tk, ck in zip(t, col):
                w.writerow([repr(float(tk)), ck if name == "status" else repr(float(ck))])
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2) + "\n")


def execute(cfg: ScenarioConfig, out: Optional[Path], seed: int) -> RunReport:
    """Run one episode, write its artifacts under ``out`` and return the report."""
    t0 = time.perf_counter()
    log = run_episode(cfg)
    report = make_report(cfg, log, seed, time.perf_counter() - t0)
    if out is not None:
        write_outputs(out, cfg, log, report)
    return report


def _print_report(r: RunReport) -> None:
    flags = " ".join(f"{k}={'n/a' if v is None else ('pass' if v else 'FAIL')}" for k, v in r.monitors.items())
    print(
        f"{r.scenario} goal={list(r.goal)} {flags} min_h={r.min_h:.4g} min_b={r.min_b:.4g} "
        f"min_hj={r.min_hj:.4g} final_dist={r.final_goal_dist:.4g} time={r.wall_clock:.1f}s"
        + (f" failure={r.failure}" if r.failure else "")
    )


def _out_dir(arg: Optional[str]) -> Path:
    return Path(arg or os.environ.get(OUT_ENV, "softcbf_out"))


def cmd_run(config: str, out: Optional[str] = None, overrides: Sequence[str] = (), seed: int = 0) -> int:
    try:
        cfg = resolve_config(config, overrides)
        build_scenario(cfg)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    report = execute(cfg, _out_dir(out), seed)
    _print_report(report)
    return report.exit_code


def validation_report(cfg: ScenarioConfig, seed: int = 0, samples: int = 100) -> dict:
    """Sampled worst-case residuals of the relative-degree and controller conditions."""
    scn = build_scenario(cfg)
    rng = np.random.default_rng(seed)
    states = sample_states(scn, samples, rng, require="Ss")
    barriers = []
    for spec in scn.cbf.specs:
        a = relative_degree_audit(spec, scn.sys, states, AUDIT_TOL)
        barriers.append(
            {"label": a.label, "d": a.d, "max_lower": a.max_lower, "min_decoupling": a.min_decoupling, "passed": a.passed}
        )
    rep = {"scenario": cfg.name, "seed": seed, "samples": samples, "tol": AUDIT_TOL, "barriers": barriers}
    ok = all(b["passed"] for b in barriers)
    if scn.augmented:
        ctrl = scn.controller.dynamics
        c = audit_controller(ctrl, scn.ics, states[:, scn.n_plant :], scn.plant, scn.plant_specs, states[:, : scn.n_plant])
        checks = {
            "c1_max": c["c1_max"] < AUDIT_TOL,
            "c2_max_cond": c["c2_max_cond"] < DECOUPLING_COND_MAX,
            "c3_min": c["c3_min"] > AUDIT_TOL,
            "c4_max": c["c4_max"] < AUDIT_TOL,
            "c5_min": c["c5_min"] > AUDIT_TOL,
        }
        rep["controller"] = {
            "d_c": ctrl.d_c,
            "zeta": ctrl.zeta,
            "residuals": c,
            "passed": checks,
            "tracking_hurwitz": scn.law.is_hurwitz,
        }
        ok = ok and all(checks.values()) and scn.law.is_hurwitz
    rep["passed"] = ok
    return rep


def cmd_validate(config: str, out: Optional[str] = None, overrides: Sequence[str] = (), seed: int = 0) -> int:
    try:
        cfg = resolve_config(config, overrides)
        rep = validation_report(cfg, seed)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for b in rep["barriers"]:
        print(
            f"{b['label']:>10} d={b['d']} max|lower|={b['max_lower']:.3g} "
            f"min|decoupling|={b['min_decoupling']:.3g} {'pass' if b['passed'] else 'FAIL'}"
        )
    if "controller" in rep:
        c = rep["controller"]
        for k, v in c["residuals"].items():
            print(f"{k:>12} {v:.3g} {'pass' if c['passed'][k] else 'FAIL'}")
        print(f"tracking law Hurwitz: {c['tracking_hurwitz']}")
    print("validate:", "pass" if rep["passed"] else "FAIL")
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
        (Path(out) / "validate.json").write_text(json.dumps(rep, indent=2) + "\n")
    return EXIT_OK if rep["passed"] else EXIT_MONITOR


def parse_goals(text: Optional[str]) -> List[Tuple[float, float]]:
    """``"x,y;x,y"`` to a goal list. None means the four reference goals."""
    if text is None:
        return [tuple(g) for g in REFERENCE_GOALS]
    goals = []
    for item in filter(None, (s.strip() for s in text.split(";"))):
        parts = item.split(",")
        if len(parts) != 2:
            raise ConfigError(f"goal {item!r} is not x,y")
        goals.append((float(parts[0]), float(parts[1])))
    return goals


def _goal_dir(root: Path, goal) -> Path:
    return root / f"goal_{goal[0]:g}_{goal[1]:g}"


def _sweep_one(args) -> dict:
    cfg_doc, out, seed = args
    cfg = ScenarioConfig.from_dict(cfg_doc)
    warnings.simplefilter("ignore", NonClassKWarning)
    return execute(cfg, Path(out), seed).to_dict()


def cmd_sweep(
    config: str,
    goals: Optional[Sequence[Tuple[float, float]]] = None,
    out: Optional[str] = None,
    overrides: Sequence[str] = (),
    seed: int = 0,
    jobs: int = 1,
) -> int:
    try:
        base = resolve_config(config, overrides)
        goals = [tuple(g) for g in (REFERENCE_GOALS if goals is None else goals)]
        cfgs = [apply_overrides(base, [f"goal=[{g[0]!r},{g[1]!r}]"]) for g in goals]
        for c in cfgs:
            build_scenario(c)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    root = _out_dir(out)
    tasks = [(c.to_dict(), str(_goal_dir(root, c.goal)), seed) for c in cfgs]
    if jobs > 1 and len(tasks) > 1:
        # Spawned workers avoid forking a process that already initialized the XLA runtime.
        with ProcessPoolExecutor(max_workers=jobs, mp_context=get_context("spawn")) as pool:
            reports = list(pool.map(_sweep_one, tasks))
    else:
        reports = [_sweep_one(t) for t in tasks]
    reports.sort(key=lambda r: tuple(r["goal"]))
    codes = [r["exit_code"] for r in reports]
    code = max(codes, default=EXIT_OK)
    agg = {"scenario": base.name, "seed": seed, "goals": [list(r["goal"]) for r in reports], "reports": reports, "exit_code": code}
    root.mkdir(parents=True, exist_ok=True)
    (root / "sweep.json").write_text(json.dumps(agg, indent=2) + "\n")
    for r in reports:
        flags = " ".join(f"{k}={'n/a' if v is None else ('pass' if v else 'FAIL')}" for k, v in r["monitors"].items())
        print(f"goal={list(r['goal'])} {flags} final_dist={r['final_goal_dist']:.4g}" + (f" failure={r['failure']}" if r["failure"] else ""))
    return code


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="softcbf", description="Soft-minimum composite CBF safety filter simulations.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_help):
        sp.add_argument("--config", required=True, help="config JSON path or bundled name (example1, example3)")
        sp.add_argument("--out", default=None, help=out_help)
        sp.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted-path override, repeatable, last one wins")
        sp.add_argument("--seed", type=int, default=0, help="seed for state sampling, recorded in reports")

    common(sub.add_parser("run", help="simulate one episode"), f"output directory (default ${OUT_ENV} or ./softcbf_out)")
    common(sub.add_parser("validate", help="audit relative-degree and controller conditions"), "optional directory for validate.json")
    sw = sub.add_parser("sweep", help="run one episode per goal")
    common(sw, f"output directory (default ${OUT_ENV} or ./softcbf_out)")
    sw.add_argument("--goals", default=None, help='goals as "x,y;x,y" (default: the four reference goals; "" for none)')
    sw.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if not args.verbose:
        warnings.simplefilter("ignore", NonClassKWarning)
    if args.command == "run":
        return cmd_run(args.config, args.out, args.overrides, args.seed)
    if args.command == "validate":
        return cmd_validate(args.config, args.out, args.overrides, args.seed)
    try:
        goals = parse_goals(args.goals)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return cmd_sweep(args.config, goals, args.out, args.overrides, args.seed, args.jobs)


if __name__ == "__main__":
    sys.exit(main())
