"""
platoonsec command line.

Usage:
    python -m platoonsec synth    --config configs/example1.yaml
    python -m platoonsec assess   --config configs/example2-safe.yaml --synth runs/<id>/synthesis.json
    python -m platoonsec simulate --config configs/example2-safe.yaml --synth runs/<id>/synthesis.json
    python -m platoonsec full     --config configs/example2-risky.yaml

Options:
    --config PATH     Scenario file (required)
    --out DIR         Parent directory for run directories (default: runs)
    --synth PATH      synthesis.json from an earlier run (assess, simulate)
    --seed S          Override the simulation seed
    --grid-step D     Override the alpha and a grid step
    --horizon K       Override the assessment and simulation horizon
    --runs N          Override the Monte-Carlo run count
    --tol-feas T      Override the LMI feasibility tolerance
    --tol-opt T       Override the solver optimality tolerance
    --trace-runs N    Runs written to trajectories.jsonl.gz (default: 10)

Exit codes: 0 success, 2 configuration, 3 model structure, 4 infeasible,
5 numerical failure, 6 artifact mismatch, 1 anything else.
"""

import argparse
import logging
import sys
from datetime import datetime
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from .artifacts import (RunManifest, load_synthesis, save_risk, save_simulation,
                        save_synthesis)
from .config import ToolkitConfig, load_config, with_overrides
from .errors import ArtifactMismatchError, ToolkitError
from .reach import RiskReport, assess_risk, default_zeta1
from .sim import TrajectoryLog, run_scenario
from .synth import SynthesisResult, synthesize_all

logger = logging.getLogger("platoonsec")

BANNER = "=" * 80
RULE = "-" * 80


def _header(title: str) -> None:
    print(f"\n{BANNER}")
    print(title)
    print(BANNER)


def _step(n: int, title: str) -> None:
    print(f"\nStep {n}: {title}")
    print(RULE)


def make_run_dir(out: Path, config: ToolkitConfig) -> Path:
    stamp = datetime.now().strftime("%Y%m%dT%H%M%S%f")
    run_dir = Path(out) / f"{config.config_hash[:12]}-{stamp}"
    run_dir.mkdir(parents=True, exist_ok=False)
    return run_dir


def _manifest(config: ToolkitConfig) -> RunManifest:
    s = config.scenario
    return RunManifest(
        config_path=config.source, config_hash=config.config_hash,
        design_hash=config.design_hash,
        tolerances={"feas_tol": config.synthesis.feas_tol,
                    "opt_tol": config.synthesis.opt_tol},
        seeds={"simulation": s.seed,
               "noise": s.noise.seed if s.noise is not None else -1})


def cmd_synth(config: ToolkitConfig, run_dir: Path, manifest: RunManifest,
              progress: bool = True) -> SynthesisResult:
    _step(1, "Synthesize estimator, monitor and reach-set shape")
    settings = config.synthesis
    if progress != settings.progress:
        import dataclasses
        settings = dataclasses.replace(settings, progress=progress)
    with manifest.timed("synth"):
        result = synthesize_all(config.platoon, config.hold, settings, config.design_hash)
    est, mon, shape = result.estimator, result.monitor, result.reach
    c, lam, gamma = est.iss_constants()
    print(f"Estimator: alpha={est.alpha_decay:.2f}  gamma={gamma:.4f}  "
          f"c={c:.4f}  lambda={lam:.4f}")
    print(f"Monitor:   diag(Pi) = {np.array2string(np.diag(mon.Pi), precision=3)}")
    print(f"Reach:     a={shape.a:.2f}  multipliers="
          f"{', '.join(f'{w:.3f}' for w in shape.weights)}")
    path = save_synthesis(result, run_dir / "synthesis.json")
    manifest.add(path, root=run_dir)
    print(f"\n>>> ISS GAIN: gamma = {gamma:.4f}")
    return result


def cmd_assess(config: ToolkitConfig, result: SynthesisResult, run_dir: Path,
               manifest: RunManifest) -> RiskReport:
    _step(2, "Assess stealthy reachable set against the critical states")
    a = config.assessment
    zeta1 = np.array(a.zeta1) if a.zeta1 is not None else default_zeta1(config.scenario.init.x)
    with manifest.timed("assess"):
        report = assess_risk(result.reach, zeta1, config.critical, a.horizon,
                             a.distance_convention)
    for label, d in report.to_dict()["min_distance"].items():
        print(f"  {label:<12} min distance {d:+.4g}")
    paths = save_risk(report, run_dir / "risk.json", run_dir / "d_k.csv",
                      extra={"design_hash": result.design_hash})
    manifest.add(*paths, root=run_dir)
    where = f" (first at k={report.first_violation_k})" if report.first_violation_k else ""
    print(f"\n>>> VERDICT: {report.verdict}{where}")
    return report


def cmd_simulate(config: ToolkitConfig, result: SynthesisResult, run_dir: Path,
                 manifest: RunManifest, trace_runs: int = 10,
                 progress: bool = True) -> TrajectoryLog:
    s = config.scenario
    _step(3, f"Simulate {s.runs} runs ({s.mode} mode, horizon {s.horizon})")
    shape = result.reach if s.mode == "reach" else None
    with manifest.timed("simulate"):
        log = run_scenario(s, result, trace_runs=trace_runs, shape=shape, progress=progress)
    summary = log.summary
    print(f"Steady-state alarm rate: {100 * summary.alarm_rate:.4f}% "
          f"({summary.steady_alarms}/{summary.steady_samples})")
    print(f"Max test statistic:      {summary.max_z:.4f}")
    if summary.attack_steps:
        print(f"Infeasible attack steps: {summary.infeasible_steps}/{summary.attack_steps}")
    if summary.iss_samples:
        print(f"ISS envelope violations: {summary.iss_violations}/{summary.iss_samples}")
    paths = save_simulation(log, run_dir / "simulation", burn_in=s.burn_in,
                            extra={"design_hash": result.design_hash, "runs": s.runs})
    manifest.add(*paths, root=run_dir)
    if log.containment is not None:
        c = log.containment
        print(f"\n>>> CONTAINMENT: {c.violations} violations over {int(c.n.sum())} samples "
              f"(max level {c.max_level:.3f}, {c.excluded_runs} runs excluded)")
    return log


def _load_designs(args, config: ToolkitConfig) -> SynthesisResult:
    if not args.synth:
        raise ArtifactMismatchError("--synth is required for this command")
    return load_synthesis(args.synth, expected_hash=config.design_hash)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="platoonsec",
        description="Security analysis of CACC platoons under stealthy V2V attacks")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (("synth", "Synthesize estimator, monitor and reach-set shape"),
                       ("assess", "Risk verdict from stored designs"),
                       ("simulate", "Monte-Carlo simulation from stored designs"),
                       ("full", "synth, assess and simulate in one run")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, help="Scenario file")
        p.add_argument("--out", default="runs", help="Output parent directory (default: runs)")
        p.add_argument("--synth", default=None, help="synthesis.json for assess/simulate")
        p.add_argument("--seed", type=int, default=None, help="Simulation seed override")
        p.add_argument("--grid-step", type=float, default=None, help="Grid step override")
        p.add_argument("--horizon", type=int, default=None, help="Horizon override")
        p.add_argument("--runs", type=int, default=None, help="Monte-Carlo runs override")
        p.add_argument("--tol-feas", type=float, default=None,
                       help="LMI feasibility tolerance override")
        p.add_argument("--tol-opt", type=float, default=None,
                       help="Solver optimality tolerance override")
        p.add_argument("--trace-runs", type=int, default=10,
                       help="Runs kept in trajectories.jsonl.gz (default: 10)")
        verbosity = p.add_mutually_exclusive_group()
        verbosity.add_argument("--verbose", "-v", action="store_true", help="Debug logging")
        verbosity.add_argument("--quiet", "-q", action="store_true",
                               help="Warnings only, no progress bars")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level,
                        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s")
    progress = not args.quiet

    try:
        config = with_overrides(load_config(args.config), seed=args.seed,
                                grid_step=args.grid_step, horizon=args.horizon,
                                runs=args.runs, tol_feas=args.tol_feas, tol_opt=args.tol_opt)
        if args.command in ("assess", "simulate"):
            result = _load_designs(args, config)
        run_dir = make_run_dir(Path(args.out), config)
        manifest = _manifest(config)

        _header(f"platoonsec {args.command}: {config.name}")
        print(f"Config:  {config.source}  (hash {config.config_hash[:12]})")
        print(f"Design:  {config.design_hash[:12]}   Output: {run_dir}")

        if args.command in ("synth", "full"):
            result = cmd_synth(config, run_dir, manifest, progress)
        if args.command in ("assess", "full"):
            cmd_assess(config, result, run_dir, manifest)
        if args.command in ("simulate", "full"):
            cmd_simulate(config, result, run_dir, manifest, args.trace_runs, progress)

        manifest.save(run_dir / "manifest.json")
        print(f"\n{BANNER}")
        print(f"Artifacts written to {run_dir}")
        print(f"{BANNER}\n")
        return 0
    except ToolkitError as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception:
        logger.exception("unexpected failure")
        return 1


if __name__ == "__main__":
    sys.exit(main())
