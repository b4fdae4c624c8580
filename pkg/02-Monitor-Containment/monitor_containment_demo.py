"""
Demo 2: How tight is the residual monitor?

Runs attack-free Monte-Carlo trajectories of the nominal follower and scatters
the first two residual entries against the monitor ellipsoid projected on that
plane. The alarm rate after burn-in should stay at or below 0.1%.

Usage:
    python monitor_containment_demo.py [--runs N] [--horizon K] [--grid-step D]

Options:
    --runs N        Monte-Carlo runs (default: 2000; the acceptance check uses 10000)
    --horizon K     Steps per run (default: 400)
    --grid-step D   Step of the alpha and a grids (default: 0.05)
"""

import argparse
import dataclasses
import sys
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT))

from platoonsec.attack import AttackPolicy  # noqa: E402
from platoonsec.config import load_config, with_overrides  # noqa: E402
from platoonsec.sim import project_monitor_ellipse, run_scenario  # noqa: E402
from platoonsec.synth import synthesize_all  # noqa: E402


def ellipse_points(Q: np.ndarray, level: float = 1.0, n: int = 400) -> np.ndarray:
    """Boundary of {x : x' Q x = level} in the plane."""
    theta = np.linspace(0.0, 2.0 * np.pi, n)
    circle = np.sqrt(level) * np.vstack([np.cos(theta), np.sin(theta)])
    chol = np.linalg.cholesky(Q)
    return np.linalg.solve(chol.T, circle).T


def demo_monitor_containment(runs: int = 2000, horizon: int = 400, grid_step: float = 0.05):
    config = with_overrides(load_config(ROOT / "configs" / "example2-safe.yaml"),
                            grid_step=grid_step, horizon=horizon, runs=runs)

    print(f"\n{'=' * 80}")
    print("📡 DEMO 2: Residual Monitor Containment (attack-free)")
    print(f"{'=' * 80}")
    print(f"Runs: {runs}   Horizon: {horizon}   Burn-in: {config.scenario.burn_in}\n")

    print("Step 1: Synthesize designs")
    print("-" * 80)
    designs = synthesize_all(config.platoon, config.hold, config.synthesis, config.design_hash)
    mon = designs.monitor
    print(f"diag(Pi) = {np.array2string(np.diag(mon.Pi), precision=3)}")
    print(f"S-procedure multipliers: lambda1={mon.lambda1:.4g}  lambda2={mon.lambda2:.4g}\n")

    print("Step 2: Monte-Carlo residuals")
    print("-" * 80)
    s = dataclasses.replace(config.scenario, attacks=(AttackPolicy(),))
    log = run_scenario(s, designs, progress=True)
    summary = log.summary
    Q = project_monitor_ellipse(mon, (0, 1))
    pairs = log.residual_scatter((0, 1), burn_in=s.burn_in).to_numpy()
    inside = np.einsum("ni,ij,nj->n", pairs, Q, pairs) <= 1.0
    print(f"Steady-state alarm rate: {100 * summary.alarm_rate:.4f}%  (limit 0.1%)")
    print(f"Max test statistic:      {summary.max_steady_z:.4f}")
    print(f"(r1, r2) pairs inside projected ellipse: {100 * inside.mean():.3f}%\n")

    print("Step 3: Visualizing results")
    print("-" * 80)
    fig, ax = plt.subplots(figsize=(7, 6))
    shown = pairs[:: max(1, len(pairs) // 20000)]
    ax.scatter(shown[:, 0], shown[:, 1], s=1, alpha=0.3, label="residual samples")
    edge = ellipse_points(Q)
    ax.plot(edge[:, 0], edge[:, 1], "r", linewidth=2, label="monitor ellipse (projected)")
    ax.set_xlabel("r1")
    ax.set_ylabel("r2")
    ax.set_title("Residuals against the monitor bound")
    ax.axis("equal")
    ax.grid(True, alpha=0.3)
    ax.legend()
    plt.tight_layout()
    out = Path(__file__).resolve().parent / "monitor_containment.png"
    fig.savefig(out, dpi=120)
    print(f"Figure written to {out}")

    ok = summary.alarm_rate <= 1e-3 and inside.mean() >= 0.999
    print(f"\n>>> FALSE ALARMS: {summary.steady_alarms} of {summary.steady_samples} "
          f"steady samples ({'within' if ok else 'outside'} target)")
    print(f"\n{'=' * 80}")
    print("TAKEAWAY: Bounded noise alone almost never trips the monitor, so anything an")
    print("attacker does must stay inside the same ellipsoid to remain unseen.")
    print(f"{'=' * 80}\n")


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="Demo 2: Residual monitor containment")
    parser.add_argument("--runs", type=int, default=2000, help="Monte-Carlo runs (default: 2000)")
    parser.add_argument("--horizon", type=int, default=400, help="Steps per run (default: 400)")
    parser.add_argument("--grid-step", type=float, default=0.05,
                        help="Step of the alpha and a grids (default: 0.05)")
    args = parser.parse_args()
    demo_monitor_containment(args.runs, args.horizon, args.grid_step)
