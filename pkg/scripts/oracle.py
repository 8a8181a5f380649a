"""Grid solution against the characteristics estimate on the example problem.

x = 0 is a fixed point of every characteristic (sigma, beta and rho all
vanish there), so the more informative comparison is at x = 1 and x = 2.

    python scripts/oracle.py [--m-inner 10000] [--points "1:0;1:1;1:2"]
"""
import argparse

from spdefd.characteristics import FlowConfig
from spdefd.cli import _parse_points
from spdefd.experiments import ExperimentConfig, run_oracle_check


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--m-inner", type=int, default=10_000)
    ap.add_argument("--points", default="1:0;1:1;1:2")
    ap.add_argument("--mode", default="fd", choices=["fd", "analytic"])
    args = ap.parse_args()
    cfg = ExperimentConfig(problem="paper-example", T=1.0, R=10.0, h=0.05, tau=1e-3)
    results = run_oracle_check(cfg, _parse_points(args.points, 1.0), FlowConfig(m_inner=args.m_inner, mode=args.mode))
    for r in results:
        print(f"t={r.t:g} x={r.x[0]:g}: grid {r.grid_value:.6f}  oracle {r.mean:.6f} +/- {r.stderr:.2e}  "
              f"{'pass' if r.passed else 'FAIL'}")


if __name__ == "__main__":
    main()
