"""Spatial order on the heat equation, with and without extrapolation.

    python scripts/space_order.py [--out results]
"""
import argparse

from spdefd.experiments import ExperimentConfig, run_convergence_space
from spdefd.report import emit


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="results")
    ap.add_argument("--levels", type=int, default=4)
    args = ap.parse_args()
    for r in (0, 1):
        cfg = ExperimentConfig(problem="heat", T=0.05, R=6.0, h=0.2, levels=args.levels, r=r, tau=1e-3, tau_rule="h4")
        rep = run_convergence_space(cfg)
        for fmt in ("csv", "json", "gnuplot-dat"):
            emit(rep, fmt, args.out, stem=f"space_heat_r{r}")
        print(f"r={r}: slope {rep.slope:.4f}")
        for row in rep.rows:
            print(f"  h={row.h:<8g} tau={row.tau:<10.3g} rmse={row.rmse:.4e}")


if __name__ == "__main__":
    main()
