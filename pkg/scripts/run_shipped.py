"""Solve every shipped problem and print a one-line summary per problem."""

import argparse
import time
from pathlib import Path

from linfvar.problems import load_problem
from linfvar.solver import continuation_solve

ROOT = Path(__file__).resolve().parents[1]
NAMES = ("power", "compatible", "yu", "yu_slope", "da_compatible", "da_outlier",
         "da_equidistribution")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--m-max", type=int)
    args = ap.parse_args()
    print(f"{'problem':22s} {'stages':>6s} {'m_final':>8s} {'E_sup':>14s} {'seconds':>8s}")
    for name in NAMES:
        p = load_problem(ROOT / "problems" / f"{name}.json", m_max=args.m_max)
        t0 = time.perf_counter()
        rep = continuation_solve(p.model, p.data, p.grid, p.config)
        dt = time.perf_counter() - t0
        flag = "" if rep.converged else "  (not converged)"
        print(f"{name:22s} {len(rep.stages):6d} {rep.stages[-1].m:8d} "
              f"{rep.esup_final:14.10f} {dt:8.3f}{flag}")


if __name__ == "__main__":
    main()
