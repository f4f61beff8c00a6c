"""How the limit diagnostics approach their targets as m grows.

For each stage m of a shipped problem, prints the relative gap to E_sup, the
worst absolute-minimality margin and the normalised D-solution sup.
"""

import argparse
from dataclasses import replace
from pathlib import Path

from linfvar import analysis as an
from linfvar.functionals import esup_energy
from linfvar.problems import load_problem
from linfvar.solver import continuation_solve

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--problem", default="yu_slope")
    ap.add_argument("--trials", type=int, default=50)
    args = ap.parse_args()
    p = load_problem(ROOT / "problems" / f"{args.problem}.json")
    cfg = replace(p.config, continuation_stop=0.0)
    rep = continuation_solve(p.model, p.data, p.grid, cfg)
    print(f"{'m':>6s} {'gap':>10s} {'margin/E':>10s} {'dsol/tol':>10s}")
    for s, u in zip(rep.stages, rep.iterates):
        e = esup_energy(u, p.model)
        trials = an.verify_absolute_minimiser(u, p.model, trials=args.trials, seed=0)
        worst = max(t.margin for t in trials)
        ssr = an.detect_singular_set(u, p.model)
        ds = an.dsolution_check(u, p.model, an.empirical_young_measure(u),
                                1e-3 * max(1.0, e), ssr.omega_inf_nodes)
        print(f"{s.m:6d} {(e - s.normalized_energy) / e:10.2e} {worst / e:10.2e} "
              f"{ds.sup / ds.tol:10.2e}")


if __name__ == "__main__":
    main()
