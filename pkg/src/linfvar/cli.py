"""Command-line entry point: ``linfvar {solve,assimilate,verify,sweep,check-model}``.

Exit status: 0 when every check passes, 2 when a check fails, 1 on input errors.
Each command writes ``report.json`` into ``--out`` plus CSV detail files,
all referenced from the report.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import analysis as an
from .assimilation import MeasurementError, assimilate
from .elsystem import expanded_residual
from .functionals import cell_lagrangian
from .grid import GridError, GridFunction, read_csv, write_csv
from .lagrangian import check_hypotheses
from .problems import Problem, ProblemError, load_problem
from .solver import SolveReport, continuation_solve

EXIT_OK, EXIT_INPUT, EXIT_CHECK = 0, 1, 2


class InputError(Exception):
    pass


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    if isinstance(o, (np.bool_, bool)):
        return bool(o)
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, (float, np.floating)):
        o = float(o)
        return o if math.isfinite(o) else str(o)
    return o


class Output:
    def __init__(self, out: Path):
        self.dir = Path(out)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.files = {}

    def csv(self, key: str, name: str, header, rows) -> None:
        with (self.dir / name).open("w") as fh:
            fh.write(",".join(header) + "\n")
            for r in rows:
                fh.write(",".join(_fmt(v) for v in r) + "\n")
        self.files[key] = name

    def grid_function(self, key: str, name: str, u: GridFunction) -> None:
        write_csv(self.dir / name, u)
        self.files[key] = name

    def add(self, key: str, name: str) -> None:
        self.files[key] = name

    def report(self, body: dict) -> None:
        body = dict(body)
        body["files"] = dict(sorted(self.files.items()))
        (self.dir / "report.json").write_text(
            json.dumps(_jsonable(body), indent=2, sort_keys=True) + "\n")


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


# -- shared pieces

STAGE_HEADER = ["m", "iterations", "converged", "grad_norm", "local_norm", "normalized_energy",
                "esup", "du_change_sup", "du_change_l1", "du_change_l2", "du_change_l4",
                "bound_lhs", "bound_rhs"]


def _stage_rows(rep: SolveReport):
    for s in rep.stages:
        lq = s.du_change_lq
        yield [s.m, s.iterations, s.converged, s.grad_norm, s.local_norm, s.normalized_energy,
               s.esup, s.du_change_sup, lq.get(1, math.nan), lq.get(2, math.nan),
               lq.get(4, math.nan), s.bound_lhs, s.bound_rhs]


def solve_checks(prob: Problem, rep: SolveReport) -> dict:
    """Pass/fail summaries attached to every solve."""
    e = rep.esup_final
    mono = [v for _, v in rep.monotonicity]
    mono_ok = all(b >= a - 1e-12 for a, b in zip(mono, mono[1:])) and all(v <= e + 1e-12 for v in mono)
    res = []
    for s, u in zip(rep.stages, rep.iterates):
        if s.m >= 2:
            r = expanded_residual(u, prob.model, s.m, form="discrete")
            res.append({"m": s.m, "sup_normalized": r.sup_normalized,
                        "limit": 1e-6 * (1 + s.normalized_energy),
                        "pass": r.sup_normalized <= 1e-6 * (1 + s.normalized_energy)})
    lsc = an.lsc_diagnostic(rep, prob.model, seed=prob.config.seed)
    bound_ok = all(s.bound_lhs <= s.bound_rhs for s in rep.stages)
    return {
        "converged": rep.converged,
        "monotonicity": mono_ok,
        "residuals": all(r["pass"] for r in res) if res else True,
        "lsc": lsc.passed,
        "bound": bound_ok,
        "_residual_table": res,
        "_lsc": {"full_stage_margins": lsc.stage_margins("full"), "tail_gaps": lsc.tail_gaps},
    }


def _checks_pass(checks: dict) -> bool:
    return all(v for k, v in checks.items() if not k.startswith("_"))


def _affine_dev(prob: Problem, u: GridFunction) -> float:
    aff = GridFunction.affine(prob.grid, prob.data)
    return float(np.abs(u.values - aff.values).max())


# -- commands

def cmd_solve(prob: Problem, args, out: Output) -> int:
    rep = continuation_solve(prob.model, prob.data, prob.grid, prob.config)
    u = rep.u_final
    checks = solve_checks(prob, rep)
    out.grid_function("u_final", "u_final.csv", u)
    out.csv("stages", "stages.csv", STAGE_HEADER, _stage_rows(rep))
    out.csv("monotonicity", "monotonicity.csv", ["m", "normalized"], rep.monotonicity)
    rinf = expanded_residual(u, prob.model)
    rinf.write_csv(out.dir / "residual_limit.csv")
    out.add("residual_limit", "residual_limit.csv")
    ssr = an.detect_singular_set(u, prob.model, args.eps_sing)
    W = an.misfit_cells(u, prob.model)
    L = cell_lagrangian(u, prob.model)
    out.csv("cells", "cells.csv", ["x", "L", "misfit", "singular"],
            zip(prob.grid.midpoints, L, W, ssr.singular))
    out.report({
        "command": "solve", "problem": prob.name, "n_cells": prob.grid.n_cells,
        "m_schedule": list(prob.config.m_schedule), "seed": prob.config.seed,
        "solve": rep.to_dict(),
        "affine_deviation": _affine_dev(prob, u),
        "residual_limit": rinf.summary(),
        "singular_set": ssr.to_dict(),
        "checks": checks,
        "pass": _checks_pass(checks),
    })
    return EXIT_OK if _checks_pass(checks) else EXIT_CHECK


def verify_solution(prob: Problem, u: GridFunction, trials: int, seed: int, eps_sing=None):
    """Minimality, diffuse-derivative and singular-set checks on a stored map."""
    model = prob.model
    cfg = prob.analysis
    e = float(cell_lagrangian(u, model).max())
    tr = an.verify_absolute_minimiser(u, model, trials=trials, seed=seed, descent_polish=True)
    worst = max((t.margin for t in tr), default=0.0)
    ladder = tuple(cfg.get("k_ladder", (1, 2, 4, 8)))
    eym = an.empirical_young_measure(u, ladder, cfg.get("cap"))
    eps = eps_sing if eps_sing is not None else cfg.get("eps_sing")
    ssr = an.detect_singular_set(u, model, eps)
    scale = max(1.0, e)
    ds = an.dsolution_check(u, model, eym, 1e-3 * scale, ssr.omega_inf_nodes)
    near = an.boundary_neighbourhood(ssr, max(ladder))
    vac = ds.vacuous
    vac_ok = bool(np.all(near[vac])) and vac.mean() <= 0.05
    eps_half = an.detect_singular_set(u, model, ssr.eps / 2)
    nested = bool(np.all(~eps_half.singular | ssr.singular))
    checks = {
        "minimality": worst <= 1e-6 * e,
        "dsolution": ds.passed,
        "vacuous_confined": vac_ok,
        "singular_nested": nested,
        "boundary_fraction": ssr.boundary_fraction <= 0.05,
    }
    summary = {
        "esup": e, "trials": len(tr), "worst_margin": worst,
        "minimality_limit": 1e-6 * e,
        "young_measure": {"k_ladder": list(ladder), "cap": eym.cap,
                          "escaped_nodes": int((eym.escaped > 0).sum())},
        "dsolution": {"tol": 1e-3 * scale, "sup": ds.sup,
                      "omega_inf_nodes": int(ds.mask.sum()), "vacuous_nodes": int(vac.sum())},
        "singular_set": ssr.to_dict(),
    }
    return checks, summary, tr, ds


def cmd_verify(prob: Problem, args, out: Output) -> int:
    if args.solution:
        try:
            u = read_csv(args.solution)
        except (OSError, GridError, ValueError) as e:
            raise InputError(f"{args.solution}: {e}") from None
        if u.grid.n_cells != prob.grid.n_cells or u.dim != prob.model.dim:
            raise InputError(f"{args.solution}: solution does not match the problem grid")
        if (abs(u.grid.interval.a - prob.grid.interval.a) > 1e-12
                or abs(u.grid.interval.b - prob.grid.interval.b) > 1e-12):
            raise InputError(f"{args.solution}: interval differs from the problem")
        u = GridFunction(prob.grid, u.values)
        source = str(args.solution)
    else:
        u = continuation_solve(prob.model, prob.data, prob.grid, prob.config).u_final
        source = "continuation"
    trials = args.trials if args.trials is not None else int(prob.analysis.get("trials", 200))
    seed = prob.config.seed
    checks, summary, tr, ds = verify_solution(prob, u, trials, seed, args.eps_sing)
    out.grid_function("solution", "solution.csv", u)
    out.csv("trials", "trials.csv", an.TRIAL_HEADER, (t.to_row() for t in tr))
    out.csv("dsolution", "dsolution.csv", ["x", "worst_normalized", "vacuous", "omega_inf"],
            zip(ds.x, ds.worst, ds.vacuous, ds.mask))
    passed = all(checks.values())
    out.report({"command": "verify", "problem": prob.name, "source": source, "seed": seed,
                "summary": summary, "checks": checks, "pass": passed})
    return EXIT_OK if passed else EXIT_CHECK


def cmd_assimilate(prob: Problem, args, out: Output) -> int:
    if prob.assimilation is None:
        raise InputError(f"{prob.path}: model.name: assimilate needs a data_assimilation problem")
    cr = assimilate(prob.assimilation, prob.config)
    cr.write_csv(out.dir / "pointwise.csv")
    out.add("pointwise", "pointwise.csv")
    out.grid_function("u_m1", "u_m1.csv", cr.reports["classical"].u_final)
    out.grid_function("u_inf", "u_inf.csv", cr.reports["limit"].u_final)
    out.csv("stages", "stages.csv", STAGE_HEADER, _stage_rows(cr.reports["limit"]))
    checks = {"esup_ordering": cr.esup_ordering_ok, "spike_ordering": cr.spike_ordering_ok,
              "hypotheses": cr.hypotheses_ok,
              "converged": all(r.converged for r in cr.reports.values())}
    passed = all(checks.values())
    out.report({"command": "assimilate", "problem": prob.name, "seed": prob.config.seed,
                "comparison": cr.to_dict(), "checks": checks, "pass": passed})
    return EXIT_OK if passed else EXIT_CHECK


def cmd_sweep(prob: Problem, args, out: Output) -> int:
    from .grid import build_grid
    base = prob.grid.n_cells
    ns = prob.analysis.get("sweep_n_cells") or sorted({max(4, base // 4), max(4, base // 2), base})
    rows = []
    ok = True
    for n in ns:
        g = build_grid(prob.grid.interval, int(n))
        rep = continuation_solve(prob.model, prob.data, g, prob.config)
        ok &= rep.converged
        for r in _stage_rows(rep):
            rows.append([int(n)] + r)
    out.csv("sweep", "sweep.csv", ["n_cells"] + STAGE_HEADER, rows)
    out.report({"command": "sweep", "problem": prob.name, "n_cells": list(ns),
                "m_schedule": list(prob.config.m_schedule), "checks": {"converged": ok},
                "pass": ok})
    return EXIT_OK if ok else EXIT_CHECK


def cmd_check_model(prob: Problem, args, out: Output) -> int:
    samples = int(prob.analysis.get("samples", 1000))
    hr = check_hypotheses(prob.model, prob.box, samples=samples, seed=prob.config.seed)
    out.csv("hypotheses", "hypotheses.csv", ["id", "worst_margin", "pass"],
            ([c.id, c.margin, c.margin >= -hr.tol] for c in hr.checks))
    body = hr.to_dict()
    body.update({"command": "check-model", "problem": prob.name, "samples": samples,
                 "model": prob.model.name, "failures": [c.id for c in hr.failures()]})
    out.report(body)
    return EXIT_OK if hr.passed else EXIT_CHECK


COMMANDS = {"solve": cmd_solve, "assimilate": cmd_assimilate, "verify": cmd_verify,
            "sweep": cmd_sweep, "check-model": cmd_check_model}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="linfvar", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--problem", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--m-max", type=int)
    p.add_argument("--n-cells", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--eps-sing", type=float)
    p.add_argument("--solution", type=Path, help="stored solution CSV for verify")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_INPUT if e.code else EXIT_OK
    try:
        if args.m_max is not None and args.m_max < 1:
            raise InputError("--m-max must be >= 1")
        if args.trials is not None and args.trials < 0:
            raise InputError("--trials must be >= 0")
        if args.eps_sing is not None and not args.eps_sing > 0:
            raise InputError("--eps-sing must be positive")
        prob = load_problem(args.problem, n_cells=args.n_cells, m_max=args.m_max, seed=args.seed)
        out = Output(args.out)
        status = COMMANDS[args.command](prob, args, out)
    except (ProblemError, InputError, MeasurementError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    status_word = {EXIT_OK: "pass", EXIT_CHECK: "FAIL"}[status]
    print(f"{args.command}: {status_word} ({args.out / 'report.json'})")
    return status


if __name__ == "__main__":
    sys.exit(main())
