"""Versioned JSON problem files.

Schema (version 1)::

    {
      "schema_version": 1,
      "name": "power",
      "interval": [0, 1],
      "n_cells": 64,
      "dim": 2,
      "model": {"name": "power" | "yu" | "drift" | "data_assimilation", "params": {...}},
      "data": {"left": [...], "right": [...]}        # or {"anchor": [...], "slope": [...]}
                                                      # or {"left": [...], "compatible": true} (drift)
      "solve": {"m_schedule": [...], "newton_tol": 1e-10, ...},
      "hypothesis_box": {"eta_max": 10, "p_max": 100},
      "analysis": {"trials": 200, "eps_sing": null, "k_ladder": [1, 2, 4, 8], "cap": null},
      "scenario": {...}                               # data_assimilation only
    }

A data-assimilation scenario holds ``dynamics`` (``{"name": "zero" | "rotation" |
"custom", "matrix": [[...]], "offset": [...]}``), ``observation`` (matrix),
``truth_initial``, ``noise`` (``{"amplitude", "seed"}``), ``outliers``
(``[{"index", "offset"}]``), ``n_samples`` and an optional ``measurements``
CSV path relative to the problem file.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .assimilation import AssimilationProblem, build_model, load_measurements
from .grid import AffineData, Grid, GridError, Interval, build_grid
from .lagrangian import (HypothesisBox, LagrangianModel, builtin_drift, builtin_power,
                         builtin_yu, linear_field, rotation_field, zero_field)
from .solver import SolveConfig

SCHEMA_VERSION = 1


class ProblemError(ValueError):
    def __init__(self, path, field_name, message):
        super().__init__(f"{path}: {field_name}: {message}")
        self.path = path
        self.field = field_name


@dataclass
class Problem:
    name: str
    path: Path
    grid: Grid
    model: LagrangianModel
    data: AffineData
    config: SolveConfig
    box: HypothesisBox
    analysis: dict = field(default_factory=dict)
    assimilation: AssimilationProblem | None = None
    raw: dict = field(default_factory=dict, repr=False)


def _get(d, key, path, where, kind=None, default=...):
    if key not in d:
        if default is ...:
            raise ProblemError(path, f"{where}{key}", "missing")
        return default
    v = d[key]
    if kind is not None and not isinstance(v, kind):
        raise ProblemError(path, f"{where}{key}", f"expected {getattr(kind, '__name__', kind)}")
    return v


def _vec(v, path, name, dim=None):
    try:
        a = np.atleast_1d(np.asarray(v, dtype=float))
    except (TypeError, ValueError):
        raise ProblemError(path, name, "expected a list of numbers") from None
    if a.ndim != 1 or not np.all(np.isfinite(a)):
        raise ProblemError(path, name, "expected a finite vector")
    if dim is not None and len(a) != dim:
        raise ProblemError(path, name, f"expected length {dim}, got {len(a)}")
    return a


def _mat(v, path, name):
    try:
        a = np.atleast_2d(np.asarray(v, dtype=float))
    except (TypeError, ValueError):
        raise ProblemError(path, name, "expected a matrix") from None
    if a.ndim != 2 or not np.all(np.isfinite(a)):
        raise ProblemError(path, name, "expected a finite matrix")
    return a


def _config(d: dict, path) -> SolveConfig:
    allowed = {f.name for f in fields(SolveConfig)}
    bad = set(d) - allowed
    if bad:
        raise ProblemError(path, f"solve.{sorted(bad)[0]}", "unknown setting")
    kw = dict(d)
    if "m_schedule" in kw:
        kw["m_schedule"] = tuple(kw["m_schedule"])
    try:
        return SolveConfig(**kw)
    except (TypeError, ValueError) as e:
        raise ProblemError(path, "solve", str(e)) from None


def _dynamics(d: dict, path, dim):
    name = _get(d, "name", path, "scenario.dynamics.", str)
    if name == "zero":
        return zero_field(dim)
    if name == "rotation":
        if dim != 2:
            raise ProblemError(path, "scenario.dynamics.name", "rotation needs dim 2")
        return rotation_field()
    if name == "custom":
        A = _mat(_get(d, "matrix", path, "scenario.dynamics."), path, "scenario.dynamics.matrix")
        if A.shape != (dim, dim):
            raise ProblemError(path, "scenario.dynamics.matrix", f"expected {dim}x{dim}")
        c = d.get("offset")
        c = None if c is None else _vec(c, path, "scenario.dynamics.offset", dim)
        return linear_field(A, c)
    raise ProblemError(path, "scenario.dynamics.name", f"unknown dynamics {name!r}")


def _scenario(d: dict, path: Path, interval, n_cells, dim, params, data) -> AssimilationProblem:
    V = _dynamics(_get(d, "dynamics", path, "scenario.", dict), path, dim)
    K = _mat(_get(d, "observation", path, "scenario."), path, "scenario.observation")
    if K.shape[1] != dim:
        raise ProblemError(path, "scenario.observation", f"needs {dim} columns")
    ti = d.get("truth_initial")
    ti = None if ti is None else _vec(ti, path, "scenario.truth_initial", dim)
    noise = d.get("noise", {}) or {}
    outliers = []
    for j, o in enumerate(d.get("outliers", []) or []):
        outliers.append((int(_get(o, "index", path, f"scenario.outliers[{j}].")),
                         _vec(_get(o, "offset", path, f"scenario.outliers[{j}]."), path,
                              f"scenario.outliers[{j}].offset", K.shape[0])))
    meas = None
    if d.get("measurements"):
        mp = (path.parent / d["measurements"]).resolve()
        meas = load_measurements(mp, interval)
        if meas[1].shape[1] != K.shape[0]:
            raise ProblemError(path, "scenario.measurements",
                               f"series has {meas[1].shape[1]} components, observation has {K.shape[0]}")
    try:
        return AssimilationProblem(
            interval=interval, n_cells=n_cells, dynamics=V, observation=K,
            truth_initial=ti, data=data,
            noise_amplitude=float(noise.get("amplitude", 0.0)),
            noise_seed=int(noise.get("seed", 0)),
            outliers=outliers, n_samples=d.get("n_samples"), measurements=meas,
            c0=float(params.get("c0", 0.1)), alpha=float(params.get("alpha", 0.5)),
        )
    except ValueError as e:
        raise ProblemError(path, "scenario", str(e)) from None


def _data(d, path, interval, dim, model):
    if d is None:
        return None
    if "anchor" in d:
        return AffineData(_vec(d["anchor"], path, "data.anchor", dim),
                          _vec(_get(d, "slope", path, "data."), path, "data.slope", dim))
    left = _vec(_get(d, "left", path, "data."), path, "data.left", dim)
    if d.get("compatible"):
        return None  # resolved once the grid exists
    right = _vec(_get(d, "right", path, "data."), path, "data.right", dim)
    return AffineData.from_endpoints(interval, left, right)


def compatible_data(model: LagrangianModel, grid: Grid, left) -> AffineData:
    """Endpoint data for which ``Du_j = V(x_{j+1/2})`` is admissible on this grid."""
    if not model.v_eta_free:
        raise ValueError("compatible data need an x-only drift")
    left = np.asarray(left, dtype=float)
    xm = grid.midpoints
    V = model.V(xm, np.zeros((len(xm), model.dim)))
    right = left + grid.h * V.sum(axis=0)
    return AffineData.from_endpoints(grid.interval, left, right)


def load_problem(path, n_cells: int | None = None, m_max: int | None = None,
                 seed: int | None = None) -> Problem:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as e:
        raise ProblemError(path, "<file>", e.strerror) from None
    except json.JSONDecodeError as e:
        raise ProblemError(path, f"<line {e.lineno}>", e.msg) from None
    if not isinstance(raw, dict):
        raise ProblemError(path, "<root>", "expected an object")
    ver = _get(raw, "schema_version", path, "", int)
    if ver != SCHEMA_VERSION:
        raise ProblemError(path, "schema_version", f"unsupported version {ver}")
    iv = _vec(_get(raw, "interval", path, ""), path, "interval", 2)
    try:
        interval = Interval(float(iv[0]), float(iv[1]))
    except GridError as e:
        raise ProblemError(path, "interval", str(e)) from None
    n = int(n_cells if n_cells is not None else _get(raw, "n_cells", path, "", int))
    try:
        grid = build_grid(interval, n)
    except GridError as e:
        raise ProblemError(path, "n_cells", str(e)) from None
    dim = _get(raw, "dim", path, "", int)
    if dim < 1:
        raise ProblemError(path, "dim", "must be >= 1")
    md = _get(raw, "model", path, "", dict)
    mname = _get(md, "name", path, "model.", str)
    params = md.get("params", {}) or {}

    cfg = _config(raw.get("solve", {}) or {}, path)
    if m_max is not None:
        cfg = cfg.truncated(m_max)
    if seed is not None:
        from dataclasses import replace
        cfg = replace(cfg, seed=int(seed))

    bx = raw.get("hypothesis_box", {}) or {}
    box = HypothesisBox((interval.a, interval.b), float(bx.get("eta_max", 10.0)),
                        float(bx.get("p_max", 100.0)))
    analysis = dict(raw.get("analysis", {}) or {})

    data_raw = raw.get("data")
    assim = None
    if mname == "power":
        model = builtin_power(dim, int(params.get("exponent", 1)))
    elif mname == "yu":
        model = builtin_yu(dim)
    elif mname == "drift":
        try:
            model = builtin_drift(params["amplitude"], params["frequency"],
                                  params.get("phase"), params.get("offset"))
        except KeyError as e:
            raise ProblemError(path, f"model.params.{e.args[0]}", "missing") from None
        if model.dim != dim:
            raise ProblemError(path, "model.params.amplitude", f"expected length {dim}")
    elif mname == "data_assimilation":
        data = _data(data_raw, path, interval, dim, None)
        assim = _scenario(_get(raw, "scenario", path, "", dict), path, interval, n, dim,
                          params, data)
        try:
            model, _, _, data = build_model(assim)
        except ValueError as e:
            raise ProblemError(path, "scenario", str(e)) from None
        return Problem(raw.get("name", path.stem), path, grid, model, data, cfg, box,
                       analysis, assim, raw)
    else:
        raise ProblemError(path, "model.name", f"unknown model {mname!r}")

    if data_raw is None:
        raise ProblemError(path, "data", "missing")
    data = _data(data_raw, path, interval, dim, model)
    if data is None:
        try:
            data = compatible_data(model, grid, _vec(data_raw["left"], path, "data.left", dim))
        except ValueError as e:
            raise ProblemError(path, "data.compatible", str(e)) from None
    return Problem(raw.get("name", path.stem), path, grid, model, data, cfg, box, analysis,
                   None, raw)
