import json

import numpy as np
import pytest

from conftest import PROBLEMS, SHIPPED, problem
from linfvar.grid import Interval, build_grid
from linfvar.lagrangian import builtin_drift
from linfvar.problems import ProblemError, compatible_data, load_problem


def _write(tmp_path, body, name="p.json"):
    p = tmp_path / name
    p.write_text(json.dumps(body) if isinstance(body, dict) else body)
    return p


BASE = {"schema_version": 1, "interval": [0.0, 1.0], "n_cells": 8, "dim": 2,
        "model": {"name": "power", "params": {"exponent": 1}},
        "data": {"left": [0.0, 0.0], "right": [2.0, -1.0]}}


@pytest.mark.parametrize("name", SHIPPED + ("power_squared",))
def test_shipped_problems_load(name):
    p = problem(name)
    assert p.grid.n_cells >= 1 and p.model.dim == p.data.anchor.shape[0]


def test_overrides():
    p = load_problem(PROBLEMS / "yu.json", n_cells=17, m_max=100, seed=9)
    assert p.grid.n_cells == 17 and p.config.m_schedule[-1] == 64 and p.config.seed == 9


@pytest.mark.parametrize("patch,field", [
    ({"schema_version": 2}, "schema_version"),
    ({"interval": [1.0, 0.0]}, "interval"),
    ({"n_cells": 0}, "n_cells"),
    ({"dim": 0}, "dim"),
    ({"model": {"name": "nope"}}, "model.name"),
    ({"data": {"left": [0.0, 0.0]}}, "data.right"),
    ({"data": {"left": [0.0], "right": [1.0, 1.0]}}, "data.left"),
    ({"solve": {"bogus": 1}}, "solve.bogus"),
    ({"solve": {"m_schedule": [4, 2]}}, "solve"),
])
def test_schema_errors_name_the_field(tmp_path, patch, field):
    path = _write(tmp_path, {**BASE, **patch})
    with pytest.raises(ProblemError) as e:
        load_problem(path)
    assert e.value.field == field and str(path) in str(e.value)


def test_file_level_errors(tmp_path):
    with pytest.raises(ProblemError, match="<line"):
        load_problem(_write(tmp_path, "{\n  bad"))
    with pytest.raises(ProblemError, match="<root>"):
        load_problem(_write(tmp_path, "[1, 2]"))
    with pytest.raises(ProblemError, match="<file>"):
        load_problem(tmp_path / "missing.json")
    body = {k: v for k, v in BASE.items() if k != "data"}
    with pytest.raises(ProblemError) as e:
        load_problem(_write(tmp_path, body))
    assert e.value.field == "data"


def test_scenario_errors(tmp_path):
    body = {**BASE, "model": {"name": "data_assimilation"},
            "scenario": {"dynamics": {"name": "rotation"}, "observation": [[1.0, 0.0, 0.0]],
                         "truth_initial": [1.0, 0.0]}}
    with pytest.raises(ProblemError) as e:
        load_problem(_write(tmp_path, body))
    assert e.value.field == "scenario.observation"
    body["scenario"]["observation"] = [[1.0, 0.0]]
    body["scenario"]["dynamics"] = {"name": "warp"}
    with pytest.raises(ProblemError) as e:
        load_problem(_write(tmp_path, body))
    assert e.value.field == "scenario.dynamics.name"
    body["dim"] = 3
    body["scenario"] = {"dynamics": {"name": "rotation"}, "observation": [[1.0, 0.0, 0.0]],
                        "truth_initial": [1.0, 0.0, 0.0]}
    body["data"] = {"left": [0, 0, 0], "right": [1, 1, 1]}
    with pytest.raises(ProblemError, match="dim 2"):
        load_problem(_write(tmp_path, body))


def test_compatible_data():
    g = build_grid(Interval(0.0, 2.0), 10)
    model = builtin_drift([1.0], [1.0], offset=[0.5])
    d = compatible_data(model, g, [1.0])
    V = model.V(g.midpoints, np.zeros((10, 1)))
    assert d.anchor[0] == 1.0
    assert d.slope[0] * 2.0 == pytest.approx(g.h * V.sum())
    with pytest.raises(ValueError):
        compatible_data(_eta_model(), g, [0.0, 0.0])


def _eta_model():
    from linfvar.lagrangian import builtin_data_assimilation, ObservationModel, rotation_field
    obs = ObservationModel.linear([[1.0, 0.0]], [0.0, 2.0], [[0.0], [0.0]])
    return builtin_data_assimilation(obs, rotation_field())
