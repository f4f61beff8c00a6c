from __future__ import annotations

from functools import lru_cache
from pathlib import Path

import numpy as np
import pytest

from linfvar.problems import load_problem
from linfvar.solver import continuation_solve

ROOT = Path(__file__).resolve().parents[1]
PROBLEMS = ROOT / "problems"
FIXTURES = PROBLEMS / "fixtures"

# problems whose model satisfies the structural hypotheses; power_squared is the
# deliberately invalid model for check-model
SHIPPED = ("power", "compatible", "yu", "yu_slope", "da_compatible", "da_outlier",
           "da_equidistribution")


@lru_cache(maxsize=None)
def problem(name: str):
    return load_problem(PROBLEMS / f"{name}.json")


@lru_cache(maxsize=None)
def solved(name: str):
    p = problem(name)
    return p, continuation_solve(p.model, p.data, p.grid, p.config)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def general_model():
    """N=2 model with every partial nonzero; derivatives written by hand."""
    from linfvar.lagrangian import Hypotheses, LagrangianModel, linear_field

    A = np.array([[0.1, -0.2], [0.15, 0.05]])
    c = np.array([0.3, -0.1])
    e1 = np.array([1.0, 0.0])
    lin = linear_field(A)
    return LagrangianModel(
        dim=2,
        H=lambda x, e, p: (1 + 0.05 * np.einsum("na,na->n", e, e) + (1.5 + 0.5 * np.sin(x)) * p
                           + 0.05 * p ** 2 + 0.02 * p * e[:, 0]),
        H_p=lambda x, e, p: 1.5 + 0.5 * np.sin(x) + 0.1 * p + 0.02 * e[:, 0],
        H_pp=lambda x, e, p: np.full_like(p, 0.1),
        H_x=lambda x, e, p: 0.5 * np.cos(x) * p,
        H_eta=lambda x, e, p: 0.1 * e + 0.02 * p[:, None] * e1,
        H_px=lambda x, e, p: 0.5 * np.cos(x) + 0 * p,
        H_peta=lambda x, e, p: np.broadcast_to(0.02 * e1, e.shape).copy(),
        V=lambda x, e: lin.V(x, e) + np.sin(x)[:, None] * c,
        V_x=lambda x, e: np.cos(x)[:, None] * c + 0 * e,
        V_eta=lin.V_eta,
        hypotheses=Hypotheses(0.5, 0.5, 2, lambda r: 100.0 * (1.0 + r), "C(r) = 100(1+r)"),
        H_etaeta=lambda x, e, p: np.broadcast_to(0.1 * np.eye(2), e.shape + (2,)).copy(),
        V_etaeta=lin.V_etaeta,
        name="general",
    )


def _obs(N=2, M=1, n=21, seed=0):
    from linfvar.lagrangian import ObservationModel

    rng = np.random.default_rng(seed)
    xs = np.linspace(0.0, np.pi, n)
    A = rng.standard_normal((M, N))
    return ObservationModel.linear(A, xs, rng.standard_normal((n, M)))


def builtin_models():
    """One instance of every builtin model family."""
    from linfvar.lagrangian import (builtin_data_assimilation, builtin_drift, builtin_power,
                                    builtin_yu, linear_field, rotation_field, zero_field)

    return {
        "power": builtin_power(2),
        "yu": builtin_yu(1),
        "yu2": builtin_yu(2),
        "drift": builtin_drift([0.5, 0.3], [1.0, 2.0], [0.1, 0.0], [0.2, -0.1]),
        "da_zero": builtin_data_assimilation(_obs(2, 2), zero_field(2)),
        "da_rotation": builtin_data_assimilation(_obs(2, 1), rotation_field()),
        "da_linear": builtin_data_assimilation(_obs(2, 1, seed=3),
                                               linear_field([[0.1, 0.2], [-0.3, 0.05]], [0.1, 0])),
    }
