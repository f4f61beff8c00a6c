"""Data-assimilation workflow: synthetic truth, measurements, and the m=1 vs limit comparison."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .functionals import cell_lagrangian, esup_energy
from .grid import AffineData, Grid, GridFunction, Interval, build_grid, cell_gradient
from .lagrangian import (HypothesisBox, ObservationModel, VectorField,
                         builtin_data_assimilation, check_hypotheses)
from .solver import SolveConfig, SolveReport, continuation_solve, _replace


class MeasurementError(ValueError):
    pass


@dataclass
class AssimilationProblem:
    interval: Interval
    n_cells: int
    dynamics: VectorField
    observation: np.ndarray  # linear observation matrix (M x N)
    truth_initial: np.ndarray | None = None
    data: AffineData | None = None
    noise_amplitude: float = 0.0
    noise_seed: int = 0
    outliers: list = field(default_factory=list)  # (sample index, offset M-vector)
    n_samples: int | None = None
    measurements: tuple | None = None  # (x, k) when ingested from file
    c0: float = 0.1
    alpha: float = 0.5

    def __post_init__(self):
        self.observation = np.atleast_2d(np.asarray(self.observation, dtype=float))
        if self.observation.shape[1] != self.dynamics.dim:
            raise ValueError(
                f"observation matrix has {self.observation.shape[1]} columns, "
                f"dynamics live in R^{self.dynamics.dim}"
            )
        if self.truth_initial is None and self.measurements is None:
            raise ValueError("need a truth initial value or a measurement series")
        if self.truth_initial is None and self.data is None:
            raise ValueError("endpoint data are required without a synthetic truth")

    @property
    def grid(self) -> Grid:
        return build_grid(self.interval, self.n_cells)


def integrate(V: VectorField, grid: Grid, u0) -> GridFunction:
    """Classical four-stage Runge-Kutta at grid resolution."""
    x = grid.nodes
    h = grid.h
    u = np.zeros((grid.n_nodes, V.dim))
    u[0] = np.asarray(u0, dtype=float).reshape(V.dim)

    def f(t, y):
        return V.V(np.array([t]), y[None, :])[0]

    for j in range(grid.n_cells):
        t, y = x[j], u[j]
        k1 = f(t, y)
        k2 = f(t + h / 2, y + h / 2 * k1)
        k3 = f(t + h / 2, y + h / 2 * k2)
        k4 = f(t + h, y + h * k3)
        u[j + 1] = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(u[j + 1])):
            raise FloatingPointError(f"trajectory blew up at x={x[j + 1]}")
    return GridFunction(grid, u)


def _sample_indices(grid: Grid, n_samples: int | None) -> np.ndarray:
    if n_samples is None:
        return np.arange(grid.n_nodes)
    if n_samples < 2:
        raise ValueError("need at least 2 samples")
    return np.unique(np.rint(np.linspace(0, grid.n_cells, n_samples)).astype(int))


def synthesize(problem: AssimilationProblem) -> tuple:
    """``(truth, (sample_x, sample_k))`` with seeded additive noise and outliers."""
    if problem.truth_initial is None:
        raise ValueError("synthesis needs a truth initial value")
    grid = problem.grid
    truth = integrate(problem.dynamics, grid, problem.truth_initial)
    idx = _sample_indices(grid, problem.n_samples)
    xs = grid.nodes[idx]
    ks = truth.values[idx] @ problem.observation.T
    if problem.noise_amplitude > 0:
        rng = np.random.default_rng(problem.noise_seed)
        ks = ks + problem.noise_amplitude * rng.standard_normal(ks.shape)
    for i, off in problem.outliers:
        ks[int(i)] += np.asarray(off, dtype=float)
    return truth, (xs, ks)


def load_measurements(path, interval: Interval | None = None) -> tuple:
    """Read ``x,k_1,...,k_M``; x strictly increasing; optional coverage check."""
    path = Path(path)
    try:
        fh = path.open(newline="")
    except OSError as e:
        raise MeasurementError(f"{path}: {e.strerror}") from e
    with fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise MeasurementError(f"{path}: empty file")
    head = [c.strip() for c in rows[0]]
    M = len(head) - 1
    if head[0] != "x" or M < 1 or head[1:] != [f"k_{i + 1}" for i in range(M)]:
        raise MeasurementError(f"{path}:1: header must be 'x,k_1,...,k_M'")
    xs, ks = [], []
    for ln, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != M + 1:
            raise MeasurementError(f"{path}:{ln}: expected {M + 1} fields, got {len(row)}")
        try:
            vals = [float(c) for c in row]
        except ValueError:
            raise MeasurementError(f"{path}:{ln}: non-numeric field") from None
        if not all(math.isfinite(v) for v in vals):
            raise MeasurementError(f"{path}:{ln}: non-finite value")
        if xs and vals[0] <= xs[-1]:
            raise MeasurementError(f"{path}:{ln}: x={vals[0]} is not greater than {xs[-1]}")
        xs.append(vals[0])
        ks.append(vals[1:])
    if len(xs) < 2:
        raise MeasurementError(f"{path}: need at least 2 samples")
    xs = np.array(xs)
    ks = np.array(ks)
    if interval is not None:
        tol = 1e-12 * max(1.0, abs(interval.a), abs(interval.b))
        if xs[0] > interval.a + tol or xs[-1] < interval.b - tol:
            raise MeasurementError(
                f"{path}: samples cover [{xs[0]}, {xs[-1]}], interval is "
                f"[{interval.a}, {interval.b}]"
            )
    return xs, ks


def write_measurements(path, xs, ks) -> None:
    ks = np.asarray(ks).reshape(len(xs), -1)
    with Path(path).open("w") as fh:
        fh.write(",".join(["x"] + [f"k_{i + 1}" for i in range(ks.shape[1])]) + "\n")
        for x, row in zip(xs, ks):
            fh.write(",".join(f"{v:.17g}" for v in (x, *row)) + "\n")


@dataclass
class MisfitSummary:
    model_sup: float
    model_l2: float
    obs_sup: float
    obs_l2: float
    truth_sup: float | None
    spike: float  # max / mean of the cell Lagrangian
    esup: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class ComparisonReport:
    classical: MisfitSummary
    limit: MisfitSummary
    esup_ordering_ok: bool
    spike_ordering_ok: bool
    hypotheses_ok: bool
    reports: dict  # "classical"/"limit" -> SolveReport
    pointwise: np.ndarray  # columns: x_mid, |W| (m=1), |W| (lim), obs (m=1), obs (lim), L (m=1), L (lim)
    scale: float

    def to_dict(self) -> dict:
        return {"classical": self.classical.to_dict(), "limit": self.limit.to_dict(),
                "esup_ordering_ok": self.esup_ordering_ok,
                "spike_ordering_ok": self.spike_ordering_ok,
                "hypotheses_ok": self.hypotheses_ok, "scale": self.scale}

    POINTWISE_HEADER = ["x", "model_misfit_m1", "model_misfit_inf", "obs_misfit_m1",
                        "obs_misfit_inf", "L_m1", "L_inf"]

    def write_csv(self, path) -> None:
        with Path(path).open("w") as fh:
            fh.write(",".join(self.POINTWISE_HEADER) + "\n")
            for row in self.pointwise:
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def _profiles(u: GridFunction, model, obs: ObservationModel):
    xm = u.grid.midpoints
    W = np.linalg.norm(cell_gradient(u) - model.V(xm, u.cell_average()), axis=1)
    O = np.linalg.norm(obs.K(u.cell_average()) - obs.k(xm), axis=1)
    return W, O, cell_lagrangian(u, model)


def _summary(u, model, obs, truth) -> MisfitSummary:
    W, O, L = _profiles(u, model, obs)
    h = u.grid.h
    dev = None
    if truth is not None:
        dev = float(np.linalg.norm(u.values - truth.values, axis=1).max())
    return MisfitSummary(float(W.max()), float(np.sqrt(h * np.sum(W ** 2))),
                         float(O.max()), float(np.sqrt(h * np.sum(O ** 2))), dev,
                         float(L.max() / L.mean()), float(L.max()))


def build_model(problem: AssimilationProblem):
    """``(model, observation, truth, data)`` for a problem."""
    truth = None
    if problem.measurements is not None:
        xs, ks = problem.measurements
        if problem.truth_initial is not None:
            truth = integrate(problem.dynamics, problem.grid, problem.truth_initial)
    else:
        truth, (xs, ks) = synthesize(problem)
    obs = ObservationModel.linear(problem.observation, xs, ks)
    if not obs.covers(problem.interval.a, problem.interval.b):
        raise MeasurementError("measurement samples do not cover the interval")
    model = builtin_data_assimilation(obs, problem.dynamics, problem.c0, problem.alpha)
    data = problem.data
    if data is None:
        data = AffineData.from_endpoints(problem.interval, truth.values[0], truth.values[-1])
    return model, obs, truth, data


def assimilate(problem: AssimilationProblem, cfg: SolveConfig = SolveConfig()) -> ComparisonReport:
    model, obs, truth, data = build_model(problem)
    grid = problem.grid
    r1 = continuation_solve(model, data, grid, _replace(cfg, m_schedule=(1,), min_stages=1))
    rinf = continuation_solve(model, data, grid, cfg)
    emax = float(np.abs(np.concatenate([obs.sample_k.ravel(), data.anchor,
                                        data.anchor + data.slope * problem.interval.length]))
                 .max())
    box = HypothesisBox((problem.interval.a, problem.interval.b), eta_max=2 * emax + 1, p_max=100.0)
    hyp = check_hypotheses(model, box, samples=512, seed=cfg.seed)
    s1 = _summary(r1.u_final, model, obs, truth)
    sinf = _summary(rinf.u_final, model, obs, truth)
    scale = max(1.0, s1.esup)
    W1, O1, L1 = _profiles(r1.u_final, model, obs)
    Wi, Oi, Li = _profiles(rinf.u_final, model, obs)
    pw = np.column_stack([grid.midpoints, W1, Wi, O1, Oi, L1, Li])
    return ComparisonReport(
        classical=s1, limit=sinf,
        esup_ordering_ok=sinf.esup <= s1.esup + 1e-6 * scale,
        spike_ordering_ok=sinf.spike <= s1.spike,
        hypotheses_ok=hyp.passed,
        reports={"classical": r1, "limit": rinf},
        pointwise=pw, scale=scale,
    )
