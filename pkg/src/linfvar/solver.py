"""Power-mean minimisation with m-continuation.

For each ``m`` the discrete energy ``S_m = sum_j h L_j^m`` is minimised over
interior nodal values by Levenberg-damped Newton with Armijo backtracking on
``log Phi_m``.  ``S_m`` and ``Phi_m = (S_m/|Omega|)^{1/m}`` share minimisers,
and the Newton system is built from the Hessian of ``S_m`` divided by
``m S_m`` with each block row rescaled by the largest adjacent cell weight,
so that cells far below the maximum never underflow to a singular row.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded
from scipy.special import logsumexp

from .grid import AffineData, Grid, GridFunction, cell_gradient
from .functionals import (CellDerivatives, cell_derivatives, em_energy_log, esup_energy,
                          power_mean_log)
from .lagrangian import LagrangianModel

DEFAULT_SCHEDULE = tuple(2 ** k for k in range(11))  # 1 .. 1024
ROUNDOFF_FACTOR = 64.0  # safety over the observed noise level (about 20x the bare estimate)


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolveConfig:
    m_schedule: tuple = DEFAULT_SCHEDULE
    newton_tol: float = 1e-10
    max_newton_iters: int = 100
    levenberg_lambda0: float = 0.0
    armijo_c: float = 1e-4
    backtrack: float = 0.5
    continuation_stop: float = 1e-6
    min_stages: int = 4
    seed: int = 0

    def __post_init__(self):
        s = tuple(int(m) for m in self.m_schedule)
        if not s or s[0] < 1 or any(b <= a for a, b in zip(s, s[1:])):
            raise ValueError(f"m_schedule must be strictly increasing and start >= 1, got {s}")
        object.__setattr__(self, "m_schedule", s)
        if self.newton_tol <= 0 or self.continuation_stop < 0:
            raise ValueError("tolerances must be positive")
        if not (0 < self.armijo_c < 1 and 0 < self.backtrack < 1):
            raise ValueError("Armijo constants must lie in (0, 1)")
        if self.levenberg_lambda0 < 0:
            raise ValueError("levenberg_lambda0 must be >= 0")

    def truncated(self, m_max: int) -> "SolveConfig":
        s = tuple(m for m in self.m_schedule if m <= m_max)
        return _replace(self, m_schedule=s or (self.m_schedule[0],))


def _replace(cfg, **kw):
    from dataclasses import replace
    return replace(cfg, **kw)


@dataclass
class StageRecord:
    m: int
    iterations: int
    grad_norm: float
    local_norm: float
    normalized_energy: float
    esup: float
    converged: bool
    message: str = ""
    du_change_sup: float = math.nan
    du_change_lq: dict = field(default_factory=dict)
    bound_lhs: float = math.nan
    bound_rhs: float = math.nan
    energy_history: list = field(default_factory=list)  # Phi_m at accepted iterates

    def to_dict(self) -> dict:
        return {
            "m": self.m, "iterations": self.iterations, "grad_norm": self.grad_norm,
            "local_norm": self.local_norm, "normalized_energy": self.normalized_energy,
            "esup": self.esup, "converged": self.converged, "message": self.message,
            "du_change_sup": _json_float(self.du_change_sup),
            "du_change_lq": {str(k): v for k, v in self.du_change_lq.items()},
            "bound_lhs": _json_float(self.bound_lhs), "bound_rhs": _json_float(self.bound_rhs),
        }


def _json_float(v):
    return None if v is None or (isinstance(v, float) and math.isnan(v)) else v


@dataclass
class SolveReport:
    stages: list
    iterates: list
    u_final: GridFunction
    esup_final: float
    monotonicity: list  # (m, normalised E_m(u_final))
    residuals: dict = field(default_factory=dict)
    verification: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return all(s.converged for s in self.stages)

    def to_dict(self) -> dict:
        return {
            "converged": self.converged,
            "esup_final": self.esup_final,
            "stages": [s.to_dict() for s in self.stages],
            "monotonicity": [{"m": m, "normalized": v} for m, v in self.monotonicity],
            "residuals": self.residuals,
            "verification": self.verification,
        }


# -- Hessian

@dataclass
class BlockTridiagonal:
    """``scale * (blocks) - low_rank low_rank^T`` on interior nodes.

    ``diag[i]`` couples node i+1 with itself, ``upper[i]`` node i+1 with i+2
    (interior numbering starts at grid node 1); the lower blocks are the
    transposes of ``upper``.
    """

    diag: np.ndarray
    upper: np.ndarray
    low_rank: np.ndarray

    @property
    def size(self) -> int:
        return self.diag.shape[0] * self.diag.shape[1]

    def dense(self) -> np.ndarray:
        k, N, _ = self.diag.shape
        A = np.zeros((k * N, k * N))
        for i in range(k):
            A[i * N:(i + 1) * N, i * N:(i + 1) * N] = self.diag[i]
        for i in range(k - 1):
            A[i * N:(i + 1) * N, (i + 1) * N:(i + 2) * N] = self.upper[i]
            A[(i + 1) * N:(i + 2) * N, i * N:(i + 1) * N] = self.upper[i].T
        v = self.low_rank.reshape(-1)
        return A - np.outer(v, v)

    def matvec(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(self.diag.shape[:2])
        y = np.einsum("iab,ib->ia", self.diag, x)
        y[:-1] += np.einsum("iab,ib->ia", self.upper, x[1:])
        y[1:] += np.einsum("iba,ib->ia", self.upper, x[:-1])
        v = self.low_rank.reshape(-1)
        return y.reshape(-1) - v * (v @ x.reshape(-1))


def _cell_blocks(cd: CellDerivatives, m: int) -> np.ndarray:
    """``L''_j / L_j + (m-1) l'_j l'_j^T`` per cell, shape (n, 2, N, 2, N)."""
    L = cd.L[:, None, None, None, None]
    lp = cd.d1 / cd.L[:, None, None]
    return cd.d2 / L + (m - 1) * np.einsum("nsa,ntb->nsatb", lp, lp)


def _assemble(C: np.ndarray, wl: np.ndarray, wr: np.ndarray):
    """Block rows from per-cell blocks; row i uses weight ``wl`` for cell i and ``wr`` for cell i+1."""
    diag = wl[:, None, None] * C[:-1, 1, :, 1, :] + wr[:, None, None] * C[1:, 0, :, 0, :]
    upper = wr[:-1, None, None] * C[1:-1, 0, :, 1, :]
    lower = wl[1:, None, None] * C[1:-1, 1, :, 0, :]
    return diag, upper, lower


def hessian_assemble(u: GridFunction, model: LagrangianModel, m: int) -> BlockTridiagonal:
    """Exact Hessian of ``Phi_m`` w.r.t. interior nodes.

    ``Phi [B - (m-1) G G^T]`` with ``G = grad log Phi`` and the block
    tridiagonal ``B = sum_j w_j (L''_j / L_j + (m-1) l'_j l'_j^T)``,
    ``w_j = h L_j^m / S_m``.
    """
    m = int(m)
    cd = cell_derivatives(u, model, second=True)
    h = u.grid.h
    log_s, log_mean = power_mean_log(cd.L, h, m)
    w = np.exp(m * np.log(cd.L) + np.log(h) - log_s)
    phi = math.exp(log_mean)
    C = _cell_blocks(cd, m)
    diag, upper, _ = _assemble(C, w[:-1], w[1:])
    lp = cd.d1 / cd.L[:, None, None]
    G = w[:-1, None] * lp[:-1, 1] + w[1:, None] * lp[1:, 0]
    return BlockTridiagonal(phi * diag, phi * upper, math.sqrt(phi * (m - 1)) * G)


# -- Newton

def _to_banded(diag, upper, lower):
    k, N, _ = diag.shape
    bw = 2 * N - 1
    K = k * N
    ab = np.zeros((2 * bw + 1, K))
    ia, ib = np.meshgrid(np.arange(N), np.arange(N), indexing="ij")

    def put(blocks, roff):
        for i in range(len(blocks)):
            r = i * N + ia
            c = (i + roff) * N + ib
            ab[bw + r - c, c] = blocks[i]

    put(diag, 0)
    put(upper, 1)
    # lower[i] is block (i+1, i)
    for i in range(len(lower)):
        r = (i + 1) * N + ia
        c = i * N + ib
        ab[bw + r - c, c] = lower[i]
    return ab, bw


@dataclass
class _Linearization:
    log_phi: float
    phi: float
    G: np.ndarray  # grad log Phi
    local: np.ndarray  # row-rescaled gradient
    diag: np.ndarray
    upper: np.ndarray
    lower: np.ndarray
    measure: float
    floor: tuple = (0.0, 0.0)  # roundoff level of (gradient, local) norms


def _linearize(u: GridFunction, model, m: int, second: bool = True) -> _Linearization:
    cd = cell_derivatives(u, model, second=second)
    h = u.grid.h
    lg = np.log(cd.L)
    log_s, log_mean = power_mean_log(cd.L, h, m)
    lp = cd.d1 / cd.L[:, None, None]
    w = np.exp(m * lg + np.log(h) - log_s)
    G = w[:-1, None] * lp[:-1, 1] + w[1:, None] * lp[1:, 0]
    mu = np.maximum(lg[:-1], lg[1:])
    wl = np.exp(m * (lg[:-1] - mu))
    wr = np.exp(m * (lg[1:] - mu))
    local = wl[:, None] * lp[:-1, 1] + wr[:, None] * lp[1:, 0]
    diag = upper = lower = None
    if second:
        diag, upper, lower = _assemble(_cell_blocks(cd, m), wl, wr)
    # weights e^{m l} carry relative error ~ m eps (1 + |l|)
    rel = ROUNDOFF_FACTOR * m * np.finfo(float).eps * (1.0 + float(np.abs(lg).max()))
    alp = np.linalg.norm(lp, axis=2)
    phi = math.exp(log_mean)
    measure = h * len(cd.L)
    gfloor = phi * rel * float((w[:-1] * alp[:-1, 1] + w[1:] * alp[1:, 0]).max())
    lfloor = phi * h / measure * rel * float((wl * alp[:-1, 1] + wr * alp[1:, 0]).max())
    return _Linearization(log_mean, phi, G, local, diag, upper, lower, measure,
                          (gfloor, lfloor))


def _log_phi(u, model, m) -> float:
    from .functionals import cell_lagrangian
    L = cell_lagrangian(u, model)
    return power_mean_log(L, u.grid.h, m)[1]


def _norms(lin: _Linearization, h: float):
    grad = lin.phi * float(np.abs(lin.G).max()) if lin.G.size else 0.0
    loc = lin.phi * h / lin.measure * float(np.abs(lin.local).max()) if lin.local.size else 0.0
    return grad, loc


def _stop(gnorm, lnorm, lin: _Linearization, tol: float):
    """Converged once both norms reach ``tol`` or, at large m, the roundoff floor."""
    if max(gnorm, lnorm) <= tol:
        return True, "converged"
    gf, lf = lin.floor
    if gnorm <= max(tol, gf) and lnorm <= max(tol, lf):
        return True, "converged to roundoff floor"
    return False, ""


def _pin(values, data: AffineData, grid: Grid):
    v = np.array(values, dtype=float)
    v[0] = data(grid.nodes[0], grid.interval.a)
    v[-1] = data(grid.nodes[-1], grid.interval.a)
    return v


def minimize_em(u0: GridFunction, model: LagrangianModel, m: int, data: AffineData,
                cfg: SolveConfig = SolveConfig()) -> tuple:
    """Damped Newton for the discrete power-m energy with pinned endpoints."""
    m = int(m)
    if m < 1:
        raise ValueError("m must be >= 1")
    grid = u0.grid
    if data.dim != u0.dim:
        raise ValueError(f"data has dimension {data.dim}, u0 has {u0.dim}")
    ends = np.stack([data(grid.nodes[0], grid.interval.a), data(grid.nodes[-1], grid.interval.a)])
    scale = 1.0 + float(np.abs(ends).max())
    if np.abs(u0.values[[0, -1]] - ends).max() > 1e-12 * scale:
        raise ValueError("u0 does not match the Dirichlet data at the endpoints")
    u = u0.with_values(_pin(u0.values, data, grid))
    h = grid.h
    N = u.dim
    lam = cfg.levenberg_lambda0
    eps = np.finfo(float).eps
    it = 0
    message = ""
    lin = _linearize(u, model, m)
    history = [lin.phi]
    while True:
        gnorm, lnorm = _norms(lin, h)
        converged, message = _stop(gnorm, lnorm, lin, cfg.newton_tol)
        if converged:
            break
        if it >= cfg.max_newton_iters:
            converged = False
            message = "iteration budget exhausted"
            break
        it += 1
        rhs = -lin.local.reshape(-1)
        sig = np.einsum("iaa->i", lin.diag) / N
        sig = np.where(sig > 0, sig, 1.0 / h ** 2)
        accepted = False
        while not accepted:
            diag = lin.diag + (lam * sig)[:, None, None] * np.eye(N)
            ab, bw = _to_banded(diag, lin.upper, lin.lower)
            try:
                d = solve_banded((bw, bw), ab, rhs, check_finite=False)
            except (np.linalg.LinAlgError, ValueError):
                d = None
            finite = d is not None and bool(np.all(np.isfinite(d)))
            slope = float(lin.G.reshape(-1) @ d) if finite else 0.0
            f0 = lin.log_phi
            slack = 10 * eps * (1.0 + abs(f0)) * max(1.0, float(np.log(lin.phi + 1.0)))
            # cells far below the max underflow out of Phi; the row-rescaled
            # gradient still sees them, so it arbitrates when Phi is flat
            lslope = float(lin.local.reshape(-1) @ d) if finite else 0.0
            if not finite or not (slope < 0 or (abs(slope) <= slack and lslope < 0)):
                lam = max(10 * lam, 1e-10)
                if lam > 1e12:
                    break
                continue
            dd = d.reshape(-1, N)
            t = 1.0
            r0 = float(np.abs(lin.local).max())
            while t >= 1e-10:
                v = u.values.copy()
                v[1:-1] += t * dd
                trial = u.with_values(v)
                f1 = _log_phi(trial, model, m)
                if f1 <= f0 + cfg.armijo_c * t * slope:
                    accepted = True
                    break
                if f1 <= f0 + cfg.armijo_c * t * slope + slack:
                    r1 = float(np.abs(_linearize(trial, model, m, second=False).local).max())
                    if r1 <= (1.0 - cfg.armijo_c * t) * r0:
                        accepted = True
                        break
                t *= cfg.backtrack
            if accepted:
                u = trial
                if t == 1.0:
                    lam = lam / 10 if lam > 1e-12 else 0.0
                break
            lam = max(10 * lam, 1e-10)
            if lam > 1e12:
                break
        if not accepted:
            lin = _linearize(u, model, m)
            gnorm, lnorm = _norms(lin, h)
            converged, message = _stop(gnorm, lnorm, lin, cfg.newton_tol)
            message = message or "line search failed"
            break
        lin = _linearize(u, model, m)
        history.append(lin.phi)
    eb = em_energy_log(u, model, m)
    rec = StageRecord(m=m, iterations=it, grad_norm=gnorm, local_norm=lnorm,
                      normalized_energy=eb.normalized, esup=eb.esup,
                      converged=converged, message=message, energy_history=history)
    return u, rec


# -- continuation

def bound_check(u: GridFunction, model: LagrangianModel, m: int, data: AffineData) -> tuple:
    """Discrete ``||u||_{W^{1,2m}} <= C (E_m^{1/2m} + max|b| + 1)``, returned as ``(lhs, rhs)``."""
    grid = u.grid
    h = grid.h
    q = 2 * m
    parts = []
    for arr in (u.cell_average(), cell_gradient(u)):
        mag = np.linalg.norm(arr, axis=1)
        with np.errstate(divide="ignore"):
            parts.append(np.log(h) + q * np.log(mag))
    log_norm = logsumexp(np.concatenate(parts)) / q
    lhs = float(np.exp(log_norm))
    eb = em_energy_log(u, model, m)
    em_root = math.exp(eb.log_em / q)
    bmax = max(float(np.linalg.norm(data(grid.interval.a, grid.interval.a))),
               float(np.linalg.norm(data(grid.interval.b, grid.interval.a))))
    c0 = model.hypotheses.c0
    C = (1.0 + 2.0 * (grid.interval.length + 1.0)) * (math.sqrt(12.0 / c0) + 1.0)
    return lhs, C * (em_root + bmax + 1.0)


def du_change(u: GridFunction, v: GridFunction) -> tuple:
    d = np.linalg.norm(cell_gradient(u) - cell_gradient(v), axis=1)
    h = u.grid.h
    lq = {q: float((h * np.sum(d ** q)) ** (1.0 / q)) for q in (1, 2, 4)}
    return float(d.max()), lq


def continuation_solve(model: LagrangianModel, data: AffineData, grid: Grid,
                       cfg: SolveConfig = SolveConfig()) -> SolveReport:
    if data.dim != model.dim:
        raise ValueError(f"data has dimension {data.dim}, model expects {model.dim}")
    u = GridFunction.affine(grid, data)
    stages, iterates = [], []
    prev = None
    for k, m in enumerate(cfg.m_schedule):
        u, rec = minimize_em(u, model, m, data, cfg)
        if prev is not None:
            rec.du_change_sup, rec.du_change_lq = du_change(u, prev)
        rec.bound_lhs, rec.bound_rhs = bound_check(u, model, m, data)
        stages.append(rec)
        iterates.append(u)
        if (prev is not None and len(stages) >= cfg.min_stages
                and rec.du_change_sup <= cfg.continuation_stop):
            break
        prev = u
    mono = [(m, em_energy_log(u, model, m).normalized) for m in cfg.m_schedule]
    return SolveReport(stages, iterates, u, esup_energy(u, model), mono)
