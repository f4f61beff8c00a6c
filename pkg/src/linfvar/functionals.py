"""Discrete supremal and power-mean energies on a uniform grid.

Cell ``j`` contributes ``L_j = L(x_{j+1/2}, (u_j + u_{j+1})/2, (u_{j+1} - u_j)/h)``.
The discrete integral functional is ``S_m = sum_j h L_j^m`` and the solver
works with the normalised power mean ``Phi_m = (S_m / |A|)^{1/m}``, which is
kept in the log domain so that ``m`` in the thousands never overflows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .grid import GridFunction, cell_gradient
from .lagrangian import LagrangianModel, Terms, H_etaeta, V_etaeta, evaluate_terms


class EnergyError(ValueError):
    pass


def _mask(u: GridFunction, cells) -> np.ndarray:
    n = u.grid.n_cells
    if cells is None:
        return np.ones(n, dtype=bool)
    cells = np.asarray(cells)
    if cells.dtype != bool:
        idx = cells.astype(int)
        cells = np.zeros(n, dtype=bool)
        cells[idx] = True
    if cells.shape != (n,):
        raise EnergyError(f"cell mask must have length {n}, got {cells.shape}")
    if not cells.any():
        raise EnergyError("cell mask is empty")
    return cells


def cell_terms(u: GridFunction, model: LagrangianModel) -> Terms:
    if u.dim != model.dim:
        raise EnergyError(f"grid function has dimension {u.dim}, model expects {model.dim}")
    return evaluate_terms(model, u.grid.midpoints, u.cell_average(), cell_gradient(u))


def cell_lagrangian(u: GridFunction, model: LagrangianModel) -> np.ndarray:
    return cell_terms(u, model).H


def esup_energy(u: GridFunction, model: LagrangianModel, cells=None) -> float:
    """Max of the cell Lagrangians over a (default: full) cell mask."""
    mask = _mask(u, cells)
    return float(cell_lagrangian(u, model)[mask].max())


@dataclass
class EnergyBreakdown:
    m: int
    cell_values: np.ndarray
    log_em: float  # log sum_j h L_j^m over the mask
    normalized: float  # (S_m / |A|)^{1/m}
    esup: float
    measure: float

    @property
    def em(self) -> float:
        """Raw ``S_m``; ``inf`` once it leaves double range."""
        with np.errstate(over="ignore"):
            return float(np.exp(self.log_em))

    def to_dict(self) -> dict:
        return {"m": self.m, "log_em": self.log_em, "normalized": self.normalized,
                "esup": self.esup, "measure": self.measure}


def power_mean_log(L: np.ndarray, h: float, m: int) -> tuple:
    """``(log sum h L^m, log of the normalised power mean)`` for positive ``L``."""
    if np.any(~(L > 0)):
        raise EnergyError("cell Lagrangian is not positive; the model violates H >= 1")
    lg = np.log(L)
    log_s = float(logsumexp(m * lg) + np.log(h))
    log_mean = (log_s - np.log(h * len(L))) / m
    return log_s, log_mean


def em_energy_log(u: GridFunction, model: LagrangianModel, m: int, cells=None) -> EnergyBreakdown:
    if int(m) != m or m < 1:
        raise EnergyError(f"m must be a positive integer, got {m}")
    m = int(m)
    mask = _mask(u, cells)
    L = cell_lagrangian(u, model)
    Lm = L[mask]
    log_s, log_mean = power_mean_log(Lm, u.grid.h, m)
    # the power mean never exceeds the max; clip the last-ulp excess from exp/log
    norm = min(float(np.exp(log_mean)), float(Lm.max()))
    return EnergyBreakdown(m, L, log_s, norm, float(Lm.max()), u.grid.h * int(mask.sum()))


def normalized_energy(u: GridFunction, model: LagrangianModel, m: int, cells=None) -> float:
    return em_energy_log(u, model, m, cells).normalized


# -- derivatives of the cell Lagrangians with respect to nodal values

@dataclass
class CellDerivatives:
    """``L_j`` and its derivatives w.r.t. ``(u_j, u_{j+1})``.

    ``d1[j, s]`` is ``dL_j / du_{j+s}`` (an N-vector, s = 0, 1) and
    ``d2[j, s, :, t, :]`` the N x N block ``d^2 L_j / du_{j+s} du_{j+t}``.
    """

    L: np.ndarray
    d1: np.ndarray
    d2: np.ndarray | None


def cell_derivatives(u: GridFunction, model: LagrangianModel, second: bool = False) -> CellDerivatives:
    t = cell_terms(u, model)
    h = u.grid.h
    LP = t.L_P
    Le = t.L_eta
    d1 = np.stack([0.5 * Le - LP / h, 0.5 * Le + LP / h], axis=1)
    if not second:
        return CellDerivatives(t.H, d1, None)

    n, N = t.W.shape
    I = np.eye(N)
    W, Hp, Hpp = t.W, t.H_p, t.H_pp
    q = np.einsum("ng,nga->na", W, t.V_eta)  # V_eta^T W
    LPP = Hpp[:, None, None] * np.einsum("na,nb->nab", W, W) + Hp[:, None, None] * I
    # [a, b] = d(L_P)_a / d eta_b
    LPe = (np.einsum("na,nb->nab", W, t.H_peta - Hpp[:, None] * q)
           - Hp[:, None, None] * t.V_eta)
    Hee = H_etaeta(model, t.x, t.eta, t.p)
    Vee = V_etaeta(model, t.x, t.eta)
    Lee = (Hee
           - np.einsum("na,nb->nab", t.H_peta, q)
           - np.einsum("na,nb->nab", q, t.H_peta)
           + Hpp[:, None, None] * np.einsum("na,nb->nab", q, q)
           - Hp[:, None, None] * np.einsum("ng,ngab->nab", W, Vee)
           + Hp[:, None, None] * np.einsum("nga,ngb->nab", t.V_eta, t.V_eta))
    # (eta, P) = (u_j + u_{j+1})/2, (u_{j+1} - u_j)/h
    ce = np.array([0.5, 0.5])
    cp = np.array([-1.0 / h, 1.0 / h])
    d2 = (np.einsum("s,t,nab->nsatb", ce, ce, Lee)
          + np.einsum("s,t,nab->nsatb", cp, cp, LPP)
          + np.einsum("s,t,nab->nsatb", cp, ce, LPe)
          + np.einsum("s,t,nba->nsatb", ce, cp, LPe))
    return CellDerivatives(t.H, d1, d2)


def em_gradient(u: GridFunction, model: LagrangianModel, m: int) -> np.ndarray:
    """Gradient of ``Phi_m`` with respect to interior nodal values, shape (n-1, N)."""
    if int(m) != m or m < 1:
        raise EnergyError(f"m must be a positive integer, got {m}")
    cd = cell_derivatives(u, model)
    phi, G = _phi_and_log_gradient(u, cd, int(m))
    g = phi * G
    if not np.all(np.isfinite(g)):
        raise FloatingPointError("non-finite gradient; check the continuation schedule")
    return g


def _phi_and_log_gradient(u: GridFunction, cd: CellDerivatives, m: int):
    """``Phi_m`` and ``grad log Phi_m = sum_j w_j dL_j / L_j`` at interior nodes."""
    h = u.grid.h
    log_s, log_mean = power_mean_log(cd.L, h, m)
    lg = np.log(cd.L)
    w = np.exp(m * lg + np.log(h) - log_s)
    ratio = cd.d1 / cd.L[:, None, None]
    wr = w[:, None, None] * ratio
    G = wr[1:, 0] + wr[:-1, 1]
    return float(np.exp(log_mean)), G
