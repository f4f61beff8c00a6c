"""Pointwise operators of the Euler-Lagrange and L-infinity ODE systems.

Notation: ``W = P - V(x, eta)``, ``p = |W|^2 / 2``, ``tan(W) = sgn W (x) sgn W``
and ``perp(W) = I - tan(W)``.  With the blocks

    F = -H_p (H_x + H_eta . P) W + H_p |W|^2 perp(W) (H_eta - H_p V_eta^T W)
    f = -H tan(W) (-H_eta + H_p V_eta^T W + (H_peta . P + H_px) W)
    A = H (H_p + H_pp |W|^2) tan(W)

the power-m system reads ``[A/(m-1) + H_p^2 |W|^2 I] DW = F + f/(m-1)`` with
``DW = X - V_eta P - V_x``, and the limit system is ``H_p^2 |W|^2 DW = F``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .grid import GridFunction, centered_gradient, second_differences
from .lagrangian import (DimensionError, LagrangianModel, ObservationModel, Terms,
                         VectorField, evaluate_terms)
from .functionals import cell_derivatives

INF = math.inf


def proj_pair(xi) -> tuple:
    """``(sgn xi (x) sgn xi, I - sgn xi (x) sgn xi)`` with ``sgn 0 = 0``."""
    xi = np.asarray(xi, dtype=float).reshape(-1)
    tan, perp = proj_batch(xi[None, :])
    return tan[0], perp[0]


def proj_batch(W: np.ndarray) -> tuple:
    n, N = W.shape
    norm = np.linalg.norm(W, axis=1)
    safe = np.where(norm > 0, norm, 1.0)
    s = np.where(norm[:, None] > 0, W / safe[:, None], 0.0)
    tan = np.einsum("na,nb->nab", s, s)
    perp = np.eye(N)[None] - tan
    return tan, perp


@dataclass
class SystemPointState:
    """Batched arguments ``(x, eta, P, X)`` with all model partials attached."""

    terms: Terms
    X: np.ndarray

    @property
    def W(self):
        return self.terms.W

    @property
    def DW(self) -> np.ndarray:
        t = self.terms
        return self.X - np.einsum("nga,na->ng", t.V_eta, t.P) - t.V_x


def system_state(model: LagrangianModel, x, eta, P, X) -> SystemPointState:
    t = evaluate_terms(model, x, eta, P)
    X = np.asarray(X, dtype=float).reshape(t.P.shape)
    return SystemPointState(t, X)


def coeff_blocks(s: SystemPointState, model: LagrangianModel = None,
                 convention: str = "derived") -> tuple:
    """``(F, f, A)`` per point; ``convention="printed"`` squares ``H_p`` in the perp term of F."""
    if convention not in ("derived", "printed"):
        raise ValueError(f"unknown convention {convention!r}")
    t = s.terms
    W, P = t.W, t.P
    w2 = np.einsum("na,na->n", W, W)
    tan, perp = proj_batch(W)
    q = np.einsum("ng,nga->na", W, t.V_eta)  # V_eta^T W
    Hp = t.H_p
    lower = -Hp * (t.H_x + np.einsum("na,na->n", t.H_eta, P))
    hp_perp = Hp * Hp if convention == "printed" else Hp
    F = (lower[:, None] * W
         + (hp_perp * w2)[:, None] * np.einsum("nab,nb->na", perp, t.H_eta - Hp[:, None] * q))
    inner = (-t.H_eta + Hp[:, None] * q
             + (np.einsum("na,na->n", t.H_peta, P) + t.H_px)[:, None] * W)
    f = -t.H[:, None] * np.einsum("nab,nb->na", tan, inner)
    A = (t.H * (Hp + t.H_pp * w2))[:, None, None] * tan
    return F, f, A


def linf_operator(s: SystemPointState, model: LagrangianModel = None) -> np.ndarray:
    """Limit operator assembled term by term (unnormalised projection form)."""
    t = s.terms
    W, P = t.W, t.P
    N = W.shape[1]
    w2 = np.einsum("na,na->n", W, W)
    Hp = t.H_p
    lead = (w2 * Hp ** 2)[:, None] * s.DW
    transport = (Hp * (t.H_x + np.einsum("na,na->n", P, t.H_eta)))[:, None] * W
    M = w2[:, None, None] * np.eye(N)[None] - np.einsum("na,nb->nab", W, W)
    bracket = t.H_eta - Hp[:, None] * np.einsum("ng,nga->na", W, t.V_eta)
    return lead + transport - Hp[:, None] * np.einsum("nab,nb->na", M, bracket)


def linf_rearranged(s: SystemPointState, model: LagrangianModel = None,
                    convention: str = "derived") -> np.ndarray:
    """``H_p^2 |W|^2 DW - F``."""
    t = s.terms
    w2 = np.einsum("na,na->n", t.W, t.W)
    F, _, _ = coeff_blocks(s, model, convention)
    return (w2 * t.H_p ** 2)[:, None] * s.DW - F


def normalizer(s: SystemPointState) -> np.ndarray:
    """``1 + |W|^2 H_p^2``, the scale of the leading coefficient."""
    w2 = np.einsum("na,na->n", s.W, s.W)
    return 1.0 + w2 * s.terms.H_p ** 2


def power_operator(s: SystemPointState, m: float, model: LagrangianModel = None) -> np.ndarray:
    """``[A/(m-1) + H_p^2 |W|^2 I] DW - F - f/(m-1)``; the limit operator when ``m = inf``."""
    if m == INF:
        return linf_rearranged(s, model)
    if m < 2:
        raise ValueError("the expanded system needs m >= 2")
    t = s.terms
    w2 = np.einsum("na,na->n", t.W, t.W)
    F, f, A = coeff_blocks(s, model)
    c = 1.0 / (m - 1.0)
    DW = s.DW
    return (c * np.einsum("nab,nb->na", A, DW) + (w2 * t.H_p ** 2)[:, None] * DW
            - F - c * f)


@dataclass
class ResidualField:
    x: np.ndarray
    raw: np.ndarray
    normalized: np.ndarray
    m: float
    form: str

    @property
    def sup(self) -> float:
        return float(np.linalg.norm(self.raw, axis=1).max()) if len(self.raw) else 0.0

    @property
    def sup_normalized(self) -> float:
        return float(np.linalg.norm(self.normalized, axis=1).max()) if len(self.raw) else 0.0

    @property
    def l2(self) -> float:
        h = float(self.x[1] - self.x[0]) if len(self.x) > 1 else 1.0
        return float(np.sqrt(h * np.sum(self.raw ** 2)))

    def summary(self) -> dict:
        return {"m": "inf" if self.m == INF else self.m, "form": self.form,
                "sup": self.sup, "sup_normalized": self.sup_normalized, "l2": self.l2}

    def write_csv(self, path) -> None:
        N = self.raw.shape[1]
        head = ["x"] + [f"res_{a + 1}" for a in range(N)] + ["|res|", "|res|_normalized"]
        mag = np.linalg.norm(self.raw, axis=1)
        nmag = np.linalg.norm(self.normalized, axis=1)
        with Path(path).open("w") as fh:
            fh.write(",".join(head) + "\n")
            for i in range(len(self.x)):
                vals = [self.x[i], *self.raw[i], mag[i], nmag[i]]
                fh.write(",".join(f"{v:.17g}" for v in vals) + "\n")


def node_state(u: GridFunction, model: LagrangianModel) -> SystemPointState:
    """Interior-node state with centered ``P`` and three-point ``X``."""
    if u.grid.n_cells < 3:
        raise ValueError("residuals need at least 3 cells")
    return system_state(model, u.grid.nodes[1:-1], u.values[1:-1],
                        centered_gradient(u), second_differences(u, 1))


def expanded_residual(u: GridFunction, model: LagrangianModel, m: float = INF,
                      form: str = "strong") -> ResidualField:
    """Residual of the power-m (or limit) system at interior nodes.

    ``form="strong"`` inserts finite-difference ``P`` and ``X`` into the
    pointwise operator (consistent to second order in h).  ``form="discrete"``
    maps the exact gradient of the discrete energy into the same units, so it
    vanishes to roundoff at a discrete minimiser; it needs finite ``m``.
    """
    s = node_state(u, model)
    if form == "strong":
        raw = power_operator(s, m, model)
    elif form == "discrete":
        if m == INF:
            raise ValueError("the discrete form needs finite m")
        raw = _discrete_power_residual(u, model, int(m), s)
    else:
        raise ValueError(f"unknown residual form {form!r}")
    return ResidualField(u.grid.nodes[1:-1], raw, raw / normalizer(s)[:, None], m, form)


def _discrete_power_residual(u, model, m, s):
    # With E = D(L^{m-1} L_P) - L^{m-1} L_eta the power-m system equals
    # [tan(W) + (m-1) H_p |W|^2 / H perp(W)] E / ((m-1) L^{m-2}).
    # The discrete E at node i is -(1/h) sum_j L_j^{m-1} dL_j/du_i.
    if m < 2:
        raise ValueError("the expanded system needs m >= 2")
    cd = cell_derivatives(u, model)
    h = u.grid.h
    lg = np.log(cd.L)
    mu = np.maximum(lg[:-1], lg[1:])
    wl = np.exp((m - 1) * (lg[:-1] - mu))[:, None]
    wr = np.exp((m - 1) * (lg[1:] - mu))[:, None]
    ghat = wl * cd.d1[:-1, 1] + wr * cd.d1[1:, 0]
    E_scaled = -np.exp(mu)[:, None] * ghat / h  # E / L^{m-2} with L = exp(mu)
    t = s.terms
    tan, perp = proj_batch(t.W)
    w2 = np.einsum("na,na->n", t.W, t.W)
    Pi = tan + ((m - 1) * t.H_p * w2 / t.H)[:, None, None] * perp
    return np.einsum("nab,nb->na", Pi, E_scaled) / (m - 1)


def da_residual(u: GridFunction, obs: ObservationModel, V: VectorField) -> ResidualField:
    """Limit system for ``H = 1 + |k - K(eta)|^2 / 2 + p`` written out directly.

    ``|W|^2 (D^2u - V_eta Du - V_x) - |W|^2 perp(W) (K_eta^T (K - k) - V_eta^T W)
    + [K_eta : (K - k) (x) Du - (K - k) . k_x] W``.
    """
    if obs.state_dim != V.dim or u.dim != V.dim:
        raise DimensionError(
            f"state dim {u.dim}, dynamics dim {V.dim}, observation acts on R^{obs.state_dim}"
        )
    if u.grid.n_cells < 3:
        raise ValueError("residuals need at least 3 cells")
    x = u.grid.nodes[1:-1]
    eta = u.values[1:-1]
    Du = centered_gradient(u)
    D2u = second_differences(u, 1)
    Vv = V.V(x, eta)
    Ve = V.V_eta(x, eta)
    W = Du - Vv
    w2 = np.einsum("na,na->n", W, W)
    _, perp = proj_batch(W)
    mis = obs.K(eta) - obs.k(x)  # K(u) - k
    Ke = obs.K_eta(eta)
    grad_obs = np.einsum("nia,ni->na", Ke, mis)
    lead = w2[:, None] * (D2u - np.einsum("nga,na->ng", Ve, Du) - V.V_x(x, eta))
    side = w2[:, None] * np.einsum("nab,nb->na", perp,
                                   grad_obs - np.einsum("ng,nga->na", W, Ve))
    scalar = np.einsum("na,na->n", grad_obs, Du) - np.einsum("ni,ni->n", mis, obs.k_x(x))
    raw = lead - side + scalar[:, None] * W
    return ResidualField(x, raw, raw / (1.0 + w2)[:, None], INF, "data_assimilation")
