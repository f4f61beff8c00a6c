"""Numerical checks on a computed limit map.

* absolute minimality against perturbations supported in subintervals,
* diffuse second derivatives from difference quotients and the limit system
  tested on their reduced support,
* the singular set where ``Du = V(x, u)``,
* the semicontinuity chain between stage energies and the supremal energy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.optimize import minimize
from scipy.spatial.distance import pdist
from scipy.special import logsumexp, softmax

from .elsystem import (expanded_residual, linf_operator, node_state, normalizer,
                       system_state)
from .functionals import cell_derivatives, cell_lagrangian, em_energy_log, esup_energy
from .grid import GridError, GridFunction, cell_gradient, second_difference
from .lagrangian import LagrangianModel
from .solver import SolveReport

AMPLITUDES = (1e-3, 1e-2, 1e-1)
KINDS = ("hats", "chord", "bump", "modes")


# -- absolute minimality

@dataclass
class MinimalityTrial:
    index: int
    span: tuple  # (i0, i1) node indices of the subinterval
    kind: str
    amplitude: float
    seed: tuple
    polished: bool
    esup_u: float
    esup_competitor: float
    coefficients: np.ndarray = field(repr=False)

    @property
    def margin(self) -> float:
        return max(0.0, self.esup_u - self.esup_competitor)

    def to_row(self) -> list:
        return [self.index, self.span[0], self.span[1], self.kind, self.amplitude,
                int(self.polished), self.esup_u, self.esup_competitor, self.margin]


TRIAL_HEADER = ["trial", "i0", "i1", "kind", "amplitude", "polished", "esup_u",
                "esup_competitor", "margin"]


def _competitor(u: GridFunction, i0: int, i1: int, kind: str, amp: float, rng) -> np.ndarray:
    """Perturbation values at the interior nodes i0+1 .. i1-1, shape (i1-i0-1, N)."""
    n_in = i1 - i0 - 1
    N = u.dim
    h = u.grid.h
    du_scale = max(float(np.abs(cell_gradient(u)).max()), 1.0)
    if kind == "chord":
        # move part of the way toward the affine chord between the endpoint values
        s = np.linspace(0.0, 1.0, i1 - i0 + 1)[1:-1, None]
        chord = (1 - s) * u.values[i0] + s * u.values[i1]
        return rng.uniform(0.0, 1.0) * (chord - u.values[i0 + 1:i1])
    if kind == "hats":
        phi = rng.standard_normal((n_in, N))
    elif kind == "bump":
        phi = np.zeros((n_in, N))
        c = rng.integers(0, n_in)
        phi[c] = rng.standard_normal(N)
    else:  # a few sine modes
        s = np.arange(1, n_in + 1) / (n_in + 1)
        k = rng.integers(1, 4, size=N)
        phi = np.sin(np.pi * np.outer(s, k)) * rng.standard_normal(N)
    full = np.vstack([np.zeros((1, N)), phi, np.zeros((1, N))])
    dmax = float(np.abs(np.diff(full, axis=0)).max()) / h
    if dmax == 0:
        return phi
    return phi * (amp * du_scale / dmax)


def _sub_esup(model, u: GridFunction, i0, i1) -> float:
    return float(cell_lagrangian(u, model)[i0:i1].max())


def _polish(model, u: GridFunction, i0, i1, phi0, esup_u):
    """Smoothed-max descent of the sup over cells i0..i1-1 in the perturbation values."""
    N = u.dim
    base = u.values.copy()
    scale = max(esup_u, 1.0)

    def make(z):
        v = base.copy()
        v[i0 + 1:i1] += z.reshape(-1, N)
        return u.with_values(v)

    best = phi0.copy()
    best_val = _sub_esup(model, make(best.ravel()), i0, i1)
    z = best.ravel().copy()
    for tau in (1e-2, 1e-3, 1e-4, 1e-5):
        t = tau * scale

        def fun(zz):
            w = make(zz)
            cd = cell_derivatives(w, model)
            L = cd.L[i0:i1]
            val = t * logsumexp(L / t)
            p = softmax(L / t)
            g = np.zeros((len(base), N))
            g[i0:i1] += p[:, None] * cd.d1[i0:i1, 0]
            g[i0 + 1:i1 + 1] += p[:, None] * cd.d1[i0:i1, 1]
            return val, g[i0 + 1:i1].ravel()

        try:
            res = minimize(fun, z, jac=True, method="L-BFGS-B", options={"maxiter": 60})
        except (ArithmeticError, ValueError):
            break
        if np.all(np.isfinite(res.x)):
            z = res.x
            val = _sub_esup(model, make(z), i0, i1)
            if val < best_val:
                best_val, best = val, z.reshape(-1, N).copy()
    return best, best_val


def verify_absolute_minimiser(u: GridFunction, model: LagrangianModel, trials: int = 200,
                              seed: int = 0, descent_polish: bool = True,
                              amplitudes=AMPLITUDES) -> list:
    """Random and descent-polished competitors on random subintervals."""
    n = u.grid.n_cells
    if n < 4:
        raise GridError("need at least 4 cells for a subinterval with 3 interior nodes")
    out = []
    for idx in range(trials):
        rng = np.random.default_rng([seed, idx])
        i0 = int(rng.integers(0, n - 3))
        i1 = int(rng.integers(i0 + 4, n + 1))
        kind = KINDS[idx % len(KINDS)]
        amp = float(amplitudes[(idx // len(KINDS)) % len(amplitudes)])
        phi = _competitor(u, i0, i1, kind, amp, rng)
        e_u = _sub_esup(model, u, i0, i1)
        v = u.values.copy()
        v[i0 + 1:i1] += phi
        e_c = _sub_esup(model, u.with_values(v), i0, i1)
        polished = False
        if descent_polish:
            phi_p, e_p = _polish(model, u, i0, i1, phi, e_u)
            polished = True
            if e_p < e_c:
                phi, e_c = phi_p, e_p
        out.append(MinimalityTrial(idx, (i0, i1), kind, amp, (seed, idx), polished,
                                   e_u, e_c, phi))
    return out


# -- diffuse second derivatives

@dataclass
class NodeMeasure:
    node: int
    steps: np.ndarray  # t = k h
    samples: np.ndarray  # (len(steps), N)
    retained: np.ndarray  # bool
    clusters: list  # (representative, weight)
    escaped: float

    @property
    def vacuous(self) -> bool:
        return not self.retained.any()


@dataclass
class EmpiricalYoungMeasure:
    nodes: list
    cap: float
    k_ladder: tuple

    def node(self, i: int) -> NodeMeasure:
        return self.nodes[i - 1]

    @property
    def escaped(self) -> np.ndarray:
        return np.array([nm.escaped for nm in self.nodes])


def default_cap(u: GridFunction) -> float:
    return 1e3 * max(float(np.abs(cell_gradient(u)).max()), 1.0) / u.grid.interval.length


def empirical_young_measure(u: GridFunction, k_ladder=(1, 2, 4, 8), cap: float | None = None
                            ) -> EmpiricalYoungMeasure:
    ladder = tuple(int(k) for k in k_ladder)
    if not ladder:
        raise ValueError("empty k ladder")
    if any(k < 1 for k in ladder):
        raise ValueError("ladder steps must be >= 1")
    n = u.grid.n_cells
    if 2 * min(ladder) > n:
        raise GridError(f"no valid stencil for ladder {ladder} on {n} cells")
    cap = default_cap(u) if cap is None else float(cap)
    if not cap > 0:
        raise ValueError("cap must be positive")
    radius = 0.1 * cap
    h = u.grid.h
    nodes = []
    for i in range(1, n):
        ks = [k for k in ladder if i - k >= 0 and i + k <= n]
        q = np.array([second_difference(u, i, k) for k in ks]).reshape(len(ks), -1)
        keep = np.linalg.norm(q, axis=1) <= cap
        total = len(ks)
        clusters = []
        if keep.any():
            kept_idx = np.flatnonzero(keep)
            if len(kept_idx) == 1:
                labels = np.array([1])
            else:
                labels = fcluster(linkage(pdist(q[kept_idx]), method="single"), radius,
                                  criterion="distance")
            for lab in np.unique(labels):
                members = kept_idx[labels == lab]
                # finest step stands for the cluster
                rep = q[members[np.argmin([ks[j] for j in members])]]
                clusters.append((rep, len(members) / total))
        escaped = float((~keep).sum()) / total if total else 0.0
        nodes.append(NodeMeasure(i, np.array(ks) * h, q, keep, clusters, escaped))
    return EmpiricalYoungMeasure(nodes, cap, ladder)


@dataclass
class DSolutionReport:
    x: np.ndarray
    worst: np.ndarray  # normalised, per interior node; nan when vacuous
    vacuous: np.ndarray
    tol: float
    mask: np.ndarray  # nodes that count toward the verdict

    @property
    def node_pass(self) -> np.ndarray:
        return self.vacuous | (np.nan_to_num(self.worst, nan=0.0) <= self.tol)

    @property
    def passed(self) -> bool:
        return bool(np.all(self.node_pass[self.mask]))

    @property
    def sup(self) -> float:
        w = self.worst[self.mask & ~self.vacuous]
        return float(w.max()) if w.size else 0.0


def dsolution_check(u: GridFunction, model: LagrangianModel, eym: EmpiricalYoungMeasure,
                    tol: float = 1e-3, nodes=None) -> DSolutionReport:
    """Limit operator at every retained cluster representative, normalised."""
    n = u.grid.n_cells
    if len(eym.nodes) != n - 1:
        raise GridError("Young measure was built on a different grid")
    s0 = node_state(u, model)
    P = s0.terms.P
    worst = np.full(n - 1, np.nan)
    vac = np.array([nm.vacuous for nm in eym.nodes])
    reps, owner = [], []
    for j, nm in enumerate(eym.nodes):
        for rep, _ in nm.clusters:
            reps.append(rep)
            owner.append(j)
    if reps:
        owner = np.array(owner)
        s = system_state(model, u.grid.nodes[1:-1][owner], u.values[1:-1][owner],
                         P[owner], np.array(reps))
        r = np.linalg.norm(linf_operator(s, model), axis=1) / normalizer(s)
        for j, val in zip(owner, r):
            worst[j] = val if np.isnan(worst[j]) else max(worst[j], val)
    mask = np.ones(n - 1, dtype=bool) if nodes is None else np.asarray(nodes, dtype=bool)
    return DSolutionReport(u.grid.nodes[1:-1], worst, vac, float(tol), mask)


# -- singular set

@dataclass
class SingularSetReport:
    eps: float
    singular: np.ndarray  # cells with |W| <= eps
    boundary: np.ndarray  # cell indices next to a cell of the other kind
    omega_inf_nodes: np.ndarray  # interior nodes with both neighbouring cells regular
    residual_sup: float  # normalised limit residual over omega_inf nodes

    @property
    def regular(self) -> np.ndarray:
        return ~self.singular

    @property
    def singular_fraction(self) -> float:
        return float(self.singular.mean())

    @property
    def boundary_fraction(self) -> float:
        return len(self.boundary) / len(self.singular)

    def to_dict(self) -> dict:
        return {"eps": self.eps, "singular_fraction": self.singular_fraction,
                "regular_fraction": 1.0 - self.singular_fraction,
                "boundary_cells": self.boundary.tolist(),
                "boundary_fraction": self.boundary_fraction,
                "omega_inf_residual_sup": self.residual_sup}


def default_eps(u: GridFunction) -> float:
    g = u.grid
    return (g.h / g.interval.length) ** (2.0 / 3.0) * max(1.0, float(np.abs(cell_gradient(u)).max()))


def misfit_cells(u: GridFunction, model: LagrangianModel) -> np.ndarray:
    V = model.V(u.grid.midpoints, u.cell_average())
    return np.linalg.norm(cell_gradient(u) - V, axis=1)


def detect_singular_set(u: GridFunction, model: LagrangianModel, eps: float | None = None
                        ) -> SingularSetReport:
    eps = default_eps(u) if eps is None else float(eps)
    if not eps > 0:
        raise ValueError("eps must be positive")
    v = misfit_cells(u, model) ** 3
    sing = v <= eps ** 3
    flip = sing[1:] != sing[:-1]
    bnd = np.zeros_like(sing)
    bnd[:-1] |= flip
    bnd[1:] |= flip
    nodes = ~sing[:-1] & ~sing[1:]
    res = expanded_residual(u, model).normalized
    mags = np.linalg.norm(res, axis=1)[nodes]
    return SingularSetReport(eps, sing, np.flatnonzero(bnd), nodes,
                             float(mags.max()) if mags.size else 0.0)


def boundary_neighbourhood(ssr: SingularSetReport, width: int) -> np.ndarray:
    """Interior nodes within ``width`` nodes of a singular-boundary cell."""
    n = len(ssr.singular)
    near = np.zeros(n - 1, dtype=bool)
    for c in ssr.boundary:
        # cell c touches nodes c and c+1 (interior index c-1 and c)
        lo = max(c - width, 1)
        hi = min(c + 1 + width, n - 1)
        near[lo - 1:hi] = True
    return near


# -- semicontinuity chain

@dataclass
class LscRow:
    mask_name: str
    m: int
    esup_final: float
    stage_normalized: float  # Phi_m(u^m, A)
    final_normalized: float  # Phi_m(u_final, A)

    @property
    def margin(self) -> float:
        return self.esup_final - self.stage_normalized


@dataclass
class LscTable:
    rows: list
    tail_gaps: dict  # mask -> (E_inf - Phi_{m_last}(u_final)) / E_inf
    tol: float

    def stage_margins(self, mask_name="full") -> list:
        return [r.margin for r in self.rows if r.mask_name == mask_name]

    @property
    def passed(self) -> bool:
        full_ok = all(mg >= -self.tol for mg in self.stage_margins("full"))
        gaps_ok = all(-1e-8 <= g <= 0.02 for g in self.tail_gaps.values())
        return full_ok and gaps_ok


def dyadic_masks(n_cells: int, count: int, seed: int) -> dict:
    rng = np.random.default_rng(seed)
    masks = {}
    mid = (np.arange(n_cells) + 0.5) / n_cells
    tries = 0
    while len(masks) < count and tries < 100 * count:
        tries += 1
        lev = int(rng.integers(1, 4))
        k = int(rng.integers(0, 2 ** lev))
        m = (mid >= k / 2 ** lev) & (mid < (k + 1) / 2 ** lev)
        name = f"dyadic_{lev}_{k}"
        if m.any() and name not in masks:
            masks[name] = m
    return masks


def lsc_diagnostic(report: SolveReport, model: LagrangianModel, n_masks: int = 8,
                   seed: int = 0, tol: float = 1e-8) -> LscTable:
    """``E_inf(u_final, A)`` against the stage power means ``Phi_m(u^m, A)``."""
    u = report.u_final
    masks = {"full": np.ones(u.grid.n_cells, dtype=bool)}
    masks.update(dyadic_masks(u.grid.n_cells, n_masks, seed))
    rows, gaps = [], {}
    m_last = report.stages[-1].m
    for name, mk in masks.items():
        e = esup_energy(u, model, mk)
        for st, um in zip(report.stages, report.iterates):
            rows.append(LscRow(name, st.m, e, em_energy_log(um, model, st.m, mk).normalized,
                               em_energy_log(u, model, st.m, mk).normalized))
        top = max(m_last, 1024)
        gaps[name] = (e - em_energy_log(u, model, top, mk).normalized) / e
    return LscTable(rows, gaps, tol * max(1.0, report.esup_final))
