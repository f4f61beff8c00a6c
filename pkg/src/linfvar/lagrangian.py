"""Radial Lagrangians ``L(x, eta, P) = H(x, eta, |P - V(x, eta)|^2 / 2)``.

A model is a bundle of vectorised evaluators.  Arrays are batched over a
leading axis of length ``n``:

    x: (n,)   eta: (n, N)   p: (n,)

and the evaluators return

    H, H_p, H_pp, H_x, H_px: (n,)
    H_eta, H_peta: (n, N)           H_etaeta: (n, N, N)
    V, V_x: (n, N)                  V_eta: (n, N, N), V_eta[:, g, a] = dV_g / deta_a
    V_etaeta: (n, N, N, N)          [:, g, a, b] = d^2 V_g / deta_a deta_b

``H_etaeta`` and ``V_etaeta`` are only needed for the exact Hessian of the
discrete energy; when a model omits them they are obtained by central
differences of ``H_eta`` and ``V_eta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.stats import qmc

Evaluator = Callable[..., np.ndarray]


class ModelEvaluationError(ArithmeticError):
    """An evaluator produced a non-finite value."""

    def __init__(self, message, args_triple=None):
        super().__init__(message)
        self.args_triple = args_triple


class DimensionError(ValueError):
    pass


@dataclass(frozen=True)
class Hypotheses:
    """Constants of the structural assumptions on ``H`` and ``V``."""

    c0: float = 0.5
    alpha: float = 0.5
    M: int = 1
    growth: Callable[[np.ndarray], np.ndarray] = field(default=lambda r: np.ones_like(r))
    growth_description: str = "C(r) = 1"

    def __post_init__(self):
        if not (0.0 < self.c0 < 1.0 and 0.0 < self.alpha < 1.0):
            raise ValueError("c0 and alpha must lie in (0, 1)")
        if int(self.M) != self.M or self.M < 1:
            raise ValueError("M must be a positive integer")


@dataclass(frozen=True)
class VectorField:
    """Dynamics ``V(x, eta)`` with its partial derivatives (same batching as above)."""

    dim: int
    V: Evaluator
    V_x: Evaluator
    V_eta: Evaluator
    V_etaeta: Optional[Evaluator] = None
    name: str = "custom"


def _zeros_field(dim: int) -> VectorField:
    return VectorField(
        dim,
        V=lambda x, eta: np.zeros_like(eta),
        V_x=lambda x, eta: np.zeros_like(eta),
        V_eta=lambda x, eta: np.zeros(eta.shape + (dim,)),
        V_etaeta=lambda x, eta: np.zeros(eta.shape + (dim, dim)),
        name="zero",
    )


def zero_field(dim: int) -> VectorField:
    return _zeros_field(dim)


def linear_field(A, c=None) -> VectorField:
    """``V(x, eta) = A eta + c``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    dim = A.shape[0]
    if A.shape != (dim, dim):
        raise DimensionError(f"linear dynamics need a square matrix, got {A.shape}")
    c = np.zeros(dim) if c is None else np.asarray(c, dtype=float).reshape(dim)
    return VectorField(
        dim,
        V=lambda x, eta: eta @ A.T + c,
        V_x=lambda x, eta: np.zeros_like(eta),
        V_eta=lambda x, eta: np.broadcast_to(A, eta.shape + (dim,)).copy(),
        V_etaeta=lambda x, eta: np.zeros(eta.shape + (dim, dim)),
        name="linear",
    )


def rotation_field() -> VectorField:
    """Planar rotation ``V(eta) = (-eta_2, eta_1)``; ``(cos x, sin x)`` is a trajectory."""
    f = linear_field([[0.0, -1.0], [1.0, 0.0]])
    return VectorField(2, f.V, f.V_x, f.V_eta, f.V_etaeta, name="rotation")


@dataclass(frozen=True)
class ObservationModel:
    """Observation operator ``K: R^N -> R^M`` and a measurement series ``k(x)``.

    ``k`` is the piecewise-linear interpolant of the samples; ``k_x`` is the
    slope of the segment to the right of ``x`` (left segment at the last
    sample).  ``lipschitz`` bounds ``|K(eta)| <= lipschitz (1 + |eta|)`` and
    ``|K_eta| <= lipschitz``; it only enters the default growth function.
    """

    state_dim: int
    obs_dim: int
    K: Evaluator
    K_eta: Evaluator
    sample_x: np.ndarray
    sample_k: np.ndarray
    K_etaeta: Optional[Evaluator] = None
    lipschitz: float = 1.0

    def __post_init__(self):
        xs = np.asarray(self.sample_x, dtype=float).reshape(-1)
        ks = np.asarray(self.sample_k, dtype=float).reshape(len(xs), -1)
        if ks.shape[1] != self.obs_dim:
            raise DimensionError(f"samples have {ks.shape[1]} components, expected {self.obs_dim}")
        if len(xs) < 2 or np.any(np.diff(xs) <= 0):
            raise ValueError("measurement abscissae must be strictly increasing (>= 2 samples)")
        if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ks))):
            raise ValueError("measurement samples must be finite")
        object.__setattr__(self, "sample_x", xs)
        object.__setattr__(self, "sample_k", ks)

    @classmethod
    def linear(cls, A, sample_x, sample_k) -> "ObservationModel":
        A = np.atleast_2d(np.asarray(A, dtype=float))
        M, N = A.shape
        return cls(
            state_dim=N,
            obs_dim=M,
            K=lambda eta: eta @ A.T,
            K_eta=lambda eta: np.broadcast_to(A, eta.shape[:-1] + (M, N)).copy(),
            sample_x=sample_x,
            sample_k=sample_k,
            K_etaeta=lambda eta: np.zeros(eta.shape[:-1] + (M, N, N)),
            lipschitz=float(np.linalg.norm(A, 2)),
        )

    def with_samples(self, sample_x, sample_k) -> "ObservationModel":
        return ObservationModel(
            self.state_dim, self.obs_dim, self.K, self.K_eta, sample_x, sample_k,
            self.K_etaeta, self.lipschitz,
        )

    def covers(self, a: float, b: float) -> bool:
        return self.sample_x[0] <= a and self.sample_x[-1] >= b

    def k(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return np.stack(
            [np.interp(x, self.sample_x, self.sample_k[:, i]) for i in range(self.obs_dim)],
            axis=-1,
        )

    def k_x(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        xs = self.sample_x
        seg = np.clip(np.searchsorted(xs, x, side="right") - 1, 0, len(xs) - 2)
        slopes = np.diff(self.sample_k, axis=0) / np.diff(xs)[:, None]
        return slopes[seg]


@dataclass(frozen=True)
class LagrangianModel:
    dim: int
    H: Evaluator
    H_p: Evaluator
    H_pp: Evaluator
    H_x: Evaluator
    H_eta: Evaluator
    H_px: Evaluator
    H_peta: Evaluator
    V: Evaluator
    V_x: Evaluator
    V_eta: Evaluator
    hypotheses: Hypotheses = field(default_factory=Hypotheses)
    H_etaeta: Optional[Evaluator] = None
    V_etaeta: Optional[Evaluator] = None
    name: str = "custom"
    # x-locations where H is only piecewise smooth (e.g. measurement samples)
    x_breakpoints: np.ndarray = field(default_factory=lambda: np.zeros(0))
    # ``V`` does not depend on eta (enables exact compatible-data construction)
    v_eta_free: bool = False
    observation: Optional["ObservationModel"] = None


@dataclass
class Terms:
    """All model quantities at a batch of points ``(x, eta, P)``."""

    x: np.ndarray
    eta: np.ndarray
    P: np.ndarray
    W: np.ndarray
    p: np.ndarray
    H: np.ndarray
    H_p: np.ndarray
    H_pp: np.ndarray
    H_x: np.ndarray
    H_eta: np.ndarray
    H_px: np.ndarray
    H_peta: np.ndarray
    V: np.ndarray
    V_x: np.ndarray
    V_eta: np.ndarray

    @property
    def L(self) -> np.ndarray:
        return self.H

    @property
    def L_P(self) -> np.ndarray:
        return self.H_p[:, None] * self.W

    @property
    def L_eta(self) -> np.ndarray:
        # H_eta - H_p V_eta^T W
        return self.H_eta - self.H_p[:, None] * np.einsum("ng,nga->na", self.W, self.V_eta)


def _batch(x, eta, P, dim):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    eta = np.asarray(eta, dtype=float).reshape(-1, dim)
    P = np.asarray(P, dtype=float).reshape(-1, dim)
    n = max(len(x), len(eta), len(P))
    x = np.broadcast_to(x, (n,)).copy() if len(x) != n else x
    eta = np.broadcast_to(eta, (n, dim)).copy() if len(eta) != n else eta
    P = np.broadcast_to(P, (n, dim)).copy() if len(P) != n else P
    return x, eta, P


def evaluate_terms(model: LagrangianModel, x, eta, P) -> Terms:
    x, eta, P = _batch(x, eta, P, model.dim)
    V = model.V(x, eta)
    W = P - V
    p = 0.5 * np.einsum("na,na->n", W, W)
    t = Terms(
        x=x, eta=eta, P=P, W=W, p=p,
        H=model.H(x, eta, p),
        H_p=model.H_p(x, eta, p),
        H_pp=model.H_pp(x, eta, p),
        H_x=model.H_x(x, eta, p),
        H_eta=model.H_eta(x, eta, p),
        H_px=model.H_px(x, eta, p),
        H_peta=model.H_peta(x, eta, p),
        V=V,
        V_x=model.V_x(x, eta),
        V_eta=model.V_eta(x, eta),
    )
    if not np.all(np.isfinite(t.H)):
        bad = int(np.flatnonzero(~np.isfinite(t.H))[0])
        raise ModelEvaluationError(
            f"model {model.name!r} returned non-finite H at x={x[bad]}",
            (x[bad], eta[bad].copy(), P[bad].copy()),
        )
    return t


def eval_L(model: LagrangianModel, x: float, eta, P) -> float:
    """``H(x, eta, |P - V(x, eta)|^2 / 2)`` at a single point."""
    x_arr = np.array([float(x)])
    eta = np.asarray(eta, dtype=float).reshape(1, model.dim)
    P = np.asarray(P, dtype=float).reshape(1, model.dim)
    if not (np.isfinite(x_arr).all() and np.isfinite(eta).all() and np.isfinite(P).all()):
        raise ModelEvaluationError("non-finite argument", (x, eta[0], P[0]))
    W = P - model.V(x_arr, eta)
    p = 0.5 * np.einsum("na,na->n", W, W)
    val = float(model.H(x_arr, eta, p)[0])
    if not math.isfinite(val):
        raise ModelEvaluationError(f"model {model.name!r} returned {val}", (x, eta[0], P[0]))
    return val


# -- second derivatives in eta (analytic when supplied, else central differences)

def H_etaeta(model: LagrangianModel, x, eta, p) -> np.ndarray:
    if model.H_etaeta is not None:
        return model.H_etaeta(x, eta, p)
    return _fd_jacobian_eta(lambda e: model.H_eta(x, e, p), eta)


def V_etaeta(model: LagrangianModel, x, eta) -> np.ndarray:
    if model.V_etaeta is not None:
        return model.V_etaeta(x, eta)
    return _fd_jacobian_eta(lambda e: model.V_eta(x, e), eta)


def _fd_jacobian_eta(f, eta, rel_step=1e-6):
    n, N = eta.shape
    base = f(eta)
    out = np.zeros(base.shape + (N,))
    for a in range(N):
        s = rel_step * np.maximum(1.0, np.abs(eta[:, a]))
        ep, em = eta.copy(), eta.copy()
        ep[:, a] += s
        em[:, a] -= s
        d = (f(ep) - f(em)) / (2.0 * s.reshape((n,) + (1,) * (base.ndim - 1)))
        out[..., a] = d
    return out


# -- built-in models

def builtin_power(dim: int = 1, exponent: int = 1) -> LagrangianModel:
    """``H = 1 + p^exponent`` with ``V = 0``; ``exponent = 1`` is ``1 + |P|^2 / 2``."""
    e = int(exponent)
    if e < 1:
        raise ValueError("exponent must be >= 1")
    z = lambda x, eta, p: np.zeros_like(p)
    zN = lambda x, eta, p: np.zeros_like(eta)
    vf = _zeros_field(dim)
    return LagrangianModel(
        dim=dim,
        H=lambda x, eta, p: 1.0 + p ** e,
        H_p=lambda x, eta, p: e * p ** (e - 1) if e > 1 else np.ones_like(p),
        H_pp=lambda x, eta, p: e * (e - 1) * p ** (e - 2) if e > 1 else np.zeros_like(p),
        H_x=z,
        H_eta=zN,
        H_px=z,
        H_peta=zN,
        V=vf.V,
        V_x=vf.V_x,
        V_eta=vf.V_eta,
        hypotheses=Hypotheses(0.5, 0.5, max(1, e - 2),
                              lambda r: np.ones_like(r), "C(r) = 1"),
        H_etaeta=lambda x, eta, p: np.zeros(eta.shape + (dim,)),
        V_etaeta=vf.V_etaeta,
        name="power" if e == 1 else f"power{e}",
        v_eta_free=True,
    )


def builtin_yu(dim: int = 1) -> LagrangianModel:
    """``H = 1 + sin^2 x + 2p``, i.e. ``L = 1 + sin^2 x + |P|^2`` with ``V = 0``."""
    vf = _zeros_field(dim)
    zN = lambda x, eta, p: np.zeros_like(eta)
    return LagrangianModel(
        dim=dim,
        H=lambda x, eta, p: 1.0 + np.sin(x) ** 2 + 2.0 * p,
        H_p=lambda x, eta, p: np.full_like(p, 2.0),
        H_pp=lambda x, eta, p: np.zeros_like(p),
        H_x=lambda x, eta, p: np.sin(2.0 * x) + 0.0 * p,
        H_eta=zN,
        H_px=lambda x, eta, p: np.zeros_like(p),
        H_peta=zN,
        V=vf.V,
        V_x=vf.V_x,
        V_eta=vf.V_eta,
        hypotheses=Hypotheses(0.5, 0.5, 1, lambda r: 2.0 * np.ones_like(r), "C(r) = 2"),
        H_etaeta=lambda x, eta, p: np.zeros(eta.shape + (dim,)),
        V_etaeta=vf.V_etaeta,
        name="yu",
        v_eta_free=True,
    )


def builtin_drift(amplitude, frequency, phase=None, offset=None) -> LagrangianModel:
    """``H = 1 + p`` with an x-only drift ``V_a(x) = A_a cos(w_a x + phi_a) + c_a``.

    Data consistent with the drift make ``Du = V`` attainable, so the
    minimum of the supremal functional is the floor ``H = 1``.
    """
    A = np.atleast_1d(np.asarray(amplitude, dtype=float))
    w = np.atleast_1d(np.asarray(frequency, dtype=float))
    dim = len(A)
    ph = np.zeros(dim) if phase is None else np.asarray(phase, dtype=float).reshape(dim)
    c = np.zeros(dim) if offset is None else np.asarray(offset, dtype=float).reshape(dim)
    vmax = float(np.linalg.norm(np.abs(A) + np.abs(c)))
    c0 = min(0.5, 0.99 / max(vmax, 1e-12))
    z = lambda x, eta, p: np.zeros_like(p)
    zN = lambda x, eta, p: np.zeros_like(eta)
    return LagrangianModel(
        dim=dim,
        H=lambda x, eta, p: 1.0 + p,
        H_p=lambda x, eta, p: np.ones_like(p),
        H_pp=z,
        H_x=z,
        H_eta=zN,
        H_px=z,
        H_peta=zN,
        V=lambda x, eta: A * np.cos(np.multiply.outer(x, w) + ph) + c,
        V_x=lambda x, eta: -A * w * np.sin(np.multiply.outer(x, w) + ph),
        V_eta=lambda x, eta: np.zeros(eta.shape + (dim,)),
        hypotheses=Hypotheses(c0, 0.5, 1, lambda r: np.ones_like(r), "C(r) = 1"),
        H_etaeta=lambda x, eta, p: np.zeros(eta.shape + (dim,)),
        V_etaeta=lambda x, eta: np.zeros(eta.shape + (dim, dim)),
        name="drift",
        v_eta_free=True,
    )


def builtin_data_assimilation(obs: ObservationModel, V: VectorField,
                              c0: float = 0.1, alpha: float = 0.5) -> LagrangianModel:
    """``H = 1 + |k(x) - K(eta)|^2 / 2 + p`` with dynamics ``V``."""
    if obs.state_dim != V.dim:
        raise DimensionError(
            f"observation acts on R^{obs.state_dim} but dynamics live in R^{V.dim}"
        )
    N = V.dim

    def misfit(x, eta):
        return obs.k(x) - obs.K(eta)

    def H_eta(x, eta, p):
        return -np.einsum("nia,ni->na", obs.K_eta(eta), misfit(x, eta))

    def H_ee(x, eta, p):
        J = obs.K_eta(eta)
        out = np.einsum("nia,nib->nab", J, J)
        if obs.K_etaeta is not None:
            out = out - np.einsum("ni,niab->nab", misfit(x, eta), obs.K_etaeta(eta))
        else:
            out = out - np.einsum("ni,niab->nab", misfit(x, eta),
                                  _fd_jacobian_eta(obs.K_eta, eta))
        return out

    kmax = float(np.abs(obs.sample_k).max())
    kx = np.diff(obs.sample_k, axis=0) / np.diff(obs.sample_x)[:, None]
    kxmax = float(np.abs(kx).max())
    kap = obs.lipschitz

    def growth(r):
        return (1.0 + kap) * (1.0 + kmax + kap * (1.0 + r)) * (1.0 + kxmax)

    z = lambda x, eta, p: np.zeros_like(p)
    zN = lambda x, eta, p: np.zeros_like(eta)
    return LagrangianModel(
        dim=N,
        H=lambda x, eta, p: 1.0 + 0.5 * np.einsum("ni,ni->n", misfit(x, eta), misfit(x, eta)) + p,
        H_p=lambda x, eta, p: np.ones_like(p),
        H_pp=z,
        H_x=lambda x, eta, p: np.einsum("ni,ni->n", misfit(x, eta), obs.k_x(x)),
        H_eta=H_eta,
        H_px=z,
        H_peta=zN,
        V=V.V,
        V_x=V.V_x,
        V_eta=V.V_eta,
        hypotheses=Hypotheses(c0, alpha, 1, growth,
                              "C(r) = (1+kappa)(1+max|k|+kappa(1+r))(1+max|k_x|)"),
        H_etaeta=H_ee,
        V_etaeta=V.V_etaeta,
        name="data_assimilation",
        x_breakpoints=obs.sample_x.copy(),
        observation=obs,
    )


# -- hypothesis audit

@dataclass(frozen=True)
class HypothesisBox:
    x: tuple
    eta_max: float = 10.0
    p_max: float = 100.0


@dataclass
class HypothesisCheck:
    id: str
    margin: float
    witness: dict


@dataclass
class HypothesisReport:
    checks: list
    tol: float = 1e-12

    @property
    def passed(self) -> bool:
        return all(c.margin >= -self.tol for c in self.checks)

    def failures(self) -> list:
        return [c for c in self.checks if c.margin < -self.tol]

    def to_dict(self) -> dict:
        return {
            "pass": self.passed,
            "checks": [
                {"id": c.id, "worst_margin": c.margin, "witness": c.witness,
                 "pass": c.margin >= -self.tol}
                for c in self.checks
            ],
        }


FD_REL_TOL = 1e-5
FD_STEP = 1e-5


def _rel_err(a, b, floor=1e-3):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    den = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return np.abs(a - b) / den


def _d_dp(f, x, eta, p):
    # central differences, second-order one-sided near the p = 0 boundary
    s = FD_STEP * np.maximum(1.0, p)
    inner = p >= s
    c = (f(x, eta, p + s) - f(x, eta, np.where(inner, p - s, p))) / np.where(inner, 2 * s, s)
    fwd = (-3 * f(x, eta, p) + 4 * f(x, eta, p + s) - f(x, eta, p + 2 * s)) / (2 * s)
    if c.ndim > 1:
        inner = inner.reshape((-1,) + (1,) * (c.ndim - 1))
        s = s.reshape(inner.shape)
    return np.where(inner, c, fwd)


def _d_dx(f, x, eta, *rest):
    s = FD_STEP * np.maximum(1.0, np.abs(x))
    d = f(x + s, eta, *rest) - f(x - s, eta, *rest)
    return d / (2 * s).reshape((-1,) + (1,) * (d.ndim - 1))


def _d_deta(f, x, eta, *rest):
    n, N = eta.shape
    base = f(x, eta, *rest)
    out = np.zeros(base.shape + (N,))
    for a in range(N):
        s = FD_STEP * np.maximum(1.0, np.abs(eta[:, a]))
        ep, em = eta.copy(), eta.copy()
        ep[:, a] += s
        em[:, a] -= s
        d = f(x, ep, *rest) - f(x, em, *rest)
        out[..., a] = d / (2 * s).reshape((n,) + (1,) * (d.ndim - 1))
    return out


def _worst(id_, margins, x, eta, p):
    margins = np.asarray(margins, dtype=float)
    margins = margins.reshape(len(x), -1).min(axis=1)
    margins = np.where(np.isfinite(margins), margins, -np.inf)
    j = int(np.argmin(margins))
    return HypothesisCheck(id_, float(margins[j]),
                           {"x": float(x[j]), "eta": eta[j].tolist(), "p": float(p[j])})


def check_hypotheses(model: LagrangianModel, box: HypothesisBox, samples: int = 1000,
                     seed: int = 0) -> HypothesisReport:
    """Sample the structural assumptions on a box of ``(x, eta, p)``.

    Points come from a scrambled Sobol sequence; each point is also evaluated
    on the face ``p = 0``.  Violations are reported as negative margins.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    N = model.dim
    hyp = model.hypotheses
    d = 2 + N
    sob = qmc.Sobol(d, scramble=True, seed=seed)
    m = int(math.ceil(math.log2(max(samples, 2))))
    pts = sob.random_base2(m)[:samples]
    xa, xb = box.x
    x = xa + (xb - xa) * pts[:, 0]
    eta = box.eta_max * (2.0 * pts[:, 1:1 + N] - 1.0)
    p = box.p_max * pts[:, -1]
    # keep finite-difference stencils off breakpoints of piecewise-smooth x-dependence
    bps = np.asarray(model.x_breakpoints, dtype=float)
    if bps.size:
        gap = 4 * FD_STEP * max(1.0, abs(xa), abs(xb))
        idx = np.clip(np.searchsorted(bps, x), 1, len(bps) - 1)
        near = np.minimum(np.abs(x - bps[idx - 1]), np.abs(x - bps[idx])) < gap
        x = np.where(near, x + 2 * gap, x)
    x = np.concatenate([x, x])
    eta = np.concatenate([eta, eta])
    p = np.concatenate([p, np.zeros_like(p)])
    r = np.linalg.norm(eta, axis=1)

    H = model.H(x, eta, p)
    Hp = model.H_p(x, eta, p)
    Hpp = model.H_pp(x, eta, p)
    Hx = model.H_x(x, eta, p)
    He = model.H_eta(x, eta, p)
    Hpx = model.H_px(x, eta, p)
    Hpe = model.H_peta(x, eta, p)
    V = model.V(x, eta)
    C = hyp.growth(r)
    c0 = hyp.c0

    checks = [
        _worst("H >= 1", H - 1.0, x, eta, p),
        _worst("H_p >= c0", Hp - c0, x, eta, p),
        _worst("H_p <= C(|eta|)", C - Hp, x, eta, p),
        _worst("2 H_pp p + H_p >= c0", 2 * Hpp * p + Hp - c0, x, eta, p),
        _worst("|H_x| + |H_eta| <= C(|eta|)(1 + p)",
               C * (1 + p) - (np.abs(Hx) + np.linalg.norm(He, axis=1)), x, eta, p),
        _worst("|H_pp| + |H_peta| + |H_px| <= C(|eta|)(1 + p^M)",
               C * (1 + p ** hyp.M) - (np.abs(Hpp) + np.linalg.norm(Hpe, axis=1) + np.abs(Hpx)),
               x, eta, p),
        _worst("|V| <= (1 + |eta|^alpha) / c0",
               (1 + r ** hyp.alpha) / c0 - np.linalg.norm(V, axis=1), x, eta, p),
    ]

    Vx3 = lambda x_, e_, p_: model.V(x_, e_)
    fd = [
        ("H_p", Hp, _d_dp(model.H, x, eta, p)),
        ("H_pp", Hpp, _d_dp(model.H_p, x, eta, p)),
        ("H_x", Hx, _d_dx(model.H, x, eta, p)),
        ("H_eta", He, _d_deta(model.H, x, eta, p)),
        ("H_px", Hpx, _d_dx(model.H_p, x, eta, p)),
        ("H_peta", Hpe, _d_deta(model.H_p, x, eta, p)),
        ("V_x", model.V_x(x, eta), _d_dx(Vx3, x, eta, p)),
        ("V_eta", model.V_eta(x, eta), _d_deta(Vx3, x, eta, p)),
    ]
    if model.H_etaeta is not None:
        fd.append(("H_etaeta", model.H_etaeta(x, eta, p), _d_deta(model.H_eta, x, eta, p)))
    if model.V_etaeta is not None:
        fd.append(("V_etaeta", model.V_etaeta(x, eta),
                   _d_deta(lambda x_, e_, p_: model.V_eta(x_, e_), x, eta, p)))
    obs = model.observation
    if obs is not None:
        Kf = lambda x_, e_, p_: obs.K(e_)
        fd.append(("K_eta", obs.K_eta(eta), _d_deta(Kf, x, eta, p)))
        if obs.K_etaeta is not None:
            fd.append(("K_etaeta", obs.K_etaeta(eta),
                       _d_deta(lambda x_, e_, p_: obs.K_eta(e_), x, eta, p)))
    for name, analytic, numeric in fd:
        err = _rel_err(analytic, numeric)
        checks.append(_worst(f"{name} matches finite differences", FD_REL_TOL - err, x, eta, p))
    return HypothesisReport(checks)
