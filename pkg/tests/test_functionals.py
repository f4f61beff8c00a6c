from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from linfvar.functionals import (EnergyError, cell_derivatives, cell_lagrangian,
                                 em_energy_log, em_gradient, esup_energy, normalized_energy)
from linfvar.grid import AffineData, GridFunction, Interval, build_grid
from linfvar.lagrangian import (LagrangianModel, ObservationModel, builtin_data_assimilation,
                                builtin_power, builtin_yu, rotation_field)


def _const_model(c):
    base = builtin_power(1)
    return LagrangianModel(**{**base.__dict__, "H": lambda x, e, p: np.full_like(p, c) + 0 * p})


def _da_model():
    xs = np.linspace(0, 1, 9)
    obs = ObservationModel.linear([[1.0, 0.5]], xs, np.sin(3 * xs)[:, None])
    return builtin_data_assimilation(obs, rotation_field())


def test_esup_examples():
    g = build_grid(Interval(0.0, 1.0), 10)
    u = GridFunction.affine(g, AffineData(np.zeros(2), np.array([2.0, 0.0])))
    pw = builtin_power(2)
    assert esup_energy(u, pw) == pytest.approx(3.0, rel=1e-14)
    assert esup_energy(u, pw, [3, 4]) == pytest.approx(3.0, rel=1e-14)
    g = build_grid(Interval(0.0, np.pi), 64)
    yu = builtin_yu(1)
    u0 = GridFunction(g, np.zeros(65))
    j = int(np.argmin(np.abs(g.midpoints - np.pi / 2)))
    assert esup_energy(u0, yu) == 1 + np.sin(g.midpoints[j]) ** 2


def test_esup_compatible_is_floor():
    g = build_grid(Interval(0.0, 1.0), 32)
    xs = np.linspace(0, 1, 5)
    obs = ObservationModel.linear([[1.0, 0.0]], xs, np.zeros((5, 1)))
    model = builtin_data_assimilation(obs, rotation_field())
    # exact discrete trajectory of the linear dynamics under the midpoint rule
    A = np.array([[0.0, -1.0], [1.0, 0.0]])
    step = np.linalg.solve(np.eye(2) - 0.5 * g.h * A, np.eye(2) + 0.5 * g.h * A)
    v = [np.array([1.0, 0.0])]
    for _ in range(32):
        v.append(step @ v[-1])
    u = GridFunction(g, np.array(v))
    floor = model.H(g.midpoints, u.cell_average(), np.zeros(32))
    assert esup_energy(u, model) == pytest.approx(floor.max(), rel=1e-13)


def test_empty_mask_and_bad_m():
    g = build_grid(Interval(0.0, 1.0), 4)
    u = GridFunction(g, np.zeros(5))
    with pytest.raises(EnergyError):
        esup_energy(u, builtin_power(1), np.zeros(4, dtype=bool))
    with pytest.raises(EnergyError):
        em_energy_log(u, builtin_power(1), 0)


def test_constant_lagrangian_power_mean():
    g = build_grid(Interval(0.0, 1.0), 8)
    u = GridFunction(g, np.zeros(9))
    model = _const_model(3.0)
    eb = em_energy_log(u, model, 2)
    assert eb.em == pytest.approx(9.0, rel=1e-14) and eb.normalized == pytest.approx(3.0, 1e-15)
    eb = em_energy_log(u, model, 4096)
    assert eb.normalized == pytest.approx(3.0, abs=1e-12)
    assert np.isfinite(eb.log_em) and eb.em == np.inf


def test_em_matches_exact_rational_sum():
    g = build_grid(Interval(0.0, 1.0), 16)
    u = GridFunction.from_callable(g, lambda x: x ** 2)
    eb = em_energy_log(u, builtin_power(1), 2)
    h = Fraction(1, 16)
    nodes = [Fraction(i, 16) for i in range(17)]
    exact = sum(h * (1 + Fraction(1, 2) * ((nodes[j + 1] ** 2 - nodes[j] ** 2) / h) ** 2) ** 2
                for j in range(16))
    assert eb.em == pytest.approx(float(exact), rel=1e-14)


@given(st.integers(0, 2 ** 31 - 1))
@settings(max_examples=25, deadline=None)
def test_power_mean_monotone_and_bounded(seed):
    rng = np.random.default_rng(seed)
    g = build_grid(Interval(0.0, np.pi), 24)
    u = GridFunction(g, rng.standard_normal(25))
    yu = builtin_yu(1)
    vals = [normalized_energy(u, yu, 2 ** k) for k in range(13)]
    e = esup_energy(u, yu)
    assert all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))
    assert all(v <= e + 1e-12 for v in vals)
    assert (e - vals[12]) / e <= 0.02


@given(st.integers(0, 2 ** 31 - 1), st.integers(1, 23))
@settings(max_examples=25, deadline=None)
def test_restriction_monotone(seed, k):
    rng = np.random.default_rng(seed)
    g = build_grid(Interval(0.0, np.pi), 24)
    u = GridFunction(g, rng.standard_normal(25))
    mask = rng.permutation(24)[:k]
    assert esup_energy(u, builtin_yu(1), mask) <= esup_energy(u, builtin_yu(1))


def test_gradient_zero_cases():
    g = build_grid(Interval(0.0, 1.0), 16)
    u = GridFunction.affine(g, AffineData(np.zeros(2), np.array([2.0, -1.0])))
    for m in (1, 7, 300):
        assert np.abs(em_gradient(u, builtin_power(2), m)).max() <= 1e-12
    g = build_grid(Interval(0.0, np.pi), 16)
    assert np.all(em_gradient(GridFunction(g, np.zeros(17)), builtin_yu(1), 1) == 0)


def central_difference(u, model, m, i, a, step):
    """Richardson-extrapolated central difference of the normalised energy."""
    def cd(s):
        vp, vm = u.values.copy(), u.values.copy()
        vp[i, a] += s
        vm[i, a] -= s
        return (normalized_energy(u.with_values(vp), model, m)
                - normalized_energy(u.with_values(vm), model, m)) / (2 * s)
    return (4 * cd(step / 2) - cd(step)) / 3


def _fd_gradient_check(u, model, m, rng, count=20, step=1e-4):
    g = em_gradient(u, model, m)
    errs = []
    for _ in range(count):
        i = int(rng.integers(1, u.grid.n_cells))
        a = int(rng.integers(0, u.dim))
        fd = central_difference(u, model, m, i, a, step / np.sqrt(m))
        errs.append(abs(fd - g[i - 1, a]) / max(abs(fd), abs(g[i - 1, a]), 1e-3))
    return max(errs)


@pytest.mark.parametrize("m", [1, 2, 8, 32, 256])
def test_gradient_fd_audit(m, rng):
    g = build_grid(Interval(0.0, 1.0), 16)
    u = GridFunction(g, np.stack([np.sin(3 * g.nodes), g.nodes ** 2], axis=1)
                     + 0.05 * rng.standard_normal((17, 2)))
    assert _fd_gradient_check(u, _da_model(), m, rng) <= 1e-6
    gy = build_grid(Interval(0.0, np.pi), 16)
    uy = GridFunction(gy, np.sin(gy.nodes) + 0.1 * rng.standard_normal(17))
    assert _fd_gradient_check(uy, builtin_yu(1), m, rng) <= 1e-6


def test_cell_second_derivatives_match_fd(rng):
    g = build_grid(Interval(0.0, 1.0), 6)
    u = GridFunction(g, rng.standard_normal((7, 2)))
    model = _da_model()
    cd = cell_derivatives(u, model, second=True)
    step = 1e-6
    for j in range(6):
        for s in (0, 1):
            for a in range(2):
                vp, vm = u.values.copy(), u.values.copy()
                vp[j + s, a] += step
                vm[j + s, a] -= step
                dp = cell_derivatives(u.with_values(vp), model).d1[j]
                dm = cell_derivatives(u.with_values(vm), model).d1[j]
                fd = (dp - dm) / (2 * step)
                np.testing.assert_allclose(cd.d2[j, :, :, s, a], fd, rtol=1e-5, atol=1e-5)
    assert np.allclose(cd.L, cell_lagrangian(u, model))
