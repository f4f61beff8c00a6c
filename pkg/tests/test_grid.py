from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from linfvar.grid import (AffineData, GridError, GridFunction, Interval, build_grid,
                          cell_gradient, centered_gradient, read_csv, second_difference,
                          second_differences, write_csv)

finite = st.floats(-1e3, 1e3, allow_nan=False)


def test_build_grid_examples():
    g = build_grid(Interval(0.0, 1.0), 4)
    assert np.array_equal(g.nodes, [0, 0.25, 0.5, 0.75, 1])
    assert g.h == 0.25
    g = build_grid(Interval(-1.0, 1.0), 2)
    assert np.array_equal(g.nodes, [-1, 0, 1]) and g.h == 1.0
    g = build_grid(Interval(0.0, np.pi), 100)
    assert g.n_nodes == 101
    assert g.h == pytest.approx(np.pi / 100, rel=1e-15)
    assert g.nodes[-1] == np.pi


@pytest.mark.parametrize("a,b,n", [(0, 1, 1), (0, 1, 0), (1, 0, 4), (0, np.inf, 4),
                                   (np.nan, 1, 4)])
def test_build_grid_errors(a, b, n):
    with pytest.raises(GridError):
        build_grid(Interval(a, b), n)


@given(st.floats(-100, 100), st.floats(1e-3, 100), st.integers(2, 500))
def test_grid_invariants(a, length, n):
    g = build_grid(Interval(a, a + length), n)
    assert g.nodes[0] == a and g.nodes[-1] == a + length
    assert np.all(np.diff(g.nodes) > 0)
    assert len(g.nodes) == n + 1


@given(st.lists(finite, min_size=1, max_size=3), st.integers(2, 40))
def test_cell_gradient_affine_exact(slope, n):
    slope = np.array(slope)
    g = build_grid(Interval(0.0, 1.0), n)
    data = AffineData(np.zeros_like(slope), slope)
    D = cell_gradient(GridFunction.affine(g, data))
    np.testing.assert_allclose(D, np.broadcast_to(slope, D.shape), rtol=1e-9, atol=1e-9)


def test_cell_gradient_hat():
    g = build_grid(Interval(0.0, 1.0), 2)
    assert cell_gradient(GridFunction(g, [0.0, 1.0, 0.0])).ravel().tolist() == [2.0, -2.0]


def test_cell_gradient_rational_oracle(rng):
    g = build_grid(Interval(0.0, 1.0), 8)
    vals = rng.integers(-50, 50, size=9) / 7.0
    D = cell_gradient(GridFunction(g, vals)).ravel()
    exact = [(Fraction(vals[i + 1]) - Fraction(vals[i])) * 8 for i in range(8)]
    np.testing.assert_allclose(D, [float(e) for e in exact], rtol=1e-14)


def test_centered_gradient_affine():
    g = build_grid(Interval(0.0, 2.0), 10)
    u = GridFunction.affine(g, AffineData(np.array([1.0]), np.array([3.0])))
    np.testing.assert_allclose(centered_gradient(u), 3.0)


@given(st.integers(4, 64), st.data())
def test_second_difference_quadratic_exact(n, data):
    g = build_grid(Interval(0.0, 1.0), n)
    u = GridFunction.from_callable(g, lambda x: x ** 2)
    k = data.draw(st.integers(1, n // 2))
    i = data.draw(st.integers(k, n - k))
    assert second_difference(u, i, k)[0] == pytest.approx(2.0, rel=1e-8)


@given(st.lists(finite, min_size=2, max_size=2), st.lists(finite, min_size=2, max_size=2))
def test_second_difference_affine_zero_and_linear(anchor, slope):
    g = build_grid(Interval(0.0, 1.0), 8)
    u = GridFunction.affine(g, AffineData(np.array(anchor), np.array(slope)))
    scale = 1.0 + np.abs(anchor).max() + np.abs(slope).max()
    assert np.abs(second_differences(u, 2)).max() <= 1e-9 * scale * 64
    v = GridFunction.from_callable(g, lambda x: np.stack([np.sin(x), x ** 3], axis=1))
    w = GridFunction(g, 2.0 * u.values - 3.0 * v.values)
    np.testing.assert_allclose(second_differences(w), 2.0 * second_differences(u)
                               - 3.0 * second_differences(v), atol=1e-8 * scale * 64)


def test_second_difference_kink():
    g = build_grid(Interval(0.0, 1.0), 8)
    u = GridFunction.from_callable(g, lambda x: np.abs(x - 0.5))
    assert second_difference(u, 4, 1)[0] == pytest.approx(2.0 / g.h)
    assert second_difference(u, 4, 2)[0] == pytest.approx(2.0 / (2 * g.h))


def test_second_difference_rate_on_cubic():
    errs = []
    for n in (16, 32, 64):
        g = build_grid(Interval(-1.0, 1.0), n)
        u = GridFunction.from_callable(g, lambda x: np.sin(2 * x))
        i = n // 2 + n // 8
        errs.append(abs(second_difference(u, i, 2)[0] + 4 * np.sin(2 * g.nodes[i])))
    assert errs[1] / errs[0] == pytest.approx(0.25, abs=0.02)
    assert errs[2] / errs[1] == pytest.approx(0.25, abs=0.02)
    g = build_grid(Interval(0.0, 1.0), 16)
    u = GridFunction.from_callable(g, lambda x: x ** 3)
    assert second_difference(u, 8, 2)[0] == pytest.approx(6 * 0.5, rel=1e-10)


def test_second_difference_out_of_range():
    g = build_grid(Interval(0.0, 1.0), 4)
    u = GridFunction(g, np.zeros(5))
    with pytest.raises(GridError):
        second_difference(u, 1, 2)
    with pytest.raises(GridError):
        second_differences(u, 3)


def test_grid_function_validation():
    g = build_grid(Interval(0.0, 1.0), 4)
    with pytest.raises(GridError):
        GridFunction(g, np.zeros(4))
    with pytest.raises(GridError):
        GridFunction(g, [0, 1, np.nan, 0, 0])
    u = GridFunction(g, np.zeros(5))
    with pytest.raises(ValueError):
        u.values[0, 0] = 1.0


def test_csv_roundtrip_bitwise(tmp_path, rng):
    g = build_grid(Interval(-0.3, np.pi), 37)
    u = GridFunction(g, rng.standard_normal((38, 3)))
    write_csv(tmp_path / "u.csv", u)
    assert (tmp_path / "u.csv").read_text().splitlines()[0] == "x,u_1,u_2,u_3"
    v = read_csv(tmp_path / "u.csv")
    assert np.array_equal(u.values, v.values)
    assert np.allclose(v.grid.nodes, g.nodes, rtol=0, atol=1e-15)


def test_read_csv_rejects_nonuniform(tmp_path):
    (tmp_path / "bad.csv").write_text("x,u_1\n0,0\n0.1,0\n1,0\n")
    with pytest.raises(GridError):
        read_csv(tmp_path / "bad.csv")
