import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import FIXTURES, SHIPPED, solved
from linfvar import analysis as an
from linfvar.elsystem import expanded_residual
from linfvar.grid import AffineData, GridError, GridFunction, Interval, build_grid, read_csv
from linfvar.lagrangian import builtin_drift, builtin_power, builtin_yu
from linfvar.problems import compatible_data
from linfvar.solver import continuation_solve

DATA = AffineData(np.zeros(2), np.array([2.0, -1.0]))


def _affine(n=32):
    g = build_grid(Interval(0.0, 1.0), n)
    return GridFunction.affine(g, DATA)


def _compatible(n=48):
    g = build_grid(Interval(0.0, 1.0), n)
    model = builtin_drift([0.6, -0.4], [2.0, 5.0], offset=[0.1, 0.0])
    data = compatible_data(model, g, [0.0, 0.5])
    rep = continuation_solve(model, data, g)
    return model, rep.u_final


def test_affine_power_is_absolute_minimiser():
    trials = an.verify_absolute_minimiser(_affine(), builtin_power(2), trials=40, seed=1)
    assert len(trials) == 40
    assert max(t.margin for t in trials) == 0.0
    assert {t.kind for t in trials} == set(an.KINDS)
    for t in trials:
        assert t.span[1] - t.span[0] >= 4


def test_compatible_is_absolute_minimiser():
    model, u = _compatible()
    trials = an.verify_absolute_minimiser(u, model, trials=40, seed=2)
    assert max(t.margin for t in trials) <= 1e-12


def test_spiked_fixture_is_falsified():
    u = read_csv(FIXTURES / "power_spiked.csv")
    trials = an.verify_absolute_minimiser(u, builtin_power(2), trials=40, seed=0)
    assert max(t.margin for t in trials) > 0.1


def test_trials_are_order_independent():
    u = read_csv(FIXTURES / "power_spiked.csv")
    a = an.verify_absolute_minimiser(u, builtin_power(2), trials=12, seed=4, descent_polish=False)
    b = an.verify_absolute_minimiser(u, builtin_power(2), trials=6, seed=4, descent_polish=False)
    for x, y in zip(a, b):
        assert x.span == y.span and x.esup_competitor == y.esup_competitor
    with pytest.raises(GridError):
        an.verify_absolute_minimiser(GridFunction(build_grid(Interval(0, 1), 3), np.zeros(4)),
                                     builtin_power(1), trials=1)


def test_competitor_vanishes_at_span_ends(rng):
    u = _affine(40)
    for kind in an.KINDS:
        phi = an._competitor(u, 5, 20, kind, 0.1, rng)
        assert phi.shape == (14, 2)


def test_young_measure_quadratic_and_affine():
    g = build_grid(Interval(0.0, 1.0), 64)
    eym = an.empirical_young_measure(GridFunction.from_callable(g, lambda x: x ** 2))
    for nm in eym.nodes:
        assert len(nm.clusters) == 1 and nm.escaped == 0
        assert nm.clusters[0][0][0] == pytest.approx(2.0, rel=1e-8)
        assert sum(w for _, w in nm.clusters) == pytest.approx(1.0)
    eym = an.empirical_young_measure(_affine(64))
    assert all(len(nm.clusters) == 1 and np.abs(nm.clusters[0][0]).max() < 1e-9
               for nm in eym.nodes)


def test_young_measure_smooth_cluster_accuracy():
    g = build_grid(Interval(0.0, 1.0), 256)
    u = GridFunction.from_callable(g, np.sin)
    eym = an.empirical_young_measure(u, (1, 2, 4, 8))
    for nm in eym.nodes[10:-10]:
        x = g.nodes[nm.node]
        assert len(nm.clusters) == 1
        spread = np.abs(nm.samples[:, 0] + np.sin(x)).max()
        assert spread <= (8 * g.h) ** 2


def test_young_measure_kink_escapes():
    n = 4096
    g = build_grid(Interval(0.0, 1.0), n)
    u = GridFunction.from_callable(g, lambda x: np.abs(x - 0.5))
    eym = an.empirical_young_measure(u, (1, 2, 4, 8))
    esc = eym.escaped
    assert esc[n // 2 - 1] == 1.0 and eym.node(n // 2).vacuous
    far = np.abs(np.arange(1, n) - n // 2) > 8
    assert np.all(esc[far] == 0)
    with pytest.raises(ValueError):
        an.empirical_young_measure(u, ())


def test_dsolution_trivial_cases():
    model, u = _compatible()
    ds = an.dsolution_check(u, model, an.empirical_young_measure(u), 1e-3)
    # limited by the Newton tolerance of the underlying solve, not by the check
    assert ds.passed and np.nanmax(ds.worst) <= 1e-8
    ua = _affine()
    ds = an.dsolution_check(ua, builtin_power(2), an.empirical_young_measure(ua), 1e-3)
    assert ds.passed and np.nanmax(ds.worst) <= 1e-9
    with pytest.raises(GridError):
        an.dsolution_check(ua, builtin_power(2), an.empirical_young_measure(_affine(16)))


def test_dsolution_vacuous_exactly_on_escaped_nodes():
    n = 4096
    g = build_grid(Interval(0.0, 1.0), n)
    u = GridFunction.from_callable(g, lambda x: np.abs(x - 0.5))
    eym = an.empirical_young_measure(u)
    ds = an.dsolution_check(u, builtin_power(1), eym, 1e-3)
    np.testing.assert_array_equal(ds.vacuous, eym.escaped == 1.0)
    assert np.all(np.isnan(ds.worst[ds.vacuous]))


@pytest.mark.parametrize("name", ["yu", "yu_slope", "da_equidistribution"])
def test_dsolution_agrees_with_strong_residual_when_tight(name):
    prob, rep = solved(name)
    u = rep.u_final
    eym = an.empirical_young_measure(u)
    tight = np.array([len(nm.clusters) == 1 and nm.escaped == 0 for nm in eym.nodes])
    ds = an.dsolution_check(u, prob.model, eym)
    strong = np.linalg.norm(expanded_residual(u, prob.model).normalized, axis=1)
    assert tight.any()
    assert np.abs(ds.worst[tight] - strong[tight]).max() <= 1e-8


def test_singular_set_trivial_cases():
    model, u = _compatible()
    ssr = an.detect_singular_set(u, model)
    assert ssr.singular.all() and not ssr.omega_inf_nodes.any() and len(ssr.boundary) == 0
    ssr = an.detect_singular_set(_affine(), builtin_power(2))
    assert not ssr.singular.any() and ssr.omega_inf_nodes.all()
    with pytest.raises(ValueError):
        an.detect_singular_set(_affine(), builtin_power(2), eps=0.0)


@given(st.integers(0, 10000), st.floats(1e-3, 1.0))
@settings(max_examples=30, deadline=None)
def test_singular_masks_nested(seed, eps):
    rng = np.random.default_rng(seed)
    g = build_grid(Interval(0.0, np.pi), 40)
    u = GridFunction(g, np.cumsum(rng.standard_normal(41)) * 0.05)
    a = an.detect_singular_set(u, builtin_yu(1), eps)
    b = an.detect_singular_set(u, builtin_yu(1), eps / 2)
    assert np.all(~b.singular | a.singular)
    # boundary cells touch a cell of the other kind
    for c in a.boundary:
        nb = [j for j in (c - 1, c + 1) if 0 <= j < 40]
        assert any(a.singular[j] != a.singular[c] for j in nb)


def test_yu_singular_set_structure():
    prob, rep = solved("yu_slope")
    ssr = an.detect_singular_set(rep.u_final, prob.model)
    assert ssr.singular.any() and not ssr.singular.all()
    assert ssr.boundary_fraction <= 0.05


def test_lsc_power_and_compatible():
    g = build_grid(Interval(0.0, 1.0), 32)
    rep = continuation_solve(builtin_power(2), DATA, g)
    t = an.lsc_diagnostic(rep, builtin_power(2))
    assert t.passed and all(m >= 0 for m in t.stage_margins())
    assert all(abs(r.esup_final - 3.5) < 1e-12 for r in t.rows if r.mask_name == "full")
    model, _ = _compatible()
    g = build_grid(Interval(0.0, 1.0), 48)
    rep = continuation_solve(model, compatible_data(model, g, [0.0, 0.5]), g)
    t = an.lsc_diagnostic(rep, model)
    assert t.passed
    assert all(abs(r.stage_normalized - 1) <= 1e-6 for r in t.rows)


@pytest.mark.parametrize("name", SHIPPED)
def test_lsc_margins_on_shipped(name):
    prob, rep = solved(name)
    t = an.lsc_diagnostic(rep, prob.model)
    assert len({r.mask_name for r in t.rows}) == 9
    assert t.passed, (t.stage_margins(), t.tail_gaps)


def test_dyadic_masks_deterministic():
    a = an.dyadic_masks(64, 8, 3)
    b = an.dyadic_masks(64, 8, 3)
    assert list(a) == list(b) and all(np.array_equal(a[k], b[k]) for k in a)
    assert all(m.any() for m in a.values())
