import math
import pickle

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from stochhom.fields import DiscreteField, Grid, InvalidInput
from stochhom.nfunction import (
    DomainError,
    GrowthFunction,
    NFunction,
    NotApplicable,
    check_invariants,
    conjugate,
    conjugate_values,
    delta2_constant,
    export_table,
    luxemburg_cells,
    luxemburg_cells_grad,
    luxemburg_norm,
    modular,
    orlicz_dual_norm,
    sobolev_conjugate,
)

FAMILIES = [
    NFunction.power(2.0),
    NFunction.power(1.5),
    NFunction.power(4.0),
    NFunction.power_log(2.0),
    NFunction.growth_integral(GrowthFunction.power(1.0)),
    NFunction.growth_integral(GrowthFunction.double_power(0.5, 2.0)),
]


# evaluation -------------------------------------------------------------------

def test_power_closed_form():
    assert NFunction.power(2.0)(3.0) == pytest.approx(4.5, rel=1e-15)


@pytest.mark.parametrize("nf", FAMILIES, ids=repr)
def test_zero_at_zero(nf):
    assert float(nf(0.0)) == 0.0


def test_negative_argument_is_domain_error():
    with pytest.raises(DomainError):
        NFunction.power(2.0)(-1.0)


def test_growth_integral_against_trapezoid():
    nf = NFunction.growth_integral(GrowthFunction.power(1.0))
    s = np.linspace(0.0, 2.0, 1_000_001)
    trap = integrate.trapezoid(s, s)
    assert float(nf(2.0)) == pytest.approx(2.0, abs=1e-12)
    assert float(nf(2.0)) == pytest.approx(trap, rel=1e-10)


def test_growth_integral_power_log_against_trapezoid():
    gf = GrowthFunction.power_log(1.5)
    nf = NFunction.growth_integral(gf)
    s = np.linspace(0.0, 3.0, 1_000_001)
    trap = integrate.trapezoid(gf(s), s)
    assert float(nf(3.0)) == pytest.approx(trap, rel=1e-9)


@pytest.mark.parametrize("nf", FAMILIES, ids=repr)
def test_invariants(nf):
    assert all(check_invariants(nf, 1e-3, 1e3).values())


def test_inverse_round_trip():
    nf = NFunction.power_log(2.0)
    y = np.logspace(-6, 6, 50)
    np.testing.assert_allclose(nf(nf.inverse(y)), y, rtol=1e-10)


def test_spec_round_trip():
    nf = NFunction.power_log(3.0, certified_range=[1e-3, 1e3])
    back = NFunction.from_spec(nf.to_spec())
    t = np.logspace(-3, 3, 30)
    np.testing.assert_array_equal(nf(t), back(t))


def test_values_immutable():
    nf = NFunction.power(2.0)
    with pytest.raises(AttributeError):
        nf.family = "other"


# conjugate ---------------------------------------------------------------------

def test_quadratic_is_self_conjugate():
    psi = conjugate(NFunction.power(2.0))
    v = np.logspace(-2, 2, 100)
    np.testing.assert_allclose(psi(v), v**2 / 2, rtol=1e-6)


def test_power4_conjugate():
    psi = conjugate(NFunction.power(4.0))
    v = np.logspace(-2, 2, 100)
    q = 4.0 / 3.0
    np.testing.assert_allclose(psi(v), v**q / q, rtol=1e-6)


def test_power_log_conjugate_against_brute_force():
    nf = NFunction.power_log(2.0)
    psi = conjugate(nf)
    u = np.linspace(0.0, 10.0, 100_001)
    phi_u = np.asarray(nf(u))
    for v in (0.5, 1.0, 2.0):
        brute = float(np.max(u * v - phi_u))
        assert float(psi(v)) == pytest.approx(brute, rel=1e-6)


def test_conjugate_rejects_nonconvex():
    t = np.logspace(-3, 3, 100)
    bad = NFunction.tabulated(t, np.sqrt(t))
    with pytest.raises(InvalidInput):
        conjugate(bad)


@pytest.mark.parametrize("nf", FAMILIES, ids=repr)
def test_young_inequality(nf):
    psi = conjugate(nf)
    rng = np.random.default_rng(0)
    u = rng.uniform(0, 100, 1000)
    v = rng.uniform(0, 100, 1000)
    assert np.all(u * v <= np.asarray(nf(u)) + np.asarray(psi(v)) + 1e-9 * (1 + u * v))


def test_conjugate_maximiser_is_derivative_inverse():
    nf = NFunction.power(3.0)
    v = np.array([0.3, 1.0, 7.0])
    _, u = conjugate_values(nf, v)
    np.testing.assert_allclose(nf.deriv(u), v, rtol=1e-6)  # argmax of a flat maximum: sqrt(eps) accuracy


def test_export_table(tmp_path):
    psi = conjugate(NFunction.power(2.0))
    export_table(psi, tmp_path / "psi.csv")
    rows = (tmp_path / "psi.csv").read_text().splitlines()
    assert rows[0] == "t,value"
    t, v = map(float, rows[10].split(","))
    assert v == pytest.approx(t * t / 2, rel=1e-12)


# doubling constant ---------------------------------------------------------------

@pytest.mark.parametrize("p", [2.0, 3.5, 1.25])
def test_delta2_power_exact(p):
    rep = delta2_constant(NFunction.power(p), 1e-3, 1e3)
    assert rep.k == pytest.approx(2**p, rel=1e-12)
    assert rep.beta == pytest.approx(p, rel=1e-12)
    assert rep.l == 1e-3 and rep.satisfied


def test_delta2_growth_integral_bound():
    # t g(t) / G(t) <= 1 + g0, hence G(2t) <= 2^(1+g0) G(t)
    gf = GrowthFunction.double_power(0.5, 2.0)
    rep = delta2_constant(NFunction.growth_integral(gf), 1e-3, 1e3)
    assert rep.satisfied and rep.k <= 2 ** (1 + gf.g0) * (1 + 1e-9)


def test_delta2_exponential_reported_not_raised():
    t = np.logspace(-3, 2.5, 300)
    expo = NFunction.tabulated(t, np.expm1(t) - t + 1e-300)
    rep = delta2_constant(expo, 1.0, 100.0)
    assert not rep.satisfied


# growth functions ------------------------------------------------------------

@pytest.mark.parametrize("gf", [GrowthFunction.power(1.5), GrowthFunction.double_power(0.5, 2.0),
                                GrowthFunction.power_log(1.0)], ids=lambda g: g.name)
def test_growth_properties(gf):
    t = np.logspace(-3, 3, 200)
    assert all(gf.check_properties(t).values())


def test_growth_closed_form_matches_quadrature():
    gf = GrowthFunction.double_power(0.5, 2.0)
    t = np.array([0.1, 1.0, 5.0])
    np.testing.assert_allclose(gf.G(t), gf.G_quad(t), rtol=1e-10)


# Sobolev conjugate -------------------------------------------------------------

def test_sobolev_conjugate_against_quadrature():
    nf = NFunction.power(2.0)
    sc = sobolev_conjugate(nf, 2, strict=False, t_max=1e3)
    e = 1.5
    for t in (2.0, 10.0, 300.0):
        oracle = integrate.quad(lambda s: math.sqrt(2 * s) / s**e, 1.0, t, epsabs=0, epsrel=1e-13, limit=500)[0]
        assert float(sc.inverse(t)) == pytest.approx(oracle, rel=1e-6)


def test_sobolev_conjugate_basic_shape():
    # Phi^-1(s) / s^1.5 is integrable at 0 only for p < 2 when n = 2
    sc = sobolev_conjugate(NFunction.power(1.5), 2, t_max=1e3)
    assert float(sc.inverse(1.0)) == 0.0
    t = np.logspace(0.01, 3, 200)
    assert np.all(np.diff(sc.inverse(t)) > 0)
    y = sc.inverse(np.array([5.0, 50.0]))
    np.testing.assert_allclose(sc(y), [5.0, 50.0], rtol=1e-6)


def test_sobolev_conjugate_divergent_lower_integral():
    with pytest.raises(NotApplicable):
        sobolev_conjugate(NFunction.power(2.0), 2)


def test_sobolev_printed_exponent():
    with pytest.raises(NotApplicable):
        sobolev_conjugate(NFunction.power(1.5), 2, exponent="printed", t_max=1e2)
    sc = sobolev_conjugate(NFunction.power(1.5), 2, exponent="printed", t_max=1e2, strict=False)
    assert sc.exponent == 6.0 and not sc.lower_integral_finite


# modular and norm -----------------------------------------------------------------

def _unit_square(n=8):
    return Grid((0.0, 0.0), (1.0, 1.0), (n, n))


def test_modular_zero_and_constant():
    g = _unit_square()
    nf = NFunction.power(2.0)
    assert modular(DiscreteField.zeros(g), nf) == 0.0
    one = DiscreteField(g, np.ones(g.node_shape))
    assert modular(one, nf) == pytest.approx(0.5, rel=1e-14)
    assert luxemburg_norm(DiscreteField.zeros(g), nf) == 0.0


def test_modular_refinement():
    nf = NFunction.power(3.0)
    f = lambda x: np.sin(2 * x[0]) * np.cos(3 * x[1]) + 0.3
    coarse = modular(DiscreteField.from_function(_unit_square(64), f), nf)
    fine = modular(DiscreteField.from_function(_unit_square(256), f), nf)
    assert coarse == pytest.approx(fine, rel=2e-3)


def test_nonfinite_field_rejected():
    g = _unit_square()
    v = np.ones(g.node_shape)
    v[2, 2] = np.nan
    with pytest.raises(InvalidInput):
        modular(DiscreteField(g, v), NFunction.power(2.0))


@given(st.floats(1.1, 6.0), st.integers(0, 10_000))
def test_luxemburg_equals_lp(p, seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=64)
    w = np.full(64, 1 / 64)
    lam = luxemburg_cells(a, w, NFunction.power(p))
    exact = (np.sum(w * np.abs(a) ** p) / p) ** (1 / p)
    assert lam == pytest.approx(exact, rel=1e-8)


@given(st.integers(0, 10_000), st.floats(0.01, 50.0))
def test_norm_modular_inequalities(seed, size):
    nf = NFunction.power_log(2.0)
    rng = np.random.default_rng(seed)
    a = size * rng.normal(size=32)
    w = np.full(32, 1 / 32)
    n = luxemburg_cells(a, w, nf)
    rho = float(np.sum(w * nf(np.abs(a))))
    assert n <= rho + 1 + 1e-12
    if n <= 1:
        assert rho <= n + 1e-12
    assert float(np.sum(w * nf(np.abs(a) / n))) == pytest.approx(1.0, abs=1e-8)


@given(st.integers(0, 10_000))
def test_holder_with_factor_two(seed):
    nf = NFunction.power(3.0)
    psi = conjugate(nf)
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(2, 40)) * rng.uniform(0.1, 5, 2)[:, None]
    w = np.full(40, 1 / 40)
    assert abs(np.sum(w * a * b)) <= 2 * luxemburg_cells(a, w, nf) * luxemburg_cells(b, w, psi) + 1e-12


def test_luxemburg_gradient_finite_difference():
    nf = NFunction.power_log(2.5)
    rng = np.random.default_rng(3)
    a = rng.normal(size=20)
    w = rng.uniform(0.5, 1.5, 20) / 20
    _, g = luxemburg_cells_grad(a, w, nf)
    d = rng.normal(size=20)
    h = 1e-6
    fd = (luxemburg_cells(a + h * d, w, nf) - luxemburg_cells(a - h * d, w, nf)) / (2 * h)
    assert g @ d == pytest.approx(fd, rel=1e-6)


def test_dual_norm_quadratic():
    rng = np.random.default_rng(5)
    xi = rng.normal(size=30)
    w = rng.uniform(0.5, 1.5, 30) / 30
    assert orlicz_dual_norm(xi, w, NFunction.power(2.0)) == pytest.approx(math.sqrt(2 * np.sum(w * xi**2)), rel=1e-8)


@pytest.mark.parametrize("G", [GrowthFunction.power(1.0), GrowthFunction.double_power(0.5, 2.0),
                               GrowthFunction.power_log(1.5)], ids=lambda G: G.name)
def test_growth_function_pickles(G):
    back = pickle.loads(pickle.dumps(G))
    t = np.linspace(0, 3, 7)
    np.testing.assert_array_equal(back(t), G(t))
    np.testing.assert_array_equal(back.G(t), G.G(t))
    assert (back.delta, back.g0) == (G.delta, G.g0)
