import numpy as np
import pytest
from hypothesis import given, strategies as st

from stochhom.energy import (
    CoefficientField,
    ConfigurationError,
    EnergyFunctional,
    Integrand,
    LowerOrderTerm,
    OscillatingExponent,
    OutOfWindow,
    ProbeSet,
    distance_from_signatures,
    energy,
    energy_gradient,
    functional_distance,
    homothety,
    signature,
    squash,
    tail_bound,
    translate,
    yosida,
)
from stochhom.fields import DiscreteField, Grid, InvalidInput
from stochhom.nfunction import NFunction
from stochhom.solver import DirichletProblem, minimize

SQ = Grid((0.0, 0.0), (1.0, 1.0), (16, 16))


def two_phase(grid=SQ, seed=0, lo=1.0, hi=4.0, coeff_cells=None):
    rng = np.random.default_rng(seed)
    cg = grid if coeff_cells is None else Grid(grid.lo, grid.hi, coeff_cells)
    vals = np.where(rng.random(cg.cells) < 0.5, lo, hi)
    return CoefficientField(cg, vals)


def random_field(grid, seed, amp=1.0):
    rng = np.random.default_rng(seed)
    return DiscreteField(grid, amp * rng.normal(size=grid.node_shape))


# integrands -----------------------------------------------------------------

def test_delta_zero_needs_exponent_two():
    with pytest.raises(ConfigurationError):
        Integrand.orlicz(NFunction.power(1.5), delta_reg=0.0)
    Integrand.orlicz(NFunction.power(2.0), delta_reg=0.0)


def test_weights_must_be_positive():
    with pytest.raises(InvalidInput):
        Integrand.weighted(NFunction.power(2.0), CoefficientField(SQ, np.zeros(SQ.cells)))


@pytest.mark.parametrize("ig", [
    Integrand.orlicz(NFunction.power_log(2.0)),
    Integrand.weighted(NFunction.power(3.0), two_phase(), 2.0),
    Integrand.var_exponent(OscillatingExponent(2.0, 0.5, 0.25)),
], ids=lambda i: i.family)
def test_growth_and_convexity_samples(ig):
    rng = np.random.default_rng(1)
    x = rng.uniform(0, 1, (2, 500))
    p1 = rng.normal(0, 3, (2, 500))
    p2 = rng.normal(0, 3, (2, 500))
    assert ig.check_growth(x, p1)
    assert ig.check_convexity(x, p1, p2)


def test_zero_gradient_density_vanishes():
    ig = Integrand.var_exponent(OscillatingExponent(1.8, 0.3))
    x = np.random.default_rng(0).uniform(0, 1, (2, 10))
    assert np.all(ig(x, np.zeros((2, 10))) == 0.0)


def test_coefficient_out_of_window():
    cf = two_phase()
    with pytest.raises(OutOfWindow):
        cf.sample(np.array([[1.5], [0.5]]))


def test_lower_order_coercivity():
    term = LowerOrderTerm.quadratic(2.0)
    u = np.linspace(-5, 5, 101)
    assert term.check_coercivity(np.zeros((2, 101)), u)


# energy ----------------------------------------------------------------------

@pytest.mark.parametrize("p", [(0.3, -0.7), (2.0, 1.0)])
def test_affine_energy_exact(p):
    nf = NFunction.power(3.0)
    F = EnergyFunctional(Integrand.orlicz(nf, delta_reg=0.0), SQ)
    u = DiscreteField.affine(SQ, p, 0.4)
    assert energy(F, u) == pytest.approx(float(nf(np.hypot(*p))) * SQ.volume, rel=1e-13)


def test_constant_field_zero_energy():
    F = EnergyFunctional(Integrand.orlicz(NFunction.power(2.0)), SQ)
    assert energy(F, DiscreteField(SQ, np.full(SQ.node_shape, 3.0))) == 0.0


def test_two_phase_affine_direct_sum():
    nf = NFunction.power(2.0)
    cf = two_phase()
    F = EnergyFunctional(Integrand.weighted(nf, cf, delta_reg=0.0), SQ)
    p = np.array([1.0, 2.0])
    oracle = sum(cf.values[i, j] * 0.5 * p @ p * SQ.cell_volume for i in range(16) for j in range(16))
    assert energy(F, DiscreteField.affine(SQ, p)) == pytest.approx(oracle, rel=1e-13)


def test_grid_mismatch():
    F = EnergyFunctional(Integrand.orlicz(NFunction.power(2.0)), SQ)
    with pytest.raises(InvalidInput):
        energy(F, DiscreteField.zeros(Grid((0, 0), (1, 1), (8, 8))))


@pytest.mark.parametrize("ig", [
    Integrand.orlicz(NFunction.power_log(2.0)),
    Integrand.weighted(NFunction.power(1.5), two_phase(), 1.0, delta_reg=1e-3),
    Integrand.var_exponent(OscillatingExponent(2.2, 0.6, 0.5)),
], ids=lambda i: i.family)
def test_gradient_matches_central_differences(ig):
    F = EnergyFunctional(ig, SQ, lower_order=LowerOrderTerm.quadratic(0.7, 0.1))
    worst = 0.0
    for s in range(20):
        u = random_field(SQ, s).values
        d = random_field(SQ, 100 + s).values
        g = F.energy_gradient(u).values
        h = 1e-6 * max(1.0, np.abs(u).max())
        fd = (F.energy(u + h * d) - F.energy(u - h * d)) / (2 * h)
        worst = max(worst, abs(np.sum(g * d) - fd) / max(abs(fd), 1e-12))
    assert worst <= 1e-5


def test_gradient_zero_at_quadratic_minimizer():
    F = EnergyFunctional(Integrand.orlicz(NFunction.power(2.0), delta_reg=0.0), SQ)
    data = DiscreteField.from_function(SQ, lambda x: x[0] ** 2 - x[1] ** 2 + x[0] * x[1])
    rep = minimize(DirichletProblem.on_boundary(F, data), tol=1e-10)
    g = energy_gradient(F, rep.minimizer, fixed=SQ.boundary_nodes()).values
    assert np.abs(g).max() <= 1e-10 * (1 + rep.value)


def test_doubling_cell_volume_doubles_energy_and_gradient():
    ig = Integrand.orlicz(NFunction.power_log(2.0))
    F1 = EnergyFunctional(ig, Grid((0.0, 0.0), (1.0, 1.0), (8, 8)))
    F2 = EnergyFunctional(ig, Grid((0.0, 0.0), (2.0, 1.0), (8, 8)))
    # constant in x0, so the gradient is the same on both grids
    u = np.tile(np.random.default_rng(4).normal(size=(1, 9)), (9, 1))
    e1, g1 = F1.value_and_grad(u)
    e2, g2 = F2.value_and_grad(u)
    assert e2 == pytest.approx(2 * e1, rel=1e-13)
    np.testing.assert_allclose(g2, 2 * g1, rtol=1e-12, atol=1e-14)


@given(st.integers(0, 10_000), st.sampled_from([0.25, 0.5, 0.75]))
def test_energy_convex_in_u(seed, t):
    F = EnergyFunctional(Integrand.weighted(NFunction.power(3.0), two_phase(seed=seed % 7)), SQ)
    u1 = random_field(SQ, seed).values
    u2 = random_field(SQ, seed + 1, 2.0).values
    lhs = F.energy(t * u1 + (1 - t) * u2)
    assert lhs <= t * F.energy(u1) + (1 - t) * F.energy(u2) + 1e-9


def test_functional_growth_sandwich():
    nf = NFunction.power(2.5)
    ig = Integrand.weighted(nf, two_phase(lo=0.5, hi=2.0), 1.5, delta_reg=0.0)
    F = EnergyFunctional(ig, SQ)
    Phi = EnergyFunctional(Integrand.orlicz(nf, delta_reg=0.0), SQ)
    for s in range(10):
        u = random_field(SQ, s, 0.3)
        e, base = F.energy(u), Phi.energy(u)
        assert ig.c1_f * base <= e + 1e-12 <= ig.c2_f * (SQ.volume + base) + 2e-12


def test_energy_refinement_first_order():
    ig = Integrand.orlicz(NFunction.power(3.0))
    f = lambda x: np.sin(2 * x[0]) * np.cos(x[1]) + x[0] * x[1]
    vals = []
    for n in (16, 32, 64):
        g = Grid((0, 0), (1, 1), (n, n))
        vals.append(EnergyFunctional(ig, g).energy(DiscreteField.from_function(g, f)))
    assert abs(vals[1] - vals[2]) <= abs(vals[0] - vals[1]) + 1e-12
    assert abs(vals[0] - vals[2]) * 16 <= 10 * abs(vals[2])


# translation and homothety ---------------------------------------------------

def test_translation_identity():
    big = Grid((0.0, 0.0), (8.0, 8.0), (64, 64))
    ig = Integrand.weighted(NFunction.power(2.0), two_phase(big, 3))
    win = Grid((0.0, 0.0), (2.0, 2.0), (16, 16))
    z = np.array([2.0, 4.0])
    moved = Grid(tuple(np.array(win.lo) + z), tuple(np.array(win.hi) + z), win.cells)
    F = EnergyFunctional(ig, win)
    for s in range(5):
        u = random_field(win, s)
        lhs = translate(F, z).energy(u)
        rhs = EnergyFunctional(ig, moved).energy(u.values)
        assert lhs == pytest.approx(rhs, rel=1e-13)


def test_translation_trivial_cases():
    ig = Integrand.orlicz(NFunction.power(2.0))
    F = EnergyFunctional(ig, SQ)
    u = random_field(SQ, 0)
    assert translate(F, (0.3, 0.7)).energy(u) == F.energy(u)
    assert homothety(F, 1.0).energy(u) == F.energy(u)


def test_translation_out_of_window():
    F = EnergyFunctional(Integrand.weighted(NFunction.power(2.0), two_phase()), SQ)
    with pytest.raises(OutOfWindow):
        translate(F, (0.5, 0.0)).energy(random_field(SQ, 0))


def test_homothety_identity():
    eps = 0.5
    big = Grid((0.0, 0.0), (2.0, 2.0), (32, 32))
    ig = Integrand.weighted(NFunction.power(2.0), two_phase(big, 5))
    win = Grid((0.0, 0.0), (1.0, 1.0), (32, 32))
    scaled = Grid((0.0, 0.0), (2.0, 2.0), (32, 32))
    F = EnergyFunctional(ig, win)
    for s in range(10):
        u = random_field(win, s)
        lhs = homothety(F, eps).energy(u)
        rhs = eps**2 * EnergyFunctional(ig, scaled).energy(u.values / eps)
        assert abs(lhs - rhs) <= 2 / 32 * abs(rhs)


# Yosida transform ----------------------------------------------------------------

SMALL = Grid((0.0, 0.0), (1.0, 1.0), (8, 8))
SMOOTH = [
    lambda x: x[0] + 0.5 * x[1],
    lambda x: np.sin(np.pi * x[0]) * np.sin(np.pi * x[1]),
    lambda x: x[0] ** 2 - x[1] ** 2,
    lambda x: np.cos(2 * x[0] + x[1]),
    lambda x: np.exp(x[0] - x[1]) / 3,
]


@pytest.mark.parametrize("k", range(5))
def test_yosida_bounded_monotone_and_recovers(k):
    F = EnergyFunctional(Integrand.orlicz(NFunction.power(2.0)), SMALL)
    u = DiscreteField.from_function(SMALL, SMOOTH[k])
    Fu = F.energy(u)
    vals = [yosida(F, u, e).value for e in (1.0, 0.1, 0.01)]
    assert all(v <= Fu + 1e-12 for v in vals)
    assert vals[0] <= vals[1] + 1e-9 and vals[1] <= vals[2] + 1e-9
    assert abs(max(vals) - Fu) <= 1e-8 * (1 + Fu)


def test_yosida_at_free_minimizer():
    F = EnergyFunctional(Integrand.orlicz(NFunction.power(2.0)), SMALL)
    u = DiscreteField(SMALL, np.full(SMALL.node_shape, 2.0))
    for e in (10.0, 1.0, 0.01):
        assert yosida(F, u, e).value == 0.0


def test_yosida_strictly_below_for_rough_field():
    F = EnergyFunctional(Integrand.orlicz(NFunction.power(2.0)), SMALL)
    u = random_field(SMALL, 9, 3.0)
    res = yosida(F, u, 10.0)
    assert not res.exact and res.value < F.energy(u)


def test_yosida_rejects_eps():
    F = EnergyFunctional(Integrand.orlicz(NFunction.power(2.0)), SMALL)
    with pytest.raises(InvalidInput):
        yosida(F, DiscreteField.zeros(SMALL), 0.0)


# metric ---------------------------------------------------------------------------

def test_squash():
    assert squash(0.0) == 0.0 and abs(float(squash(1e9))) < 1
    t = np.linspace(-10, 10, 101)
    assert np.all(np.diff(squash(t)) > 0)


def test_tail_bound_positive_and_shrinks():
    assert 0 < tail_bound((4, 4, 4)) < tail_bound((2, 2, 2)) < 2


def test_probe_set_needs_members():
    with pytest.raises(InvalidInput):
        ProbeSet((), (SMALL,), (1.0,))


def test_distance_properties_and_cache():
    probes = ProbeSet.default(2, count=2, cells=4)
    mk = lambda s: Integrand.weighted(NFunction.power(2.0), two_phase(Grid((0, 0), (1, 1), (4, 4)), s))
    A, B, C = mk(0), mk(1), mk(2)
    sa, sb, sc = (signature(i, probes) for i in (A, B, C))
    assert distance_from_signatures(sa, sa) == 0.0
    assert distance_from_signatures(sa, sb) == distance_from_signatures(sb, sa)
    assert distance_from_signatures(sa, sc) <= distance_from_signatures(sa, sb) + distance_from_signatures(sb, sc) + 1e-9
    d, tail = functional_distance(A, B, probes)
    assert d == pytest.approx(distance_from_signatures(sa, sb), abs=1e-15)
    assert tail == tail_bound(sa.shape)
