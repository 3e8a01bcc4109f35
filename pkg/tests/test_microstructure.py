import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from stochhom.fields import Grid, InvalidInput, read_field
from stochhom.microstructure import (
    DegenerateGeometry,
    MediumSpec,
    PointProcessRealization,
    connect_tubes,
    export_geometry,
    make_rng,
    place_balls,
    rasterize,
    realize,
    sample_poisson,
    scale,
)


def _fixed(points, lo=(-10.0, -10.0), hi=(10.0, 10.0)):
    pts = np.asarray(points, dtype=float)
    return PointProcessRealization(tuple(lo), tuple(hi), 1.0, 0, (), pts)


# Poisson process -------------------------------------------------------------

def test_poisson_mean_over_500_seeds():
    counts = np.array([len(sample_poisson((0, 0), (1, 1), 50.0, 9, (s,))) for s in range(500)])
    assert abs(counts.mean() - 50.0) <= 3 * math.sqrt(50.0 / 500)


def test_poisson_deterministic_and_inside():
    a = sample_poisson((0, 0), (2, 3), 5.0, 42, (1, 2))
    b = sample_poisson((0, 0), (2, 3), 5.0, 42, (1, 2))
    np.testing.assert_array_equal(a.points, b.points)
    assert np.all(a.points >= 0) and np.all(a.points <= [2, 3])
    c = sample_poisson((0, 0), (2, 3), 5.0, 42, (1, 3))
    assert a.points.shape != c.points.shape or not np.array_equal(a.points, c.points)


def test_poisson_tiny_box_is_empty():
    assert len(sample_poisson((0, 0), (1e-9, 1e-9), 1.0, 0)) == 0


def test_poisson_rejects_bad_intensity():
    with pytest.raises(InvalidInput):
        sample_poisson((0, 0), (1, 1), 0.0, 0)


def test_stationarity_of_subcube_counts():
    counts = np.zeros((200, 16))
    for s in range(200):
        pts = sample_poisson((0, 0), (4, 4), 3.0, 1, (s,)).points
        idx = np.clip(np.floor(pts).astype(int), 0, 3)
        np.add.at(counts[s], idx[:, 0] * 4 + idx[:, 1], 1)
    m = counts.mean(axis=0)
    se = counts.std(axis=0, ddof=1) / math.sqrt(200)
    grand = m.mean()
    assert np.all(np.abs(m - grand) <= 3 * np.sqrt(se**2 + (se**2).mean() / 16))


def test_rng_streams_independent_of_order():
    a = make_rng(7, 3, 1).random(4)
    make_rng(7, 0).random(100)
    np.testing.assert_array_equal(a, make_rng(7, 3, 1).random(4))


# tubes -------------------------------------------------------------------------

def test_tubes_annulus_examples():
    c1, c2 = 1.0, 2.0
    assert connect_tubes(_fixed([[0, 0], [0.5, 0]]), c1, c2).count == 0
    g = connect_tubes(_fixed([[0, 0], [1.5, 0]]), c1, c2)
    assert g.count == 1 and g.radius == 0.5
    with pytest.raises(InvalidInput):
        connect_tubes(_fixed([[0, 0]]), 2.0, 1.0)


@pytest.mark.parametrize("seed", range(5))
def test_tubes_match_brute_force(seed):
    r = sample_poisson((0, 0), (10, 10), 1.0, seed)
    r = PointProcessRealization(r.lo, r.hi, r.lam, r.seed, r.key, r.points[:100])
    g = connect_tubes(r, 1.0, 2.0)
    p = r.points
    brute = {(i, j) for i in range(len(p)) for j in range(i + 1, len(p))
             if 1.0 <= np.linalg.norm(p[i] - p[j]) <= 2.0}
    assert g.pairs() == brute


# balls -------------------------------------------------------------------------

def test_balls_two_points():
    g = place_balls(_fixed([[0, 0], [1, 0]]), 0.25)
    assert g.radius == pytest.approx(0.25)


def test_balls_need_two_points():
    with pytest.raises(DegenerateGeometry):
        place_balls(_fixed([[0, 0]]), 0.25)


def test_balls_fraction_range():
    with pytest.raises(InvalidInput):
        place_balls(_fixed([[0, 0], [1, 0]]), 0.3)


@given(st.integers(0, 100_000), st.floats(0.01, 0.25))
def test_balls_disjoint_and_radius_rule(seed, fraction):
    r = sample_poisson((0, 0), (5, 5), 2.0, seed)
    if len(r) < 2:
        return
    r = PointProcessRealization(r.lo, r.hi, r.lam, r.seed, r.key, r.points[:50])
    if len(r) < 2:
        return
    g = place_balls(r, fraction)
    p = r.points
    d = np.linalg.norm(p[:, None] - p[None], axis=-1)[np.triu_indices(len(p), 1)]
    assert g.radius == pytest.approx(fraction * d.min(), rel=1e-14)
    assert np.all(d - 2 * g.radius > 0)


# scaling --------------------------------------------------------------------------

def test_scale_identity_and_half():
    r = sample_poisson((0, 0), (6, 6), 1.0, 3)
    g = connect_tubes(r, 1.0, 2.0)
    same = scale(g, 1.0)
    np.testing.assert_array_equal(same.segments, g.segments)
    half = scale(g, 0.5)
    np.testing.assert_allclose(half.segments, 0.5 * g.segments)
    assert half.radius == 0.5 * g.radius and half.c2 == 1.0


@pytest.mark.parametrize("kind", ["tubes", "balls"])
def test_scaling_then_raster_equals_refined_raster(kind):
    # eps a power of two keeps every coordinate exact in binary floating point
    r = sample_poisson((0, 0), (8, 8), 0.5, 4)
    g = connect_tubes(r, 1.0, 2.0) if kind == "tubes" else place_balls(r, 0.25)
    eps = 0.25
    coarse = rasterize(g, Grid((0, 0), (8, 8), (64, 64)))
    fine = rasterize(scale(g, eps), Grid((0, 0), (8 * eps, 8 * eps), (64, 64)))
    np.testing.assert_array_equal(coarse.inside, fine.inside)


def test_ball_porosity_decreases_with_eps():
    grid = Grid((0, 0), (1, 1), (512, 512))
    med = MediumSpec("balls", 20.0, fraction=0.25)
    por = [np.mean([realize(med, grid, 8, (s,), eps).mean() for s in range(4)]) for eps in (1, 0.5, 0.25, 0.125)]
    assert all(b < a for a, b in zip(por, por[1:]))


# rasterization -----------------------------------------------------------------

def test_empty_geometry():
    f = rasterize(None, Grid((0, 0), (1, 1), (8, 8)), 0.1)
    assert f.porosity == 0.0 and np.all(f.values == 1.0)


def test_ball_area():
    grid = Grid((-2, -2), (2, 2), (256, 256))
    g = place_balls(_fixed([[0, 0], [4, 0]]), 0.25)  # radius 1, second ball outside
    f = rasterize(g, grid, 0.0)
    expected = math.pi / 16.0
    assert abs(f.porosity - expected) / expected <= 2 / 256
    assert not f.under_resolved


def test_capsule_area():
    grid = Grid((-1, -2), (3, 2), (256, 256))
    g = connect_tubes(_fixed([[0, 0], [1.8, 0]]), 1.0, 2.0)
    f = rasterize(g, grid, 0.1)
    area = f.inside.sum() * grid.cell_volume
    exact = 2 * 0.5 * 1.8 + math.pi * 0.25
    assert abs(area - exact) / exact <= 0.05
    assert set(np.unique(f.values)) == {0.1, 1.0}


def test_under_resolution_flag():
    g = place_balls(_fixed([[0, 0], [1, 0]]), 0.25)
    assert rasterize(g, Grid((-1, -1), (2, 2), (16, 16))).under_resolved


def test_one_dimensional_matches_general_rule():
    r = sample_poisson((0.0,), (50.0,), 0.7, 2)
    g = connect_tubes(r, 1.0, 2.0)
    grid = Grid((0.0,), (50.0,), (400,))
    fast = rasterize(g, grid).inside
    c = grid.centers()[0]
    slow = np.zeros(c.size, bool)
    for a, b in g.segments[:, :, 0]:
        lo, hi = min(a, b) - g.radius, max(a, b) + g.radius
        slow |= (c >= lo) & (c <= hi)
    np.testing.assert_array_equal(fast, slow)


def test_exports(tmp_path):
    g = place_balls(_fixed([[0, 0], [1, 0]]), 0.25)
    export_geometry(g, tmp_path / "g.csv")
    rows = (tmp_path / "g.csv").read_text().splitlines()
    assert rows[0] == "type,x0,x1,radius" and rows[1].startswith("ball,")
    f = rasterize(g, Grid((-1, -1), (2, 2), (12, 12)), 0.2)
    f.export(tmp_path / "a.csv")
    vals, header = read_field(tmp_path / "a.csv")
    np.testing.assert_array_equal(vals, f.values)
    assert header["a_min"] == 0.2 and header["resolution"] == [12, 12] and "window" in header


def test_realize_is_pure():
    grid = Grid((0, 0), (6, 6), (48, 48))
    med = MediumSpec("tubes", 0.3, 1.0, 2.0)
    np.testing.assert_array_equal(realize(med, grid, 1, (2,)), realize(med, grid, 1, (2,)))
