"""Random two-phase media built on Poisson point processes.

Two constructions: tubes of radius c1/2 around every segment whose endpoints
are between c1 and c2 apart, and disjoint balls whose common radius is a fixed
fraction of the smallest pairwise distance. Geometry is turned into a cell
field by testing cell centres.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree

from .fields import Grid, InvalidInput, write_field

RNG_NAME = "numpy.Philox"


class DegenerateGeometry(ValueError):
    pass


def make_rng(seed: int, *key: int) -> np.random.Generator:
    """Counter-based stream for (seed, key...). Independent of call order."""
    ss = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class PointProcessRealization:
    lo: tuple[float, ...]
    hi: tuple[float, ...]
    lam: float
    seed: int
    key: tuple[int, ...]
    points: np.ndarray = field(repr=False)

    @property
    def ndim(self) -> int:
        return len(self.lo)

    @property
    def volume(self) -> float:
        return float(np.prod(np.subtract(self.hi, self.lo)))

    def __len__(self):
        return self.points.shape[0]


def _box(lo, hi):
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    if lo.shape != hi.shape or lo.size not in (1, 2, 3):
        raise InvalidInput("box needs matching corners in 1, 2 or 3 dimensions")
    return lo, hi


def sample_poisson(lo, hi, lam: float, seed: int, key=()) -> PointProcessRealization:
    """N ~ Poisson(lam |box|), then N uniform points in the box."""
    lo, hi = _box(lo, hi)
    if not lam > 0:
        raise InvalidInput("intensity must be positive")
    if np.any(hi < lo):
        raise InvalidInput("box has hi < lo")
    key = tuple(int(k) for k in np.atleast_1d(key)) if np.size(key) else ()
    rng = make_rng(seed, *key)
    vol = float(np.prod(hi - lo))
    n = int(rng.poisson(lam * vol))
    pts = lo + (hi - lo) * rng.random((n, lo.size))
    pts.setflags(write=False)
    return PointProcessRealization(tuple(lo), tuple(hi), float(lam), int(seed), key, pts)


@dataclass(frozen=True)
class Geometry:
    """Union of tubes (segments with a common radius) or of balls."""

    kind: str
    radius: float
    parent: PointProcessRealization = field(repr=False)
    segments: np.ndarray | None = field(default=None, repr=False)  # (m, 2, n)
    centers: np.ndarray | None = field(default=None, repr=False)  # (m, n)
    c1: float | None = None
    c2: float | None = None
    fraction: float | None = None
    scale_factor: float = 1.0
    pair_index: np.ndarray | None = field(default=None, repr=False)

    @property
    def ndim(self) -> int:
        return self.parent.ndim

    @property
    def count(self) -> int:
        arr = self.segments if self.kind == "tubes" else self.centers
        return 0 if arr is None else int(arr.shape[0])

    def pairs(self) -> set[tuple[int, int]]:
        """Point-index pairs carrying a tube."""
        if self.pair_index is None:
            return set()
        return {tuple(map(int, p)) for p in self.pair_index}


def connect_tubes(r: PointProcessRealization, c1: float, c2: float) -> Geometry:
    """Segments for every pair with c1 <= |xi - xj| <= c2; tube radius c1/2."""
    if not 0 < c1 <= c2:
        raise InvalidInput("connect_tubes needs 0 < c1 <= c2")
    pts = r.points
    if len(pts) < 2:
        pairs = np.zeros((0, 2), dtype=int)
    else:
        pairs = cKDTree(pts).query_pairs(c2, output_type="ndarray")
        if pairs.size:
            d = np.linalg.norm(pts[pairs[:, 0]] - pts[pairs[:, 1]], axis=1)
            pairs = pairs[(d >= c1) & (d <= c2)]
        pairs = pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))] if pairs.size else pairs.reshape(0, 2)
    segs = np.stack([pts[pairs[:, 0]], pts[pairs[:, 1]]], axis=1) if len(pairs) else np.zeros((0, 2, r.ndim))
    return Geometry("tubes", c1 / 2, r, segments=segs, c1=float(c1), c2=float(c2), pair_index=pairs)


def min_pairwise_distance(points: np.ndarray) -> float:
    if len(points) < 2:
        raise DegenerateGeometry("need at least two points")
    d, _ = cKDTree(points).query(points, k=2)
    return float(d[:, 1].min())


def place_balls(r: PointProcessRealization, fraction: float = 0.25) -> Geometry:
    """Balls at every point, common radius fraction * min pairwise distance."""
    if not 0 < fraction <= 0.25:
        raise InvalidInput("ball fraction must lie in (0, 1/4]")
    if len(r) < 2:
        raise DegenerateGeometry("place_balls needs at least two points")
    rad = fraction * min_pairwise_distance(r.points)
    return Geometry("balls", rad, r, centers=np.array(r.points), fraction=float(fraction))


def scale(g: Geometry, eps: float) -> Geometry:
    """Similarity x -> eps x applied to points, radii and thresholds."""
    if not eps > 0:
        raise InvalidInput("scale factor must be positive")
    p = g.parent
    parent = PointProcessRealization(
        tuple(np.multiply(p.lo, eps)), tuple(np.multiply(p.hi, eps)),
        p.lam / eps**p.ndim, p.seed, p.key, p.points * eps,
    )
    return replace(
        g,
        radius=g.radius * eps,
        parent=parent,
        segments=None if g.segments is None else g.segments * eps,
        centers=None if g.centers is None else g.centers * eps,
        c1=None if g.c1 is None else g.c1 * eps,
        c2=None if g.c2 is None else g.c2 * eps,
        scale_factor=g.scale_factor * eps,
    )


# ----------------------------------------------------------------------------
# rasterization
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class IndicatorField:
    grid: Grid
    values: np.ndarray = field(repr=False)
    a_min: float
    porosity: float
    inside: np.ndarray = field(repr=False)
    under_resolved: bool = False
    meta: dict = field(default_factory=dict)

    def export(self, path) -> None:
        header = {"window": self.grid.to_dict(), "resolution": list(self.grid.cells), "a_min": self.a_min}
        header.update(self.meta)
        write_field(path, self.values, header)


def _cell_index_range(lo_pt, hi_pt, grid: Grid):
    h = grid.spacing
    glo = np.array(grid.lo)
    start = np.floor((lo_pt - glo) / h - 0.5).astype(int)
    stop = np.ceil((hi_pt - glo) / h + 0.5).astype(int)
    start = np.clip(start, 0, grid.cells)
    stop = np.clip(stop, 0, grid.cells)
    return start, stop


def _centers_in_block(grid: Grid, start, stop):
    h = grid.spacing
    ax = [grid.lo[k] + h[k] * (np.arange(start[k], stop[k]) + 0.5) for k in range(grid.ndim)]
    return np.stack(np.meshgrid(*ax, indexing="ij"))


def membership(g: Geometry, grid: Grid) -> np.ndarray:
    """Boolean per cell: is the centre inside the union?"""
    inside = np.zeros(grid.cells, dtype=bool)
    rad = g.radius
    if grid.ndim == 1:
        return _membership_1d(g, grid)
    if g.kind == "tubes":
        prims = g.segments if g.segments is not None else np.zeros((0, 2, grid.ndim))
        for a, b in prims:
            lo_pt = np.minimum(a, b) - rad
            hi_pt = np.maximum(a, b) + rad
            start, stop = _cell_index_range(lo_pt, hi_pt, grid)
            if np.any(stop <= start):
                continue
            x = _centers_in_block(grid, start, stop)
            ab = b - a
            L2 = float(ab @ ab)
            rel = x - a.reshape((-1,) + (1,) * grid.ndim)
            s = np.tensordot(ab, rel, axes=1) / L2 if L2 > 0 else np.zeros(x.shape[1:])
            s = np.clip(s, 0.0, 1.0)
            diff = rel - ab.reshape((-1,) + (1,) * grid.ndim) * s
            hit = np.sum(diff**2, axis=0) <= rad * rad
            inside[tuple(slice(s0, s1) for s0, s1 in zip(start, stop))] |= hit
    elif g.kind == "balls":
        for c in g.centers:
            start, stop = _cell_index_range(c - rad, c + rad, grid)
            if np.any(stop <= start):
                continue
            x = _centers_in_block(grid, start, stop)
            rel = x - c.reshape((-1,) + (1,) * grid.ndim)
            hit = np.sum(rel**2, axis=0) <= rad * rad
            inside[tuple(slice(s0, s1) for s0, s1 in zip(start, stop))] |= hit
    else:
        raise InvalidInput(f"unknown geometry kind {g.kind!r}")
    return inside


def _membership_1d(g: Geometry, grid: Grid) -> np.ndarray:
    """Intervals on the line: paint [lo - r, hi + r] with a difference array."""
    if g.kind == "tubes":
        ends = g.segments[:, :, 0] if g.segments is not None and len(g.segments) else np.zeros((0, 2))
        lo_pt, hi_pt = ends.min(axis=1), ends.max(axis=1)
    elif g.kind == "balls":
        lo_pt = hi_pt = g.centers[:, 0]
    else:
        raise InvalidInput(f"unknown geometry kind {g.kind!r}")
    c = grid.centers()[0]
    start = np.searchsorted(c, lo_pt - g.radius, side="left")
    stop = np.searchsorted(c, hi_pt + g.radius, side="right")
    counts = np.zeros(c.size + 1, dtype=np.int64)
    np.add.at(counts, start, 1)
    np.add.at(counts, stop, -1)
    return np.cumsum(counts[:-1]) > 0


def rasterize(g: Geometry | None, grid: Grid, a_min: float = 0.0) -> IndicatorField:
    """a_min at cell centres inside the geometry, 1 elsewhere."""
    if not 0 <= a_min <= 1:
        raise InvalidInput("a_min must be in [0, 1]")
    if g is None or g.count == 0:
        return IndicatorField(grid, np.ones(grid.cells), float(a_min), 0.0, np.zeros(grid.cells, bool))
    inside = membership(g, grid)
    vals = np.where(inside, float(a_min), 1.0)
    under = bool(g.radius < 4 * grid.spacing.max())
    meta = {"seed": g.parent.seed, "key": list(g.parent.key), "rng": RNG_NAME}
    return IndicatorField(grid, vals, float(a_min), float(inside.mean()), inside, under, meta)


def export_geometry(g: Geometry, path) -> None:
    """CSV rows: type, coordinates..., radius."""
    n = g.ndim
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if g.kind == "tubes":
            w.writerow(["type"] + [f"a{k}" for k in range(n)] + [f"b{k}" for k in range(n)] + ["radius"])
            for a, b in g.segments:
                w.writerow(["segment"] + [repr(float(v)) for v in a] + [repr(float(v)) for v in b] + [repr(float(g.radius))])
        else:
            w.writerow(["type"] + [f"x{k}" for k in range(n)] + ["radius"])
            for c in g.centers:
                w.writerow(["ball"] + [repr(float(v)) for v in c] + [repr(float(g.radius))])


# ----------------------------------------------------------------------------
# one-call builders used by the homogenization drivers
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class MediumSpec:
    """Parameters of a random medium; kind is homogeneous, tubes or balls."""

    kind: str = "homogeneous"
    lam: float = 1.0
    c1: float = 1.0
    c2: float = 2.0
    fraction: float = 0.25

    def __post_init__(self):
        if self.kind not in ("homogeneous", "tubes", "balls"):
            raise InvalidInput(f"unknown medium kind {self.kind!r}")
        if self.kind != "homogeneous" and not self.lam > 0:
            raise InvalidInput("medium intensity must be positive")
        if self.kind == "tubes" and not 0 < self.c1 <= self.c2:
            raise InvalidInput("tubes need 0 < c1 <= c2")


def realize(medium: MediumSpec, grid: Grid, seed: int, key=(), eps: float = 1.0) -> np.ndarray:
    """Boolean 'inside the geometry' cell mask of the eps-scaled medium over grid.

    Points are drawn on the window divided by eps, enlarged by the interaction
    range, and the resulting geometry is scaled back by eps.
    """
    if medium.kind == "homogeneous":
        return np.zeros(grid.cells, dtype=bool)
    margin = medium.c2 if medium.kind == "tubes" else 0.0
    lo = np.array(grid.lo) / eps - margin
    hi = np.array(grid.hi) / eps + margin
    pts = sample_poisson(lo, hi, medium.lam, seed, key)
    if medium.kind == "tubes":
        geo = connect_tubes(pts, medium.c1, medium.c2)
    else:
        if len(pts) < 2:
            return np.zeros(grid.cells, dtype=bool)
        geo = place_balls(pts, medium.fraction)
    if eps != 1.0:
        geo = scale(geo, eps)
    return membership(geo, grid)
