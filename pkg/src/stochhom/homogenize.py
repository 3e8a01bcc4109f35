"""Cell problems, homogenized densities, capacity terms and the perforated-vs-effective comparison."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from functools import partial
from typing import Callable, Sequence

import numpy as np

from .energy import CoefficientField, EnergyFunctional, Integrand, LowerOrderTerm
from .fields import DiscreteField, Grid, InvalidInput, cell_average_adjoint
from .microstructure import MediumSpec, realize
from .nfunction import GrowthFunction, NFunction
from .parallel import catching, pmap
from .solver import DirichletProblem, NonConvergence, SolveReport, minimize


class CellFailure(RuntimeError):
    pass


class ExtrapolationError(ValueError):
    pass


# ----------------------------------------------------------------------------
# model = microstructure + integrand
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class Model:
    """Two-phase integrand a(x) * scale * Phi(|p|) with a = a_min inside the geometry, 1 outside.

    ``a_min = 0`` selects the perforated workflow: geometry cells leave the
    domain and their nodes are pinned to the boundary data.
    """

    medium: MediumSpec = field(default_factory=MediumSpec)
    nfunction: dict = field(default_factory=lambda: {"family": "power", "params": {"p": 2.0}})
    a_min: float = 0.1
    scale: float = 1.0
    ndim: int = 2
    delta_reg: float = 1e-8

    def __post_init__(self):
        if not 0 <= self.a_min <= 1:
            raise InvalidInput("a_min must be in [0, 1]")
        if self.ndim not in (1, 2, 3):
            raise InvalidInput("ndim must be 1, 2 or 3")

    @property
    def perforated(self) -> bool:
        return self.a_min == 0 and self.medium.kind != "homogeneous"

    def nf(self) -> NFunction:
        return NFunction.from_spec(self.nfunction)

    def phi(self, r: float) -> float:
        return self.scale * float(self.nf()(r))

    def functional(self, grid: Grid, inside: np.ndarray) -> EnergyFunctional:
        nf = self.nf()
        if self.medium.kind == "homogeneous" or not inside.any():
            return EnergyFunctional(Integrand.orlicz(nf, self.scale, self.delta_reg), grid)
        if self.perforated:
            return EnergyFunctional(Integrand.orlicz(nf, self.scale, self.delta_reg), grid, domain_mask=~inside)
        coeff = CoefficientField(grid, np.where(inside, self.a_min, 1.0))
        return EnergyFunctional(Integrand.weighted(nf, coeff, self.scale, self.delta_reg), grid)

    def to_dict(self) -> dict:
        d = asdict(self)
        return d


def obstacle_nodes(inside: np.ndarray) -> np.ndarray:
    return cell_average_adjoint(inside.astype(float)) > 0


def _solve_affine(model: Model, grid: Grid, inside: np.ndarray, p, tol: float, max_iter: int) -> SolveReport:
    F = model.functional(grid, inside)
    data = DiscreteField.affine(grid, p).values
    pinned = obstacle_nodes(inside) if model.perforated else None
    prob = DirichletProblem.on_boundary(F, data, pinned=pinned)
    return minimize(prob, tol=tol, max_iter=max_iter)


# ----------------------------------------------------------------------------
# cell problems
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class CellResult:
    p: tuple
    t: float
    seed: int
    key: tuple
    value: float
    solve_meta: dict


def cube_grid(t: float, cells_per_unit: int, ndim: int, center=None) -> Grid:
    center = np.zeros(ndim) if center is None else np.asarray(center, dtype=float)
    n = int(round(t * cells_per_unit))
    if n < 2:
        raise InvalidInput("cube resolution below two cells")
    return Grid.cube(center, t, n)


def cell_value(model: Model, p, t: float, seed: int, cells_per_unit: int, key=(), center=None,
               tol: float = 1e-8, max_iter: int = 1000) -> CellResult:
    """m(F, l_p, Q_t) / |Q_t| for one realization."""
    if not t > 0:
        raise InvalidInput("cube size must be positive")
    p = tuple(float(v) for v in np.atleast_1d(p))
    if len(p) != model.ndim:
        raise InvalidInput("gradient dimension does not match the model")
    grid = cube_grid(t, cells_per_unit, model.ndim, center)
    inside = realize(model.medium, grid, seed, key)
    try:
        rep = _solve_affine(model, grid, inside, p, tol, max_iter)
    except NonConvergence as exc:
        raise CellFailure(f"cell problem failed at p={p}, t={t}, seed={seed}, key={key}: {exc}") from exc
    return CellResult(p, float(t), int(seed), tuple(key), rep.value / grid.volume, rep.summary())


@dataclass
class DensityTable:
    p_grid: list
    t_schedule: list
    values: np.ndarray  # (P, T, S); nan where a task failed
    failures: list = field(default_factory=list)

    @property
    def n_seeds(self) -> int:
        return self.values.shape[2]

    def mean(self, t_index: int = -1) -> np.ndarray:
        return np.nanmean(self.values[:, t_index, :], axis=1)

    def variance(self, t_index: int = -1) -> np.ndarray:
        return np.nanvar(self.values[:, t_index, :], axis=1, ddof=1)

    def stderr(self, t_index: int = -1) -> np.ndarray:
        v = self.values[:, t_index, :]
        n = np.sum(np.isfinite(v), axis=1)
        return np.sqrt(np.nanvar(v, axis=1, ddof=1) / n) if self.n_seeds > 1 else np.zeros(len(self.p_grid))

    @property
    def estimates(self) -> np.ndarray:
        return self.mean(-1)

    def per_t_trace(self) -> np.ndarray:
        return np.nanmean(self.values, axis=2)

    def midpoint_triples(self) -> list[tuple[int, int, int]]:
        P = np.array(self.p_grid, dtype=float)
        out = []
        for i in range(len(P)):
            for k in range(i + 1, len(P)):
                mid = 0.5 * (P[i] + P[k])
                hit = np.flatnonzero(np.all(np.isclose(P, mid, rtol=0, atol=1e-12), axis=1))
                for j in hit:
                    if j not in (i, k):
                        out.append((i, int(j), k))
        return out

    def convexity_report(self) -> list[dict]:
        est, se = self.estimates, self.stderr()
        rows = []
        for i, j, k in self.midpoint_triples():
            chord = 0.5 * (est[i] + est[k])
            slack = 2.0 * (se[i] + se[j] + se[k])
            rows.append({"i": i, "j": j, "k": k, "mid": est[j], "chord": chord, "slack": slack,
                         "ok": bool(est[j] <= chord + slack + 1e-12 * (1 + abs(chord)))})
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        nd = len(self.p_grid[0])
        w.writerow([f"p{k}" for k in range(nd)] + ["estimate", "stderr"] + [f"mean_t{t:g}" for t in self.t_schedule]
                   + [f"var_t{t:g}" for t in self.t_schedule])
        est, se, tr = self.estimates, self.stderr(), self.per_t_trace()
        var = np.stack([self.variance(i) for i in range(len(self.t_schedule))], axis=1)
        for a in range(len(self.p_grid)):
            w.writerow([repr(float(v)) for v in self.p_grid[a]] + [repr(float(est[a])), repr(float(se[a]))]
                       + [repr(float(v)) for v in tr[a]] + [repr(float(v)) for v in var[a]])
        return buf.getvalue()

    def raw_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        nd = len(self.p_grid[0])
        w.writerow([f"p{k}" for k in range(nd)] + ["t", "seed_index", "value"])
        P, T, S = self.values.shape
        for a in range(P):
            for b in range(T):
                for c in range(S):
                    w.writerow([repr(float(v)) for v in self.p_grid[a]]
                               + [repr(float(self.t_schedule[b])), c, repr(float(self.values[a, b, c]))])
        return buf.getvalue()


def _f0_task(args):
    model, p, t, seed, key, cells_per_unit, tol, max_iter = args
    return cell_value(model, p, t, seed, cells_per_unit, key=key, tol=tol, max_iter=max_iter).value


def estimate_f0(model: Model, p_grid: Sequence, t_schedule: Sequence[float], n_seeds: int, master_seed: int,
                cells_per_unit: int, workers: int = 1, tol: float = 1e-8, max_iter: int = 1000,
                require_seeds: int = 8) -> DensityTable:
    """Seed means of cell values over growing cubes.

    Realization (t_index, seed_index) is shared across p, so each per-seed
    curve p -> m/|Q| is exactly convex.
    """
    t_schedule = [float(t) for t in t_schedule]
    if any(b <= a for a, b in zip(t_schedule, t_schedule[1:])):
        raise InvalidInput("t_schedule must be increasing")
    if n_seeds < require_seeds:
        raise InvalidInput(f"need at least {require_seeds} seeds")
    p_grid = [tuple(float(v) for v in np.atleast_1d(p)) for p in p_grid]
    tasks, index = [], []
    for a, p in enumerate(p_grid):
        for b, t in enumerate(t_schedule):
            for c in range(n_seeds):
                tasks.append((model, p, t, master_seed, (b, c), cells_per_unit, tol, max_iter))
                index.append((a, b, c))
    out = pmap(catching(_f0_task), tasks, workers)
    vals = np.full((len(p_grid), len(t_schedule), n_seeds), np.nan)
    failures = []
    for (a, b, c), (v, err) in zip(index, out):
        if err is None:
            vals[a, b, c] = v
        else:
            failures.append({"p": p_grid[a], "t": t_schedule[b], "seed_index": c, "error": err})
    return DensityTable(p_grid, t_schedule, vals, failures)


# ----------------------------------------------------------------------------
# subadditivity
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class SubadditivityReport:
    whole: float
    parts: tuple
    slack: float

    @property
    def holds(self) -> bool:
        return self.whole <= sum(self.parts) + self.slack

    @property
    def excess(self) -> float:
        return self.whole - sum(self.parts)


def subadditivity_check(model: Model, p, t: float, seed: int, cells_per_unit: int, split: int = 2, key=(),
                        slack_constant: float = 1e-6, tol: float = 1e-8) -> SubadditivityReport:
    """m(Q_t) against the sum over split**n aligned subcubes, same realization and data l_p."""
    grid = cube_grid(t, cells_per_unit, model.ndim)
    if any(c % split for c in grid.cells):
        raise InvalidInput("cube resolution must be divisible by the split")
    inside = realize(model.medium, grid, seed, key)
    p = tuple(float(v) for v in np.atleast_1d(p))
    whole = _solve_affine(model, grid, inside, p, tol, 1000).value
    parts = []
    step = [c // split for c in grid.cells]
    for idx in np.ndindex(*(split,) * model.ndim):
        start = [i * s for i, s in zip(idx, step)]
        stop = [a + s for a, s in zip(start, step)]
        sub = grid.subgrid(start, stop)
        sl = tuple(slice(a, b) for a, b in zip(start, stop))
        parts.append(_solve_affine(model, sub, inside[sl], p, tol, 1000).value)
    slack = slack_constant * t ** (model.ndim - 1) / cells_per_unit
    return SubadditivityReport(whole, tuple(parts), slack)


# ----------------------------------------------------------------------------
# capacity
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class CapacityResult:
    value: float
    empty: bool
    obstacle_cells: int
    solve_meta: dict | None = None


def capacity(model: Model, G: GrowthFunction, x, eps: float, h: float, b: float, gamma: float, seed: int,
             mode: str = "cap", cells: int = 32, key=(), tol: float = 1e-6, max_iter: int = 2000) -> CapacityResult:
    """inf over v = 0 on the obstacles in Q_h(x), free elsewhere, of
    int f(grad v) (+ h^(-1-gamma) G(|v - b|) in mode 'cap') over the non-obstacle part."""
    if not (h > 0 and gamma > 0 and eps > 0):
        raise InvalidInput("capacity needs h, gamma, eps > 0")
    if mode not in ("cap", "cap_f"):
        raise InvalidInput("mode must be 'cap' or 'cap_f'")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    grid = Grid.cube(x, h, cells)
    inside = realize(model.medium, grid, seed, key, eps)
    return capacity_for_obstacles(model, G, grid, inside, h, b, gamma, mode, tol, max_iter)


def capacity_for_obstacles(model: Model, G: GrowthFunction, grid: Grid, inside: np.ndarray, h: float, b: float,
                           gamma: float, mode: str = "cap", tol: float = 1e-6, max_iter: int = 2000) -> CapacityResult:
    """The capacity minimisation for a given obstacle mask on the cube grid."""
    if mode not in ("cap", "cap_f"):
        raise InvalidInput("mode must be 'cap' or 'cap_f'")
    n_obs = int(inside.sum())
    if n_obs == 0:
        return CapacityResult(0.0, True, 0)
    kappa = h ** (-1.0 - gamma)
    lower = LowerOrderTerm.growth_penalty(G, kappa, b) if mode == "cap" else None
    nf = model.nf()
    F = EnergyFunctional(Integrand.orlicz(nf, model.scale, model.delta_reg), grid, domain_mask=~inside,
                         lower_order=lower)
    pinned = obstacle_nodes(inside)
    init = np.where(pinned, 0.0, b if mode == "cap" else 0.0)
    prob = DirichletProblem.free(F, init=init, pinned=pinned, data=np.zeros(grid.node_shape))
    rep = minimize(prob, tol=tol, max_iter=max_iter)
    return CapacityResult(rep.value, False, n_obs, rep.summary())


@dataclass
class CapacityEstimate:
    b_grid: list
    h_schedule: list
    eps_schedule: list
    gamma: float
    values: np.ndarray  # (B, H, samples): cap / h^n
    c_bound: float
    growth: GrowthFunction | None = None
    failures: list = field(default_factory=list)

    def mean(self) -> np.ndarray:
        return np.nanmean(self.values, axis=2)

    def stderr(self) -> np.ndarray:
        n = np.sum(np.isfinite(self.values), axis=2)
        if self.values.shape[2] < 2:
            return np.zeros(self.values.shape[:2])
        return np.sqrt(np.nanvar(self.values, axis=2, ddof=1) / n)

    @property
    def c0(self) -> np.ndarray:
        return self.mean()[:, -1]

    @property
    def c0_stderr(self) -> np.ndarray:
        return self.stderr()[:, -1]

    def richardson(self) -> np.ndarray:
        """First-order extrapolation in h from the last two levels."""
        m = self.mean()
        if m.shape[1] < 2:
            return m[:, -1]
        r = self.h_schedule[-2] / self.h_schedule[-1]
        return m[:, -1] + (m[:, -1] - m[:, -2]) / (r - 1.0)

    def stable(self) -> np.ndarray:
        """Last two h-levels agree within twice their combined standard error."""
        m, s = self.mean(), self.stderr()
        if m.shape[1] < 2:
            return np.zeros(m.shape[0], bool)
        diff = np.abs(m[:, -1] - m[:, -2])
        unc = 2.0 * np.sqrt(s[:, -1] ** 2 + s[:, -2] ** 2)
        return diff <= unc + 1e-12 * (1 + np.abs(m[:, -1]))

    def growth_bound(self) -> np.ndarray:
        b = np.abs(np.asarray(self.b_grid, dtype=float))
        g = np.asarray(self.growth(b)) if self.growth is not None else 0.0
        return self.c_bound * (1.0 + g) * b

    def growth_ok(self) -> np.ndarray:
        return self.c0 <= self.growth_bound() + 1e-12

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["b", "h", "eps", "mean", "stderr"])
        m, s = self.mean(), self.stderr()
        for a, b in enumerate(self.b_grid):
            for k, h in enumerate(self.h_schedule):
                w.writerow([repr(float(b)), repr(float(h)), repr(float(self.eps_schedule[k])),
                            repr(float(m[a, k])), repr(float(s[a, k]))])
        return buf.getvalue()

    def summary_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["b", "c0", "stderr", "richardson", "stable", "bound", "bound_ok"])
        rich, st, bd, ok = self.richardson(), self.stable(), self.growth_bound(), self.growth_ok()
        for a, b in enumerate(self.b_grid):
            w.writerow([repr(float(b)), repr(float(self.c0[a])), repr(float(self.c0_stderr[a])),
                        repr(float(rich[a])), int(st[a]), repr(float(bd[a])), int(ok[a])])
        return buf.getvalue()


def _cap_task(args):
    model, G, x, eps, h, b, gamma, seed, key, cells, tol = args
    res = capacity(model, G, x, eps, h, b, gamma, seed, "cap", cells, key=key, tol=tol)
    return res.value / h**model.ndim


def estimate_c0(model: Model, G: GrowthFunction, b_grid: Sequence[float], h_schedule: Sequence[float],
                n_seeds: int, master_seed: int, gamma: float = 0.5, eps_power: float = 2.0,
                centers: Sequence | None = None, cells: int = 32, c_bound: float = 1.0, workers: int = 1,
                tol: float = 1e-6) -> CapacityEstimate:
    """cap / h^n averaged over seeds and window centres along h_schedule with eps = h**eps_power."""
    h_schedule = [float(h) for h in h_schedule]
    if any(b >= a for a, b in zip(h_schedule, h_schedule[1:])):
        raise InvalidInput("h_schedule must be decreasing")
    eps_schedule = [h**eps_power for h in h_schedule]
    if centers is None:
        centers = [tuple(np.zeros(model.ndim))]
    centers = [tuple(float(v) for v in np.atleast_1d(c)) for c in centers]
    tasks, index = [], []
    for a, b in enumerate(b_grid):
        for k, (h, eps) in enumerate(zip(h_schedule, eps_schedule)):
            for c_i, x in enumerate(centers):
                for s in range(n_seeds):
                    # realization shared across b, like the cell problems share it across p
                    tasks.append((model, G, x, eps, h, float(b), gamma, master_seed, (k, c_i, s), cells, tol))
                    index.append((a, k, c_i * n_seeds + s))
    out = pmap(catching(_cap_task), tasks, workers)
    vals = np.full((len(b_grid), len(h_schedule), len(centers) * n_seeds), np.nan)
    failures = []
    for (a, k, j), (v, err) in zip(index, out):
        if err is None:
            vals[a, k, j] = v
        else:
            failures.append({"b": b_grid[a], "h": h_schedule[k], "sample": j, "error": err})
    return CapacityEstimate(list(map(float, b_grid)), h_schedule, eps_schedule, gamma, vals, c_bound, G, failures)


# ----------------------------------------------------------------------------
# homogenized problem
# ----------------------------------------------------------------------------


class ConvexProfile:
    """C1 convex interpolant of convex 1-D data.

    The derivative is piecewise linear through the secant slopes placed at the
    interval midpoints, anchored at derivative 0 at x = 0, and the value is its
    integral from 0. Quadratics are reproduced exactly.
    """

    def __init__(self, x, y, check_range: bool = False):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        order = np.argsort(x)
        x, y = x[order], y[order]
        if not np.any(x == 0):
            raise InvalidInput("profile data must include x = 0")
        self.x, self.y = x, y
        self.y0 = float(y[x == 0][0])
        slopes = np.diff(y) / np.diff(x)
        mids = 0.5 * (x[1:] + x[:-1])
        nodes = np.concatenate([mids, [0.0]])
        dvals = np.concatenate([slopes, [0.0]])
        o = np.argsort(nodes, kind="stable")
        self.nodes, self.dvals = nodes[o], dvals[o]
        if np.any(np.diff(self.dvals) < -1e-12 * (1 + np.abs(self.dvals[1:]))):
            raise InvalidInput("profile data are not convex")
        self.lo, self.hi = float(x[0]), float(x[-1])
        self.check_range = check_range
        # cumulative integrals of d from 0 to each node
        seg = 0.5 * (self.dvals[1:] + self.dvals[:-1]) * np.diff(self.nodes)
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        zero_at = np.flatnonzero(self.nodes == 0.0)[0]
        self.cum = cum - cum[zero_at]
        self.curvature = float(np.max(np.abs(np.diff(self.dvals) / np.maximum(np.diff(self.nodes), 1e-300)))) if self.nodes.size > 1 else 1.0
        self.min_exponent = 2.0

    def _locate(self, x):
        n = self.nodes
        k = np.clip(np.searchsorted(n, x, side="right") - 1, 0, n.size - 2)
        return k

    def deriv(self, x):
        x = np.asarray(x, dtype=float)
        n, d = self.nodes, self.dvals
        if n.size == 1:
            return np.zeros_like(x)
        k = self._locate(x)
        slope = (d[k + 1] - d[k]) / (n[k + 1] - n[k])
        return d[k] + slope * (x - n[k])

    def value(self, x):
        x = np.asarray(x, dtype=float)
        n, d = self.nodes, self.dvals
        if n.size == 1:
            return np.full_like(x, self.y0)
        k = self._locate(x)
        dx = x - n[k]
        slope = (d[k + 1] - d[k]) / (n[k + 1] - n[k])
        return self.y0 + self.cum[k] + d[k] * dx + 0.5 * slope * dx * dx

    def in_range(self, x) -> bool:
        x = np.asarray(x)
        return bool(np.all(x >= self.lo - 1e-12) and np.all(x <= self.hi + 1e-12))

    @classmethod
    def zero(cls) -> "ConvexProfile":
        return cls([-1.0, 0.0, 1.0], [0.0, 0.0, 0.0])


def profile_from_table(table: DensityTable) -> ConvexProfile:
    """Radial profile r -> f0 from an isotropic table (one entry per |p|, p = 0 included or implied)."""
    r = np.array([float(np.linalg.norm(p)) for p in table.p_grid])
    est = np.array(table.estimates, dtype=float)
    keep = {}
    for ri, ei in zip(r, est):
        keep.setdefault(round(ri, 12), []).append(ei)
    rr = np.array(sorted(keep))
    ee = np.array([np.mean(keep[k]) for k in rr])
    if rr[0] != 0:
        rr = np.concatenate([[0.0], rr])
        ee = np.concatenate([[0.0], ee])
    return ConvexProfile(rr, ee)


def profile_from_capacity(est: CapacityEstimate) -> ConvexProfile:
    b = np.asarray(est.b_grid, dtype=float)
    c = np.asarray(est.c0, dtype=float)
    if not np.any(b == 0):
        b = np.concatenate([b, [0.0]])
        c = np.concatenate([c, [0.0]])
    prof = ConvexProfile(b, c)
    prof.check_range = True
    return prof


def homogenized_minimum(f0: ConvexProfile, window: Grid, u0: Callable[[np.ndarray], np.ndarray],
                        c0: ConvexProfile | None = None, lower_order: LowerOrderTerm | None = None,
                        tol: float = 1e-8, max_iter: int = 2000, delta_reg: float = 1e-8) -> SolveReport:
    """Dirichlet problem u = u0 on the boundary for int f0(|Du|) + c0(u - u0) (+ g)."""
    ref = lambda x: np.asarray(u0(x))
    terms = []
    if c0 is not None:
        terms.append(LowerOrderTerm.shifted_profile(c0, ref))
    if lower_order is not None:
        terms.append(lower_order)
    lo = _sum_terms(terms)
    F = EnergyFunctional(Integrand.radial(f0, delta_reg), window, lower_order=lo)
    data = DiscreteField.from_function(window, ref).values
    rep = minimize(DirichletProblem.on_boundary(F, data), tol=tol, max_iter=max_iter)
    if c0 is not None and c0.check_range:
        diff = rep.minimizer.values - data
        if not c0.in_range(diff):
            raise ExtrapolationError(
                f"u - u0 spans [{diff.min():.4g}, {diff.max():.4g}], outside the c0 table [{c0.lo:.4g}, {c0.hi:.4g}]")
    return rep


def _sum_terms(terms):
    if not terms:
        return None
    if len(terms) == 1:
        return terms[0]
    return LowerOrderTerm(
        lambda x, u: sum(t.value(x, u) for t in terms),
        lambda x, u: sum(t.deriv(x, u) for t in terms),
        curvature=sum(t.curvature for t in terms), name="sum",
    )


# ----------------------------------------------------------------------------
# perforated / oscillating minima against the homogenized one
# ----------------------------------------------------------------------------


@dataclass
class GammaGapReport:
    eps_schedule: list
    minima: np.ndarray  # (E, S)
    homogenized: float
    failures: list = field(default_factory=list)

    def mean(self) -> np.ndarray:
        return np.nanmean(self.minima, axis=1)

    def spread(self) -> np.ndarray:
        return np.nanstd(self.minima, axis=1, ddof=1) if self.minima.shape[1] > 1 else np.zeros(len(self.eps_schedule))

    def gap(self) -> np.ndarray:
        return self.mean() - self.homogenized

    def relative_gap(self) -> np.ndarray:
        return np.abs(self.gap()) / max(abs(self.homogenized), 1e-300)

    def monotone_last(self, levels: int = 3) -> bool:
        """Means decrease monotonically toward the homogenized value over the last levels."""
        m = self.mean()[-levels:]
        return bool(np.all(np.diff(m) < 0) and np.all(m >= self.homogenized - 1e-9 * (1 + abs(self.homogenized))))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["eps", "mean", "spread", "homogenized", "gap", "relative_gap"])
        for k, e in enumerate(self.eps_schedule):
            w.writerow([repr(float(e)), repr(float(self.mean()[k])), repr(float(self.spread()[k])),
                        repr(float(self.homogenized)), repr(float(self.gap()[k])), repr(float(self.relative_gap()[k]))])
        return buf.getvalue()


def _gap_task(args):
    model, u0, lo, hi, cells, eps, seed, key, tol = args
    grid = Grid(lo, hi, cells)
    inside = realize(model.medium, grid, seed, key, eps)
    F = model.functional(grid, inside)
    data = DiscreteField.from_function(grid, u0).values
    pinned = obstacle_nodes(inside) if model.perforated else None
    rep = minimize(DirichletProblem.on_boundary(F, data, pinned=pinned), tol=tol, max_iter=5000)
    return rep.value


def fine_scale_grid_cells(window_lo, window_hi, eps: float, cells_per_micro: int | None, resolution: int | None):
    span = np.subtract(window_hi, window_lo)
    if resolution is not None:
        return tuple(int(resolution) for _ in span)
    return tuple(int(round(cells_per_micro * s / eps)) for s in span)


def gamma_gap(model: Model, u0: Callable, window_lo, window_hi, eps_schedule: Sequence[float], n_seeds: int,
              master_seed: int, homogenized_value: float, cells_per_micro: int | None = None,
              resolution: int | None = None, workers: int = 1, tol: float = 1e-8) -> GammaGapReport:
    """Fine-scale minima with data u0 (pinned on obstacles when perforated) for each eps and seed."""
    eps_schedule = [float(e) for e in eps_schedule]
    if any(b >= a for a, b in zip(eps_schedule, eps_schedule[1:])):
        raise InvalidInput("eps_schedule must be decreasing")
    lo = tuple(float(v) for v in np.atleast_1d(window_lo))
    hi = tuple(float(v) for v in np.atleast_1d(window_hi))
    tasks, index = [], []
    for k, eps in enumerate(eps_schedule):
        cells = fine_scale_grid_cells(lo, hi, eps, cells_per_micro, resolution)
        for s in range(n_seeds):
            tasks.append((model, u0, lo, hi, cells, eps, master_seed, (k, s), tol))
            index.append((k, s))
    out = pmap(catching(_gap_task), tasks, workers)
    minima = np.full((len(eps_schedule), n_seeds), np.nan)
    failures = []
    for (k, s), (v, err) in zip(index, out):
        if err is None:
            minima[k, s] = v
        else:
            failures.append({"eps": eps_schedule[k], "seed_index": s, "error": err})
    return GammaGapReport(eps_schedule, minima, float(homogenized_value), failures)
