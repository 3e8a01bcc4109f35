"""Limited-memory quasi-Newton minimisation of discrete energies with Dirichlet data."""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .fields import DiscreteField, InvalidInput
from .energy import EnergyFunctional


class NonConvergence(RuntimeError):
    def __init__(self, msg: str, report: "SolveReport"):
        super().__init__(msg)
        self.report = report


@dataclass
class DirichletProblem:
    """Minimise ``functional`` with nodes in ``fixed`` pinned to ``data``.

    Nodes not touched by any active cell are pinned as well (they carry no energy).
    """

    functional: EnergyFunctional
    data: np.ndarray
    fixed: np.ndarray
    init: np.ndarray | None = None
    extra: object | None = None

    def __post_init__(self):
        shape = self.functional.grid.node_shape
        self.data = np.asarray(self.data.values if isinstance(self.data, DiscreteField) else self.data, dtype=float)
        self.data = np.broadcast_to(self.data, shape).copy()
        self.fixed = np.asarray(self.fixed, dtype=bool)
        if self.fixed.shape != shape:
            raise InvalidInput("fixed-node mask must match the node shape")
        if not np.all(np.isfinite(self.data[self.fixed])):
            raise InvalidInput("boundary data must be finite on pinned nodes")
        if self.init is not None:
            self.init = np.asarray(self.init, dtype=float)
            if self.init.shape != shape:
                raise InvalidInput("initial field must match the node shape")

    @classmethod
    def on_boundary(cls, F: EnergyFunctional, data, pinned: np.ndarray | None = None, init=None) -> "DirichletProblem":
        """Pin the boundary of the active region (and any extra ``pinned`` nodes) to ``data``."""
        fixed = active_region_boundary(F)
        if pinned is not None:
            fixed = fixed | np.asarray(pinned, bool)
        return cls(F, data, fixed, init)

    @classmethod
    def free(cls, F: EnergyFunctional, init, extra=None, pinned: np.ndarray | None = None,
             data=None) -> "DirichletProblem":
        init = np.asarray(init.values if isinstance(init, DiscreteField) else init, dtype=float)
        fixed = np.zeros(F.grid.node_shape, bool) if pinned is None else np.asarray(pinned, bool)
        return cls(F, init if data is None else data, fixed, init, extra)


def active_region_boundary(F: EnergyFunctional) -> np.ndarray:
    """Nodes of active cells that lie on the grid boundary or touch an inactive cell."""
    grid = F.grid
    act = F.active.astype(float)
    from .fields import cell_average_adjoint

    touched_active = cell_average_adjoint(act) > 0
    touched_inactive = cell_average_adjoint(1.0 - act) > 0
    return touched_active & (touched_inactive | grid.boundary_nodes())


@dataclass
class SolveReport:
    minimizer: DiscreteField
    value: float
    iterations: int
    grad_sup: float
    energy_trace: list = field(default_factory=list)
    converged: bool = True
    message: str = ""
    evaluations: int = 0
    seconds: float = 0.0

    def summary(self) -> dict:
        return {
            "value": self.value,
            "iterations": self.iterations,
            "grad_sup": self.grad_sup,
            "converged": self.converged,
            "evaluations": self.evaluations,
            "seconds": self.seconds,
            "message": self.message,
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True)


def affine_fit(grid, values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Least-squares c + p.x through the masked nodal values, evaluated everywhere."""
    if not mask.any():
        return np.zeros(grid.node_shape)
    x = grid.nodes()
    A = np.column_stack([np.ones(int(mask.sum()))] + [x[k][mask] for k in range(grid.ndim)])
    coef, *_ = np.linalg.lstsq(A, values[mask], rcond=None)
    return coef[0] + np.tensordot(coef[1:], x, axes=1)


class _Objective:
    def __init__(self, problem: DirichletProblem, free: np.ndarray, base: np.ndarray):
        self.F = problem.functional
        self.extra = problem.extra
        self.free = free
        self.base = base
        self.count = 0

    def full(self, x):
        u = self.base.copy()
        u[self.free] = x
        return u

    def __call__(self, x):
        self.count += 1
        u = self.full(x)
        val, g = self.F.value_and_grad(u)
        if self.extra is not None:
            val += self.extra.value(u)
            g = g + self.extra.grad(u)
        return val, g[self.free]


def _preconditioner(problem: DirichletProblem, u: np.ndarray, free: np.ndarray):
    F = problem.functional
    lo = F.lower_order
    k = F.stiffness(u)
    kbar = float(np.mean(k[k > 0]) / F.grid.cell_volume) if np.any(k > 0) else 1.0
    L = float(np.max(np.array(F.grid.hi) - np.array(F.grid.lo)))
    shift = 1e-3 * kbar / L**2
    if lo is not None:
        shift += lo.curvature
    if problem.extra is not None:
        shift += getattr(problem.extra, "curvature", 0.0)
    K = F.secant_matrix(u, shift=shift)
    idx = np.flatnonzero(free.ravel())
    Kff = K[idx][:, idx].tocsc()
    lu = splu(Kff)
    return lu.solve


def minimize(problem: DirichletProblem, tol: float = 1e-8, max_iter: int = 1000, memory: int = 10,
             precondition: bool = True, c_armijo: float = 1e-4, shrink: float = 0.5,
             raise_on_failure: bool = True) -> SolveReport:
    """L-BFGS with backtracking; stops when sup|grad_free| <= tol (1 + |value|)."""
    if not tol > 0:
        raise InvalidInput("tolerance must be positive")
    t0 = time.perf_counter()
    F = problem.functional
    grid = F.grid
    orphan = F.node_weights == 0
    fixed = problem.fixed | orphan
    free = ~fixed
    if problem.init is not None:
        u0 = problem.init.copy()
    else:
        u0 = affine_fit(grid, problem.data, problem.fixed)
    u0[problem.fixed] = problem.data[problem.fixed]
    if not np.all(np.isfinite(u0)):
        raise InvalidInput("initial field is not finite")
    obj = _Objective(problem, free, u0)
    x = u0[free].copy()
    f, g = obj(x)
    if not math.isfinite(f):
        raise InvalidInput("energy is not finite at the initial field")
    trace = [f]

    def report(conv, msg, it):
        gs = float(np.max(np.abs(g))) if g.size else 0.0
        return SolveReport(DiscreteField(grid, obj.full(x)), float(f), it, gs, trace, conv, msg,
                           obj.count, time.perf_counter() - t0)

    if x.size == 0:
        return report(True, "no free nodes", 0)

    apply_h0 = _preconditioner(problem, u0, free) if precondition else None
    S, Y, R = [], [], []
    gamma = 1.0
    it = 0
    restarted = False
    while True:
        gsup = float(np.max(np.abs(g)))
        if gsup <= tol * (1.0 + abs(f)):
            return report(True, "converged", it)
        if it >= max_iter:
            rep = report(False, f"max_iter={max_iter} reached (grad_sup={gsup:.3e})", it)
            if raise_on_failure:
                raise NonConvergence(rep.message, rep)
            return rep
        # two-loop recursion
        q = g.copy()
        alphas = []
        for s, y, rho in zip(reversed(S), reversed(Y), reversed(R)):
            a = rho * float(s @ q)
            alphas.append(a)
            q -= a * y
        if apply_h0 is not None:
            r = apply_h0(q)
        else:
            r = gamma * q
        for (s, y, rho), a in zip(zip(S, Y, R), reversed(alphas)):
            b = rho * float(y @ r)
            r += (a - b) * s
        d = -r
        gd = float(g @ d)
        if not gd < 0:
            S, Y, R = [], [], []
            d = -(apply_h0(g) if apply_h0 is not None else g)
            gd = float(g @ d)
        # backtracking
        alpha = 1.0
        accepted = False
        for _ in range(60):
            xn = x + alpha * d
            fn, gn = obj(xn)
            if math.isfinite(fn) and fn <= f + c_armijo * alpha * gd:
                accepted = True
                break
            # roundoff regime: no measurable decrease possible, slope condition instead
            if math.isfinite(fn) and fn <= f and abs(fn - f) <= 1e-13 * (1.0 + abs(f)):
                if float(gn @ d) <= (2 * c_armijo - 1) * gd:
                    accepted = True
                    break
            alpha *= shrink
        if not accepted:
            if not restarted and S:
                S, Y, R = [], [], []
                restarted = True
                it += 1
                continue
            rep = report(False, f"line search failed (grad_sup={gsup:.3e})", it)
            if raise_on_failure:
                raise NonConvergence(rep.message, rep)
            return rep
        restarted = False
        s = xn - x
        y = gn - g
        sy = float(s @ y)
        if sy > 1e-16 * float(np.sqrt((s @ s) * (y @ y))):
            S.append(s)
            Y.append(y)
            R.append(1.0 / sy)
            if len(S) > memory:
                S.pop(0), Y.pop(0), R.pop(0)
            gamma = sy / float(y @ y)
        x, f, g = xn, fn, gn
        trace.append(f)
        it += 1
        if precondition and it % 100 == 0:
            apply_h0 = _preconditioner(problem, obj.full(x), free)


def min_value(F: EnergyFunctional, data, tol: float = 1e-8, max_iter: int = 1000, pinned=None) -> float:
    """m(F, u0, window): the minimum with u = data on the boundary of the active region."""
    return minimize(DirichletProblem.on_boundary(F, data, pinned), tol=tol, max_iter=max_iter).value
