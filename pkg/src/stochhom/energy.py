"""Integrands, discrete energies, Yosida transforms and the probe metric.

The energy of a nodal field u is

    E(u) = sum_c  w_c f(x_c, Du_c) |cell|  +  sum_i  m_i g(x_i, u_i),

where Du_c is the cell gradient from :mod:`stochhom.fields`, w_c masks out
inactive cells and m_i are lumped nodal weights of the active cells.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .fields import (
    DiscreteField,
    Grid,
    InvalidInput,
    cell_average,
    cell_average_adjoint,
    cell_gradient,
    cell_gradient_adjoint,
    gradient_matrix,
    lumped_node_weights,
)
from .nfunction import NFunction, luxemburg_cells, luxemburg_cells_grad

DEFAULT_DELTA_REG = 1e-8


class ConfigurationError(ValueError):
    pass


class OutOfWindow(ValueError):
    pass


# ----------------------------------------------------------------------------
# coefficient fields
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class CoefficientField:
    """Piecewise-constant cell data on a window, sampled by nearest cell."""

    grid: Grid
    values: np.ndarray = field(repr=False)
    tol: float = 1e-9

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != self.grid.cells:
            raise InvalidInput("coefficient values must match the grid cells")
        object.__setattr__(self, "values", vals)

    def sample(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        lo = np.array(self.grid.lo).reshape((-1,) + (1,) * (x.ndim - 1))
        hi = np.array(self.grid.hi).reshape(lo.shape)
        h = self.grid.spacing.reshape(lo.shape)
        span = hi - lo
        if np.any(x < lo - self.tol * span) or np.any(x > hi + self.tol * span):
            raise OutOfWindow("sample point outside the stored coefficient window")
        idx = np.floor((x - lo) / h).astype(int)
        cells = np.array(self.grid.cells).reshape(lo.shape)
        idx = np.clip(idx, 0, cells - 1)
        return self.values[tuple(idx[k] for k in range(x.shape[0]))]

    @property
    def min(self) -> float:
        return float(self.values.min())

    @property
    def max(self) -> float:
        return float(self.values.max())


@dataclass(frozen=True)
class OscillatingExponent:
    """p(x) = base + amplitude * mean_k sin(2 pi x_k / period)."""

    base: float
    amplitude: float = 0.0
    period: float = 1.0

    def sample(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.base + self.amplitude * np.mean(np.sin(2 * np.pi * x / self.period), axis=0)

    @property
    def min(self) -> float:
        return self.base - abs(self.amplitude)

    @property
    def max(self) -> float:
        return self.base + abs(self.amplitude)


# ----------------------------------------------------------------------------
# radial profiles: anything with value(r) and deriv(r)
# ----------------------------------------------------------------------------


class NFunctionProfile:
    def __init__(self, nf: NFunction):
        self.nf = nf

    def value(self, r):
        return np.asarray(self.nf(r))

    def deriv(self, r):
        return np.asarray(self.nf.deriv(r))

    @property
    def min_exponent(self):
        return self.nf.min_exponent


# ----------------------------------------------------------------------------
# integrands
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class Integrand:
    """f(x, p) = scale * a(x) * Phi(r) for 'orlicz'/'weighted'/'radial', or
    r**p(x) / p(x) for 'var_exponent', with r = sqrt(|p|^2 + delta_reg^2).

    The constant f(x, 0) is subtracted, so f(x, 0) = 0. Coefficients are read
    at x / dilation + offset, which is how translation and homothety act.
    """

    family: str
    nf: NFunction | None = None
    coeff: Any = None
    exponent: Any = None
    profile: Any = None
    scale: float = 1.0
    delta_reg: float = DEFAULT_DELTA_REG
    c1_f: float | None = None
    c2_f: float | None = None
    dilation: float = 1.0
    offset: tuple[float, ...] | None = None

    def __post_init__(self):
        fam = self.family
        if fam not in ("orlicz", "weighted", "var_exponent", "radial"):
            raise InvalidInput(f"unknown integrand family {fam!r}")
        if fam in ("orlicz", "weighted") and self.nf is None:
            raise InvalidInput(f"{fam} integrand needs an N-function")
        if fam == "weighted" and self.coeff is None:
            raise InvalidInput("weighted integrand needs a coefficient field")
        if fam == "var_exponent" and self.exponent is None:
            raise InvalidInput("var_exponent integrand needs an exponent field")
        if fam == "radial" and self.profile is None:
            raise InvalidInput("radial integrand needs a profile")
        if self.delta_reg < 0:
            raise InvalidInput("delta_reg must be >= 0")
        if self.delta_reg == 0:
            pmin = self._min_exponent()
            if pmin is None or pmin < 2:
                raise ConfigurationError(
                    "delta_reg = 0 leaves the energy non-differentiable at zero gradient for exponents below 2"
                )
        if self.coeff is not None and self.coeff.min <= 0 and fam == "weighted":
            raise InvalidInput("weights must be positive; mask zero-weight cells instead")
        if self.c1_f is None or self.c2_f is None:
            c1, c2 = self._default_growth_constants()
            object.__setattr__(self, "c1_f", c1 if self.c1_f is None else self.c1_f)
            object.__setattr__(self, "c2_f", c2 if self.c2_f is None else self.c2_f)

    # constructors -----------------------------------------------------------
    @classmethod
    def orlicz(cls, nf: NFunction, scale: float = 1.0, delta_reg: float = DEFAULT_DELTA_REG) -> "Integrand":
        return cls("orlicz", nf=nf, scale=scale, delta_reg=delta_reg)

    @classmethod
    def weighted(cls, nf: NFunction, coeff: CoefficientField, scale: float = 1.0,
                 delta_reg: float = DEFAULT_DELTA_REG) -> "Integrand":
        return cls("weighted", nf=nf, coeff=coeff, scale=scale, delta_reg=delta_reg)

    @classmethod
    def var_exponent(cls, exponent, delta_reg: float = DEFAULT_DELTA_REG) -> "Integrand":
        return cls("var_exponent", exponent=exponent, delta_reg=delta_reg)

    @classmethod
    def radial(cls, profile, delta_reg: float = DEFAULT_DELTA_REG) -> "Integrand":
        return cls("radial", profile=profile, delta_reg=delta_reg)

    # helpers ------------------------------------------------------------------
    def _min_exponent(self):
        if self.family == "var_exponent":
            return self.exponent.min
        if self.family == "radial":
            return getattr(self.profile, "min_exponent", None)
        return self.nf.min_exponent

    def _default_growth_constants(self):
        if self.family == "weighted":
            return self.scale * self.coeff.min, self.scale * self.coeff.max
        if self.family == "orlicz":
            return self.scale, self.scale
        if self.family == "var_exponent":
            return 1.0 / self.exponent.max, 1.0
        return None, None

    def _profile(self):
        if self.family == "radial":
            return self.profile
        return NFunctionProfile(self.nf)

    def effective_coords(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = x / self.dilation
        if self.offset is not None:
            y = y + np.asarray(self.offset, dtype=float).reshape((-1,) + (1,) * (x.ndim - 1))
        return y

    def coefficients(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
        """(weight, exponent) at points x of shape (n, ...); exponent only for var_exponent."""
        shape = np.shape(x)[1:]
        if self.family == "var_exponent":
            return np.ones(shape), np.broadcast_to(self.exponent.sample(self.effective_coords(x)), shape)
        w = np.full(shape, float(self.scale))
        if self.family == "weighted":
            w = w * self.coeff.sample(self.effective_coords(x))
        return w, None

    def translate(self, z) -> "Integrand":
        z = np.atleast_1d(np.asarray(z, dtype=float))
        off = np.zeros_like(z) if self.offset is None else np.asarray(self.offset, dtype=float)
        return replace(self, offset=tuple(off + z / self.dilation))

    def homothety(self, eps: float) -> "Integrand":
        if not eps > 0:
            raise InvalidInput("homothety needs eps > 0")
        return replace(self, dilation=self.dilation * eps)

    # pointwise evaluation ------------------------------------------------------
    def density_from(self, weight, expo, grad: np.ndarray, with_flux: bool = False):
        """f and (optionally) df/dp for gradients of shape (n, ...)."""
        d = self.delta_reg
        r = np.sqrt(np.sum(grad * grad, axis=0) + d * d)
        if self.family == "var_exponent":
            f = (r**expo - d**expo) / expo
            if not with_flux:
                return weight * f
            with np.errstate(divide="ignore", invalid="ignore"):
                k = np.where(r > 0, r ** (expo - 2), 0.0)
        else:
            prof = self._profile()
            f = prof.value(r) - (prof.value(np.array(d)) if d > 0 else 0.0)
            if not with_flux:
                return weight * f
            with np.errstate(divide="ignore", invalid="ignore"):
                k = np.where(r > 0, prof.deriv(r) / r, 0.0)
        return weight * f, (weight * k)[None] * grad

    def __call__(self, x, p):
        x = np.asarray(x, dtype=float)
        p = np.asarray(p, dtype=float)
        w, e = self.coefficients(x)
        return self.density_from(w, e, p)

    def growth_bounds(self, t):
        """Lower and upper envelopes of the sandwich check at |p| = t."""
        t = np.asarray(t, dtype=float)
        if self.family == "var_exponent":
            lo_p, hi_p = self.exponent.min, self.exponent.max
            return self.c1_f * (t**lo_p / lo_p - 1.0), self.c2_f * (1.0 + t**hi_p)
        phi = np.asarray(self._profile().value(t))
        return self.c1_f * phi, self.c2_f * (1.0 + phi)

    def check_growth(self, x, p, rtol: float = 1e-9) -> bool:
        f = np.asarray(self(x, p))
        lo, hi = self.growth_bounds(np.sqrt(np.sum(np.asarray(p) ** 2, axis=0)))
        slack = rtol * (1 + np.abs(f))
        return bool(np.all(lo <= f + slack) and np.all(f <= hi + slack))

    def check_convexity(self, x, p1, p2, rtol: float = 1e-10) -> bool:
        mid = np.asarray(self(x, 0.5 * (np.asarray(p1) + np.asarray(p2))))
        chord = 0.5 * (np.asarray(self(x, p1)) + np.asarray(self(x, p2)))
        return bool(np.all(mid <= chord + rtol * (1 + np.abs(chord))))


# ----------------------------------------------------------------------------
# lower-order terms g(x, u)
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class LowerOrderTerm:
    """g(x, u) evaluated at nodes: value(x, u) and deriv(x, u) act elementwise.

    ``curvature`` is a rough size of d2g/du2 used only by the preconditioner.
    """

    value: Callable[[np.ndarray, np.ndarray], np.ndarray]
    deriv: Callable[[np.ndarray, np.ndarray], np.ndarray]
    c_g: float = 0.0
    b_g: Callable[[np.ndarray], np.ndarray] | None = None
    B: NFunction | None = None
    curvature: float = 0.0
    name: str = "custom"

    @classmethod
    def quadratic(cls, c: float, target: float = 0.0) -> "LowerOrderTerm":
        """c/2 (u - target)^2."""
        return cls(
            lambda x, u: 0.5 * c * (u - target) ** 2,
            lambda x, u: c * (u - target),
            c_g=c, B=NFunction.power(2.0), curvature=c, name="quadratic",
        )

    @classmethod
    def growth_penalty(cls, G, kappa: float, target: float) -> "LowerOrderTerm":
        """kappa * G(|u - target|) for a GrowthFunction G."""
        def val(x, u):
            return kappa * np.asarray(G.G(np.abs(u - target)))

        def der(x, u):
            s = u - target
            return kappa * np.asarray(G(np.abs(s))) * np.sign(s)

        return cls(val, der, c_g=kappa, curvature=kappa * max(1.0, float(G(1.0))), name="growth_penalty")

    @classmethod
    def shifted_profile(cls, profile, reference: Callable[[np.ndarray], np.ndarray] | None = None) -> "LowerOrderTerm":
        """profile(u - u0(x)) for a one-dimensional convex profile."""
        ref = reference or (lambda x: 0.0)
        return cls(
            lambda x, u: profile.value(u - ref(x)),
            lambda x, u: profile.deriv(u - ref(x)),
            curvature=float(getattr(profile, "curvature", 1.0)), name="shifted_profile",
        )

    def check_coercivity(self, x, u, rtol: float = 1e-9) -> bool:
        """g(x, u) >= c_g B(|u|) - b_g(x) on the given samples."""
        if self.B is None:
            return True
        g = np.asarray(self.value(x, u))
        b = 0.0 if self.b_g is None else np.asarray(self.b_g(x))
        lower = self.c_g * np.asarray(self.B(np.abs(u))) - b
        return bool(np.all(g >= lower - rtol * (1 + np.abs(g))))


# ----------------------------------------------------------------------------
# discrete functional on a grid
# ----------------------------------------------------------------------------


class EnergyFunctional:
    """An integrand bound to a grid, an active-cell mask and an optional lower-order term."""

    def __init__(self, integrand: Integrand, grid: Grid, domain_mask: np.ndarray | None = None,
                 lower_order: LowerOrderTerm | None = None):
        self.integrand = integrand
        self.grid = grid
        self.domain_mask = None if domain_mask is None else np.asarray(domain_mask, dtype=bool)
        if self.domain_mask is not None and self.domain_mask.shape != grid.cells:
            raise InvalidInput("domain mask must match grid cells")
        self.lower_order = lower_order
        centers = grid.centers()
        w, e = integrand.coefficients(centers)
        active = np.ones(grid.cells) if self.domain_mask is None else self.domain_mask.astype(float)
        self.cell_weights = grid.cell_volume * active * w
        self.cell_exponent = e
        self.node_weights = lumped_node_weights(grid.cell_volume * active)
        self._node_x = grid.nodes() if lower_order is not None else None

    def __repr__(self):
        return f"EnergyFunctional({self.integrand.family}, cells={self.grid.cells})"

    @property
    def active(self) -> np.ndarray:
        return np.ones(self.grid.cells, bool) if self.domain_mask is None else self.domain_mask

    def _values(self, u) -> np.ndarray:
        if isinstance(u, DiscreteField):
            if u.grid != self.grid:
                raise InvalidInput("field grid does not match the functional's grid")
            return u.values
        arr = np.asarray(u, dtype=float)
        if arr.shape != self.grid.node_shape:
            raise InvalidInput(f"nodal array shape {arr.shape} != {self.grid.node_shape}")
        return arr

    def gradient_part(self, values: np.ndarray) -> float:
        grad = cell_gradient(values, self.grid.spacing)
        return float(np.sum(self.integrand.density_from(self.cell_weights, self.cell_exponent, grad)))

    def energy(self, u) -> float:
        values = self._values(u)
        total = self.gradient_part(values)
        if self.lower_order is not None:
            total += float(np.sum(self.node_weights * self.lower_order.value(self._node_x, values)))
        return total

    def value_and_grad(self, u) -> tuple[float, np.ndarray]:
        values = self._values(u)
        h = self.grid.spacing
        grad = cell_gradient(values, h)
        f, flux = self.integrand.density_from(self.cell_weights, self.cell_exponent, grad, with_flux=True)
        total = float(np.sum(f))
        g = cell_gradient_adjoint(flux, h)
        if self.lower_order is not None:
            total += float(np.sum(self.node_weights * self.lower_order.value(self._node_x, values)))
            g = g + self.node_weights * self.lower_order.deriv(self._node_x, values)
        return total, g

    def energy_gradient(self, u, fixed: np.ndarray | None = None) -> DiscreteField:
        """Exact differential; entries at fixed (Dirichlet) or orphan nodes are zeroed."""
        values = self._values(u)
        _, g = self.value_and_grad(values)
        dead = self.node_weights == 0
        if fixed is not None:
            dead = dead | fixed
        return DiscreteField(self.grid, np.where(dead, 0.0, g))

    def stiffness(self, values: np.ndarray) -> np.ndarray:
        """Per-cell secant coefficient phi(r)/r times the cell weight (used for preconditioning)."""
        grad = cell_gradient(values, self.grid.spacing)
        ig = self.integrand
        d = ig.delta_reg
        r = np.sqrt(np.sum(grad * grad, axis=0) + d * d)
        if ig.family == "var_exponent":
            with np.errstate(divide="ignore", invalid="ignore"):
                k = np.where(r > 0, r ** (self.cell_exponent - 2), 1.0)
        else:
            prof = ig._profile()
            with np.errstate(divide="ignore", invalid="ignore"):
                k = np.where(r > 0, prof.deriv(r) / r, 1.0)
        k = np.where(np.isfinite(k), k, 1.0)
        kpos = k[self.cell_weights > 0]
        floor = 1e-3 * float(np.median(kpos)) if kpos.size else 1.0
        floor = max(floor, 1e-12)
        return self.cell_weights * np.maximum(k, floor)

    def secant_matrix(self, values: np.ndarray, shift: float = 0.0) -> sp.csr_matrix:
        """G^T diag(stiffness) G + shift * diag(lumped weights)."""
        G = gradient_matrix(self.grid)
        k = self.stiffness(values).ravel()
        W = sp.diags(np.tile(k, self.grid.ndim))
        K = (G.T @ W @ G).tocsr()
        if shift:
            K = K + sp.diags(shift * self.node_weights.ravel())
        return K.tocsr()

    def restrict(self, mask: np.ndarray) -> "EnergyFunctional":
        mask = np.asarray(mask, bool) & self.active
        return EnergyFunctional(self.integrand, self.grid, mask, self.lower_order)

    def translate(self, z) -> "EnergyFunctional":
        return EnergyFunctional(self.integrand.translate(z), self.grid, self.domain_mask, self.lower_order)

    def homothety(self, eps: float) -> "EnergyFunctional":
        return EnergyFunctional(self.integrand.homothety(eps), self.grid, self.domain_mask, self.lower_order)

    def with_grid(self, grid: Grid, domain_mask=None) -> "EnergyFunctional":
        return EnergyFunctional(self.integrand, grid, domain_mask, self.lower_order)


def energy(F: EnergyFunctional, u) -> float:
    return F.energy(u)


def energy_gradient(F: EnergyFunctional, u, fixed=None) -> DiscreteField:
    return F.energy_gradient(u, fixed)


def translate(F: EnergyFunctional, z) -> EnergyFunctional:
    return F.translate(z)


def homothety(F: EnergyFunctional, eps: float) -> EnergyFunctional:
    return F.homothety(eps)


# ----------------------------------------------------------------------------
# Yosida transform:  inf_v F(v) + (1/eps) ||u - v||_Phi
# ----------------------------------------------------------------------------


class YosidaError(RuntimeError):
    def __init__(self, msg, report=None):
        super().__init__(msg)
        self.report = report


def _norm_nfunction(F: EnergyFunctional) -> NFunction:
    ig = F.integrand
    if ig.nf is not None:
        return ig.nf
    if ig.family == "var_exponent":
        return NFunction.power(max(ig.exponent.min, 1.0 + 1e-9))
    return NFunction.power(2.0)


@dataclass(frozen=True)
class YosidaResult:
    value: float
    F_u: float
    penalized: float
    distance: float
    iterations: int
    dual_norm: float = float("nan")
    exact: bool = False


def yosida(F: EnergyFunctional, u, eps: float, tol: float = 1e-8, max_iter: int = 2000,
           smoothing: float | None = None, nf: NFunction | None = None) -> YosidaResult:
    """T_eps F(u) = inf_v F(v) + ||u - v||_Phi / eps over free fields v.

    The norm uses lumped nodal weights, so it is a genuine norm on nodal values.
    When ||DF(u)||_dual <= 1/eps the candidate v = u is optimal and F(u) is
    returned without a solve. Otherwise the penalty sqrt(N^2 + eta^2) - eta is
    minimised from v = u and the exact objective at the computed v is
    reported, capped by F(u).
    """
    from .solver import DirichletProblem, minimize, NonConvergence
    from .nfunction import orlicz_dual_norm

    if not eps > 0:
        raise InvalidInput("Yosida parameter must be positive")
    values = F._values(u)
    nf = nf or _norm_nfunction(F)
    m = F.node_weights
    live = m > 0
    wts = m[live]
    Fu, gu = F.value_and_grad(values)
    dual = orlicz_dual_norm(gu[live] / wts, wts, nf)
    if dual <= 1.0 / eps:
        return YosidaResult(Fu, Fu, Fu, 0.0, 0, dual, True)
    eta = smoothing if smoothing is not None else 1e-9 * (1.0 + abs(Fu)) * eps

    def norm_of(diff):
        return luxemburg_cells(diff[live], wts, nf)

    def penalty_value(v):
        n = norm_of(values - v)
        return (math.sqrt(n * n + eta * eta) - eta) / eps

    def penalty_grad(v):
        n, gl = luxemburg_cells_grad((values - v)[live], wts, nf)
        full = np.zeros(F.grid.node_shape)
        full[live] = gl
        return -(n / math.sqrt(n * n + eta * eta) / eps) * full

    extra = _PenaltyTerm(penalty_value, penalty_grad, curvature=1.0 / (eps * max(F.grid.volume, 1e-12)))
    problem = DirichletProblem.free(F, init=values.copy(), extra=extra)
    try:
        rep = minimize(problem, tol=tol, max_iter=max_iter)
    except NonConvergence as exc:
        raise YosidaError(f"inner Yosida solve did not converge (eps={eps})", exc.report) from exc
    v = rep.minimizer.values
    dist = norm_of(values - v)
    exact = F.energy(v) + dist / eps
    return YosidaResult(min(Fu, exact), Fu, exact, dist, rep.iterations, dual, False)


@dataclass(frozen=True)
class _PenaltyTerm:
    value: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]
    curvature: float = 0.0


# ----------------------------------------------------------------------------
# probe metric
# ----------------------------------------------------------------------------


def squash(t):
    """h(t) = t / (1 + |t|)."""
    t = np.asarray(t, dtype=float)
    return t / (1.0 + np.abs(t))


@dataclass(frozen=True)
class ProbeSet:
    """Fields w_j (callables of the coordinate array), windows B_k, Yosida parameters eps_i."""

    fields: tuple
    windows: tuple
    eps_list: tuple
    cells_per_window: int = 8

    def __post_init__(self):
        if not self.fields or not self.windows or not self.eps_list:
            raise InvalidInput("probe set needs fields, windows and eps values")

    @classmethod
    def default(cls, ndim: int = 2, count: int = 3, cells: int = 8) -> "ProbeSet":
        """Affine fields over a small p-grid plus low-frequency sinusoids; dyadic sub-windows of [0,1]^n."""
        fields = []
        for m in range(count):
            if m % 2 == 0:
                p = np.zeros(ndim)
                p[(m // 2) % ndim] = 0.5 * 2 ** (m // 2)
                fields.append(_AffineProbe(tuple(p)))
            else:
                fields.append(_SineProbe(m // 2 + 1, ndim))
        windows = [Grid.cube(np.full(ndim, 0.5), 1.0, cells)]
        side = 0.5
        while len(windows) < count:
            windows.append(Grid(tuple(np.zeros(ndim)), tuple(np.full(ndim, side)), (cells,) * ndim))
            side /= 2
        eps = tuple(1.0 / i for i in range(1, count + 1))
        return cls(tuple(fields), tuple(windows), eps, cells)


@dataclass(frozen=True)
class _AffineProbe:
    p: tuple

    def __call__(self, x):
        return np.tensordot(np.asarray(self.p), x, axes=1)


@dataclass(frozen=True)
class _SineProbe:
    mode: int
    ndim: int

    def __call__(self, x):
        return np.prod(np.sin(np.pi * self.mode * x), axis=0) / (np.pi * self.mode)


def signature(integrand: Integrand, probes: ProbeSet, lower_order=None, tol: float = 1e-8) -> np.ndarray:
    """h(T_{eps_i} F(w_j, B_k)) for every (i, j, k)."""
    I, J, K = len(probes.eps_list), len(probes.fields), len(probes.windows)
    out = np.zeros((I, J, K))
    for k, win in enumerate(probes.windows):
        F = EnergyFunctional(integrand, win, lower_order=lower_order)
        for j, w in enumerate(probes.fields):
            u = DiscreteField.from_function(win, w)
            for i, eps in enumerate(probes.eps_list):
                out[i, j, k] = float(squash(yosida(F, u, eps, tol=tol).value))
    return out


def _triple_weights(shape) -> np.ndarray:
    I, J, K = shape
    i = np.arange(1, I + 1)[:, None, None]
    j = np.arange(1, J + 1)[None, :, None]
    k = np.arange(1, K + 1)[None, None, :]
    return 2.0 ** (-(i + j + k))


def distance_from_signatures(sa: np.ndarray, sb: np.ndarray) -> float:
    if sa.shape != sb.shape:
        raise InvalidInput("signatures come from different probe sets")
    return float(np.sum(_triple_weights(sa.shape) * np.abs(sa - sb)))


def tail_bound(shape) -> float:
    """Upper bound on the dropped part of the infinite triple series (|h| < 1)."""
    return 2.0 * (1.0 - float(np.prod([1.0 - 2.0 ** (-m) for m in shape])))


class SignatureCache:
    """Memoises signatures by integrand identity so many distances reuse solves."""

    def __init__(self, probes: ProbeSet, tol: float = 1e-8):
        self.probes = probes
        self.tol = tol
        self._store: dict[int, tuple[Integrand, np.ndarray]] = {}

    def __call__(self, integrand: Integrand) -> np.ndarray:
        key = id(integrand)
        hit = self._store.get(key)
        if hit is None or hit[0] is not integrand:
            hit = (integrand, signature(integrand, self.probes, tol=self.tol))
            self._store[key] = hit
        return hit[1]


def functional_distance(F: Integrand, G: Integrand, probes: ProbeSet | None = None,
                        cache: SignatureCache | None = None) -> tuple[float, float]:
    """Truncated probe distance and the bound on the truncated tail."""
    if cache is None:
        if probes is None:
            raise InvalidInput("functional_distance needs a probe set")
        cache = SignatureCache(probes)
    sa, sb = cache(F), cache(G)
    return distance_from_signatures(sa, sb), tail_bound(sa.shape)
