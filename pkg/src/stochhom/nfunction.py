"""Young (N-) functions, their conjugates, Orlicz modulars and Luxemburg norms.

Four families are supported:

``power(p)``         Phi(t) = t**p / p
``power_log(p, s)``  Phi(t) = t**p * log(s + t) / p, with p > 1 and s >= 1
``growth_integral``  Phi(t) = G(t) = int_0^t g, for a :class:`GrowthFunction` g
``tabulated``        monotone cubic interpolation of log Phi against log t

Conjugates and Sobolev conjugates come back as tabulated objects.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate, optimize
from scipy.interpolate import PchipInterpolator

from .fields import DiscreteField, InvalidInput

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class DomainError(ValueError):
    pass


class NotApplicable(ValueError):
    pass


def _as_nonneg(t) -> np.ndarray:
    arr = np.asarray(t, dtype=float)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise DomainError("N-functions are defined on t >= 0")
    return arr


def _ret(arr, like):
    return float(arr) if np.ndim(like) == 0 else arr


# ----------------------------------------------------------------------------
# growth functions g with  delta <= t g'(t)/g(t) <= g0
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class GrowthFunction:
    name: str
    params: tuple
    g: Callable[[np.ndarray], np.ndarray]
    dg: Callable[[np.ndarray], np.ndarray]
    delta: float
    g0: float
    G_closed: Callable[[np.ndarray], np.ndarray] | None = None

    def __call__(self, t):
        t = _as_nonneg(t)
        return _ret(self.g(t), t)

    def __reduce__(self):
        # closures do not pickle; rebuild from the factory so process pools can ship it
        if self.name in _GROWTH_FACTORIES:
            return (_growth_from_factory, (self.name, self.params))
        return super().__reduce__()

    def G(self, t):
        """int_0^t g(s) ds (closed form where known, otherwise adaptive quadrature)."""
        t = _as_nonneg(t)
        if self.G_closed is not None:
            return _ret(self.G_closed(t), t)
        return _ret(self.G_quad(t), t)

    def G_quad(self, t):
        t = _as_nonneg(t)
        flat = np.atleast_1d(t).ravel()
        uniq, inv = np.unique(flat, return_inverse=True)
        vals = np.array([
            integrate.quad(self.g, 0.0, x, epsabs=1e-12, epsrel=1e-12, limit=200)[0] if x > 0 else 0.0
            for x in uniq
        ])
        return _ret(vals[inv].reshape(np.shape(t)), t)

    def log_derivative(self, t):
        """t g'(t) / g(t)."""
        t = np.asarray(t, dtype=float)
        return t * self.dg(t) / self.g(t)

    @classmethod
    def power(cls, q: float) -> "GrowthFunction":
        q = float(q)
        if q <= 0:
            raise InvalidInput("power growth needs q > 0")
        return cls(
            "power", (q,),
            g=lambda t: t**q,
            dg=lambda t: q * t ** (q - 1) if q != 1 else np.ones_like(t),
            delta=q, g0=q,
            G_closed=lambda t: t ** (q + 1) / (q + 1),
        )

    @classmethod
    def double_power(cls, a: float, b: float) -> "GrowthFunction":
        a, b = float(a), float(b)
        if not 0 < a <= b:
            raise InvalidInput("double_power growth needs 0 < a <= b")
        return cls(
            "double_power", (a, b),
            g=lambda t: t**a + t**b,
            dg=lambda t: a * t ** (a - 1) + b * t ** (b - 1),
            delta=a, g0=b,
            G_closed=lambda t: t ** (a + 1) / (a + 1) + t ** (b + 1) / (b + 1),
        )

    @classmethod
    def power_log(cls, q: float) -> "GrowthFunction":
        """g(t) = t**q log(e + t); t g'/g = q + t / ((e + t) log(e + t))."""
        q = float(q)
        if q <= 0:
            raise InvalidInput("power_log growth needs q > 0")
        bump = optimize.minimize_scalar(
            lambda s: -math.exp(s) / ((math.e + math.exp(s)) * math.log(math.e + math.exp(s))),
            bounds=(-10, 10), method="bounded",
        )
        return cls(
            "power_log", (q,),
            g=lambda t: t**q * np.log(np.e + t),
            dg=lambda t: q * t ** (q - 1) * np.log(np.e + t) + t**q / (np.e + t),
            delta=q, g0=q - float(bump.fun) + 1e-12,
        )

    def check_properties(self, t: np.ndarray, rtol: float = 1e-10) -> dict[str, bool]:
        """Sampled structural inequalities for g and G; one boolean per property."""
        t = np.asarray(t, dtype=float)
        t = t[t > 0]
        g = self.g(t)
        G = np.asarray(self.G(t))
        ld = self.log_derivative(t)
        slack = lambda x: rtol * (1.0 + np.abs(x))
        a = t[:, None]
        b = t[None, :]
        lower = np.broadcast_to(a <= b, (t.size, t.size))
        Ga, Gb = G[:, None], G[None, :]
        ga, gb = g[:, None], g[None, :]
        g2 = self.g(2 * t)
        return {
            "log_derivative_bounds": bool(np.all(ld >= self.delta - slack(ld)) and np.all(ld <= self.g0 + slack(ld))),
            "G_sandwich": bool(np.all(t * g / (1 + self.g0) <= G + slack(G)) and np.all(G <= t * g + slack(G))),
            "G_ratio": bool(np.all((Ga / Gb <= a / b + rtol * (1 + a / b))[lower])),
            "doubling": bool(np.all(g <= g2 + slack(g2)) and np.all(g2 <= 2**self.g0 * g + slack(g2))),
            "cross": bool(np.all(a * gb <= a * ga + b * gb + rtol * (1 + a * gb))),
        }


_GROWTH_FACTORIES = ("power", "double_power", "power_log")


def _growth_from_factory(name: str, params: tuple) -> GrowthFunction:
    return getattr(GrowthFunction, name)(*params)


# ----------------------------------------------------------------------------
# N-functions
# ----------------------------------------------------------------------------


class NFunction:
    """An N-function Phi with derivative phi. Instances are immutable."""

    __slots__ = ("family", "params", "certified_range", "_phi", "_dphi", "_growth", "_table")

    def __init__(self, family: str, params: dict, phi, dphi, certified_range=None, growth=None, table=None):
        object.__setattr__(self, "family", family)
        object.__setattr__(self, "params", dict(params))
        object.__setattr__(self, "certified_range", tuple(certified_range) if certified_range else None)
        object.__setattr__(self, "_phi", phi)
        object.__setattr__(self, "_dphi", dphi)
        object.__setattr__(self, "_growth", growth)
        object.__setattr__(self, "_table", table)

    def __setattr__(self, name, value):
        raise AttributeError("NFunction is immutable")

    def __repr__(self):
        return f"NFunction({self.family}, {self.params})"

    # constructors ---------------------------------------------------------
    @classmethod
    def power(cls, p: float, certified_range=None) -> "NFunction":
        p = float(p)
        if p <= 1:
            raise InvalidInput("power N-function needs p > 1")
        return cls("power", {"p": p}, lambda t: t**p / p, lambda t: t ** (p - 1), certified_range)

    @classmethod
    def power_log(cls, p: float, shift: float = math.e, certified_range=None) -> "NFunction":
        p, s = float(p), float(shift)
        if p <= 1 or s < 1:
            raise InvalidInput("power_log needs p > 1 and shift >= 1")
        return cls(
            "power_log", {"p": p, "shift": s},
            lambda t: t**p * np.log(s + t) / p,
            lambda t: t ** (p - 1) * np.log(s + t) + t**p / (p * (s + t)),
            certified_range,
        )

    @classmethod
    def growth_integral(cls, gf: GrowthFunction, certified_range=None) -> "NFunction":
        return cls(
            "growth_integral", {"g": gf.name, "g_params": list(gf.params)},
            gf.G_quad, gf.g, certified_range, growth=gf,
        )

    @classmethod
    def tabulated(cls, t, values, certified_range=None, meta: dict | None = None) -> "NFunction":
        table = _LogLogTable(np.asarray(t, dtype=float), np.asarray(values, dtype=float))
        params = {"knots": int(table.logt.size)}
        params.update(meta or {})
        return cls("tabulated", params, table.value, table.deriv, certified_range, table=table)

    @classmethod
    def from_spec(cls, spec: dict) -> "NFunction":
        family = spec["family"]
        params = spec.get("params", {}) or {}
        rng = spec.get("certified_range")
        if family == "power":
            return cls.power(params["p"], rng)
        if family == "power_log":
            return cls.power_log(params["p"], params.get("shift", math.e), rng)
        if family == "growth_integral":
            return cls.growth_integral(growth_from_spec(params), rng)
        raise InvalidInput(f"unknown N-function family {family!r}")

    # evaluation -----------------------------------------------------------
    def __call__(self, t):
        t = _as_nonneg(t)
        return _ret(self._phi(t), t)

    def deriv(self, t):
        t = _as_nonneg(t)
        return _ret(self._dphi(t), t)

    @property
    def growth(self) -> GrowthFunction | None:
        return self._growth

    @property
    def table(self):
        return self._table

    @property
    def min_exponent(self) -> float | None:
        """Lower growth exponent near 0, where it is known in closed form."""
        if self.family in ("power", "power_log"):
            return self.params["p"]
        if self.family == "growth_integral":
            return self._growth.delta + 1
        return None

    def inverse(self, y, rtol: float = 1e-12):
        """Phi^{-1} by bisection on the monotone map t -> Phi(t)."""
        y = _as_nonneg(y)
        flat = np.atleast_1d(y).astype(float).ravel()
        lo = np.zeros_like(flat)
        hi = np.ones_like(flat)
        pos = flat > 0
        for _ in range(2000):
            need = pos & (np.asarray(self._phi(hi)) < flat)
            if not need.any():
                break
            hi[need] *= 2.0
        for _ in range(400):
            mid = 0.5 * (lo + hi)
            below = np.asarray(self._phi(mid)) < flat
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
            if np.all(hi - lo <= rtol * np.maximum(hi, 1e-300)):
                break
        out = np.where(pos, 0.5 * (lo + hi), 0.0)
        return _ret(out.reshape(np.shape(y)), y)

    def to_spec(self) -> dict:
        spec = {"family": self.family, "params": dict(self.params)}
        if self.certified_range:
            spec["certified_range"] = list(self.certified_range)
        return spec


def evaluate(nf: NFunction, t):
    return nf(t)


def growth_from_spec(spec: dict) -> GrowthFunction:
    kind = spec.get("g", spec.get("family"))
    params = spec.get("g_params", spec.get("params", []))
    if isinstance(params, dict):
        params = list(params.values())
    if kind == "power":
        return GrowthFunction.power(*params)
    if kind == "double_power":
        return GrowthFunction.double_power(*params)
    if kind == "power_log":
        return GrowthFunction.power_log(*params)
    raise InvalidInput(f"unknown growth function {kind!r}")


class _LogLogTable:
    """PCHIP in (log t, log value); power-law tails fitted on the end decades."""

    def __init__(self, t: np.ndarray, values: np.ndarray):
        if t.ndim != 1 or t.size < 3 or np.any(np.diff(t) <= 0) or np.any(t <= 0):
            raise InvalidInput("tabulated knots must be positive and strictly increasing")
        if np.any(values <= 0) or np.any(np.diff(values) <= 0):
            raise InvalidInput("tabulated values must be positive and strictly increasing")
        self.t = t
        self.logt = np.log(t)
        self.logv = np.log(values)
        self.spline = PchipInterpolator(self.logt, self.logv, extrapolate=False)
        self.dspline = self.spline.derivative()
        decade = math.log(10.0)
        lo_ref = min(self.logt[0] + decade, self.logt[-1])
        hi_ref = max(self.logt[-1] - decade, self.logt[0])
        self.slope_lo = float((self.spline(lo_ref) - self.logv[0]) / (lo_ref - self.logt[0]))
        self.slope_hi = float((self.logv[-1] - self.spline(hi_ref)) / (self.logt[-1] - hi_ref))

    def _loglog(self, t: np.ndarray):
        lt = np.log(np.where(t > 0, t, 1.0))
        inside = (lt >= self.logt[0]) & (lt <= self.logt[-1])
        lv = np.empty_like(lt)
        slope = np.empty_like(lt)
        lv[inside] = self.spline(lt[inside])
        slope[inside] = self.dspline(lt[inside])
        below = lt < self.logt[0]
        above = lt > self.logt[-1]
        lv[below] = self.logv[0] + self.slope_lo * (lt[below] - self.logt[0])
        slope[below] = self.slope_lo
        lv[above] = self.logv[-1] + self.slope_hi * (lt[above] - self.logt[-1])
        slope[above] = self.slope_hi
        return lv, slope

    def value(self, t):
        t = np.asarray(t, dtype=float)
        lv, _ = self._loglog(t)
        return np.where(t > 0, np.exp(lv), 0.0)

    def deriv(self, t):
        t = np.asarray(t, dtype=float)
        lv, slope = self._loglog(t)
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.exp(lv) * slope / t
        return np.where(t > 0, d, 0.0)


# ----------------------------------------------------------------------------
# structural checks
# ----------------------------------------------------------------------------


def midpoint_convex(nf: NFunction, t_lo: float = 1e-4, t_hi: float = 1e4, n: int = 200, rtol: float = 1e-10) -> bool:
    t = np.logspace(math.log10(t_lo), math.log10(t_hi), n)
    a, b = np.meshgrid(t, t, indexing="ij")
    lhs = np.asarray(nf(0.5 * (a + b)))
    rhs = 0.5 * (np.asarray(nf(a)) + np.asarray(nf(b)))
    return bool(np.all(lhs <= rhs + rtol * (1 + np.abs(rhs))))


def check_invariants(nf: NFunction, t_lo: float = 1e-4, t_hi: float = 1e4, n: int = 200) -> dict[str, bool]:
    t = np.logspace(math.log10(t_lo), math.log10(t_hi), n)
    v = np.asarray(nf(t))
    d = np.asarray(nf.deriv(t))
    return {
        "zero_at_zero": float(nf(0.0)) == 0.0,
        "increasing": bool(np.all(np.diff(v) > 0)),
        "convex": midpoint_convex(nf, t_lo, t_hi, min(n, 60)),
        "derivative_nondecreasing": bool(np.all(np.diff(d) >= -1e-10 * (1 + np.abs(d[1:])))),
        "derivative_positive": bool(np.all(d > 0)),
    }


@dataclass(frozen=True)
class Delta2Report:
    k: float
    l: float
    beta: float
    satisfied: bool
    note: str = ""


def delta2_constant(nf: NFunction, t_lo: float, t_hi: float, samples: int = 400) -> Delta2Report:
    """Sampled doubling constant sup Phi(2t)/Phi(t) over log-spaced t in [t_lo, t_hi]."""
    if not 0 < t_lo < t_hi:
        raise InvalidInput("delta2_constant needs 0 < t_lo < t_hi")
    t = np.logspace(math.log10(t_lo), math.log10(t_hi), samples)
    with np.errstate(over="ignore", invalid="ignore"):
        ratio = np.asarray(nf(2 * t)) / np.asarray(nf(t))
    if not np.all(np.isfinite(ratio)):
        return Delta2Report(math.inf, t_lo, math.inf, False, "ratio overflowed on the sample")
    k = float(ratio.max())
    # an unbounded ratio keeps growing on the top decade
    top = t >= t_hi / 10 if t_hi / t_lo > 10 else t >= math.sqrt(t_lo * t_hi)
    lt, lr = np.log(t[top]), np.log(ratio[top])
    slope = float(np.polyfit(lt, lr, 1)[0]) if lt.size > 2 else 0.0
    growing = slope > 0.05 and ratio[-1] >= ratio[top][0]
    if growing:
        return Delta2Report(k, t_lo, math.log2(k), False, f"log-ratio still rising (slope {slope:.3g}) at top of range")
    return Delta2Report(k, t_lo, math.log2(k), True)


# ----------------------------------------------------------------------------
# complementary function
# ----------------------------------------------------------------------------


def _golden_max(h: Callable[[np.ndarray], np.ndarray], lo: np.ndarray, hi: np.ndarray, rtol=1e-13, iters=200):
    a, b = lo.copy(), hi.copy()
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    hc, hd = h(c), h(d)
    for _ in range(iters):
        left = hc >= hd
        # keep [a, d] where h(c) >= h(d), else [c, b]
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        new_c = np.where(left, b - GOLDEN * (b - a), d)
        new_d = np.where(left, c, a + GOLDEN * (b - a))
        hn_c = np.where(left, np.nan, hd)
        hn_d = np.where(left, hc, np.nan)
        c, d = new_c, new_d
        need_c = np.isnan(hn_c)
        need_d = np.isnan(hn_d)
        hc = np.where(need_c, h(c), hn_c)
        hd = np.where(need_d, h(d), hn_d)
        if np.all(b - a <= rtol * np.maximum(b, 1e-300)):
            break
    x = 0.5 * (a + b)
    return x, h(x)


def conjugate_values(nf: NFunction, v) -> tuple[np.ndarray, np.ndarray]:
    """Psi(v) = max_u [u v - Phi(u)] and the maximiser, by golden-section search."""
    v = np.atleast_1d(_as_nonneg(v)).astype(float)
    out = np.zeros_like(v)
    arg = np.zeros_like(v)
    pos = v > 0
    if not pos.any():
        return out, arg
    vv = v[pos]
    h = lambda u: u * vv - np.asarray(nf(u))
    x = np.ones_like(vv)
    hx = h(x)
    for _ in range(3000):  # bracket by doubling / halving
        h2 = h(2 * x)
        up = h2 > hx
        hhalf = h(0.5 * x)
        down = (~up) & (hhalf >= hx) & (x > 1e-300)
        if not (up.any() or down.any()):
            break
        x = np.where(up, 2 * x, np.where(down, 0.5 * x, x))
        hx = h(x)
    u, val = _golden_max(h, 0.5 * x, 2.0 * x)
    out[pos] = np.maximum(val, 0.0)
    arg[pos] = u
    return out, arg


def conjugate(nf: NFunction, v_lo: float = 1e-6, v_hi: float = 1e6, per_decade: int = 48) -> NFunction:
    """Complementary function as a tabulated N-function."""
    if not midpoint_convex(nf, 1e-3, 1e3, 60):
        raise InvalidInput("conjugate needs a convex N-function")
    n = int(round(per_decade * math.log10(v_hi / v_lo))) + 1
    v = np.logspace(math.log10(v_lo), math.log10(v_hi), n)
    psi, _ = conjugate_values(nf, v)
    keep = psi > 0
    keep[1:] &= np.diff(psi) > 0
    return NFunction.tabulated(v[keep], psi[keep], meta={"conjugate_of": nf.family, **{f"of_{k}": w for k, w in nf.params.items()}})


def export_table(nf: NFunction, path) -> None:
    """Two-column CSV (t, value) of a tabulated N-function's knots."""
    if nf.table is None:
        raise InvalidInput("only tabulated N-functions carry knots")
    t = nf.table.t
    vals = np.exp(nf.table.logv)
    with open(path, "w") as fh:
        fh.write("t,value\n")
        for a, b in zip(t, vals):
            fh.write(f"{float(a)!r},{float(b)!r}\n")


# ----------------------------------------------------------------------------
# Sobolev conjugate
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class SobolevConjugate:
    """Tabulated pair y = Phi_*^{-1}(t) = int_1^t Phi^{-1}(s) / s**e ds and its inverse."""

    exponent: float
    t_knots: np.ndarray
    y_knots: np.ndarray
    lower_integral_finite: bool
    upper_integral_divergent: bool

    def inverse(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < 1):
            raise DomainError("the tabulated Sobolev conjugate starts at t = 1")
        f = PchipInterpolator(np.log(self.t_knots), self.y_knots, extrapolate=False)
        out = f(np.log(t))
        if np.any(np.isnan(out)):
            raise DomainError("t beyond the tabulated range")
        return _ret(out, t)

    def __call__(self, y):
        y = _as_nonneg(y)
        f = PchipInterpolator(self.y_knots, np.log(self.t_knots), extrapolate=False)
        out = f(y)
        if np.any(np.isnan(out)):
            raise DomainError("value beyond the tabulated range")
        return _ret(np.exp(out), y)


def _sobolev_exponent(n: int, exponent) -> float:
    if exponent == "classical":
        return (n + 1) / n
    if exponent == "printed":
        return float(n * (n + 1))
    return float(exponent)


def sobolev_conjugate(nf: NFunction, n: int, exponent="classical", t_max: float = 1e6,
                      per_decade: int = 60, strict: bool = True) -> SobolevConjugate:
    e = _sobolev_exponent(n, exponent)
    integrand = lambda s: float(nf.inverse(s)) / s**e

    def piece(a, b):
        return integrate.quad(integrand, a, b, epsabs=0.0, epsrel=1e-12, limit=200)[0]

    # divergence probes: equal log-increments signal a non-integrable tail
    lows = [piece(1e-4, 1.0), piece(1e-8, 1e-4), piece(1e-12, 1e-8)]
    lower_finite = not (lows[2] >= 0.9 * lows[1] and lows[1] > 0)
    highs = [piece(1.0, 1e4), piece(1e4, 1e8)]
    upper_div = highs[1] >= 0.1 * highs[0]
    if strict and not lower_finite:
        raise NotApplicable(f"int_0^1 Phi^-1(t)/t^{e:g} dt diverges for {nf!r}")
    if not upper_div:
        warnings.warn("int_1^inf Phi^-1(t)/t^e dt appears finite; the conjugate is bounded", RuntimeWarning)
    m = int(round(per_decade * math.log10(t_max))) + 1
    t = np.logspace(0.0, math.log10(t_max), m)
    steps = np.array([piece(a, b) for a, b in zip(t[:-1], t[1:])])
    y = np.concatenate([[0.0], np.cumsum(steps)])
    return SobolevConjugate(e, t, y, lower_finite, upper_div)


# ----------------------------------------------------------------------------
# modular and Luxemburg norm on grid fields
# ----------------------------------------------------------------------------


def _cell_data(u: DiscreteField) -> tuple[np.ndarray, np.ndarray]:
    u.check_finite()
    vals = u.cell_values()[u.active_cells()]
    w = np.full(vals.shape, u.grid.cell_volume)
    return vals, w


def modular_cells(vals: np.ndarray, weights: np.ndarray, nf: NFunction) -> float:
    return float(np.sum(weights * np.asarray(nf(np.abs(vals)))))


def modular(u: DiscreteField, nf: NFunction) -> float:
    """Midpoint-rule integral of Phi(|u|) over the active cells."""
    vals, w = _cell_data(u)
    return modular_cells(vals, w, nf)


def luxemburg_cells(vals: np.ndarray, weights: np.ndarray, nf: NFunction, rtol: float = 1e-10) -> float:
    a = np.abs(vals)
    if not np.any(a > 0):
        return 0.0
    rho = lambda lam: modular_cells(a / lam, weights, nf)
    lo, hi = 1.0, 1.0
    while rho(hi) > 1.0:
        hi *= 2.0
    lo = hi
    while rho(lo) <= 1.0:
        lo *= 0.5
        if lo < 1e-300:
            return 0.0
    # rho(lo) > 1 >= rho(hi)
    while hi - lo > rtol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if rho(mid) > 1.0:
            lo = mid
        else:
            hi = mid
    # a few safeguarded Newton steps remove the bisection noise
    lam = hi
    for _ in range(3):
        s = a / lam
        r = modular_cells(s, weights, nf) - 1.0
        dr = -float(np.sum(weights * np.asarray(nf.deriv(s)) * s)) / lam
        if dr >= 0:
            break
        nxt = lam - r / dr
        if not lo <= nxt <= hi:
            break
        lam = nxt
    return lam


def luxemburg_norm(u: DiscreteField, nf: NFunction) -> float:
    """inf {lam > 0 : int Phi(|u|/lam) <= 1}, by bisection."""
    vals, w = _cell_data(u)
    return luxemburg_cells(vals, w, nf)


def luxemburg_cells_grad(vals: np.ndarray, weights: np.ndarray, nf: NFunction) -> tuple[float, np.ndarray]:
    """Norm and its derivative wrt the cell values (implicit differentiation of rho(u/lam) = 1)."""
    lam = luxemburg_cells(vals, weights, nf)
    if lam == 0.0:
        return 0.0, np.zeros_like(vals)
    a = np.abs(vals) / lam
    d = weights * np.asarray(nf.deriv(a))
    denom = float(np.sum(d * a))
    return lam, d * np.sign(vals) / denom


def conjugate_eval(nf: NFunction, v) -> np.ndarray:
    """Psi(v), closed form for the power family."""
    v = np.asarray(v, dtype=float)
    if nf.family == "power":
        q = nf.params["p"] / (nf.params["p"] - 1.0)
        return v**q / q
    return conjugate_values(nf, v.ravel())[0].reshape(v.shape)


def orlicz_dual_norm(xi: np.ndarray, weights: np.ndarray, nf: NFunction) -> float:
    """sup { sum w xi v : rho_Phi(v) <= 1 } = inf_k (1 + rho_Psi(k xi)) / k."""
    a = np.abs(np.asarray(xi, dtype=float))
    if not np.any(a > 0):
        return 0.0
    amax = float(a.max())

    def h(logk):
        k = math.exp(logk)
        return (1.0 + float(np.sum(weights * conjugate_eval(nf, k * a)))) / k

    centre = -math.log(amax)
    res = optimize.minimize_scalar(h, bounds=(centre - 40.0, centre + 40.0), method="bounded",
                                   options={"xatol": 1e-12})
    return float(res.fun)
