"""Experiment drivers behind ``stochhom run``. Each returns CSV bodies keyed by file name."""
from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field

import numpy as np

from .config import ExperimentConfig
from .energy import CoefficientField, Integrand, ProbeSet, distance_from_signatures, signature, tail_bound
from .fields import DiscreteField, Grid
from .homogenize import (
    ConvexProfile,
    Model,
    cell_value,
    estimate_c0,
    estimate_f0,
    gamma_gap,
    homogenized_minimum,
    profile_from_table,
    subadditivity_check,
)
from .microstructure import MediumSpec, make_rng
from .nfunction import (
    NFunction,
    conjugate,
    delta2_constant,
    growth_from_spec,
    luxemburg_cells,
    modular_cells,
)
from .parallel import catching, pmap


@dataclass
class Outcome:
    tables: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def model_from(cfg: ExperimentConfig) -> Model:
    m, ig = cfg.model, cfg.integrand
    medium = MediumSpec(m.medium.kind, m.medium.lam, m.medium.c1, m.medium.c2, m.medium.fraction)
    if ig.family == "orlicz":
        medium = MediumSpec("homogeneous")
    return Model(medium, dict(ig.nfunction), m.a_min, m.scale, m.ndim, ig.delta_reg)


@dataclass(frozen=True)
class FieldSpec:
    """u0(x) = x.A.x + p.x + c with A, p read from the config."""

    p: tuple = ()
    A: tuple = ()
    c: float = 0.0

    @classmethod
    def from_dict(cls, d: dict, ndim: int) -> "FieldSpec":
        p = tuple(float(v) for v in d.get("p", [0.0] * ndim))
        A = tuple(tuple(float(v) for v in row) for row in d.get("A", []))
        return cls(p, A, float(d.get("c", 0.0)))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.full(x.shape[1:], self.c)
        if self.p:
            out = out + np.tensordot(np.asarray(self.p), x, axes=1)
        if self.A:
            A = np.asarray(self.A)
            out = out + np.einsum("i...,ij,j...->...", x, A, x)
        return out


class _Timer:
    def __init__(self, outcome: Outcome, name: str):
        self.outcome, self.name = outcome, name

    def __enter__(self):
        self.t = time.perf_counter()

    def __exit__(self, *exc):
        self.outcome.timings[self.name] = time.perf_counter() - self.t


# ----------------------------------------------------------------------------
# f0
# ----------------------------------------------------------------------------


def _translation_task(args):
    model, p, t, master, key, cpu, center, tol = args
    return cell_value(model, p, t, master, cpu, key=key, center=center, tol=tol).value


def _subadd_task(args):
    model, p, t, master, key, cpu, split, slack, tol = args
    r = subadditivity_check(model, p, t, master, cpu, split=split, key=key, slack_constant=slack, tol=tol)
    return r.whole, sum(r.parts), r.slack, int(r.holds)


def run_f0(cfg: ExperimentConfig, workers: int) -> Outcome:
    out = Outcome()
    sc, sd, so = cfg.schedules, cfg.seeds, cfg.solver
    model = model_from(cfg)
    with _Timer(out, "f0"):
        tab = estimate_f0(model, sc.p_grid, sc.t_schedule, sd.count, sd.master, sc.cells_per_unit,
                          workers, so.tol, so.max_iter)
    out.tables["f0_raw.csv"] = tab.raw_csv()
    out.tables["f0_table.csv"] = tab.to_csv()
    conv = tab.convexity_report()
    out.tables["f0_convexity.csv"] = _csv(["i", "j", "k", "mid", "chord", "slack", "ok"],
                                          [[r["i"], r["j"], r["k"], r["mid"], r["chord"], r["slack"], int(r["ok"])] for r in conv])
    out.failures += [dict(f, stage="f0") for f in tab.failures]
    if sc.translations:
        t = float(sc.translation_t or sc.t_schedule[0])
        p = tuple(sc.p_grid[-1])
        tasks, idx = [], []
        for zi, z in enumerate([[0.0] * model.ndim] + list(sc.translations)):
            for s in range(sd.count):
                tasks.append((model, p, t, sd.master, (1000 + zi, s), sc.cells_per_unit, tuple(z), so.tol))
                idx.append((zi, tuple(z)))
        with _Timer(out, "translations"):
            res = pmap(catching(_translation_task), tasks, workers)
        rows = []
        for zi in range(len(sc.translations) + 1):
            vals = np.array([v for (j, _), (v, e) in zip(idx, res) if j == zi and e is None])
            z = [z for (j, z) in idx if j == zi][0]
            rows.append(list(z) + [vals.mean(), vals.std(ddof=1) / np.sqrt(vals.size), vals.size])
        out.failures += [{"stage": "translation", "error": e} for _, e in res if e is not None]
        out.tables["f0_translation.csv"] = _csv([f"z{k}" for k in range(model.ndim)] + ["mean", "stderr", "n"], rows)
    sub = sc.subadditivity or {}
    if sub:
        t = float(sub.get("t", sc.t_schedule[0]))
        trials = int(sub.get("trials", 40))
        split = int(sub.get("split", 2))
        slack = float(sub.get("slack_constant", 1e-6))
        plist = [tuple(p) for p in sc.p_grid if any(v != 0 for v in p)] or [tuple(sc.p_grid[0])]
        tasks = []
        for n in range(trials):
            p = plist[n % len(plist)]
            tasks.append((model, p, t, sd.master, (2000, n), sc.cells_per_unit, split, slack, so.tol))
        with _Timer(out, "subadditivity"):
            res = pmap(catching(_subadd_task), tasks, workers)
        rows = []
        for n, (task, (v, e)) in enumerate(zip(tasks, res)):
            if e is None:
                rows.append([n] + list(task[1]) + list(v))
            else:
                out.failures.append({"stage": "subadditivity", "trial": n, "error": e})
        out.tables["f0_subadditivity.csv"] = _csv(
            ["trial"] + [f"p{k}" for k in range(model.ndim)] + ["whole", "parts", "slack", "holds"], rows)
    return out


# ----------------------------------------------------------------------------
# capacity
# ----------------------------------------------------------------------------


def run_capacity(cfg: ExperimentConfig, workers: int) -> Outcome:
    out = Outcome()
    sc, sd, so = cfg.schedules, cfg.seeds, cfg.solver
    model = model_from(cfg)
    G = growth_from_spec(sc.growth)
    with _Timer(out, "capacity"):
        est = estimate_c0(model, G, sc.b_grid, sc.h_schedule, sd.count, sd.master, sc.gamma, sc.eps_power,
                          sc.centers or None, sc.cells, sc.c_bound, workers, so.capacity_tol)
    out.tables["capacity.csv"] = est.to_csv()
    out.tables["c0.csv"] = est.summary_csv()
    out.failures += [dict(f, stage="capacity") for f in est.failures]
    return out


# ----------------------------------------------------------------------------
# gamma gap
# ----------------------------------------------------------------------------


def exact_profile(model: Model, r_max: float = 8.0, knots: int = 257) -> ConvexProfile:
    r = np.linspace(0.0, r_max, knots)
    return ConvexProfile(r, [model.phi(v) for v in r])


def run_gamma_gap(cfg: ExperimentConfig, workers: int) -> Outcome:
    out = Outcome()
    sc, sd, so = cfg.schedules, cfg.seeds, cfg.solver
    model = model_from(cfg)
    hom_cfg = sc.homogenized or {}
    if hom_cfg.get("f0", "exact") == "estimate":
        with _Timer(out, "f0"):
            tab = estimate_f0(model, sc.p_grid, sc.t_schedule, sd.count, sd.master + 1, sc.cells_per_unit,
                              workers, so.tol, so.max_iter)
        out.tables["f0_table.csv"] = tab.to_csv()
        out.failures += [dict(f, stage="f0") for f in tab.failures]
        prof = profile_from_table(tab)
    else:
        prof = exact_profile(Model(MediumSpec("homogeneous"), model.nfunction, 1.0, model.scale, model.ndim,
                                   model.delta_reg))
    u0 = FieldSpec.from_dict(sc.u0, model.ndim)
    lo, hi = sc.window["lo"], sc.window["hi"]
    res = sc.resolution or 64
    with _Timer(out, "homogenized"):
        hom = homogenized_minimum(prof, Grid(tuple(lo), tuple(hi), (int(res),) * model.ndim), u0, tol=so.tol).value
    with _Timer(out, "fine_scale"):
        rep = gamma_gap(model, u0, lo, hi, sc.eps_schedule, sd.count, sd.master, hom,
                        cells_per_micro=sc.cells_per_micro, resolution=sc.resolution, workers=workers, tol=so.tol)
    out.tables["gamma_gap.csv"] = rep.to_csv()
    rows = [[rep.eps_schedule[k], s, rep.minima[k, s]] for k in range(len(rep.eps_schedule))
            for s in range(rep.minima.shape[1])]
    out.tables["gamma_raw.csv"] = _csv(["eps", "seed_index", "minimum"], rows)
    out.failures += [dict(f, stage="gamma") for f in rep.failures]
    return out


# ----------------------------------------------------------------------------
# norms suite
# ----------------------------------------------------------------------------


def norm_checks(nf: NFunction, rng: np.random.Generator, samples: int = 1000, cells: int = 16) -> list[tuple]:
    """(check, measured, passed) triples for one N-function."""
    rows = []
    psi = conjugate(nf)
    u = rng.uniform(0, 100, samples)
    v = rng.uniform(0, 100, samples)
    slack = np.asarray(nf(u)) + np.asarray(psi(v)) - u * v + 1e-9 * (1 + u * v)
    rows.append(("young_min_slack", float(slack.min()), bool(slack.min() >= 0)))
    w = np.full(cells * cells, 1.0 / (cells * cells))
    worst21 = worst22 = worst_h2 = -np.inf
    h1_viol = 0
    unit_err = 0.0
    for _ in range(20):
        a = rng.normal(0, rng.uniform(0.1, 3.0), w.size)
        b = rng.normal(0, rng.uniform(0.1, 3.0), w.size)
        na = luxemburg_cells(a, w, nf)
        ra = modular_cells(a, w, nf)
        worst21 = max(worst21, na - (ra + 1.0))
        if na <= 1:
            worst22 = max(worst22, ra - na)
        nb = luxemburg_cells(b, w, psi)
        lhs = abs(float(np.sum(w * a * b)))
        worst_h2 = max(worst_h2, lhs - 2 * na * nb)
        h1_viol += int(lhs > na * nb)
        unit_err = max(unit_err, abs(modular_cells(a / na, w, nf) - 1.0))
    rows.append(("norm_le_modular_plus_one", worst21, bool(worst21 <= 1e-12)))
    rows.append(("modular_le_norm_inside_ball", worst22 if np.isfinite(worst22) else 0.0,
                 bool(not np.isfinite(worst22) or worst22 <= 1e-12)))
    rows.append(("holder_factor_two", worst_h2, bool(worst_h2 <= 1e-12)))
    rows.append(("holder_factor_one_violations", float(h1_viol), True))
    rows.append(("unit_modular_identity", unit_err, bool(unit_err <= 1e-8)))
    if nf.family == "power":
        p = nf.params["p"]
        lp_err = 0.0
        for _ in range(10):
            a = rng.normal(0, 1, w.size)
            lam = luxemburg_cells(a, w, NFunction.power(p))
            exact = (np.sum(w * np.abs(a) ** p) / p) ** (1 / p)  # rho(u/lam) = 1 for t^p/p
            lp_err = max(lp_err, abs(lam / exact - 1))
        rows.append(("luxemburg_vs_lp", lp_err, bool(lp_err <= 1e-8)))
        vv = np.logspace(-2, 2, 100)
        q = p / (p - 1)
        cerr = float(np.max(np.abs(np.asarray(psi(vv)) / (vv**q / q) - 1)))
        rows.append(("conjugate_closed_form", cerr, bool(cerr <= 1e-6)))
        rep = delta2_constant(nf, 1e-3, 1e3)
        rows.append(("delta2_constant_error", abs(rep.k - 2**p), bool(abs(rep.k - 2**p) <= 1e-12 * 2**p)))
    return rows


def run_norms(cfg: ExperimentConfig, workers: int) -> Outcome:
    out = Outcome()
    specs = [cfg.integrand.nfunction] + list(cfg.integrand.extra_nfunctions)
    samples = cfg.schedules.samples if cfg.schedules else 1000
    rows = []
    with _Timer(out, "norms"):
        for i, spec in enumerate(specs):
            nf = NFunction.from_spec(spec)
            rng = make_rng(cfg.seeds.master, 3, i)
            label = f"{nf.family}:" + ",".join(f"{k}={v}" for k, v in sorted(nf.params.items()))
            for name, val, ok in norm_checks(nf, rng, samples):
                rows.append([label, name, float(val), int(ok)])
    out.tables["norms.csv"] = _csv(["nfunction", "check", "value", "passed"], rows)
    return out


# ----------------------------------------------------------------------------
# metric suite
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class PoolMember:
    p: float
    coeff: tuple
    scale: float


def integrand_pool(master: int, size: int, ndim: int = 2, coeff_cells: int = 4) -> list[PoolMember]:
    rng = make_rng(master, 11)
    out = []
    for _ in range(size):
        p = float(rng.choice([2.0, 3.0]))
        a = rng.uniform(0.5, 2.0, (coeff_cells,) * ndim)
        out.append(PoolMember(p, tuple(a.ravel().tolist()), float(rng.uniform(0.5, 1.5))))
    return out


def member_integrand(m: PoolMember, ndim: int = 2, coeff_cells: int = 4) -> Integrand:
    grid = Grid((0.0,) * ndim, (1.0,) * ndim, (coeff_cells,) * ndim)
    coeff = CoefficientField(grid, np.array(m.coeff).reshape((coeff_cells,) * ndim))
    return Integrand.weighted(NFunction.power(m.p), coeff, m.scale)


def _signature_task(args):
    member, probes_n, cells, tol = args
    probes = ProbeSet.default(2, probes_n, cells)
    return signature(member_integrand(member), probes, tol=tol)


def run_metric(cfg: ExperimentConfig, workers: int) -> Outcome:
    out = Outcome()
    sc, sd, so = cfg.schedules, cfg.seeds, cfg.solver
    pool = integrand_pool(sd.master, sc.pool_size)
    tasks = [(m, sc.probes, sc.probe_cells, so.tol) for m in pool]
    with _Timer(out, "signatures"):
        res = pmap(catching(_signature_task), tasks, workers)
    sigs = []
    for i, (s, e) in enumerate(res):
        if e is not None:
            out.failures.append({"stage": "signature", "member": i, "error": e})
        sigs.append(s)
    if out.failures:
        return out
    rng = make_rng(sd.master, 12)
    rows = []
    tail = tail_bound(sigs[0].shape)
    for n in range(sc.triples):
        i, j, k = (int(v) for v in rng.choice(len(pool), 3, replace=False))
        dij = distance_from_signatures(sigs[i], sigs[j])
        dji = distance_from_signatures(sigs[j], sigs[i])
        djk = distance_from_signatures(sigs[j], sigs[k])
        dik = distance_from_signatures(sigs[i], sigs[k])
        dii = distance_from_signatures(sigs[i], sigs[i])
        rows.append([n, i, j, k, dij, djk, dik, dii, int(dij == dji), int(dik <= dij + djk + 1e-9), tail])
    out.tables["metric.csv"] = _csv(
        ["triple", "i", "j", "k", "d_ij", "d_jk", "d_ik", "d_ii", "symmetric", "triangle", "tail_bound"], rows)
    return out


RUNNERS = {
    "f0": run_f0,
    "capacity": run_capacity,
    "gamma-gap": run_gamma_gap,
    "norms-suite": run_norms,
    "metric-suite": run_metric,
}
