"""Experiment configuration: YAML in, validated dataclasses out, and back again."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

KINDS = ("f0", "capacity", "gamma-gap", "norms-suite", "metric-suite")
BLOCKS_NEEDED = {
    "f0": ("model", "integrand", "schedules", "seeds", "solver"),
    "capacity": ("model", "integrand", "schedules", "seeds", "solver"),
    "gamma-gap": ("model", "integrand", "schedules", "seeds", "solver"),
    "norms-suite": ("integrand", "seeds"),
    "metric-suite": ("integrand", "schedules", "seeds", "solver"),
}


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("\n".join(problems))
        self.problems = problems


@dataclass
class MediumBlock:
    kind: str = "homogeneous"
    lam: float = 1.0
    c1: float = 1.0
    c2: float = 2.0
    fraction: float = 0.25


@dataclass
class ModelBlock:
    medium: MediumBlock = field(default_factory=MediumBlock)
    a_min: float = 0.1
    scale: float = 1.0
    ndim: int = 2


@dataclass
class IntegrandBlock:
    family: str = "weighted"
    nfunction: dict = field(default_factory=lambda: {"family": "power", "params": {"p": 2.0}})
    delta_reg: float = 1e-8
    extra_nfunctions: list = field(default_factory=list)


@dataclass
class SchedulesBlock:
    p_grid: list = field(default_factory=list)
    t_schedule: list = field(default_factory=list)
    cells_per_unit: int = 8
    translations: list = field(default_factory=list)
    translation_t: float | None = None
    subadditivity: dict = field(default_factory=dict)
    b_grid: list = field(default_factory=list)
    h_schedule: list = field(default_factory=list)
    eps_power: float = 2.0
    gamma: float = 0.5
    cells: int = 32
    centers: list = field(default_factory=list)
    growth: dict = field(default_factory=lambda: {"family": "power", "params": [1.0]})
    c_bound: float = 1.0
    eps_schedule: list = field(default_factory=list)
    window: dict = field(default_factory=lambda: {"lo": [0.0, 0.0], "hi": [1.0, 1.0]})
    resolution: int | None = None
    cells_per_micro: int | None = None
    u0: dict = field(default_factory=lambda: {"kind": "affine", "p": [1.0, 0.0]})
    homogenized: dict = field(default_factory=lambda: {"f0": "exact", "c0": "zero"})
    pool_size: int = 10
    triples: int = 20
    probes: int = 3
    probe_cells: int = 8
    samples: int = 1000


@dataclass
class SeedsBlock:
    master: int = 0
    count: int = 16


@dataclass
class SolverBlock:
    tol: float = 1e-8
    max_iter: int = 1000
    capacity_tol: float = 1e-6


@dataclass
class ExperimentConfig:
    experiment: str
    model: ModelBlock | None = None
    integrand: IntegrandBlock | None = None
    schedules: SchedulesBlock | None = None
    seeds: SeedsBlock | None = None
    solver: SolverBlock | None = None
    output: str = "results"

    def to_dict(self) -> dict:
        return _drop_none(asdict(self))

    def sha256(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


def _drop_none(d):
    if isinstance(d, dict):
        return {k: _drop_none(v) for k, v in d.items() if v is not None}
    if isinstance(d, list):
        return [_drop_none(v) for v in d]
    return d


# ----------------------------------------------------------------------------
# YAML with line numbers
# ----------------------------------------------------------------------------


def _line_map(text: str) -> dict[tuple, int]:
    """Map key paths to 1-based source lines."""
    out: dict[tuple, int] = {}
    try:
        node = yaml.compose(text)
    except yaml.YAMLError:
        return out

    def walk(n, path):
        if isinstance(n, yaml.MappingNode):
            for k, v in n.value:
                p = path + (str(k.value),)
                out[p] = k.start_mark.line + 1
                walk(v, p)
        elif isinstance(n, yaml.SequenceNode):
            for i, v in enumerate(n.value):
                p = path + (i,)
                out[p] = v.start_mark.line + 1
                walk(v, p)

    if node is not None:
        walk(node, ())
    return out


class _Problems:
    def __init__(self, lines: dict, source: str):
        self.lines = lines
        self.source = source
        self.items: list[str] = []

    def add(self, path: tuple, msg: str):
        line = None
        p = tuple(path)
        while p and line is None:
            line = self.lines.get(p)
            p = p[:-1]
        where = ".".join(str(x) for x in path) or "<root>"
        loc = f"{self.source}:{line}" if line else self.source
        self.items.append(f"{loc}: {where}: {msg}")


def _build(cls, data, path, probs: _Problems):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        probs.add(path, f"expected a mapping for {cls.__name__}")
        return cls() if cls is not ExperimentConfig else None
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for k, v in data.items():
        if k not in known:
            probs.add(path + (k,), "unknown field")
            continue
        sub = {"medium": MediumBlock}.get(k) if cls is ModelBlock else None
        if sub is not None:
            kwargs[k] = _build(sub, v, path + (k,), probs)
        else:
            if isinstance(v, str) and str(known[k].type).startswith("float"):
                try:
                    v = float(v)  # YAML 1.1 reads 1e-8 as a string
                except ValueError:
                    probs.add(path + (k,), "expected a number")
            elif isinstance(v, int) and not isinstance(v, bool) and str(known[k].type).startswith("float"):
                v = float(v)
            kwargs[k] = v
    try:
        return cls(**kwargs)
    except TypeError as exc:
        probs.add(path, str(exc))
        return cls() if cls is not ExperimentConfig else None


def _increasing(xs):
    return all(b > a for a, b in zip(xs, xs[1:]))


def _decreasing(xs):
    return all(b < a for a, b in zip(xs, xs[1:]))


def _is_num(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def from_dict(data: dict, source: str = "<config>", lines: dict | None = None) -> ExperimentConfig:
    probs = _Problems(lines or {}, source)
    if not isinstance(data, dict):
        raise ConfigError([f"{source}: top level must be a mapping"])
    kind = data.get("experiment")
    if kind not in KINDS:
        probs.add(("experiment",), f"experiment must be one of {', '.join(KINDS)}")
        raise ConfigError(probs.items)
    unknown = set(data) - {f.name for f in fields(ExperimentConfig)}
    for k in sorted(unknown):
        probs.add((k,), "unknown block")
    for block in BLOCKS_NEEDED[kind]:
        if block not in data:
            probs.add((), f"missing {block} block")
    blocks = {
        "model": ModelBlock, "integrand": IntegrandBlock, "schedules": SchedulesBlock,
        "seeds": SeedsBlock, "solver": SolverBlock,
    }
    built = {}
    for name, cls in blocks.items():
        if name in data:
            built[name] = _build(cls, data[name], (name,), probs)
    cfg = ExperimentConfig(kind, output=str(data.get("output", "results")), **built)
    _check(cfg, probs)
    if probs.items:
        raise ConfigError(probs.items)
    return cfg


def _check(cfg: ExperimentConfig, probs: _Problems):
    k = cfg.experiment
    m, ig, sc, sd, so = cfg.model, cfg.integrand, cfg.schedules, cfg.seeds, cfg.solver
    if m is not None:
        if m.medium.kind not in ("homogeneous", "tubes", "balls"):
            probs.add(("model", "medium", "kind"), "must be homogeneous, tubes or balls")
        if m.medium.kind != "homogeneous" and not (_is_num(m.medium.lam) and m.medium.lam > 0):
            probs.add(("model", "medium", "lam"), "intensity must be positive")
        if m.medium.kind == "tubes" and not (0 < m.medium.c1 <= m.medium.c2):
            probs.add(("model", "medium", "c1"), "need 0 < c1 <= c2")
        if m.medium.kind == "balls" and not (0 < m.medium.fraction <= 0.25):
            probs.add(("model", "medium", "fraction"), "must lie in (0, 1/4]")
        if not (0 <= m.a_min <= 1):
            probs.add(("model", "a_min"), "must lie in [0, 1]")
        if m.ndim not in (1, 2, 3):
            probs.add(("model", "ndim"), "must be 1, 2 or 3")
    if ig is not None:
        if ig.family not in ("orlicz", "weighted", "var_exponent"):
            probs.add(("integrand", "family"), "must be orlicz, weighted or var_exponent")
        if ig.family == "var_exponent" and k in ("f0", "capacity", "gamma-gap"):
            probs.add(("integrand", "family"), "var_exponent is available through the library API only")
        nf = ig.nfunction
        if not isinstance(nf, dict) or nf.get("family") not in ("power", "power_log", "growth_integral"):
            probs.add(("integrand", "nfunction", "family"), "must be power, power_log or growth_integral")
        if not (_is_num(ig.delta_reg) and ig.delta_reg >= 0):
            probs.add(("integrand", "delta_reg"), "must be >= 0")
    if sd is not None:
        if not isinstance(sd.master, int) or sd.master < 0:
            probs.add(("seeds", "master"), "must be a nonnegative integer")
        if not isinstance(sd.count, int) or sd.count < 1:
            probs.add(("seeds", "count"), "must be a positive integer")
    if so is not None:
        if not (_is_num(so.tol) and so.tol > 0):
            probs.add(("solver", "tol"), "must be positive")
    if sc is None:
        return
    nd = m.ndim if m is not None else None
    if k == "f0":
        if not sc.p_grid:
            probs.add(("schedules", "p_grid"), "must be nonempty")
        for i, p in enumerate(sc.p_grid):
            if not isinstance(p, list) or (nd is not None and len(p) != nd):
                probs.add(("schedules", "p_grid", i), f"each p must be a list of length {nd}")
        if not sc.t_schedule:
            probs.add(("schedules", "t_schedule"), "must be nonempty")
        elif not _increasing(sc.t_schedule):
            probs.add(("schedules", "t_schedule"), "must be strictly increasing")
    if k == "capacity":
        if not sc.b_grid:
            probs.add(("schedules", "b_grid"), "must be nonempty")
        if not sc.h_schedule:
            probs.add(("schedules", "h_schedule"), "must be nonempty")
        elif not _decreasing(sc.h_schedule):
            probs.add(("schedules", "h_schedule"), "must be strictly decreasing")
        if not sc.gamma > 0:
            probs.add(("schedules", "gamma"), "must be positive")
    if k == "gamma-gap":
        if not sc.eps_schedule:
            probs.add(("schedules", "eps_schedule"), "must be nonempty")
        elif not _decreasing(sc.eps_schedule):
            probs.add(("schedules", "eps_schedule"), "must be strictly decreasing")
        if sc.resolution is None and sc.cells_per_micro is None:
            probs.add(("schedules", "resolution"), "give resolution or cells_per_micro")
        f0 = sc.homogenized.get("f0", "exact") if isinstance(sc.homogenized, dict) else None
        if f0 not in ("exact", "estimate"):
            probs.add(("schedules", "homogenized", "f0"), "must be exact or estimate")
        if f0 == "estimate":
            if not sc.p_grid:
                probs.add(("schedules", "p_grid"), "needed to estimate f0")
            if not sc.t_schedule or not _increasing(sc.t_schedule):
                probs.add(("schedules", "t_schedule"), "must be nonempty and strictly increasing")
    if k == "metric-suite":
        if sc.pool_size < 3:
            probs.add(("schedules", "pool_size"), "need at least 3 integrands")


def load(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([f"{path}: cannot read ({exc.strerror})"]) from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = f":{mark.line + 1}" if mark else ""
        raise ConfigError([f"{path}{line}: YAML syntax error"]) from exc
    return from_dict(data, str(path), _line_map(text))


def validate(path) -> list[str]:
    """Empty list for a valid file, otherwise one message per problem."""
    try:
        load(path)
    except ConfigError as exc:
        return exc.problems
    return []
