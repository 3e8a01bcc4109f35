"""Command line: ``stochhom validate|run|report``.

Exit codes: 0 success, 2 invalid input or configuration, 3 computation failure.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import platform
import subprocess
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import ConfigError, load
from .fields import InvalidInput
from .microstructure import RNG_NAME

EXIT_OK, EXIT_INPUT, EXIT_COMPUTE = 0, 2, 3


def version_string() -> str:
    try:
        out = subprocess.run(["git", "describe", "--tags", "--always", "--dirty"], capture_output=True, text=True,
                             cwd=Path(__file__).resolve().parent, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _sha(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def _write_failures(out_dir: Path, failures: list[dict]):
    keys = sorted({k for f in failures for k in f})
    with open(out_dir / "failures.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, keys, lineterminator="\n")
        w.writeheader()
        for f in failures:
            w.writerow({k: f.get(k, "") for k in keys})


def cmd_validate(args) -> int:
    bad = 0
    for path in args.configs:
        try:
            load(path)
            print(f"{path}: ok")
        except ConfigError as exc:
            bad += 1
            for msg in exc.problems:
                print(msg, file=sys.stderr)
    return EXIT_INPUT if bad else EXIT_OK


def cmd_run(args) -> int:
    from .experiments import RUNNERS

    try:
        cfg = load(args.config)
    except ConfigError as exc:
        for msg in exc.problems:
            print(msg, file=sys.stderr)
        return EXIT_INPUT
    if args.seed is not None:
        if cfg.seeds is None:
            print(f"{args.config}: --seed given but the config has no seeds block", file=sys.stderr)
            return EXIT_INPUT
        cfg = replace(cfg, seeds=replace(cfg.seeds, master=int(args.seed)))
    out_dir = Path(args.out or cfg.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    try:
        outcome = RUNNERS[cfg.experiment](cfg, args.workers)
    except InvalidInput as exc:
        print(f"{args.config}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001  any numerical breakdown is reported, not re-raised
        outcome = None
        failure = [{"stage": cfg.experiment, "error": f"{type(exc).__name__}: {exc}"}]
    wall = time.perf_counter() - t0
    if outcome is None:
        _write_failures(out_dir, failure)
        print(f"computation failed: {failure[0]['error']}", file=sys.stderr)
        return EXIT_COMPUTE
    for name, body in outcome.tables.items():
        (out_dir / name).write_text(body)
    manifest = {
        "experiment": cfg.experiment,
        "config_sha256": cfg.sha256(),
        "config": cfg.to_dict(),
        "version": version_string(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "rng": RNG_NAME,
        "seeds": cfg.to_dict().get("seeds"),
        "tolerances": cfg.to_dict().get("solver"),
        "workers": args.workers,
        "wall_seconds": {"total": wall, **outcome.timings},
        "files": {name: _sha(body) for name, body in sorted(outcome.tables.items())},
        "failures": len(outcome.failures),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    if outcome.failures:
        _write_failures(out_dir, outcome.failures)
        print(f"{len(outcome.failures)} task(s) failed, see {out_dir / 'failures.csv'}", file=sys.stderr)
        return EXIT_COMPUTE
    print(f"wrote {', '.join(sorted(outcome.tables))} to {out_dir}")
    return EXIT_OK


def _print_table(path: Path, max_rows: int):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        return
    cut = rows[: max_rows + 1]
    fmt = []
    for r in cut:
        cells = []
        for v in r:
            try:
                f = float(v)
                cells.append(v if v.lstrip("-").isdigit() else f"{f:.6g}")
            except ValueError:
                cells.append(v)
        fmt.append(cells)
    widths = [max(len(r[i]) for r in fmt if i < len(r)) for i in range(len(fmt[0]))]
    print(f"== {path.name} ({len(rows) - 1} rows)")
    for r in fmt:
        print("  ".join(c.rjust(w) for c, w in zip(r, widths)))
    if len(rows) > max_rows + 1:
        print(f"  ... {len(rows) - 1 - max_rows} more")


def cmd_report(args) -> int:
    d = Path(args.results)
    man = d / "manifest.json"
    if not man.exists():
        print(f"{d}: no manifest.json", file=sys.stderr)
        return EXIT_INPUT
    m = json.loads(man.read_text())
    print(f"experiment {m['experiment']}  version {m['version']}  config {m['config_sha256'][:12]}")
    print(f"rng {m['rng']}  seeds {m.get('seeds')}  workers {m['workers']}  wall {m['wall_seconds']['total']:.1f}s")
    bad = []
    for name, digest in m["files"].items():
        p = d / name
        if not p.exists() or _sha(p.read_text()) != digest:
            bad.append(name)
            continue
        _print_table(p, args.rows)
    if (d / "failures.csv").exists():
        _print_table(d / "failures.csv", args.rows)
    if bad:
        print(f"missing or modified since the run: {', '.join(bad)}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stochhom", description="Stochastic homogenization experiments.")
    ap.add_argument("--version", action="version", version=version_string())
    sub = ap.add_subparsers(dest="command", required=True)
    v = sub.add_parser("validate", help="check configuration files")
    v.add_argument("configs", nargs="+")
    v.set_defaults(func=cmd_validate)
    r = sub.add_parser("run", help="run one experiment")
    r.add_argument("config")
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--seed", type=int, default=None, help="override seeds.master")
    r.add_argument("--out", default=None, help="output directory (default: the config's output field)")
    r.set_defaults(func=cmd_run)
    p = sub.add_parser("report", help="summarize a results directory")
    p.add_argument("results")
    p.add_argument("--rows", type=int, default=20)
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "workers", 1) < 1:
        print("--workers must be at least 1", file=sys.stderr)
        return EXIT_INPUT
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
