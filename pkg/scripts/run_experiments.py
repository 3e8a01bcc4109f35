"""Run every shipped experiment config and summarize the results.

    python scripts/run_experiments.py                  # all configs into results/
    python scripts/run_experiments.py --only gamma --workers 4
"""
import argparse
import sys
import time
from pathlib import Path

from stochhom.cli import main as cli

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--configs", default=str(ROOT / "configs"))
    ap.add_argument("--out", default=str(ROOT / "results"))
    ap.add_argument("--only", default="", help="substring filter on config file names")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--rows", type=int, default=10)
    args = ap.parse_args()
    codes = {}
    for cfg in sorted(Path(args.configs).glob("*.cfg")):
        if args.only not in cfg.name:
            continue
        out = Path(args.out) / cfg.stem
        t0 = time.perf_counter()
        codes[cfg.name] = cli(["run", str(cfg), "--out", str(out), "--workers", str(args.workers)])
        print(f"-- {cfg.name}: exit {codes[cfg.name]} in {time.perf_counter() - t0:.1f}s")
        if (out / "manifest.json").exists():
            cli(["report", str(out), "--rows", str(args.rows)])
    bad = {k: v for k, v in codes.items() if v}
    print(f"{len(codes) - len(bad)}/{len(codes)} experiments exited 0" + (f"; nonzero: {bad}" if bad else ""))
    return 1 if bad else 0


if __name__ == "__main__":
    sys.exit(main())
