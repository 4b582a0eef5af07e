"""Run the bundled experiment configs through the ``nlsobs`` CLI.

Usage::

    python3 scripts/run_experiments.py                # every config
    python3 scripts/run_experiments.py decay gcc_cross
    python3 scripts/run_experiments.py --out results --workers 1

``gcc_*`` configs go through ``check-gcc``; the others through ``run``.
A non-zero CLI exit is reported but does not stop the remaining runs.
"""
from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from nlsobs.cli import cli_main

ROOT = Path(__file__).resolve().parent.parent
CONFIGS = ROOT / "configs"


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("names", nargs="*", help="config stems (default: all in configs/)")
    parser.add_argument("--out", default=str(ROOT / "results"), help="output directory")
    parser.add_argument("--workers", type=int, default=1)
    args = parser.parse_args(argv)

    names = args.names or sorted(p.stem for p in CONFIGS.glob("*.json"))
    worst = 0
    for name in names:
        cfg = CONFIGS / f"{name}.json"
        if name.startswith("gcc_"):
            cmd = ["check-gcc", str(cfg)]
        else:
            cmd = ["run", str(cfg), "-o", str(Path(args.out) / name), "--workers", str(args.workers)]
        t0 = time.perf_counter()
        code = cli_main(cmd)
        print(f"[{name}] exit {code} in {time.perf_counter() - t0:.1f}s", file=sys.stderr)
        worst = max(worst, code)
    return worst


if __name__ == "__main__":
    sys.exit(main())
