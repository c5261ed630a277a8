"""Run every experiment config in scripts/configs and write artifacts under an output root.

    python scripts/reproduce_all.py --out results [--skip-slow]
"""
import argparse
import sys
import time
from pathlib import Path

from rdpoison.cli import main as cli_main

HERE = Path(__file__).resolve().parent
SLOW = {"blockworld_qlearning"}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="results")
    parser.add_argument("--skip-slow", action="store_true", help="skip the Q-learning run (about a minute)")
    args = parser.parse_args(argv)
    status = 0
    for cfg in sorted((HERE / "configs").glob("*.json")):
        if args.skip_slow and cfg.stem in SLOW:
            print(f"skipping {cfg.stem}")
            continue
        start = time.perf_counter()
        code = cli_main(["run", "--config", str(cfg), "--out", str(Path(args.out) / cfg.stem)])
        print(f"{cfg.stem}: exit {code} in {time.perf_counter() - start:.1f}s\n")
        status = max(status, code)
    return status


if __name__ == "__main__":
    sys.exit(main())
