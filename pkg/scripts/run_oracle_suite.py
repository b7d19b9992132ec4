"""Synthesize a suite, render oracle stacks, detect and evaluate it.

    python3 scripts/run_oracle_suite.py --images 50 --noise 0.05 --out /tmp/oracle
"""

import argparse
import json
import tempfile
from pathlib import Path

from textkp.cli import RunConfig
from textkp.selftest import run_suite


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--images", type=int, default=50)
    ap.add_argument("--noise", type=float, default=0.0)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--shapes", default="rect,rotated,perspective,sine")
    ap.add_argument("--out", help="keep intermediate files here (default: a temp dir)")
    args = ap.parse_args()

    mix = {s.strip(): 1.0 for s in args.shapes.split(",") if s.strip()}
    with tempfile.TemporaryDirectory() as tmp:
        work = Path(args.out or tmp)
        rep, secs = run_suite(RunConfig(seed=args.seed), work, args.images, mix, args.noise, args.seed)
    summary = rep.summary()
    summary["seconds"] = round(secs, 2)
    print(json.dumps(summary, sort_keys=True))


if __name__ == "__main__":
    main()
