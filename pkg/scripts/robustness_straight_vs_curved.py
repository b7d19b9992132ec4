"""F-score of curved-only vs straight-only scenes over a range of heat-map noise levels."""

import argparse
import tempfile
from pathlib import Path

from textkp.cli import RunConfig
from textkp.selftest import CURVED, STRAIGHT, run_suite


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--images", type=int, default=50)
    ap.add_argument("--noise", type=float, nargs="+", default=[0.0, 0.05, 0.1, 0.15, 0.2])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    print(f"{'sigma':>6} {'curved F':>9} {'straight F':>11} {'gap':>7}")
    with tempfile.TemporaryDirectory() as tmp:
        for k, sigma in enumerate(args.noise):
            cfg = RunConfig(seed=args.seed)
            curved, _ = run_suite(cfg, Path(tmp) / f"c{k}", args.images, CURVED, sigma, args.seed)
            straight, _ = run_suite(cfg, Path(tmp) / f"s{k}", args.images, STRAIGHT, sigma, args.seed)
            gap = curved.fscore - straight.fscore
            print(f"{sigma:6.3f} {curved.fscore:9.4f} {straight.fscore:11.4f} {gap:+7.4f}")


if __name__ == "__main__":
    main()
