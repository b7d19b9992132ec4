"""Bend a test pattern along a sine band and along a perspective quad, rectify both, save PNGs.

    python3 scripts/rectify_demo.py /tmp/rectify_demo
"""

import argparse
from pathlib import Path

import numpy as np
from PIL import Image

from textkp.rectify import rectify_patch
from textkp.selftest import PERSPECTIVE_QUAD, perspective_rectification_error, sine_rectification_error
from textkp.synthgen import CurvedBand, paint, pattern_card, sine_centerline


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out_dir")
    args = ap.parse_args()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    pattern = pattern_card(10, 24.0, 24.0)
    h0, w0 = pattern.shape[:2]
    band = CurvedBand(sine_centerline(40, 120, 20, 260, 0.4, w0), h0)
    canvas = np.full((260, 340, 3), 100.0)
    paint(canvas, pattern, band.inverse, (0, 0, 340, 260), (band.length, band.height))
    bent = np.rint(canvas).astype(np.uint8)
    stations = np.linspace(0, band.length, 12)
    up = band.forward(stations, np.zeros_like(stations))
    lo = band.forward(stations, np.full_like(stations, float(h0)))
    patch = rectify_patch(bent, list(zip(map(tuple, up), map(tuple, lo)))).pixels

    Image.fromarray(np.rint(pattern).astype(np.uint8)).save(out / "pattern.png")
    Image.fromarray(bent).save(out / "sine_bent.png")
    Image.fromarray(patch).save(out / "sine_rectified.png")
    print(f"sine band: mean abs diff {sine_rectification_error():.3f}/255 against the straight pattern")
    print(f"perspective quad {PERSPECTIVE_QUAD}: mean abs diff "
          f"{perspective_rectification_error():.3f}/255 against the homography oracle")
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
