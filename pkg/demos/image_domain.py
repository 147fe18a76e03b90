"""Sulfation of an image-defined marble cross-section.

Any binary raster (dark = stone) can serve as the computational domain:
the image is resampled to the grid, mollified into a level set,
reinitialised towards a signed distance function, and the physical
problem is marched on the resulting geometry.  The script synthesises a
notched-square specimen, runs to t = 1 and reports how the gypsum front
(the c = 5 iso-contour of the carbonate density) advances inward --
fastest along the notch, where the gas attacks from three sides.

Run:  python3 demos/image_domain.py [--N 128] [--out-dir demo_artifacts]
"""

import argparse

import numpy as np

from sulfation2d import run_geometry


def notched_square_raster(pixels: int = 512) -> np.ndarray:
    """Dark square with a light channel cut into its top edge."""
    img = np.ones((pixels, pixels))
    lo, hi = round(0.1875 * pixels), round(0.8125 * pixels)
    img[lo:hi, lo:hi] = 0.0
    mid, half = pixels // 2, round(0.078 * pixels)
    img[lo:mid, mid - half:mid + half] = 1.0
    return img


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--N", type=int, default=128)
    parser.add_argument("--out-dir", default="demo_artifacts")
    args = parser.parse_args()

    image = notched_square_raster()
    print(f"marching the notched-square specimen at N = {args.N} ...")
    paths, snapshots, trace = run_geometry(image, args.N,
                                           snapshot_times=(0.25, 0.5, 0.75, 1.0),
                                           out_dir=args.out_dir)

    print(f"\n{trace.iterations()} Newton iterations over "
          f"{len(set(r[0] for r in trace.rows))} time steps")
    print("sulfated fraction of the specimen (carbonate below half strength):")
    first = min(snapshots)
    total = snapshots[first].c.size
    for t in sorted(snapshots):
        frac = (snapshots[t].c < 5.0).sum() / total
        print(f"  t = {t:4.2f}:  {100.0 * frac:5.1f} %")
    print(f"\nfield dumps and front contours written to: {args.out_dir}/")
    for p in paths:
        print(f"  {p}")


if __name__ == "__main__":
    main()
