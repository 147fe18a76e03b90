"""Inner-solver efficiency on the physical sulfation problem.

Marching the physical data (no gas, full carbonate, unit boundary gas)
produces one nonlinear system per time step and a handful of linear
systems per Newton iteration.  Each linear system is solved by W-cycles
of the boundary-aware geometric multigrid; this script prints the
distribution of the per-cycle defect-reduction factor rho and the Newton
iteration counts, which stay essentially flat in the grid size.

Run:  python3 demos/solver_efficiency.py [--N 64] [--domain circle]
"""

import argparse

import numpy as np

from sulfation2d import run_efficiency


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--N", type=int, default=64)
    parser.add_argument("--domain", default="circle",
                        choices=("circle", "square-circles"))
    args = parser.parse_args()

    print(f"physical run on the {args.domain} domain at N = {args.N}, "
          f"t in [0, 1], dt = h ...")
    rho, trace, W = run_efficiency(args.domain, args.N)

    factors = rho.rhos(include_first=False)
    print(f"\n{len(rho.rows)} W-cycles over "
          f"{len(set(r[0] for r in rho.rows))} linear systems")
    print(f"defect-reduction factor rho (first cycle of each system excluded):")
    print(f"  median {np.median(factors):.4f}   "
          f"quartiles [{np.percentile(factors, 25):.4f}, "
          f"{np.percentile(factors, 75):.4f}]   max {factors.max():.4f}")

    steps = sorted(set(r[0] for r in trace.rows))
    iters = [trace.iterations(k) for k in steps]
    print(f"Newton iterations per step: min {min(iters)}, max {max(iters)} "
          f"(cap 25, tolerance 1e-9)")
    print(f"final state: gas in [{W.s.min():.3g}, {W.s.max():.3g}], "
          f"carbonate in [{W.c.min():.3g}, {W.c.max():.3g}]")


if __name__ == "__main__":
    main()
