"""Command-line front end.

Subcommands:

* ``accuracy``   -- manufactured-solution convergence sweep (test 1|2|1n|2n)
* ``efficiency`` -- per-cycle defect-ratio trace of a physical run (test 3|4)
* ``geometry``   -- physical run on an image-defined domain with snapshots
* ``solve``      -- free-form physical run on a named domain or image

All runs read model constants from an optional INI config file (section
``[model]``) and write deterministic CSV artifacts under an output
directory, chosen by (in increasing precedence) the config ``[output]``
section, the SULFATION2D_OUTDIR environment variable, and the --out-dir
flag.
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys

from .discretization import DIRICHLET, NEUMANN, ModelParams
from .errors import SulfationError
from .geometry import CartesianGrid, ProblemGeometry, image_to_levelset, \
    load_raster
from .harness import (DEFAULT_SIZES, DOMAINS, manufactured_case,
                      physical_data, run_accuracy, run_efficiency,
                      run_geometry)
from .fields_io import write_field
from .newton import DEFAULT_SNAPSHOT_TIMES, march

ACCURACY_TESTS = {
    "1": ("circle", DIRICHLET),
    "2": ("square-circles", DIRICHLET),
    "1n": ("circle", NEUMANN),
    "2n": ("square-circles", NEUMANN),
}
EFFICIENCY_TESTS = {"3": "circle", "4": "square-circles"}

MODEL_DEFAULTS = {
    "a": 1.0e4, "d": 0.1, "m_s": 64.06, "m_c": 100.09,
    "alpha": 0.01, "beta": 0.1, "s_b": 1.0, "c0": 10.0, "s0": 0.0,
}

OUTDIR_ENV = "SULFATION2D_OUTDIR"


def _load_config(path):
    """Flat INI config; parse errors are reported with line numbers."""
    parser = configparser.ConfigParser()
    if path is None:
        return parser
    try:
        with open(path) as fh:
            parser.read_file(fh, source=path)
    except OSError as err:
        raise SystemExit(f"cannot read config {path}: {err}")
    except configparser.Error as err:
        raise SystemExit(f"config error: {err}")
    return parser


def _model_values(config):
    values = dict(MODEL_DEFAULTS)
    if config.has_section("model"):
        for key in config["model"]:
            if key not in values:
                raise SystemExit(f"config error: unknown model key {key!r}")
            values[key] = config.getfloat("model", key)
    return values


def _model_params(values, bc=DIRICHLET):
    return ModelParams(a=values["a"], d=values["d"], m_s=values["m_s"],
                       m_c=values["m_c"], alpha=values["alpha"],
                       beta=values["beta"], s_b=values["s_b"], bc=bc)


def _out_dir(args, config):
    out = "."
    if config.has_option("output", "directory"):
        out = config.get("output", "directory")
    out = os.environ.get(OUTDIR_ENV, out)
    if args.out_dir is not None:
        out = args.out_dir
    os.makedirs(out, exist_ok=True)
    return out


def _parse_sizes(text):
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise SystemExit(f"bad sizes list {text!r}; expected e.g. 16,32,64")


def _parse_times(text):
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise SystemExit(f"bad time list {text!r}; expected e.g. 0.25,0.5")


def _cmd_accuracy(args, config, out):
    domain, bc = ACCURACY_TESTS[args.test]
    base = _model_params(_model_values(config))
    case = manufactured_case(domain, bc, base)
    report = run_accuracy(case, args.sizes)
    path = os.path.join(out, f"accuracy_{args.test}.csv")
    report.write_csv(path)
    orders = ", ".join(
        f"{name}={report.fitted_order(name, 'l1'):.2f}"
        for name in ("s", "c", "grad_s", "grad_c"))
    print(f"accuracy test {args.test}: sizes {list(args.sizes)}, "
          f"fitted L1 orders {orders} -> {path}")


def _cmd_efficiency(args, config, out):
    domain = EFFICIENCY_TESTS[args.test]
    values = _model_values(config)
    rho, trace, _ = run_efficiency(domain, args.n,
                                   params=_model_params(values))
    rho_path = os.path.join(out, f"rho_trace_{args.test}_N{args.n}.csv")
    rho.write_csv(rho_path)
    newton_path = os.path.join(out, f"newton_trace_{args.test}_N{args.n}.csv")
    trace.write_csv(newton_path)
    factors = rho.rhos()
    import numpy as np
    print(f"efficiency test {args.test}: N={args.n}, "
          f"{factors.size} cycles, median rho "
          f"{float(np.median(factors)):.3f} -> {rho_path}")


def _cmd_geometry(args, config, out):
    values = _model_values(config)
    paths, _, trace = run_geometry(args.image, args.n, args.snapshots,
                                   out_dir=out,
                                   params=_model_params(values))
    print(f"geometry {os.path.basename(args.image)}: N={args.n}, "
          f"{trace.iterations()} Newton iterations, "
          f"{len(paths)} artifacts under {out}")


def _cmd_solve(args, config, out):
    values = _model_values(config)
    bc = args.bc
    params = _model_params(values, bc)
    grid = CartesianGrid(2.0, args.n)
    if args.image is not None:
        phi = image_to_levelset(load_raster(args.image), grid)
        geom = ProblemGeometry.build(grid, phi)
        name = os.path.splitext(os.path.basename(args.image))[0]
    else:
        geom = ProblemGeometry.build(grid, DOMAINS[args.domain])
        name = args.domain
    dt = grid.h
    n_steps = max(1, int(round(args.t_final / dt)))
    W0 = physical_data(geom, values["s0"], values["c0"])
    W, trace, _ = march(W0, params, geom, dt, n_steps)
    paths = []
    for label, vec in (("s", W.s), ("c", W.c)):
        path = os.path.join(out, f"solve_{name}_{label}.csv")
        write_field(grid, geom.classification, vec, path)
        paths.append(path)
    print(f"solve {name}: N={args.n}, t={W.t:.6g}, "
          f"{trace.iterations()} Newton iterations -> {', '.join(paths)}")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sulfation2d",
        description="Finite-difference solver for gas/carbonate reaction-"
                    "diffusion on level-set domains")
    parser.add_argument("--config", help="INI config file")
    parser.add_argument("--out-dir", help="artifact directory "
                        f"(overrides config and ${OUTDIR_ENV})")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("accuracy", help="manufactured-solution sweep")
    p.add_argument("--test", choices=sorted(ACCURACY_TESTS), required=True)
    p.add_argument("--sizes", type=_parse_sizes, default=DEFAULT_SIZES,
                   help="comma-separated grid sizes (default 16..256)")
    p.set_defaults(func=_cmd_accuracy)

    p = sub.add_parser("efficiency", help="defect-ratio trace")
    p.add_argument("--test", choices=sorted(EFFICIENCY_TESTS), required=True)
    p.add_argument("--N", dest="n", type=int, default=64)
    p.set_defaults(func=_cmd_efficiency)

    p = sub.add_parser("geometry", help="image-defined domain run")
    p.add_argument("--image", required=True, help="PGM/PNG raster, dark = inside")
    p.add_argument("--N", dest="n", type=int, default=512)
    p.add_argument("--snapshots", type=_parse_times,
                   default=DEFAULT_SNAPSHOT_TIMES)
    p.set_defaults(func=_cmd_geometry)

    p = sub.add_parser("solve", help="free-form physical run")
    p.add_argument("--domain", choices=sorted(DOMAINS), default="circle")
    p.add_argument("--image", help="raster domain instead of --domain")
    p.add_argument("--bc", choices=(DIRICHLET, NEUMANN), default=DIRICHLET)
    p.add_argument("--N", dest="n", type=int, default=64)
    p.add_argument("--t-final", type=float, default=1.0)
    p.set_defaults(func=_cmd_solve)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    config = _load_config(args.config)
    out = _out_dir(args, config)
    try:
        args.func(args, config, out)
    except SulfationError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
