"""Command-line interface: ``hemorom <subcommand> ...``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 I/O error.
"""

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import windkessel as wk
from .config import Config, load_config
from .errors import BundleError, ConfigError, NumericalError
from .fom import SnapshotDatabase, read_manifest, run_fom
from .nn import save_model
from .pipeline import (
    StageError,
    load_bundle,
    parse_times,
    read_errors_csv,
    run_offline,
    run_online,
    summarize,
    train_outflow_nn,
    write_report,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4
WK_DTS = (1e-3, 5e-4, 2.5e-4, 1.25e-4)
FIRST_ORDER = (1.7, 2.3)


def _config(path):
    return load_config(path) if path else Config()


def cmd_fom(args):
    cfg = _config(args.config)
    out = Path(args.out) if args.out else cfg.path("paths.fom_dir")
    db = run_fom(cfg, out_dir=out)
    print(f"wrote {len(db.times)} snapshots to {out} ({db.wall_time:.3g} s)")
    return EXIT_OK


def cmd_offline(args):
    cfg = _config(args.config)
    bundle, timings = run_offline(cfg, with_fom=args.with_fom,
                                  bundle_dir=Path(args.bundle) if args.bundle else None)
    for name, sec in timings.items():
        print(f"{name:<20s} {sec:8.3f} s")
    print(f"bundle written to {bundle}")
    return EXIT_OK


def cmd_online(args):
    bundle = load_bundle(args.bundle)
    times = parse_times(args.times)
    result = run_online(bundle, times, args.stab, fom_dir=args.fom)
    out = Path(args.out) if args.out else bundle.config.path("paths.out_dir")
    print(write_report(out, result, bundle))
    _save_coefficients(out, result)
    return EXIT_OK


def _save_coefficients(out, result):
    tr = result.trajectory
    cols = [tr.times[:, None], tr.g_u[:, None], tr.g_p, tr.a, tr.b]
    header = "t g_u " + " ".join(
        [f"g_p_{j}" for j in range(tr.g_p.shape[1])]
        + [f"a_{k}" for k in range(tr.a.shape[1])]
        + [f"b_{k}" for k in range(tr.b.shape[1])]
    )
    np.savetxt(out / "coefficients.txt", np.hstack(cols), fmt="%.17g", header=header)


def cmd_train_nn(args):
    cfg = _config(args.config)
    records = read_manifest(args.manifest)
    if not records:
        raise BundleError(f"{args.manifest} lists no snapshots")
    t = np.array([r["t"] for r in records])
    g_p = np.array([r["g_p"] for r in records])
    start = time.perf_counter()
    reg = train_outflow_nn(cfg, t, g_p)
    save_model(reg, args.out)
    print(f"trained on {len(reg.train_idx_)} samples, tested on {len(reg.test_idx_)} "
          f"in {time.perf_counter() - start:.3g} s")
    test = reg.test_loss_[:, -1].max() if reg.test_loss_.size else float("nan")
    print(f"final MSE (normalized, worst network): train {reg.train_loss_[:, -1].max():.4g}, "
          f"test {test:.4g}")
    return EXIT_OK


def cmd_wk_check(args):
    cfg = _config(args.config)
    params = cfg.windkessel()[0]
    u0 = cfg["inlet.u0"]
    radius = cfg["mesh.radius"]
    area = np.pi * radius ** 2 if args.area is None else args.area
    dts = [float(x) for x in args.dts.split(",")] if args.dts else list(WK_DTS)
    start = time.perf_counter()
    errors, ratios = wk.convergence_study(
        dts, params, u0, area, t_end=args.t_end, reference=args.reference, radius=radius,
        decaying_exponential=cfg["wk.analytic_decaying_exponential"],
    )
    elapsed = time.perf_counter() - start
    print(f"reference: {args.reference}; area {area:.6g} m^2")
    print(f"{'dt':>12s} {'max error':>14s} {'ratio':>8s}")
    for k, (dt, err) in enumerate(zip(dts, errors)):
        ratio = "" if k == 0 else f"{ratios[k - 1]:8.4f}"
        print(f"{dt:12.6g} {err:14.6e} {ratio}")
    ok = bool(np.all((ratios >= FIRST_ORDER[0]) & (ratios <= FIRST_ORDER[1])))
    print(f"first order: {'yes' if ok else 'NO'} ({elapsed:.3f} s)")
    return EXIT_OK if ok else EXIT_NUMERICAL


def cmd_report(args):
    out = Path(args.out)
    path = out / "errors.csv"
    data = read_errors_csv(path)
    n = len(data["t"])
    print(f"{path}: {n} time(s)")
    if n:
        for key in ("eps_u", "eps_p", "proj_u", "proj_p"):
            print(f"  mean {key:<7s} {np.mean(data[key]):.6g}   max {np.max(data[key]):.6g}")
        ok = np.all(data["eps_u"] >= data["proj_u"] * (1 - 1e-10)) and np.all(
            data["eps_p"] >= data["proj_p"] * (1 - 1e-10))
        print("  reconstruction >= projection error: " + ("yes" if ok else "NO"))
    timings = out / "timings.txt"
    if timings.exists():
        print(timings.read_text().rstrip())
    if args.bundle:
        bundle = load_bundle(args.bundle)
        print(f"bundle {bundle.path}: N_u = {bundle.info['n_modes_u']}, "
              f"N_p = {bundle.info['n_modes_p']}, supremizers = {bundle.info['n_supremizers']}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="hemorom", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fom", help="run the full-order solver and store snapshots")
    p.add_argument("--config")
    p.add_argument("--out", help="snapshot directory (default: paths.fom_dir)")
    p.set_defaults(func=cmd_fom)

    p = sub.add_parser("offline", help="build the reduced-order bundle")
    p.add_argument("--config")
    p.add_argument("--with-fom", action="store_true", help="run the full-order solver first")
    p.add_argument("--bundle", help="bundle directory (default: paths.bundle_dir)")
    p.set_defaults(func=cmd_offline)

    p = sub.add_parser("online", help="evaluate the reduced model at given times")
    p.add_argument("--bundle", required=True)
    p.add_argument("--times", required=True, help="comma separated list or a file of times")
    p.add_argument("--stab", choices=("sup", "ppe"))
    p.add_argument("--fom", help="snapshot directory for the error report")
    p.add_argument("--out", help="output directory (default: paths.out_dir)")
    p.set_defaults(func=cmd_online)

    p = sub.add_parser("train-nn", help="train the outflow-pressure network on a snapshot manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.set_defaults(func=cmd_train_nn)

    p = sub.add_parser("wk-check", help="Windkessel time-step convergence study")
    p.add_argument("--config")
    p.add_argument("--reference", choices=("published", "exact"), default="published")
    p.add_argument("--dts", help="comma separated time steps")
    p.add_argument("--area", type=float, help="outlet area (default: pi R^2)")
    p.add_argument("--t-end", type=float, default=1.0)
    p.set_defaults(func=cmd_wk_check)

    p = sub.add_parser("report", help="summarize a written online report")
    p.add_argument("--out", required=True, help="online output directory")
    p.add_argument("--bundle")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _code(exc.cause)
    except Exception as exc:
        code = _code(exc)
        if code is None:
            raise
        print(f"error: {exc}", file=sys.stderr)
        return code


def _code(exc):
    # BundleError derives from OSError; numerical and config errors first
    if isinstance(exc, NumericalError):
        return EXIT_NUMERICAL
    if isinstance(exc, (ConfigError, ValueError)):
        return EXIT_CONFIG
    if isinstance(exc, (BundleError, OSError)):
        return EXIT_IO
    if isinstance(exc, ArithmeticError):
        return EXIT_NUMERICAL
    return None


if __name__ == "__main__":
    sys.exit(main())
