"""Command-line interface: train, gen, inspect, plot, verify.

Exit codes: 0 success, 1 numerical or runtime failure, 2 usage error.
Log verbosity comes from ``DUALFORGE_LOG`` (error, warn, info, debug).
"""

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from dualforge import __version__, accel, dadm, dataio, metrics, oracle, plot
from dualforge.losses import LOSS_NAMES, DualDomainError, Hinge, get_loss, smooth
from dualforge.localsolver import MODES
from dualforge.regularizer import ElasticNet

log = logging.getLogger("dualforge")

LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "warning": logging.WARNING,
              "info": logging.INFO, "debug": logging.DEBUG}

# parameters that shape the trajectory; echoed into the manifest and accepted back via --config
TRAIN_KEYS = ("data", "algo", "loss", "lam", "mu", "m", "sp", "seed", "target_gap", "max_rounds", "mode",
              "repeat", "gap_every", "tail_average", "kappa", "kappa_formula", "nu", "outer_max", "inner_max",
              "d", "normalize", "format", "transport", "warm_start")


class UsageError(Exception):
    pass


def _configure_logging():
    name = os.environ.get("DUALFORGE_LOG", "warn").lower()
    level = LOG_LEVELS.get(name)
    if level is None:
        raise UsageError(f"DUALFORGE_LOG must be one of error, warn, info, debug (got {name!r})")
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)


def _positive_float(text):
    val = float(text)
    if not val > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return val


def _nonneg_float(text):
    val = float(text)
    if not val >= 0:
        raise argparse.ArgumentTypeError(f"must be non-negative, got {text}")
    return val


def _positive_int(text):
    val = int(text)
    if val < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {text}")
    return val


def _kappa(text):
    if text == "auto":
        return text
    return _nonneg_float(text)


def _nu(text):
    if text in (accel.NU_ZERO, accel.NU_THEORY):
        return text
    val = float(text)
    if not 0.0 <= val <= 1.0:
        raise argparse.ArgumentTypeError("nu must be 0, theory, or a number in [0, 1]")
    return val


def build_parser():
    p = argparse.ArgumentParser(prog="dualforge", description="Distributed dual coordinate optimization for elastic-net linear models.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="fit a model with DADM or Acc-DADM")
    t.add_argument("data", nargs="?", help="LIBSVM file")
    t.add_argument("--config", help="manifest.json of an earlier run; its parameters become the defaults")
    t.add_argument("--algo", choices=("dadm", "acc-dadm"), default="dadm")
    t.add_argument("--loss", choices=LOSS_NAMES, default="smooth-hinge")
    t.add_argument("--lambda", dest="lam", type=_positive_float, default=1e-4)
    t.add_argument("--mu", type=_nonneg_float, default=1e-5)
    t.add_argument("--m", type=_positive_int, default=4, help="number of workers")
    t.add_argument("--sp", type=_positive_float, default=0.2, help="fraction of each shard visited per round")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--target-gap", type=_positive_float, default=1e-6, help="normalized duality gap target (gap / n)")
    t.add_argument("--max-rounds", type=_positive_int, default=1000,
                   help="round cap; for acc-dadm the cap on all communications, stage changes included")
    t.add_argument("--mode", choices=MODES, default="exact")
    t.add_argument("--repeat", type=_positive_int, default=1, help="passes over the mini-batch per round")
    t.add_argument("--gap-every", type=_positive_int, default=1)
    t.add_argument("--tail-average", type=int, default=None, metavar="T0", help="also report the average of rounds T0+1..T")
    t.add_argument("--kappa", type=_kappa, default="auto")
    t.add_argument("--kappa-formula", choices=("default", "alt"), default="default",
                   help="auto kappa rule: m R/(gamma n) - lambda (default) or m R/(lambda gamma) - lambda (alt)")
    t.add_argument("--nu", type=_nu, default=accel.NU_ZERO)
    t.add_argument("--outer-max", type=_positive_int, default=None)
    t.add_argument("--inner-max", type=_positive_int, default=None, help="round cap per stage (defaults to --max-rounds)")
    t.add_argument("--d", type=_positive_int, default=None, help="force the feature dimension")
    t.add_argument("--normalize", action="store_true", help="scale every example to unit norm")
    t.add_argument("--out-dir", default="run")
    t.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    t.add_argument("--transport", choices=("inline", "threads"), default="inline")
    t.add_argument("--warm-start", default=None, help="model.json of an earlier plain DADM run on the same problem")

    g = sub.add_parser("gen", help="write a synthetic LIBSVM dataset")
    g.add_argument("out")
    g.add_argument("--n", type=_positive_int, default=2000)
    g.add_argument("--d", type=_positive_int, default=50)
    g.add_argument("--density", type=_positive_float, default=0.3)
    g.add_argument("--seed", type=int, default=42)
    g.add_argument("--label-noise", type=_nonneg_float, default=0.1)

    i = sub.add_parser("inspect", help="print dataset statistics")
    i.add_argument("data")
    i.add_argument("--d", type=_positive_int, default=None)

    pl = sub.add_parser("plot", help="SVG chart of one or more metrics files")
    pl.add_argument("metrics", nargs="+")
    pl.add_argument("--x", choices=tuple(plot.X_FIELDS), default="comms")
    pl.add_argument("--y", default="gap_normalized")
    pl.add_argument("--labels", default=None, help="comma-separated series names")
    pl.add_argument("--title", default=None)
    pl.add_argument("--out", required=True)

    v = sub.add_parser("verify", help="solve with the reference proximal-gradient oracle")
    v.add_argument("data")
    v.add_argument("--loss", choices=LOSS_NAMES, default="smooth-hinge")
    v.add_argument("--lambda", dest="lam", type=_positive_float, default=1e-4)
    v.add_argument("--mu", type=_nonneg_float, default=1e-5)
    v.add_argument("--tol", type=_positive_float, default=1e-10)
    v.add_argument("--smooth-gamma", type=_positive_float, default=None, help="smooth a hinge loss with this gamma first")
    v.add_argument("--model", default=None, help="model.json whose primal value is compared with the reference")
    v.add_argument("--d", type=_positive_int, default=None)
    v.add_argument("--normalize", action="store_true")
    p.train_parser = t
    return p


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _parse_train(parser, argv):
    args = parser.parse_args(argv)
    if args.command != "train" or args.config is None:
        return args
    with open(args.config, encoding="utf-8") as fh:
        params = json.load(fh)["params"]
    unknown = set(params) - set(TRAIN_KEYS)
    if unknown:
        raise UsageError(f"{args.config}: unknown parameters {sorted(unknown)}")
    parser.train_parser.set_defaults(**params)
    return parser.parse_args(argv)


def cmd_train(args):
    if args.data is None:
        raise UsageError("train needs a dataset path (or --config with one)")
    if not Path(args.data).is_file():
        raise UsageError(f"dataset not found: {args.data}")
    ds = dataio.load_libsvm(args.data, d=args.d, normalize=args.normalize)
    n = ds.n
    part = dataio.partition(n, args.m, args.seed)
    reg = ElasticNet(args.lam, args.mu)
    loss = get_loss(args.loss)
    target_abs = args.target_gap * n
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    resolved = {"n": n, "d": ds.d, "R": ds.stats.R, "data_sha256": _sha256(args.data)}
    warm = None
    if args.warm_start:
        ck = metrics.load_checkpoint(args.warm_start)
        if ck["n"] != n or ck["d"] != ds.d:
            raise UsageError("warm start checkpoint does not match the dataset shape")
        warm = ck

    if args.algo == "dadm":
        cfg = dadm.RunConfig(target_gap=target_abs, max_rounds=args.max_rounds, sp=args.sp, seed=args.seed,
                             mode=args.mode, repeat=args.repeat, tail_average=args.tail_average,
                             gap_every=args.gap_every, transport=args.transport)
        ws = None
        if warm is not None:
            if warm["kappa"]:
                raise UsageError("warm start for plain DADM needs a checkpoint of the unshifted problem")
            ws = dadm.WarmStart(warm["alpha"], warm["u"])
        res = dadm.run(ds, part, reg, loss, cfg, warm=ws)
        rows = metrics.rows_from_trace(res.trace, n)
        kappa, y = 0.0, np.zeros(ds.d)
        summary = {"rounds": res.rounds, "converged": res.converged, "primal": res.primal, "dual": res.dual,
                   "gap": res.gap, "gap_normalized": res.gap / n, "stopped_by": res.stopped_by,
                   "bytes": res.comm.bytes_up + res.comm.bytes_down}
        if res.w_bar is not None:
            P_bar, D_bar, gap_bar = dadm.evaluate_full(ds, reg, loss, res.alpha_bar, res.w_bar)
            summary.update(tail_primal=P_bar, tail_dual=D_bar, tail_gap_normalized=gap_bar / n)
            np.savetxt(out / "w_bar.txt", res.w_bar, fmt="%r")
        w, alpha, u = res.w, res.alpha, res.u
    else:
        if args.tail_average is not None:
            raise UsageError("--tail-average applies to plain DADM only")
        inner_target = None
        if isinstance(loss, Hinge):
            loss, half = accel.smooth_wrap(loss, args.target_gap)
            inner_target = half * n
            resolved["smoothing_gamma"] = loss.gamma
        gamma = loss.info.gamma
        if args.kappa == "auto":
            if args.kappa_formula == "alt":
                kappa = accel.kappa_alt_formula(args.m, ds.stats.R, gamma, args.lam)
            else:
                kappa = accel.default_kappa(args.m, ds.stats.R, gamma, n, args.lam)
        else:
            kappa = float(args.kappa)
        cfg = accel.AccConfig(target_gap=inner_target or target_abs, kappa=kappa, nu=args.nu,
                              outer_max=args.outer_max, inner_max=args.inner_max or args.max_rounds, max_comms=args.max_rounds,
                              sp=args.sp, seed=args.seed, mode=args.mode, repeat=args.repeat,
                              gap_every=args.gap_every, transport=args.transport)
        warm_alpha = None if warm is None else warm["alpha"]
        res = accel.run_acc(ds, part, reg, loss, cfg, warm_alpha=warm_alpha)
        rows = metrics.rows_from_trace(res.trace, n, original=True)
        resolved.update(eta=res.schedule.eta, nu=res.schedule.nu, xi0=res.schedule.xi0)
        summary = {"rounds": res.rounds, "comms": res.comms, "stages": len(res.stages), "converged": res.converged,
                   "primal": res.primal, "dual": res.dual, "gap": res.gap, "gap_normalized": res.gap / n,
                   "stopped_by": res.stopped_by, "bytes": res.comm_bytes}
        w, alpha, u, y = res.w, res.alpha, res.u, res.y
        kappa = res.kappa
    resolved["kappa"] = kappa
    print(f"kappa = {kappa!r}")

    mpath = out / ("metrics.csv" if args.format == "csv" else "metrics.jsonl")
    metrics.write_metrics(rows, mpath, args.format)
    metrics.save_checkpoint(out / "model.json", n=n, d=ds.d, m=args.m, lam=args.lam, mu=args.mu, kappa=kappa,
                            loss=args.loss, seed=args.seed, round_=summary["rounds"], alpha=alpha, u=u, w=w, y=y)
    params = {k: getattr(args, k) for k in TRAIN_KEYS}
    manifest = {"version": __version__, "params": params, "resolved": resolved, "result": summary}
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"{args.algo}: {summary['rounds']} rounds, normalized gap {summary['gap_normalized']:.3e}, "
          f"{'converged' if summary['converged'] else 'not converged'}; wrote {mpath}")
    return 0


def cmd_gen(args):
    if not args.density <= 1.0:
        raise UsageError("density must lie in (0, 1]")
    if not args.label_noise < 0.5:
        raise UsageError("label noise must be below 0.5")
    ds = dataio.gen_synthetic(args.n, args.d, args.density, args.seed, args.label_noise)
    dataio.save_libsvm(ds, args.out)
    print(f"wrote {args.out}: n={ds.n} d={ds.d} nnz={ds.stats.nnz}")
    return 0


def format_stats(name, ds):
    st = ds.stats
    return (f"{'dataset':<24} {'n':>10} {'d':>10} {'nnz':>12} {'sparsity':>10} {'R':>12}\n"
            f"{name:<24} {ds.n:>10} {ds.d:>10} {st.nnz:>12} {100 * st.sparsity:>9.4g}% {st.R:>12.6g}")


def cmd_inspect(args):
    ds = dataio.load_libsvm(args.data, d=args.d)
    print(format_stats(Path(args.data).name, ds))
    return 0


def cmd_plot(args):
    labels = args.labels.split(",") if args.labels else [Path(p).stem for p in args.metrics]
    if len(labels) != len(args.metrics):
        raise UsageError("--labels needs one name per metrics file")
    series = []
    for label, path in zip(labels, args.metrics):
        rows = metrics.read_metrics(path)
        if rows and args.y not in rows[0]:
            raise metrics.SchemaError(f"{path}: no column {args.y!r}")
        series.append((label, rows))
    svg = plot.render_svg(series, x=args.x, y=args.y, title=args.title)
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(svg)
    print(f"wrote {args.out}")
    return 0


def cmd_verify(args):
    ds = dataio.load_libsvm(args.data, d=args.d, normalize=args.normalize)
    loss = get_loss(args.loss)
    if args.smooth_gamma is not None:
        loss = smooth(loss, args.smooth_gamma)
    reg = ElasticNet(args.lam, args.mu)
    cert = oracle.prox_grad_reference(ds, reg, loss, tol=args.tol)
    print(f"reference: P(w*) = {cert.primal_at_star!r}, certified gap {cert.certified_gap:.3e} "
          f"after {cert.iterations} iterations")
    if args.model:
        ck = metrics.load_checkpoint(args.model)
        P = oracle.primal_objective(ds, reg, loss, ck["w"])
        print(f"model: P(w) = {P!r}, P(w) - P(w*) = {P - cert.primal_at_star:.3e} "
              f"(normalized {(P - cert.primal_at_star) / ds.n:.3e}), "
              f"max |w - w*| = {float(np.max(np.abs(ck['w'] - cert.w_star), initial=0.0)):.3e}")
    return 0


COMMANDS = {"train": cmd_train, "gen": cmd_gen, "inspect": cmd_inspect, "plot": cmd_plot, "verify": cmd_verify}


def main(argv=None):
    parser = build_parser()
    try:
        _configure_logging()
        args = _parse_train(parser, argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"dualforge: error: {exc}", file=sys.stderr)
        return 2
    except (dataio.LibSVMFormatError, metrics.SchemaError, DualDomainError, dadm.NumericalError,
            ValueError, RuntimeError, OSError) as exc:
        print(f"dualforge: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
