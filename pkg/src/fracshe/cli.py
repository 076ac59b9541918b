"""Command line entry point.

Exit codes: 0 pass, 1 declared criteria failed, 2 configuration error,
3 runtime error.  Worker count comes from --workers or FRACSHE_WORKERS.
"""
import argparse
import csv
import hashlib
import json
import math
import os
import sys

import numpy as np

from . import config as cf
from .constants import summary
from .fields import GridSpec, coupled_F, make_noise, sample_fbm_direct, sample_S, sample_Z
from .kernels import eval_increment_kernel, eval_kernel
from .kpz import PolarityError
from .oracle import Formula, evaluate
from .solver import ModelSpec, make_sigma, solve
from .statistics import _plain

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


def _dump(obj):
    print(json.dumps(_plain(obj), indent=2, sort_keys=True))


def _write_report(rep, cfg, out):
    os.makedirs(out, exist_ok=True)
    tag = f"{cfg.experiment}-{cfg.digest()}"
    paths = [os.path.join(out, f"{tag}.json")]
    with open(paths[0], "w") as fh:
        fh.write(rep.to_json() + "\n")
    from .experiments import CURVE_COLUMNS
    for name, rows in sorted(rep.curves.items()):
        path = os.path.join(out, f"{tag}-{name}.csv")
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=CURVE_COLUMNS[name])
            w.writeheader()
            for r in rows:
                w.writerow({k: _plain(r[k]) for k in CURVE_COLUMNS[name]})
        paths.append(path)
    return paths


def _overrides(args):
    ov = {}
    if args.seed is not None:
        ov["seed"] = args.seed
    if getattr(args, "replicas", None) is not None:
        ov["replicas"] = args.replicas
    return ov


def _sig15(v):
    return float(f"{v:.15g}")


def _args_tag(args, keys):
    blob = json.dumps({k: getattr(args, k) for k in keys}, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def _emit_csv(header, rows, path=None):
    fh = open(path, "w", newline="") if path else sys.stdout
    try:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    finally:
        if path:
            fh.close()


def cmd_constants(args):
    out = [{k: _sig15(v) for k, v in summary(a).items()} for a in args.alpha]
    print(json.dumps(out[0] if len(out) == 1 else out, sort_keys=True))
    return EXIT_OK


def cmd_kernel(args):
    if args.n < 1 or not args.xmax >= args.xmin:
        raise cf.ConfigError("need n >= 1 and xmax >= xmin")
    xs = np.linspace(args.xmin, args.xmax, args.n)
    if args.increment is None:
        tab = eval_kernel(args.alpha, args.t, xs)
    else:
        tab = eval_increment_kernel(args.alpha, args.t, args.increment, xs)
    path = None
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, f"kernel-{_args_tag(args, ('alpha', 't', 'xmin', 'xmax', 'n', 'increment'))}.csv")
    _emit_csv(["x", "p"], zip(xs, tab.values), path)
    if path:
        print(path, file=sys.stderr)
    return EXIT_OK


def cmd_oracle(args):
    rep = evaluate(args.formula, args.alpha, args.t, args.eps, args.beta, args.n)
    print(json.dumps(_plain(rep.as_dict()), sort_keys=True))
    return EXIT_OK


def _grid_args(args):
    dx = 2.0 * args.L / args.grid_n
    nt = args.n_time or int(math.ceil(args.t / dx ** args.alpha * (1 - 1e-12)))
    return GridSpec(args.L, args.grid_n, args.t, nt)


def cmd_sample(args):
    seed = 1 if args.seed is None else args.seed
    g = _grid_args(args)
    if args.what == "fbm":
        h = (args.alpha - 1.0) / 2.0
        xs = g.x
        fs = sample_fbm_direct(h, xs, seed, 1)
    else:
        noise = make_noise(g, seed, 1)
        z = sample_Z(noise, args.alpha, args.t)
        if args.what == "z":
            fs = z
        else:
            s = sample_S(noise, args.alpha, args.t, t_ext=args.t_ext)
            fs = s if args.what == "s" else coupled_F(z, s, args.alpha)
        xs = g.x
    path = None
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        tag = _args_tag(args, ("what", "alpha", "t", "grid_n", "L", "n_time", "t_ext", "seed"))
        path = os.path.join(args.out, f"sample-{args.what}-{tag}.csv")
    _emit_csv(["x", "value"], zip(xs, fs.batch[0]), path)
    if path:
        print(path, file=sys.stderr)
    return EXIT_OK


def cmd_solve(args):
    seed = 1 if args.seed is None else args.seed
    g = _grid_args(args)
    params = {}
    if args.model == "constant":
        params = {"c": args.sigma_c}
    elif args.model == "affine":
        params = {"a": args.sigma_a, "b": args.sigma_b}
    model = ModelSpec(args.alpha, make_sigma(args.model, **params), args.u0, args.t)
    try:
        times = sorted({float(v) for v in args.snapshots.split(",")}) if args.snapshots else [args.t]
    except ValueError:
        raise cf.ConfigError(f"cannot parse snapshots {args.snapshots!r}") from None
    if max(times) > args.t * (1 + 1e-12):
        raise cf.ConfigError("snapshot times must not exceed t")
    traj = solve(model, make_noise(g, seed, 1), times)
    out = args.out or "results"
    os.makedirs(out, exist_ok=True)
    tag = _args_tag(args, ("model", "alpha", "t", "grid_n", "L", "n_time", "u0", "sigma_c", "sigma_a",
                           "sigma_b", "snapshots", "seed"))
    for snap in traj.snapshots:
        path = os.path.join(out, f"solve-{args.model}-{tag}-t{snap.time_label:.6g}.csv")
        _emit_csv(["x", "value"], zip(g.x, snap.batch[0]), path)
        print(path)
    return EXIT_OK


def _run_config(name, args):
    from .experiments import run
    cfg = cf.load(args.config, name, _overrides(args))
    rep = run(cfg, args.workers)
    paths = _write_report(rep, cfg, args.out or "results")
    for key, c in sorted(rep.criteria.items()):
        print(f"{'PASS' if c['passed'] else 'FAIL'} {name}:{key} value={_plain(c['value'])} "
              f"threshold={_plain(c['threshold'])}")
    print("wrote " + ", ".join(paths))
    return EXIT_OK if rep.passed else EXIT_FAIL


def cmd_experiment(args):
    return _run_config(args.name, args)


def cmd_kpz(args):
    return _run_config(f"kpz-{args.experiment}", args)


def build_parser():
    p = argparse.ArgumentParser(prog="fracshe", description="Gradient limit theorems for the fractional SHE.")
    p.add_argument("--seed", type=int, default=None, help="base seed (overrides the config)")
    p.add_argument("--workers", type=int, default=None, help="worker processes (default FRACSHE_WORKERS or 1)")
    p.add_argument("--out", default=None, help="output directory")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("constants", help="frak_A, frak_B, c, b and the cosine integral as JSON")
    s.add_argument("--alpha", type=float, nargs="+", default=[2.0])
    s.set_defaults(fn=cmd_constants)

    s = sub.add_parser("kernel", help="CSV x,p of p_t(x) (or p_t(x) - p_t(x - eps) with --increment)")
    s.add_argument("--alpha", type=float, required=True)
    s.add_argument("--t", type=float, default=1.0)
    s.add_argument("--xmin", type=float, default=-5.0)
    s.add_argument("--xmax", type=float, default=5.0)
    s.add_argument("--n", type=int, default=101)
    s.add_argument("--increment", type=float, default=None)
    s.set_defaults(fn=cmd_kernel)

    s = sub.add_parser("oracle", help="one-line JSON moment report")
    s.add_argument("--formula", choices=[f.value for f in Formula], required=True)
    s.add_argument("--alpha", type=float, required=True)
    s.add_argument("--t", type=float, default=1.0)
    s.add_argument("--eps", type=float, default=None)
    s.add_argument("--beta", type=float, default=None)
    s.add_argument("--n", type=int, default=1)
    s.set_defaults(fn=cmd_oracle)

    for name, fn, doc in (("sample", cmd_sample, "CSV x,value of one sample of Z, S, F or a direct fBm"),
                          ("solve", cmd_solve, "solve one replica; one CSV x,value per snapshot")):
        s = sub.add_parser(name, help=doc)
        s.add_argument("--alpha", type=float, default=2.0)
        s.add_argument("--t", type=float, default=0.0625)
        s.add_argument("--grid-n", type=int, default=256)
        s.add_argument("--L", type=float, default=0.5)
        s.add_argument("--n-time", type=int, default=0, help="time steps; 0 picks dt <= dx^alpha")
        if name == "sample":
            s.add_argument("--what", choices=["z", "s", "f", "fbm"], default="z")
            s.add_argument("--t-ext", type=float, default=None, help="S truncation horizon (default: from budget)")
        else:
            s.add_argument("--model", default="bounded_smooth", help="sigma: constant, identity, affine, bounded_smooth")
            s.add_argument("--sigma-c", type=float, default=1.0)
            s.add_argument("--sigma-a", type=float, default=1.0)
            s.add_argument("--sigma-b", type=float, default=0.5)
            s.add_argument("--u0", type=float, default=0.0)
            s.add_argument("--snapshots", default=None, help="comma separated times (default: t)")
        s.set_defaults(fn=fn)

    s = sub.add_parser("experiment", help="run a named experiment from a config file")
    s.add_argument("name", choices=cf.EXPERIMENTS)
    s.add_argument("--config", required=True)
    s.add_argument("--replicas", type=int, default=None)
    s.set_defaults(fn=cmd_experiment)

    s = sub.add_parser("kpz", help="Hopf-Cole experiments for the parabolic Anderson model")
    s.add_argument("--experiment", choices=cf.KPZ_EXPERIMENTS, required=True)
    s.add_argument("--config", required=True)
    s.add_argument("--replicas", type=int, default=None)
    s.set_defaults(fn=cmd_kpz)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.workers is not None and args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.fn(args)
    except PolarityError as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except (cf.ConfigError, ValueError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:  # noqa: BLE001 - any other failure is a runtime error by contract
        print(f"runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
