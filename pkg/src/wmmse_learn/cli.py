"""Command-line entry point: generate, train, eval, bench, construct, gd-demo.

Exit codes: 0 success, 1 usage error, 2 verification failure, 3 IO failure.
Any flag can be pre-filled from a ``key=value`` file passed with ``--config``;
explicit flags win. ``WMMSE_LEARN_SEED`` replaces the default seed.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import channels, constructive, harness, neural
from .dataset import load_dataset, save_dataset
from .instance import IC
from .validation import check_scenario
from .wmmse import WmmseConfig, wmmse_iterates

EXIT_OK, EXIT_USAGE, EXIT_VERIFY, EXIT_IO = 0, 1, 2, 3
log = logging.getLogger("wmmse_learn")


class UsageError(Exception):
    pass


class VerificationFailure(Exception):
    pass


def _default_seed() -> int:
    raw = os.environ.get("WMMSE_LEARN_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"WMMSE_LEARN_SEED must be an integer, got {raw!r}") from None


def _int_list(text) -> tuple:
    try:
        return tuple(int(t) for t in str(text).split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _pair(text) -> tuple:
    try:
        R, r = (float(t) for t in str(text).split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected R,r, got {text!r}") from None
    return R, r


def _threads(args) -> int:
    return args.threads if args.threads else (os.cpu_count() or 1)


# --- generate -------------------------------------------------------------------

def cmd_generate(args) -> int:
    wcfg = WmmseConfig(args.obj_tol, args.max_iter)
    threads = _threads(args)
    if args.model == "ic":
        check_scenario(IC, args.k)
        insts = channels.generate_gaussian_ic(args.k, args.n, args.seed, args.noise, args.p_max, threads)
        params = {"K": args.k}
        generator = "gaussian_ic"
    elif args.model == "imac":
        if args.cells is None or args.users is None:
            raise UsageError("imac needs --cells and --users")
        check_scenario("IMAC", args.users, args.cells, args.radius, args.inner)
        insts = channels.generate_imac(args.cells, args.users, args.radius, args.inner, args.n,
                                       args.seed, args.noise, args.p_max, threads)
        params = {"N": args.cells, "K_users": args.users, "R": args.radius, "r": args.inner}
        generator = "imac"
    else:
        if not args.reference:
            raise UsageError("stats mode needs --reference")
        ref = load_dataset(args.reference)
        insts = channels.generate_from_stats(ref.instances, args.n, args.seed,
                                             args.noise if args.noise_set else 1e-3, args.p_max, threads)
        params = {"reference": Path(args.reference).name}
        generator = "stats"
    ds = channels.label_dataset(insts, wcfg, generator, args.seed, params)
    path = save_dataset(ds, args.out)
    print(f"wrote {len(ds)} samples to {path}")
    return EXIT_OK


# --- train ----------------------------------------------------------------------

def cmd_train(args) -> int:
    data = load_dataset(args.data)
    if args.k is not None and args.k != data.num_users:
        raise UsageError(f"dataset has K={data.num_users}, --k asks for {args.k}")
    if args.valid:
        valid = load_dataset(args.valid)
        if valid.features().shape[1] != data.features().shape[1]:
            raise UsageError("training and validation sets have different shapes")
        train_set = data
    else:
        rng = np.random.default_rng(args.seed)
        order = rng.permutation(len(data))
        n_val = max(1, int(round(args.valid_fraction * len(data))))
        valid, train_set = data.subset(order[:n_val]), data.subset(order[n_val:])
    sizes = [train_set.features().shape[1], *args.hidden, train_set.num_users]
    model = neural.init_model(sizes, args.seed, data.p_max)
    cfg = neural.TrainConfig(args.lr, args.decay, args.batch, 1e-8, args.epochs, args.patience,
                             args.max_halvings, args.seed)
    best, history = neural.train(
        model, (train_set.features(), train_set.labels), (valid.features(), valid.labels), cfg,
        callback=lambda row: log.info("epoch %(epoch)d train %(train_mse).5f valid %(valid_mse).5f", row))
    neural.save_model(best, args.out)
    neural.save_history(history, args.history)
    best_valid = min(row["valid_mse"] for row in history)
    print(f"final validation mse {best_valid:.6g} after {len(history)} epochs; model {args.out}")
    return EXIT_OK


# --- eval / bench ---------------------------------------------------------------

def cmd_eval(args) -> int:
    model = neural.load_model(args.model_path)
    outdir = Path(args.outdir)
    if args.geometry:
        if args.cells is None or args.users is None:
            raise UsageError("--geometry needs --cells and --users")
        reports = harness.geometry_shift_eval(model, args.cells, args.users, args.geometry, args.n,
                                              args.seed, args.binarize)
        for (R, r), rep in reports.items():
            harness.write_report(rep, outdir, f"{args.prefix}_R{R:g}_r{r:g}")
            print(f"R={R:g} r={r:g} ratio {rep.ratio_pct:.2f}%")
        return EXIT_OK
    if not args.data:
        raise UsageError("eval needs --data or --geometry")
    data = load_dataset(args.data)
    if args.half_user:
        rep = harness.half_user_eval(model, data, model.layer_sizes[-1], args.binarize, args.seed)
    else:
        rep = harness.evaluate(data, model, args.binarize, args.seed)
    harness.write_report(rep, outdir, args.prefix)
    avg = ", ".join(f"{k} {v:.4f}" for k, v in rep.avg_rate.items())
    print(f"{avg}; ratio {rep.ratio_pct:.2f}%")
    return EXIT_OK


def cmd_bench(args) -> int:
    model = neural.load_model(args.model_path)
    data = load_dataset(args.data)
    res = harness.bench_timing(data, model, args.repetitions)
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / f"{args.prefix}.json").write_text(json.dumps(res, indent=2), encoding="utf-8")
    print(f"dnn {res['dnn_s']:.4g}s, wmmse {res['wmmse_s']:.4g}s, speedup {res['speedup']:.1f}x")
    return EXIT_OK


# --- construct ------------------------------------------------------------------

def _fmt_vec(v) -> str:
    return ";".join(repr(float(x)) for x in np.atleast_1d(v))


def _sweep_binary(g, op, args, rng):
    n = args.sweep
    if op == "mul":
        x = rng.uniform(0, args.xmax, n)
        y = rng.uniform(0, args.ymax, n)
        truth, bound = x * y, args.ymax * 2.0 ** -args.bits
    else:
        # x/y <= zmax with y in (0, ymax]
        y = rng.uniform(0, args.ymax, n)
        y[y == 0] = args.ymax
        x = rng.uniform(0, 1, n) * args.zmax * y
        truth, bound = x / y, 2.0 ** -args.bits
    out = constructive.eval_unit_graph(g, np.column_stack([x, y]))[:, 0]
    inputs = np.column_stack([x, y])
    return inputs, truth[:, None], out[:, None], np.full((n, 1), bound)


def _sweep_wmmse(g, adm, args, rng):
    draws = constructive.sample_admissible_channels(adm, args.sweep, int(rng.integers(2 ** 31)), args.iters)
    out = constructive.eval_unit_graph(g, draws.reshape(len(draws), -1))
    truth = np.empty_like(out)
    from .instance import ic_instance
    for i, H in enumerate(draws):
        truth[i] = wmmse_iterates(ic_instance(H, adm.noise_power, 1.0, adm.p_max), args.iters)[-1] ** 2
    cert = constructive.certified_bounds(adm, args.iters, args.bits)["power_bound"]
    return draws.reshape(len(draws), -1), truth, out, np.full(out.shape, cert)


def cmd_construct(args) -> int:
    if args.bits < 1 or args.sweep < 1:
        raise UsageError("--bits and --sweep must be >= 1")
    rng = np.random.default_rng(args.seed)
    if args.op == "mul":
        g = constructive.build_mul_net(args.xmax, args.ymax, args.bits)
        inputs, truth, out, bound = _sweep_binary(g, "mul", args, rng)
    elif args.op == "div":
        g = constructive.build_div_net(args.zmax, args.ymax, args.bits)
        inputs, truth, out, bound = _sweep_binary(g, "div", args, rng)
    else:
        adm = constructive.AdmissibleSet(K=args.k, h_min=args.hmin, h_max=args.hmax, sigma=args.sigma,
                                         p_max=args.pmax, p_min=args.pmin, v_min=args.vmin, T=args.iters)
        g = constructive.build_wmmse_net(adm, args.iters, args.bits)
        if args.tol is None:
            args.tol = 1e-2
        inputs, truth, out, bound = _sweep_wmmse(g, adm, args, rng)
    constructive.save_graph(g, args.out)
    err = np.abs(truth - out)
    with open(args.csv, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["input", "truth", "output", "error", "certified_bound"])
        for i in range(len(inputs)):
            for k in range(out.shape[1]):
                w.writerow([_fmt_vec(inputs[i]), repr(float(truth[i, k])), repr(float(out[i, k])),
                            repr(float(err[i, k])), repr(float(bound[i, k]))])
    counts = g.counts()
    limit = bound if args.tol is None else np.minimum(bound, args.tol)
    violations = int(np.sum(err > limit))
    print(f"{args.op}: layers {counts['layers']}, relus {counts['relus']}, binary {counts['binary_units']}; "
          f"max error {err.max():.3g}, violations {violations}/{err.size}")
    if violations:
        raise VerificationFailure(f"{violations} errors exceed the bound")
    return EXIT_OK


# --- gd-demo --------------------------------------------------------------------

def cmd_gd_demo(args) -> int:
    res = harness.gd_toy_experiment(args.n, args.iters, args.alpha, args.epochs, args.batch, args.seed)
    if args.out:
        Path(args.out).write_text(json.dumps(res, indent=2), encoding="utf-8")
    print(f"test mse with (x0, z): {res['x0_z']:.4f}; with z only: {res['z_only']:.4f}")
    return EXIT_OK


# --- parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wmmse-learn", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="key=value file that pre-fills flags")
    p.add_argument("--threads", type=int, default=0, help="worker threads (0 = all cores)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def seeded(sp):
        sp.add_argument("--seed", type=int, default=None)
        return sp

    g = seeded(sub.add_parser("generate", help="draw channels and label them with WMMSE"))
    g.add_argument("--model", choices=("ic", "imac", "stats"), default="ic")
    g.add_argument("--k", type=int, default=10, help="users (IC)")
    g.add_argument("--n", type=int, default=1000, help="samples")
    g.add_argument("--cells", type=int, help="IMAC cells")
    g.add_argument("--users", type=int, help="IMAC users in total")
    g.add_argument("--radius", type=float, default=100.0, help="IMAC cell radius (m)")
    g.add_argument("--inner", type=float, default=0.0, help="IMAC inner exclusion radius (m)")
    g.add_argument("--reference", help="dataset whose gain statistics drive stats mode")
    g.add_argument("--p-max", dest="p_max", type=float, default=1.0)
    g.add_argument("--noise", type=float, default=None, help="noise power")
    g.add_argument("--obj-tol", dest="obj_tol", type=float, default=1e-5)
    g.add_argument("--max-iter", dest="max_iter", type=int, default=500)
    g.add_argument("--out", default="dataset.csv")
    g.set_defaults(func=cmd_generate)

    t = seeded(sub.add_parser("train", help="fit the MLP to a labeled dataset"))
    t.add_argument("--data", required=True)
    t.add_argument("--valid", help="validation dataset (default: split off --valid-fraction)")
    t.add_argument("--valid-fraction", dest="valid_fraction", type=float, default=0.1)
    t.add_argument("--k", type=int, help="expected number of users")
    t.add_argument("--hidden", type=_int_list, default=(200, 200, 200))
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--decay", type=float, default=0.9)
    t.add_argument("--batch", type=int, default=1000)
    t.add_argument("--epochs", type=int, default=100)
    t.add_argument("--patience", type=int, default=3)
    t.add_argument("--max-halvings", dest="max_halvings", type=int, default=5)
    t.add_argument("--out", default="model.bin")
    t.add_argument("--history", default="history.csv")
    t.set_defaults(func=cmd_train)

    e = seeded(sub.add_parser("eval", help="compare the network with WMMSE and baselines"))
    e.add_argument("--model", dest="model_path", required=True)
    e.add_argument("--data")
    e.add_argument("--binarize", action="store_true")
    e.add_argument("--half-user", dest="half_user", action="store_true")
    e.add_argument("--geometry", type=_pair, action="append", help="R,r test geometry (repeatable)")
    e.add_argument("--cells", type=int)
    e.add_argument("--users", type=int)
    e.add_argument("--n", type=int, default=1000)
    e.add_argument("--outdir", default="report")
    e.add_argument("--prefix", default="eval")
    e.set_defaults(func=cmd_eval)

    b = seeded(sub.add_parser("bench", help="time batched inference against WMMSE"))
    b.add_argument("--model", dest="model_path", required=True)
    b.add_argument("--data", required=True)
    b.add_argument("--repetitions", type=int, default=5)
    b.add_argument("--outdir", default="report")
    b.add_argument("--prefix", default="bench")
    b.set_defaults(func=cmd_bench)

    c = seeded(sub.add_parser("construct", help="build and verify a ReLU/binary-unit network"))
    c.add_argument("--op", choices=("mul", "div", "wmmse"), required=True)
    c.add_argument("--xmax", type=float, default=1.0)
    c.add_argument("--ymax", type=float, default=1.0)
    c.add_argument("--zmax", type=float, default=1.0)
    c.add_argument("--bits", type=int, default=8)
    c.add_argument("--sweep", type=int, default=None, help="random test points (default 10000, 100 for wmmse)")
    c.add_argument("--k", type=int, default=2)
    c.add_argument("--iters", type=int, default=1)
    c.add_argument("--hmin", type=float, default=0.5)
    c.add_argument("--hmax", type=float, default=2.0)
    c.add_argument("--sigma", type=float, default=1.0)
    c.add_argument("--pmax", type=float, default=1.0)
    c.add_argument("--pmin", type=float, default=1.0)
    c.add_argument("--vmin", type=float, default=0.1)
    c.add_argument("--tol", type=float, default=None, help="extra error tolerance (wmmse default 1e-2)")
    c.add_argument("--out", default="graph.txt")
    c.add_argument("--csv", default="verification.csv")
    c.set_defaults(func=cmd_construct)

    d = seeded(sub.add_parser("gd-demo", help="learn the output of gradient descent on (x^2 - z)^2"))
    d.add_argument("--n", type=int, default=20000)
    d.add_argument("--iters", type=int, default=3000)
    d.add_argument("--alpha", type=float, default=0.01)
    d.add_argument("--epochs", type=int, default=60)
    d.add_argument("--batch", type=int, default=100)
    d.add_argument("--out")
    d.set_defaults(func=cmd_gd_demo)
    return p


def read_config(path) -> dict:
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _apply_config(parser, argv, cfg):
    """Install config values as subcommand defaults so explicit flags still win."""
    sub_action = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    command = next((a for a in argv if a in sub_action.choices), None)
    if command is None:
        return
    sp = sub_action.choices[command]
    known = {a.dest: a for a in sp._actions}
    defaults = {}
    for key, value in cfg.items():
        if key not in known or key == "help":
            raise UsageError(f"unknown config key {key!r} for {command}")
        action = known[key]
        if action.nargs == 0:
            defaults[key] = value.lower() in ("1", "true", "yes", "on")
        elif action.type is not None:
            try:
                defaults[key] = action.type(value)
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise UsageError(f"config key {key!r}: {exc}") from None
        else:
            defaults[key] = value
        action.required = False
    sp.set_defaults(**defaults)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    try:
        known, _ = pre.parse_known_args(argv)
        if known.config:
            _apply_config(parser, argv, read_config(known.config))
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:
            return EXIT_OK if exc.code == 0 else EXIT_USAGE
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s")
        if args.seed is None:
            args.seed = _default_seed()
        if args.command == "generate":
            args.noise_set = args.noise is not None
            if args.noise is None:
                args.noise = 1.0
        if args.command == "construct" and args.sweep is None:
            args.sweep = 100 if args.op == "wmmse" else 10000
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except VerificationFailure as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
