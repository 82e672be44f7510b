"""Command-line entry point: ``dahr simulate | fit | tune``."""
from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import estimators as est
from . import highdim as hd
from .harness import ConfigError, fmt, load_config, run_experiment
from .inference import conf_intervals, distributed_variance
from .model_core import InvalidArgumentError
from .synth import partition, read_csv

FIT_METHODS = ("global_ahr", "dc_ahr", "dc_ols", "dist_ols", "dist_ahr", "l1_ahr", "lasso", "dc_l1_ahr")


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dahr", description="Distributed adaptive Huber regression")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a Monte Carlo study from a config file")
    sim.add_argument("--config", required=True, type=Path)
    sim.add_argument("--out-dir", type=Path, default=Path("results"))
    sim.add_argument("--seed", type=_u64)
    sim.add_argument("--threads", type=int, default=1, help="worker processes for replications")
    sim.add_argument("--full-scale", action="store_true", help="large m grid and replication count")

    fit = sub.add_parser("fit", help="fit one estimator to CSV data (header y,x1,...,xp)")
    fit.add_argument("--data", required=True, type=Path)
    fit.add_argument("--method", required=True, choices=FIT_METHODS)
    fit.add_argument("--m", type=int, default=1, help="number of contiguous equal shards")
    fit.add_argument("--kappa", type=float)
    fit.add_argument("--tau", type=float)
    fit.add_argument("--c", type=float, default=1.0, help="tau = c sqrt(m) kappa when --tau is absent")
    fit.add_argument("--lam", type=float, help="l1 penalty level (penalized methods)")
    fit.add_argument("--alpha", type=float, default=0.05)
    fit.add_argument("--max-rounds", type=int, default=50)

    tune = sub.add_parser("tune", help="print self-tuned kappa, tau and the validated multiplier c")
    tune.add_argument("--data", required=True, type=Path)
    tune.add_argument("--m", type=int, default=1)
    tune.add_argument("--validation", type=Path, help="held-out CSV; default: trailing rows of --data")
    tune.add_argument("--validation-fraction", type=float, default=0.2)
    tune.add_argument("--c-grid", default="1,2,3,4,5")
    return parser


def cmd_simulate(args) -> int:
    config = load_config(args.config, seed=args.seed)
    if args.full_scale:
        config = config.full_scale()
    result = run_experiment(config, args.out_dir, workers=args.threads)
    for path in result.paths.values():
        print(path)
    return 0


def _fit(args, shards):
    m = len(shards)
    p = shards[0].p
    if args.method in ("global_ahr",):
        tau = args.tau if args.tau is not None else "auto"
        return est.centralized_ahr(shards, tau=tau), None, {}
    if args.method == "dc_ahr":
        return est.dc_ahr(shards), None, {}
    if args.method == "dc_ols":
        return est.dc_ols(shards), None, {}
    if args.method == "dist_ols":
        beta, trace = est.distributed_ols(shards, est.dc_ols(shards), args.max_rounds)
        return beta, math.inf, {"rounds": trace.n_rounds, "comm_values": trace.ledger.values_sent}
    if args.method == "dist_ahr":
        kappa = args.kappa if args.kappa is not None else est.self_tuned_ahr(shards[0])[1]
        tau = args.tau if args.tau is not None else est.tune_tau_global(kappa, m, args.c)
        beta, trace = est.distributed_ahr(shards, kappa, tau, est.dc_ols(shards), args.max_rounds)
        return beta, tau, {"kappa": kappa, "tau": tau, "rounds": trace.n_rounds,
                           "comm_values": trace.ledger.values_sent}
    if args.lam is None:
        raise InvalidArgumentError(f"--lam is required for {args.method}")
    if args.method == "lasso":
        return hd.lasso_fit(shards, args.lam), None, {}
    if args.method == "l1_ahr":
        tau = args.tau if args.tau is not None else hd.tune_tau_sparse(
            hd._as_shard(shards).residuals(hd.lasso_fit(shards, args.lam)), 1, p)
        return hd.l1_ahr_fit(shards, tau, args.lam), None, {"tau": tau}
    kappa = args.kappa if args.kappa is not None else hd.tune_tau_sparse(
        shards[0].residuals(hd.lasso_fit(shards[0], args.lam)), 1, p)
    return hd.dc_l1_ahr(shards, kappa, args.lam), None, {"kappa": kappa}


def cmd_fit(args) -> int:
    shards = read_csv(args.data, args.m)
    beta, ci_tau, info = _fit(args, shards)
    for key, value in info.items():
        print(f"# {key} = {fmt(value)}")
    if ci_tau is not None:
        v = distributed_variance(shards, beta, ci_tau)
        lo, hi = conf_intervals(beta, v.sigma_hat, v.N, args.alpha)
        print("coef,estimate,ci_lo,ci_hi")
        for j, (b, a, c) in enumerate(zip(beta, lo, hi)):
            print(f"x{j + 1},{fmt(b)},{fmt(a)},{fmt(c)}")
    else:
        print("coef,estimate")
        for j, b in enumerate(beta):
            print(f"x{j + 1},{fmt(b)}")
    return 0


def cmd_tune(args) -> int:
    if args.validation is not None:
        shards = read_csv(args.data, args.m)
        validation = read_csv(args.validation, 1)[0]
    else:
        data = np.loadtxt(args.data, delimiter=",", skiprows=1, ndmin=2)
        N = data.shape[0]
        n_train = int((1 - args.validation_fraction) * N) // args.m * args.m
        if n_train < args.m or n_train >= N:
            raise InvalidArgumentError("not enough rows for a training/validation split")
        shards = partition(data[:n_train, 0], data[:n_train, 1:], args.m)
        validation = partition(data[n_train:, 0], data[n_train:, 1:], 1)[0]
    c_grid = tuple(float(c) for c in args.c_grid.split(","))
    fit = est.tuned_distributed_ahr(shards, est.dc_ols(shards), validation, c_grid)
    print(f"kappa,tau,c\n{fmt(fit.kappa)},{fmt(fit.tau)},{fmt(fit.c_mult)}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"simulate": cmd_simulate, "fit": cmd_fit, "tune": cmd_tune}
    try:
        return handlers[args.command](args)
    except (ConfigError, InvalidArgumentError, OSError) as exc:
        print(f"dahr: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
