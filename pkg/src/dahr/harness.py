"""Monte Carlo driver for the low- and high-dimensional simulation studies.

Every replication draws its data from a stream keyed by
``(seed, rep, m, dist)``, so results do not depend on scheduling or on the
number of worker processes.
"""
from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from numpy.random import SeedSequence
from threadpoolctl import threadpool_limits

from . import estimators as est
from . import highdim as hd
from .inference import conf_intervals, distributed_variance
from .synth import DISTRIBUTIONS, GenConfig, default_beta, generate, generate_validation, pool

log = logging.getLogger(__name__)

LOWDIM_METHODS = ("global_ahr", "dc_ahr", "dc_ols", "dist_ols", "dist_ahr")
HIGHDIM_METHODS = ("l1_ahr", "dc_l1_ahr", "lasso", "dist_reg_ahr")
CI_METHODS = ("dist_ols", "dist_ahr")

ESTIMATION_HEADER = ["rep", "method", "m", "dist", "l2_error", "rounds", "comm_values"]
COVERAGE_HEADER = ["method", "m", "dist", "coverage_mean", "coverage_sd", "width_mean", "width_sd"]
SUMMARY_HEADER = ["method", "m", "dist", "l2_mean", "l2_sd", "coverage_mean", "coverage_sd",
                  "width_mean", "width_sd", "rounds_mean", "comm_values_mean", "failures"]
FAILED = "failed"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    regime: str = "lowdim"
    n: int = 400
    p: int = 20
    m: tuple = (10, 25, 50, 100)
    s: int = 5
    dist: tuple = ("normal",)
    methods: tuple = LOWDIM_METHODS
    reps: int = 100
    seed: int = 20240101
    alpha: float = 0.05
    c_grid: tuple = (1, 2, 3, 4, 5)
    validation_fraction: float = 0.25

    def __post_init__(self):
        if self.regime not in ("lowdim", "highdim"):
            raise ConfigError(f"unknown regime {self.regime!r}")
        if self.reps < 1:
            raise ConfigError("reps must be >= 1")
        if not self.methods:
            raise ConfigError("methods must be nonempty")
        known = LOWDIM_METHODS if self.regime == "lowdim" else HIGHDIM_METHODS
        bad = [x for x in self.methods if x not in known]
        if bad:
            raise ConfigError(f"methods {bad} are not available in the {self.regime} regime")
        if not self.m or any(b <= a for a, b in zip(self.m, self.m[1:])) or self.m[0] < 1:
            raise ConfigError("m-grid must be strictly increasing positive integers")
        if any(d not in DISTRIBUTIONS for d in self.dist) or not self.dist:
            raise ConfigError(f"dist must be drawn from {DISTRIBUTIONS}")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if not 0 < self.validation_fraction <= 1:
            raise ConfigError("validation_fraction must lie in (0, 1]")
        if not self.c_grid or min(self.c_grid) <= 0:
            raise ConfigError("c_grid must hold positive multipliers")

    def full_scale(self) -> "ExperimentConfig":
        if self.regime == "lowdim":
            return replace(self, m=(10, 50, 100, 200, 300, 400, 500), reps=500)
        return replace(self, m=(10, 20, 30, 40, 50), reps=100)


_TUPLE_FIELDS = {"m": int, "dist": str, "methods": str, "c_grid": float}
_SCALAR_FIELDS = {"regime": str, "n": int, "p": int, "s": int, "reps": int, "seed": int, "alpha": float,
                  "validation_fraction": float}


def parse_config(text: str, **overrides) -> ExperimentConfig:
    """Parse flat ``key = value`` lines; lists are comma separated, ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (part.strip() for part in line.partition("="))
        if not sep or not key:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        if key in _TUPLE_FIELDS:
            values[key] = tuple(_TUPLE_FIELDS[key](v.strip()) for v in value.split(",") if v.strip())
        elif key in _SCALAR_FIELDS:
            try:
                values[key] = _SCALAR_FIELDS[key](value)
            except ValueError as exc:
                raise ConfigError(f"line {lineno}: bad value for {key}: {value!r}") from exc
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    if "methods" not in values and values.get("regime") == "highdim":
        values["methods"] = HIGHDIM_METHODS
    if "m" not in values and values.get("regime") == "highdim":
        values["m"] = (10, 20)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**values)


def load_config(path, **overrides) -> ExperimentConfig:
    return parse_config(Path(path).read_text(), **overrides)


def cell_seed(seed: int, rep: int, m: int, dist: str) -> int:
    words = SeedSequence(seed, spawn_key=(rep, m, DISTRIBUTIONS.index(dist))).generate_state(2, np.uint32)
    return int(words[0]) | (int(words[1]) << 32)


@dataclass
class Record:
    rep: int
    method: str
    m: int
    dist: str
    l2_error: float = math.nan
    rounds: int = 0
    comm_values: int = 0
    coverage: float | None = None
    width: float | None = None
    failed: bool = False


def _slope_ci_stats(shards, beta, tau, beta_star, alpha):
    v = distributed_variance(shards, beta, tau)
    lo, hi = conf_intervals(beta, v.sigma_hat, v.N, alpha)
    covered = (lo[1:] <= beta_star[1:]) & (beta_star[1:] <= hi[1:])
    return float(np.mean(covered)), float(np.mean(hi[1:] - lo[1:]))


def _lowdim_cell(config, rep, m, dist, methods):
    gen = GenConfig(config.n, config.p, m, dist, "lowdim", seed=cell_seed(config.seed, rep, m, dist))
    beta_star = default_beta(config.p)
    shards = generate(gen, beta_star)
    p, n = config.p, config.n
    one_shot = (m - 1) * p
    out = {}
    init = None

    def dc_init():
        nonlocal init
        if init is None:
            init = est.dc_ols(shards)
        return init

    for method in methods:
        rec = Record(rep, method, m, dist)
        try:
            if method == "global_ahr":
                beta = est.centralized_ahr(shards)
                rec.comm_values = (m - 1) * n * (p + 1)
            elif method == "dc_ahr":
                beta = est.dc_ahr(shards)
                rec.rounds, rec.comm_values = 1, one_shot
            elif method == "dc_ols":
                beta = dc_init()
                rec.rounds, rec.comm_values = 1, one_shot
            elif method == "dist_ols":
                beta, trace = est.distributed_ols(shards, dc_init())
                rec.rounds, rec.comm_values = trace.n_rounds + 1, trace.ledger.values_sent + one_shot
                rec.coverage, rec.width = _slope_ci_stats(shards, beta, math.inf, beta_star, config.alpha)
            elif method == "dist_ahr":
                validation = generate_validation(gen, max(1, int(config.validation_fraction * gen.N)), beta_star)
                fit = est.tuned_distributed_ahr(shards, dc_init(), validation, config.c_grid)
                beta, trace = fit.beta, fit.trace
                rec.rounds, rec.comm_values = trace.n_rounds + 1, trace.ledger.values_sent + one_shot
                rec.coverage, rec.width = _slope_ci_stats(shards, beta, fit.tau, beta_star, config.alpha)
            rec.l2_error = float(np.linalg.norm(beta - beta_star))
        except Exception as exc:  # one failed cell must not abort the study
            log.warning("rep %d m=%d %s %s failed: %s", rep, m, dist, method, exc)
            rec.failed = True
        out[method] = rec
    return [out[mth] for mth in methods]


def _highdim_cell(config, rep, m, dist, methods):
    gen = GenConfig(config.n, config.p, m, dist, "highdim", s=config.s, seed=cell_seed(config.seed, rep, m, dist))
    beta_star = default_beta(config.p, "highdim", config.s)
    shards = generate(gen, beta_star)
    validation = generate_validation(gen, max(1, int(config.validation_fraction * gen.N)), beta_star)
    fits = hd.highdim_fits(shards, validation, methods, s=config.s)
    records = []
    for method in methods:
        rec = Record(rep, method, m, dist)
        res = fits.get(method)
        if isinstance(res, Exception) or res is None:
            log.warning("rep %d m=%d %s %s failed: %s", rep, m, dist, method, res)
            rec.failed = True
        else:
            rec.l2_error = float(np.linalg.norm(res.beta - beta_star))
            rec.rounds, rec.comm_values = res.rounds, res.comm_values
        records.append(rec)
    return records


def run_replication(config: ExperimentConfig, rep_index: int) -> list[Record]:
    """All (m, dist, method) records of one replication, in config order."""
    cell = _lowdim_cell if config.regime == "lowdim" else _highdim_cell
    records = []
    with threadpool_limits(limits=1):
        for m in config.m:
            for dist in config.dist:
                records.extend(cell(config, rep_index, m, dist, config.methods))
    return records


def _run_one(args):
    config, rep = args
    return run_replication(config, rep)


def run_replications(config: ExperimentConfig, workers: int = 1) -> list[Record]:
    jobs = [(config, rep) for rep in range(config.reps)]
    if workers <= 1:
        batches = map(_run_one, jobs)
        return [r for batch in batches for r in batch]
    with ProcessPoolExecutor(max_workers=workers) as pool_:
        return [r for batch in pool_.map(_run_one, jobs) for r in batch]


@dataclass
class McSummary:
    method: str
    m: int
    dist: str
    l2_mean: float
    l2_sd: float
    coverage_mean: float | None
    coverage_sd: float | None
    width_mean: float | None
    width_sd: float | None
    rounds_mean: float
    comm_values_mean: float
    reps: int
    failures: int = 0


def _mean_sd(values):
    if not values:
        return None, None
    a = np.asarray(values, dtype=float)
    return float(a.mean()), float(a.std(ddof=1)) if a.size > 1 else 0.0


def summarize(records, config: ExperimentConfig) -> list[McSummary]:
    cells = {}
    for rec in sorted(records, key=lambda r: r.rep):
        cells.setdefault((rec.method, rec.m, rec.dist), []).append(rec)
    out = []
    for m in config.m:
        for dist in config.dist:
            for method in config.methods:
                recs = cells.get((method, m, dist), [])
                ok = [r for r in recs if not r.failed]
                l2 = _mean_sd([r.l2_error for r in ok])
                cov = _mean_sd([r.coverage for r in ok if r.coverage is not None])
                wid = _mean_sd([r.width for r in ok if r.width is not None])
                out.append(McSummary(
                    method, m, dist,
                    l2[0] if l2[0] is not None else math.nan, l2[1] if l2[1] is not None else math.nan,
                    cov[0], cov[1], wid[0], wid[1],
                    float(np.mean([r.rounds for r in ok])) if ok else math.nan,
                    float(np.mean([r.comm_values for r in ok])) if ok else math.nan,
                    len(recs), len(recs) - len(ok),
                ))
    return out


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{x:.6g}"


def write_estimation_csv(path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ESTIMATION_HEADER)
        for r in records:
            w.writerow([r.rep, r.method, r.m, r.dist, FAILED if r.failed else fmt(r.l2_error), r.rounds, r.comm_values])


def write_coverage_csv(path, summaries) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("# coverage_sd/width_sd: standard deviation across replications of the per-replication "
                 "slope-averaged coverage proportion / interval width\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COVERAGE_HEADER)
        for s in summaries:
            if s.coverage_mean is None:
                continue
            w.writerow([s.method, s.m, s.dist, fmt(s.coverage_mean), fmt(s.coverage_sd),
                        fmt(s.width_mean), fmt(s.width_sd)])


def write_summary_csv(path, summaries) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for s in summaries:
            w.writerow([s.method, s.m, s.dist, fmt(s.l2_mean), fmt(s.l2_sd), fmt(s.coverage_mean),
                        fmt(s.coverage_sd), fmt(s.width_mean), fmt(s.width_sd), fmt(s.rounds_mean),
                        fmt(s.comm_values_mean), s.failures])


@dataclass
class ExperimentResult:
    records: list
    summaries: list
    paths: dict = field(default_factory=dict)

    def summary(self, method, m, dist) -> McSummary:
        for s in self.summaries:
            if (s.method, s.m, s.dist) == (method, m, dist):
                return s
        raise KeyError((method, m, dist))


def run_experiment(config: ExperimentConfig, out_dir=None, workers: int = 1) -> ExperimentResult:
    """Run all replications and, when ``out_dir`` is given, write estimation/coverage/summary CSVs."""
    records = run_replications(config, workers)
    summaries = summarize(records, config)
    result = ExperimentResult(records, summaries)
    if out_dir is not None:
        out = Path(out_dir)
        try:
            out.mkdir(parents=True, exist_ok=True)
            result.paths = {
                "estimation": out / "estimation.csv",
                "coverage": out / "coverage.csv",
                "summary": out / "summary.csv",
            }
            write_estimation_csv(result.paths["estimation"], records)
            write_coverage_csv(result.paths["coverage"], summaries)
            write_summary_csv(result.paths["summary"], summaries)
        except OSError as exc:
            raise OSError(f"cannot write results to {os.fspath(out)}: {exc}") from exc
    return result
