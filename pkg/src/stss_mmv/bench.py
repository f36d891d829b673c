"""Benchmark harness for the undersampling and coherence experiments.

Each experiment fixes one support realisation ``(Gamma, Z)`` drawn from the
spatio-temporal prior, then for every sweep value and repetition redraws the
nonzero coefficients, the forward matrix and the noise, and solves the
instance with every configured method.

Seeds
-----
The support of experiment ``k`` (1 or 2) is drawn from
``SeedSequence(base_seed, spawn_key=(k,))`` and the instance at sweep index
``i`` and repetition ``j`` from ``SeedSequence(base_seed, spawn_key=(k, i, j))``.
The ``seed`` column of the result CSV is the 64-bit value generated by that
instance sequence.
"""

import csv
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, fields

import numpy as np

from .ep import SolverOptions, solve
from .errors import ConfigurationError, NumericalFailure
from .gaussian import KernelSpec
from .metrics import support_f_measure
from .prior import (PriorConfig, calibrate_mu0_for_sparsity, sample_gamma_chain,
                    sample_problem, sample_support)

logger = logging.getLogger(__name__)

METHODS = ("spatiotemporal", "spatial", "mmv_joint", "independent")
RESULT_HEADER = ["experiment", "method", "sweep_value", "seed", "nmse", "precision", "recall",
                 "f_measure", "iterations", "converged", "wall_ms"]
SUMMARY_HEADER = ["experiment", "method", "sweep_value", "n", "failures", "nmse_mean", "nmse_se",
                  "f_mean", "f_se"]


def _grid(lo, hi, step):
    n = int(round((hi - lo) / step)) + 1
    return tuple(round(lo + k * step, 10) for k in range(n))


@dataclass(frozen=True)
class ExperimentConfig:
    """Settings shared by both experiments.

    `beta` defaults to ``1 - alpha**2``. `kernel_variance` is the diagonal
    of ``Sigma0``; `mu0` is calibrated from `target_active` per run.
    """

    D: int = 100
    T: int = 100
    alpha: float = 0.99
    beta: float = None
    target_active: float = 20.0
    kernel_lengthscale: float = 5.0
    kernel_variance: float = 100.0
    slab_var: float = 1.0
    snr_db: float = 10.0
    ratios: tuple = _grid(0.05, 0.95, 0.05)
    coherences: tuple = _grid(0.05, 0.95, 0.05)
    fixed_ratio: float = 0.4
    repetitions_exp1: int = 100
    repetitions_exp2: int = 50
    base_seed: int = 0
    methods: tuple = METHODS
    max_iters: int = 200
    tol: float = 1e-6
    damping: float = 0.7
    threads: int = 1
    record_wall_time: bool = False

    def __post_init__(self):
        if self.beta is None:
            object.__setattr__(self, "beta", 1.0 - self.alpha ** 2)
        for name in ("ratios", "coherences", "methods"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.D < 2 or self.T < 1:
            raise ConfigurationError("need D >= 2 and T >= 1")
        if not all(0.0 < r <= 1.0 for r in self.ratios + (self.fixed_ratio,)):
            raise ConfigurationError("undersampling ratios must lie in (0, 1]")
        if not all(0.0 <= r < 1.0 for r in self.coherences):
            raise ConfigurationError("coherence values must lie in [0, 1)")
        if self.repetitions_exp1 < 1 or self.repetitions_exp2 < 1:
            raise ConfigurationError("repetitions must be at least 1")
        unknown = set(self.methods) - set(METHODS)
        if unknown or not self.methods:
            raise ConfigurationError(f"unknown or empty method list: {sorted(unknown)}")
        if self.threads < 1:
            raise ConfigurationError("threads must be at least 1")
        if not 0 <= self.base_seed < 2 ** 64:
            raise ConfigurationError("base_seed must be an unsigned 64-bit integer")
        # validates the prior parameters too
        self.truth_prior()

    def kernel(self, diagonal=False):
        if diagonal:
            return KernelSpec("diagonal", self.kernel_variance)
        return KernelSpec("squared_exponential", self.kernel_variance, self.kernel_lengthscale)

    def mu0(self):
        return calibrate_mu0_for_sparsity(self.target_active, self.D, self.kernel_variance)

    def truth_prior(self):
        """Prior the ground truth is drawn from (the spatio-temporal one)."""
        return self.method_prior("spatiotemporal")

    def method_prior(self, method):
        """Solver prior for one of the four method configurations."""
        alpha, beta, diagonal = {
            "spatiotemporal": (self.alpha, self.beta, False),
            "spatial": (0.0, 1.0, False),
            "mmv_joint": (1.0, 0.0, False),
            "independent": (0.0, 1.0, True),
        }[method]
        return PriorConfig(self.D, self.T, self.mu0(), self.kernel(diagonal), alpha, beta,
                           slab_var=self.slab_var)

    def solver_options(self):
        return SolverOptions(max_iters=self.max_iters, tol=self.tol, damping=self.damping,
                             full_covariance=False)


def load_config(path, **overrides):
    """Read an ExperimentConfig from a JSON object of field names.

    Keyword arguments that are not None override file values.
    """
    data = {}
    if path is not None:
        with open(path) as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise ConfigurationError("config file must hold a JSON object")
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ExperimentConfig(**data)
    except TypeError as err:
        raise ConfigurationError(str(err)) from None


def dump_config(cfg):
    return json.dumps(asdict(cfg), indent=2, sort_keys=True)


@dataclass(frozen=True)
class ResultRow:
    experiment: str
    method: str
    sweep_value: float
    seed: int
    nmse: float
    precision: float
    recall: float
    f_measure: float
    iterations: int
    converged: bool
    wall_ms: float = None

    @property
    def failed(self):
        return math.isnan(self.nmse)


def instance_seed(base_seed, experiment, sweep_index, repetition):
    ss = np.random.SeedSequence(base_seed, spawn_key=(experiment, sweep_index, repetition))
    return int(ss.generate_state(1, np.uint64)[0])


def fixed_support(cfg, experiment):
    """The one ``(Gamma, Z)`` realisation used throughout an experiment."""
    rng = np.random.default_rng(np.random.SeedSequence(cfg.base_seed, spawn_key=(experiment,)))
    prior = cfg.truth_prior()
    for _ in range(100):
        Gamma = sample_gamma_chain(prior, rng)
        Z = sample_support(Gamma, rng)
        if Z.any():
            return Gamma, Z
    raise ConfigurationError("prior produces empty supports")


def _solve_instance(cfg, experiment, sweep_index, sweep_value, rep, support):
    """Generate one instance and score every method on it."""
    exp_no = {"exp1": 1, "exp2": 2}[experiment]
    seed = instance_seed(cfg.base_seed, exp_no, sweep_index, rep)
    if experiment == "exp1":
        ratio, kind, r = sweep_value, "gaussian_iid", 0.0
    else:
        ratio, kind, r = cfg.fixed_ratio, "column_correlated", sweep_value
    N = max(1, int(round(ratio * cfg.D)))
    problem, truth = sample_problem(cfg.truth_prior(), N, kind, cfg.snr_db, seed, r=r,
                                    support=support)
    opts = cfg.solver_options()
    rows = []
    for method in cfg.methods:
        t0 = time.perf_counter()
        try:
            post = solve(problem, cfg.method_prior(method), opts)
        except NumericalFailure as err:
            logger.warning("%s %s=%g rep %d: %s", method, experiment, sweep_value, rep, err)
            nan = float("nan")
            rows.append(ResultRow(experiment, method, sweep_value, seed, nan, nan, nan, nan,
                                  len(err.diagnostics or ()), False, None))
            continue
        wall = 1e3 * (time.perf_counter() - t0) if cfg.record_wall_time else None
        rep_ = support_f_measure(truth.Z, post.support_prob, X_true=truth.X, X_hat=post.x_mean)
        rows.append(ResultRow(experiment, method, sweep_value, seed, rep_.nmse, rep_.precision,
                              rep_.recall, rep_.f_measure, post.iterations, post.converged, wall))
    return rows


def _run(cfg, experiment, sweep, reps):
    exp_no = {"exp1": 1, "exp2": 2}[experiment]
    support = fixed_support(cfg, exp_no)
    tasks = [(i, v, j) for i, v in enumerate(sweep) for j in range(reps)]
    if cfg.threads == 1:
        for i, v, j in tasks:
            yield from _solve_instance(cfg, experiment, i, v, j, support)
        return
    with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
        futures = [pool.submit(_solve_instance, cfg, experiment, i, v, j, support)
                   for i, v, j in tasks]
        for fut in as_completed(futures):
            yield from fut.result()


def run_experiment1(cfg):
    """Undersampling sweep over ``cfg.ratios``; yields ResultRow as instances finish."""
    return _run(cfg, "exp1", cfg.ratios, cfg.repetitions_exp1)


def run_experiment2(cfg):
    """Coherence sweep over ``cfg.coherences`` at ``cfg.fixed_ratio``."""
    return _run(cfg, "exp2", cfg.coherences, cfg.repetitions_exp2)


@dataclass(frozen=True)
class SummaryRow:
    experiment: str
    method: str
    sweep_value: float
    n: int
    failures: int
    nmse_mean: float
    nmse_se: float
    f_mean: float
    f_se: float


def _mean_se(values):
    v = np.asarray(values, float)
    se = float(np.std(v, ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return float(np.mean(v)), se


def aggregate(rows):
    """Mean and standard error of NMSE and F per (experiment, method, sweep value).

    Failed solves are excluded from the statistics and counted in
    ``failures``. A cell with no successful row is dropped with a warning.
    """
    cells = {}
    for row in rows:
        cells.setdefault((row.experiment, row.method, row.sweep_value), []).append(row)
    out = []
    for key in sorted(cells):
        ok = [r for r in cells[key] if not r.failed]
        failures = len(cells[key]) - len(ok)
        if not ok:
            logger.warning("no successful runs for %s; cell omitted", key)
            continue
        nm, nse = _mean_se([r.nmse for r in ok])
        fm, fse = _mean_se([r.f_measure for r in ok])
        out.append(SummaryRow(*key, len(ok), failures, nm, nse, fm, fse))
    return out


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_results_csv(rows, path):
    """Result rows sorted by (experiment, method, sweep_value, seed)."""
    rows = sorted(rows, key=lambda r: (r.experiment, r.method, r.sweep_value, r.seed))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_HEADER)
        for r in rows:
            w.writerow([_fmt(getattr(r, k)) for k in RESULT_HEADER])


def write_summary_csv(summary, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for s in summary:
            w.writerow([_fmt(getattr(s, k)) for k in SUMMARY_HEADER])


def read_results_csv(path):
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(ResultRow(
                rec["experiment"], rec["method"], float(rec["sweep_value"]), int(rec["seed"]),
                float(rec["nmse"]), float(rec["precision"]), float(rec["recall"]),
                float(rec["f_measure"]), int(rec["iterations"]), rec["converged"] == "1",
                float(rec["wall_ms"]) if rec["wall_ms"] else None))
    return rows


def run_to_directory(cfg, experiment, out_dir, progress=None):
    """Run one experiment and write ``<experiment>_results.csv`` and ``_summary.csv``.

    Returns the result rows. `progress` is called with each row as it arrives.
    """
    os.makedirs(out_dir, exist_ok=True)
    runner = run_experiment1 if experiment == "exp1" else run_experiment2
    rows = []
    for row in runner(cfg):
        rows.append(row)
        if progress is not None:
            progress(row)
    write_results_csv(rows, os.path.join(out_dir, f"{experiment}_results.csv"))
    write_summary_csv(aggregate(rows), os.path.join(out_dir, f"{experiment}_summary.csv"))
    return rows

