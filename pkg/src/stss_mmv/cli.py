"""Command-line entry point ``stss-mmv``.

Subcommands::

    synth     write a synthetic problem file
    solve     solve a problem file and write the posterior summary
    exp1      undersampling sweep
    exp2      coherence sweep
    selftest  oracle-equivalence checks

Exit status is 0 on success, 2 on a configuration error and 3 on a
numerical failure that stops the run.
"""

import argparse
import csv
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import bench, selftest
from .ep import solve, write_diagnostics_csv
from .errors import ConfigurationError, NumericalFailure
from .metrics import support_f_measure
from .prior import sample_problem
from .problem_io import read_problem, write_problem

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _parser():
    p = argparse.ArgumentParser(prog="stss-mmv", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON file of ExperimentConfig keys")
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--seed", type=int, help="base seed (overrides the config)")
        sp.add_argument("--threads", type=int, help="worker processes (overrides the config)")
        return sp

    sp = common(sub.add_parser("synth", help="write a synthetic problem file"))
    sp.add_argument("--ratio", type=float, help="undersampling ratio N/D (default: fixed_ratio)")
    sp.add_argument("--coherence", type=float,
                    help="use column-correlated A with this r instead of i.i.d. Gaussian")
    sp.add_argument("--name", default="problem.txt", help="file name inside --out")

    sp = common(sub.add_parser("solve", help="solve a problem file"))
    sp.add_argument("problem", help="problem file written by synth")
    sp.add_argument("--method", default="spatiotemporal", choices=bench.METHODS)

    common(sub.add_parser("exp1", help="undersampling sweep"))
    common(sub.add_parser("exp2", help="coherence sweep"))
    common(sub.add_parser("selftest", help="oracle-equivalence checks"))
    return p


def _config(args):
    return bench.load_config(args.config, base_seed=args.seed, threads=args.threads)


def cmd_synth(args):
    cfg = _config(args)
    ratio = cfg.fixed_ratio if args.ratio is None else args.ratio
    if not 0 < ratio <= 1:
        raise ConfigurationError("ratio must lie in (0, 1]")
    kind, r = ("gaussian_iid", 0.0) if args.coherence is None else (
        "column_correlated", args.coherence)
    N = max(1, int(round(ratio * cfg.D)))
    problem, truth = sample_problem(cfg.truth_prior(), N, kind, cfg.snr_db,
                                    np.random.SeedSequence(cfg.base_seed), r=r)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, args.name)
    write_problem(path, problem, truth)
    print(f"wrote {path} (N={N}, D={cfg.D}, T={cfg.T}, active={int(truth.Z.sum())})")


def cmd_solve(args):
    cfg = _config(args)
    problem, truth = read_problem(args.problem)
    if (problem.D, problem.T) != (cfg.D, cfg.T):
        cfg = replace(cfg, D=problem.D, T=problem.T)
    post = solve(problem, cfg.method_prior(args.method), cfg.solver_options())
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "posterior.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i", "t", "x_mean", "x_var", "support_prob"])
        for i in range(problem.D):
            for t in range(problem.T):
                w.writerow([i, t, repr(float(post.x_mean[i, t])), repr(float(post.x_var[i, t])),
                            repr(float(post.support_prob[i, t]))])
    write_diagnostics_csv(post, os.path.join(args.out, "diagnostics.csv"))
    state = "converged" if post.converged else "not converged"
    print(f"{args.method}: {post.iterations} iterations, {state}; "
          f"{int(post.support.sum())} coefficients in the MAP support")
    if truth is not None:
        rep = support_f_measure(truth.Z, post.support_prob, X_true=truth.X, X_hat=post.x_mean)
        print(f"nmse={rep.nmse:.4f} precision={rep.precision:.4f} recall={rep.recall:.4f} "
              f"F={rep.f_measure:.4f}")
    print(f"wrote {path}")


def cmd_experiment(args):
    cfg = _config(args)
    done = [0]

    def progress(row):
        done[0] += 1
        logging.getLogger("stss_mmv.cli").info(
            "%d rows; last %s %s=%g F=%.3f", done[0], row.method, row.experiment,
            row.sweep_value, row.f_measure)

    rows = bench.run_to_directory(cfg, args.command, args.out, progress)
    failures = sum(r.failed for r in rows)
    print(f"{args.command}: {len(rows)} rows, {failures} failed solves, written to {args.out}")
    if rows and failures == len(rows):
        raise NumericalFailure("every solve failed")


def cmd_selftest(args):
    ok = True
    for name, passed, detail in selftest.run_all():
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
    return 0 if ok else 1


COMMANDS = {"synth": cmd_synth, "solve": cmd_solve, "exp1": cmd_experiment,
            "exp2": cmd_experiment, "selftest": cmd_selftest}


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args) or 0
    except (ConfigurationError, OSError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
