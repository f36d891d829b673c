"""Quick oracle-equivalence checks runnable from the command line.

Each check compares a library result with an independent computation
(quadrature, dense linear algebra, support enumeration) and returns a
``(name, passed, detail)`` triple.
"""

import itertools
import math

import numpy as np
from scipy import integrate
from scipy.stats import multivariate_normal, norm

from .ep import SolverOptions, solve
from .gaussian import KernelSpec, woodbury_posterior
from .moments import (Gaussian1d, bernoulli_probit_tilted_moments, probit_gaussian_moments,
                      spike_slab_tilted_moments)
from .prior import MmvProblem, PriorConfig, sample_gamma_chain, sample_problem


def _quad_moments(density, lo, hi):
    kw = dict(epsabs=1e-13, epsrel=1e-11, limit=200)
    z0 = integrate.quad(density, lo, hi, **kw)[0]
    m = integrate.quad(lambda g: g * density(g), lo, hi, **kw)[0] / z0
    v = integrate.quad(lambda g: (g - m) ** 2 * density(g), lo, hi, **kw)[0] / z0
    return z0, m, v


def check_moments(n=25, seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        mu, s2, q = rng.uniform(-3, 3), rng.uniform(0.05, 4), rng.uniform(0.05, 0.95)
        sd = math.sqrt(s2)
        lo, hi = mu - 10 * sd, mu + 10 * sd
        z1, m1, v1 = _quad_moments(lambda g: norm.cdf(g) * norm.pdf(g, mu, sd), lo, hi)
        z0, m0, v0 = _quad_moments(lambda g: norm.cdf(-g) * norm.pdf(g, mu, sd), lo, hi)
        got = probit_gaussian_moments(Gaussian1d(mu, s2))
        worst = max(worst, abs(got.mean - m1), abs(got.var - v1))
        w1, w0 = q * z1, (1 - q) * z0
        mean = (w1 * m1 + w0 * m0) / (w1 + w0)
        var = (w1 * (v1 + m1 ** 2) + w0 * (v0 + m0 ** 2)) / (w1 + w0) - mean ** 2
        got = bernoulli_probit_tilted_moments(Gaussian1d(mu, s2), q)
        worst = max(worst, abs(got.mean - mean), abs(got.var - var))
        # spike and slab: the slab branch is a product of two Gaussians
        tau = rng.uniform(0.2, 5)
        s0, sm, sv = _quad_moments(
            lambda x: norm.pdf(x, 0, math.sqrt(tau)) * norm.pdf(x, mu, sd), lo, hi)
        spike = (1 - q) * norm.pdf(0, mu, sd)
        b = q * s0 / (q * s0 + spike)
        got = spike_slab_tilted_moments(Gaussian1d(mu, s2), q, tau)
        worst = max(worst, abs(got.mean - b * sm),
                    abs(got.var - (b * (sv + sm ** 2) - (b * sm) ** 2)))
    return "moment kernels vs quadrature", bool(worst <= 1e-8), f"max abs error {worst:.2e}"


def check_woodbury(n=20, seed=1):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        N, D = rng.integers(1, 8), rng.integers(8, 20)
        A = rng.standard_normal((N, D)) / math.sqrt(N)
        s2 = rng.uniform(0.05, 1)
        lam, h = rng.uniform(0.1, 10, D), rng.standard_normal(D)
        yp = A.T @ rng.standard_normal(N)
        post = woodbury_posterior(A, s2, lam, h, yp)
        cov = np.linalg.inv(A.T @ A / s2 + np.diag(lam))
        worst = max(worst, np.abs(post.cov - cov).max(),
                    np.abs(post.mean - cov @ (yp / s2 + h)).max())
    return "Woodbury vs dense inverse", bool(worst <= 1e-8), f"max abs error {worst:.2e}"


def check_columns_decouple(seed=2):
    cfg = PriorConfig(6, 3, -0.5, KernelSpec("squared_exponential", 2.0, 2.0), 0.0, 1.0)
    prob, _ = sample_problem(cfg, 4, rng_seed=seed, max_resample=50)
    opts = SolverOptions(max_iters=2000, tol=1e-11)
    full = solve(prob, cfg, opts)
    one = PriorConfig(6, 1, -0.5, cfg.kernel, 0.0, 1.0)
    worst = 0.0
    for t in range(3):
        col = solve(MmvProblem(prob.A, prob.Y[:, t:t + 1], prob.noise_var), one, opts)
        worst = max(worst, np.abs(col.x_mean[:, 0] - full.x_mean[:, t]).max())
    return ("time-independent prior vs per-column solves", bool(worst <= 1e-6),
            f"max diff {worst:.2e}")


def check_bayes_oracle(n=5, seed=3, n_mc=100_000):
    cfg = PriorConfig(3, 2, -0.3, KernelSpec("squared_exponential", 1.0, 1.0), 0.9, 0.19)
    G = sample_gamma_chain(cfg, seed, n_samples=n_mc)
    P = norm.cdf(G).reshape(n_mc, -1)
    log_pz = {}
    for bits in itertools.product((0, 1), repeat=6):
        z = np.array(bits, bool)
        log_pz[bits] = math.log(np.mean(np.prod(np.where(z, P, 1 - P), axis=1)))
    devs = []
    for k in range(n):
        prob, _ = sample_problem(cfg, 2, rng_seed=seed + 1 + k, max_resample=50)
        lw, means = [], []
        for bits, lp in log_pz.items():
            Z = np.array(bits).reshape(3, 2)
            Xm = np.zeros((3, 2))
            for t in range(2):
                S = np.flatnonzero(Z[:, t])
                C = prob.noise_var * np.eye(2) + prob.A[:, S] @ prob.A[:, S].T
                lp += multivariate_normal.logpdf(prob.Y[:, t], np.zeros(2), C)
                Xm[S, t] = prob.A[:, S].T @ np.linalg.solve(C, prob.Y[:, t])
            lw.append(lp)
            means.append(Xm)
        w = np.exp(np.array(lw) - max(lw))
        exact = np.tensordot(w / w.sum(), np.array(means), axes=1)
        post = solve(prob, cfg, SolverOptions(max_iters=1000, tol=1e-9))
        devs.append(np.mean(np.abs(post.x_mean - exact)))
    mad = float(np.mean(devs))
    return "EP vs enumerated Bayes posterior", mad <= 0.05, f"mean abs deviation {mad:.3f}"


CHECKS = (check_moments, check_woodbury, check_columns_decouple, check_bayes_oracle)


def run_all():
    return [check() for check in CHECKS]
