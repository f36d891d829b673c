"""Tilted moments for EP moment matching.

All functions are vectorised: scalar or array arguments broadcast against
each other, which is how the solver runs a whole parallel sweep at once.
Zeroth moments are returned on the log scale.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_ndtr, logit, ndtr, ndtri

PROB_FLOOR = 1e-10
PROBIT_LIMIT = 8.0
VAR_FLOOR = 1e-12

_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass(frozen=True)
class Gaussian1d:
    mean: np.ndarray
    var: np.ndarray


@dataclass(frozen=True)
class TiltedMoments:
    """Moments of a tilted distribution ``f(.) * cavity(.)``.

    ``bernoulli_prob`` is the tilted probability of ``z = 1`` and is
    ``None`` for tilts that carry no binary variable.
    """

    log_norm: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    bernoulli_prob: np.ndarray = None


def clamp_prob(p):
    return np.clip(p, PROB_FLOOR, 1.0 - PROB_FLOOR)


def probit(x):
    """Standard normal CDF, with the argument clamped to ``[-8, 8]``."""
    return ndtr(np.clip(x, -PROBIT_LIMIT, PROBIT_LIMIT))


def probit_inverse(p):
    """Inverse standard normal CDF, with the result clamped to ``[-8, 8]``."""
    return np.clip(ndtri(p), -PROBIT_LIMIT, PROBIT_LIMIT)


def _norm_logpdf(x, mean, var):
    return -0.5 * (x - mean) ** 2 / var - 0.5 * np.log(var) - _LOG_SQRT_2PI


def probit_gaussian_moments(cavity):
    """Moments of ``Phi(g) N(g | mu, s2)`` normalised over ``g``.

    With ``u = mu / sqrt(1 + s2)`` the normaliser is ``Phi(u)``. The ratio
    ``N(u) / Phi(u)`` is formed in the log domain, which stays accurate in
    the far left tail where ``Phi`` underflows.
    """
    mu = np.asarray(cavity.mean, float)
    s2 = np.asarray(cavity.var, float)
    root = np.sqrt(1.0 + s2)
    u = mu / root
    log_z = log_ndtr(u)
    ratio = np.exp(-0.5 * u * u - _LOG_SQRT_2PI - log_z)
    mean = mu + s2 * ratio / root
    var = s2 - s2 * s2 * ratio * (u + ratio) / (1.0 + s2)
    return TiltedMoments(log_z, mean, np.maximum(var, 0.0))


def spike_slab_tilted_moments(cavity_x, cavity_p, slab_var):
    """Moments of ``[(1-z) delta(x) + z N(x|0, slab_var)] N(x|m, v) Ber(z|p)``.

    Summed over ``z``. The endpoints ``p = 0`` and ``p = 1`` are handled
    exactly; no probability clamping happens here.
    """
    m = np.asarray(cavity_x.mean, float)
    v = np.asarray(cavity_x.var, float)
    p = np.asarray(cavity_p, float)
    with np.errstate(divide="ignore"):
        log_w1 = np.log(p) + _norm_logpdf(0.0, m, v + slab_var)
        log_w0 = np.log1p(-p) + _norm_logpdf(0.0, m, v)
    log_norm = np.logaddexp(log_w0, log_w1)
    with np.errstate(invalid="ignore"):
        b = expit(log_w1 - log_w0)
    b = np.where(np.isnan(b), p, b)
    mean1 = m * slab_var / (v + slab_var)
    var1 = v * slab_var / (v + slab_var)
    mean = b * mean1
    var = b * var1 + b * (1.0 - b) * mean1 * mean1
    return TiltedMoments(log_norm, mean, var, b)


def bernoulli_probit_tilted_moments(cavity_gamma, cavity_q):
    """Moments of ``Ber(z | Phi(g)) N(g | mu, s2) Ber(z | q)`` summed over ``z``.

    The ``z = 0`` branch uses ``1 - Phi(g) = Phi(-g)``, i.e. the probit
    moments with the mean sign-flipped.
    """
    mu = np.asarray(cavity_gamma.mean, float)
    s2 = np.asarray(cavity_gamma.var, float)
    q = np.asarray(cavity_q, float)
    pos = probit_gaussian_moments(Gaussian1d(mu, s2))
    neg = probit_gaussian_moments(Gaussian1d(-mu, s2))
    neg_mean = -neg.mean
    with np.errstate(divide="ignore"):
        log_w1 = np.log(q) + pos.log_norm
        log_w0 = np.log1p(-q) + neg.log_norm
    log_norm = np.logaddexp(log_w0, log_w1)
    with np.errstate(invalid="ignore"):
        b = expit(log_w1 - log_w0)
    b = np.where(np.isnan(b), q, b)
    mean = b * pos.mean + (1.0 - b) * neg_mean
    # within-branch plus between-branch spread; avoids E[g^2] - mean^2
    var = b * pos.var + (1.0 - b) * neg.var + b * (1.0 - b) * (pos.mean - neg_mean) ** 2
    return TiltedMoments(log_norm, mean, np.maximum(var, 0.0), b)


def combine_bernoulli(p2, p3):
    """Normalised product of two Bernoulli distributions.

    ``p2 p3 / (p2 p3 + (1 - p2)(1 - p3))``, evaluated as a sum of log-odds.
    """
    return expit(logit(clamp_prob(p2)) + logit(clamp_prob(p3)))
