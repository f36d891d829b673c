"""Dense reference EP used to check the structured solver.

Everything is built with explicit matrices: the x-joint per column by a
direct inverse, and the gamma-joint over all ``D*T`` latent values at once
from the full prior covariance of the chain. No chain messages, Woodbury
identities or cancellation-free cavity formulas are involved, so agreement
with the solver checks those pieces. The one-dimensional moment kernels are
shared with the library (they are checked against quadrature elsewhere).
"""

import numpy as np
from scipy.special import expit, logit
from scipy.stats import norm

from stss_mmv.moments import (Gaussian1d, bernoulli_probit_tilted_moments,
                              spike_slab_tilted_moments)

P_EPS = 1e-10


def _lo(p):
    return logit(np.clip(p, P_EPS, 1 - P_EPS))


def chain_prior(mu0, Sigma0, alpha, beta, T):
    """Mean and covariance of vec(Gamma) (time-major) under the chain prior."""
    D = len(mu0)
    v = np.empty(T)
    v[0] = 1.0
    for t in range(1, T):
        v[t] = alpha ** 2 * v[t - 1] + beta
    K = np.empty((T * D, T * D))
    for s in range(T):
        for t in range(T):
            K[s * D:(s + 1) * D, t * D:(t + 1) * D] = alpha ** abs(t - s) * v[min(s, t)] * Sigma0
    return np.tile(mu0, T), K


def _gaussian_with_sites(m0, K, lam, h):
    # prior N(m0, K) (K may be singular) times exp(-lam x^2/2 + h x)
    s = np.sqrt(lam)
    B = np.eye(len(lam)) + s[:, None] * K * s[None, :]
    KS = K * s[None, :]
    cov = K - KS @ np.linalg.solve(B, KS.T)
    mean = m0 + cov @ (h - lam * m0)
    return mean, cov


def _clip(neg, m_t, m_c, v_c, min_prec, prec, h):
    return (np.where(neg, min_prec, prec),
            np.where(neg, m_t * (min_prec + 1 / v_c) - m_c / v_c, h))


def reference_ep(A, Y, noise_var, mu0, Sigma0, alpha, beta, slab_var=1.0,
                 damping=0.7, max_iters=2000, tol=1e-12, fixed_p0=None, min_prec=1e-3):
    """Run the dense reference EP.

    With `fixed_p0` the latent field is dropped and every coefficient gets
    the fixed prior activation probability: plain spike-and-slab EP.

    Returns x_mean, support_prob, gamma_mean (D, T) and the list of
    per-iteration ``(x_mean, support_prob)`` pairs.
    """
    N, D = A.shape
    T = Y.shape[1]
    m0, K = chain_prior(np.broadcast_to(mu0, (D,)).astype(float), Sigma0, alpha, beta, T)
    lam2 = np.zeros((D, T))
    h2 = np.zeros((D, T))
    p2 = np.full((D, T), 0.5)
    lam3 = np.zeros(D * T)
    h3 = np.zeros(D * T)
    if fixed_p0 is None:
        p3 = norm.cdf(m0 / np.sqrt(1 + np.diag(K))).reshape(T, D).T
    else:
        p3 = np.full((D, T), float(fixed_p0))
    d = damping
    x_mean = np.zeros((D, T))
    support = expit(_lo(p2) + _lo(p3))
    g_mean = m0.reshape(T, D).T
    history = []

    def x_joint():
        mean, var = np.empty((D, T)), np.empty((D, T))
        for t in range(T):
            C = np.linalg.inv(A.T @ A / noise_var + np.diag(lam2[:, t]))
            mean[:, t] = C @ (A.T @ Y[:, t] / noise_var + h2[:, t])
            var[:, t] = np.diag(C)
        return mean, var

    for it in range(1, max_iters + 1):
        prev_x, prev_s = x_mean, support
        # f2
        if it == 1:
            v_t = p3 * slab_var
            new_lam, new_h, new_p = 1 / v_t, np.zeros((D, T)), np.full((D, T), 0.5)
        else:
            V = x_var
            v_c = 1 / (1 / V - lam2)
            m_c = v_c * (x_mean / V - h2)
            tilt = spike_slab_tilted_moments(Gaussian1d(m_c, v_c), p3, slab_var)
            v_t = np.maximum(tilt.var, 1e-12)
            new_lam = 1 / v_t - 1 / v_c
            new_h = tilt.mean / v_t - m_c / v_c
            new_lam, new_h = _clip(~(new_lam > min_prec), tilt.mean, m_c, v_c, min_prec,
                                   new_lam, new_h)
            new_p = expit(_lo(tilt.bernoulli_prob) - _lo(p3))
        lam2 = d * new_lam + (1 - d) * lam2
        h2 = d * new_h + (1 - d) * h2
        p2 = expit(d * _lo(new_p) + (1 - d) * _lo(p2))
        x_mean, x_var = x_joint()

        # f3 against the dense gamma joint
        if fixed_p0 is None:
            gm, gc = _gaussian_with_sites(m0, K, lam3, h3)
            gv = np.diag(gc)
            v_c = 1 / (1 / gv - lam3)
            m_c = v_c * (gm / gv - h3)
            q = p2.T.ravel()
            tilt = bernoulli_probit_tilted_moments(Gaussian1d(m_c, v_c), q)
            v_t = np.maximum(tilt.var, 1e-12)
            new_lam = 1 / v_t - 1 / v_c
            new_h = tilt.mean / v_t - m_c / v_c
            tiny = np.abs(new_lam) <= 1e-10 / v_c
            new_lam = np.where(tiny, 0.0, new_lam)
            new_h = np.where(tiny, 0.0, new_h)
            new_lam, new_h = _clip(new_lam < 0, tilt.mean, m_c, v_c, min_prec, new_lam, new_h)
            new_p = expit(_lo(tilt.bernoulli_prob) - _lo(q))
            lam3 = d * new_lam + (1 - d) * lam3
            h3 = d * new_h + (1 - d) * h3
            p3 = expit(d * _lo(new_p.reshape(T, D).T) + (1 - d) * _lo(p3))
            g_mean = _gaussian_with_sites(m0, K, lam3, h3)[0].reshape(T, D).T
        support = expit(_lo(p2) + _lo(p3))
        history.append((x_mean, support))
        delta = max(np.abs(x_mean - prev_x).max(), np.abs(support - prev_s).max())
        if delta <= tol:
            break
    return x_mean, support, g_mean, history
