"""Expectation propagation for the spatio-temporal spike-and-slab model.

The posterior over ``(X, Z, Gamma)`` is approximated by a product of

* the exact Gaussian likelihood term on each ``x_t``,
* a Gaussian x Bernoulli site on every ``(x_it, z_it)`` for the spike-and-slab
  factor (``f2``),
* a Bernoulli x Gaussian site on every ``(z_it, gamma_it)`` for the probit
  link (``f3``),
* Gaussian chain messages for the Markov prior on ``Gamma`` (``f4``).

One outer iteration runs a parallel ``f2`` sweep, a parallel ``f3`` sweep
and a forward-backward pass over the chain, refreshing the joint after each.
Per-coefficient quantities are ``(D, T)`` arrays; per-time covariance
blocks are stacked as ``(T, D, D)``.
"""

import csv
import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit, logit

from .errors import ConfigurationError, NumericalFailure
from .gaussian import diag_site_update, safe_cholesky, symmetrize, woodbury_batch
from .moments import (VAR_FLOOR, Gaussian1d, bernoulli_probit_tilted_moments,
                      clamp_prob, combine_bernoulli, spike_slab_tilted_moments)
from .prior import marginal_activation_prob

logger = logging.getLogger(__name__)

# new site precisions this close to zero (relative to the cavity) count as zero
_ZERO_PREC_RTOL = 1e-10


@dataclass(frozen=True)
class SolverOptions:
    """Stopping rule and update control.

    Parameters
    ----------
    max_iters : int
        Outer iterations (one ``f2``, ``f3``, ``f4`` cycle each).
    tol : float
        Stop when the largest absolute change of ``x_mean`` and
        ``support_prob`` between iterations is at most this.
    damping : float in (0, 1]
        Fraction of the new site value kept; 1 means undamped. Applied to
        natural parameters of Gaussian sites and log-odds of Bernoulli sites.
    min_site_var : float
        Floor on Gaussian site variances.
    max_skip_fraction : float
        A sweep that skips more than this fraction of sites is a failure.
    negative_sites : {"clip", "skip"}
        Handling of updates that would give a site a precision below
        `min_site_prec`. "clip" sets the precision to `min_site_prec` and
        picks the site mean so the joint mean still matches the tilted
        mean; "skip" leaves the site unchanged for this sweep.
    min_site_prec : float
        Precision used by the "clip" rule.
    full_covariance : bool
        Attach the dense ``(T, D, D)`` covariance blocks to the result.
    """

    max_iters: int = 200
    tol: float = 1e-6
    damping: float = 0.7
    min_site_var: float = 1e-10
    max_skip_fraction: float = 0.5
    negative_sites: str = "clip"
    min_site_prec: float = 1e-3
    full_covariance: bool = True

    def __post_init__(self):
        if self.max_iters < 1:
            raise ConfigurationError("max_iters must be at least 1")
        if self.tol < 0:
            raise ConfigurationError("tol must be nonnegative")
        if not 0.0 < self.damping <= 1.0:
            raise ConfigurationError("damping must lie in (0, 1]")
        if not self.min_site_var > 0:
            raise ConfigurationError("min_site_var must be positive")
        if self.negative_sites not in ("clip", "skip"):
            raise ConfigurationError("negative_sites must be 'clip' or 'skip'")
        if not self.min_site_prec > 0:
            raise ConfigurationError("min_site_prec must be positive")


@dataclass
class Sites:
    """EP site parameters.

    Gaussian sites are stored in natural form; a zero precision marks an
    inactive (vacuous) site, reported as infinite variance by the
    ``*_var`` properties. Forward chain messages are kept in moment form
    (they are proper from the start), backward messages in natural form
    (the last one is vacuous).
    """

    f2_prec: np.ndarray
    f2_precmean: np.ndarray
    f2_prob: np.ndarray
    f3_prec: np.ndarray
    f3_precmean: np.ndarray
    f3_prob: np.ndarray
    f4_fwd_mean: np.ndarray
    f4_fwd_cov: np.ndarray
    f4_bwd_precmean: np.ndarray
    f4_bwd_prec: np.ndarray
    skipped_f2: int = 0
    skipped_f3: int = 0

    @staticmethod
    def _moments(prec, precmean):
        with np.errstate(divide="ignore", invalid="ignore"):
            var = np.where(prec > 0, 1.0 / prec, np.inf)
            mean = np.where(prec > 0, precmean / prec, 0.0)
        return mean, var

    @property
    def f2_mean(self):
        return self._moments(self.f2_prec, self.f2_precmean)[0]

    @property
    def f2_var(self):
        return self._moments(self.f2_prec, self.f2_precmean)[1]

    @property
    def f3_mean(self):
        return self._moments(self.f3_prec, self.f3_precmean)[0]

    @property
    def f3_var(self):
        return self._moments(self.f3_prec, self.f3_precmean)[1]

    def copy(self):
        return Sites(**{k: (v.copy() if isinstance(v, np.ndarray) else v)
                        for k, v in self.__dict__.items()})


@dataclass
class Posterior:
    """Marginals of the EP joint approximation.

    ``x_var`` and ``gamma_var`` hold the covariance diagonals as ``(D, T)``
    arrays; the full blocks are in ``x_cov`` / ``gamma_cov`` when requested.
    Before the first ``f2`` sweep the x-part is undefined (improper for
    ``N < D``): ``x_var`` is ``None`` and ``x_mean`` is zero.
    """

    x_mean: np.ndarray
    x_var: np.ndarray
    support_prob: np.ndarray
    gamma_mean: np.ndarray
    gamma_var: np.ndarray
    x_cov: np.ndarray = None
    gamma_cov: np.ndarray = None
    iterations: int = 0
    converged: bool = False
    max_delta_trace: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)
    # likelihood-driven shrinkage of each x site variance, V_site - V_joint
    x_shrink: np.ndarray = None

    @property
    def support(self):
        """MAP support estimate."""
        return (self.support_prob > 0.5).astype(np.int8)


def _noise_var(problem, cfg):
    return cfg.noise_var if cfg.noise_var is not None else problem.noise_var


def _check_dims(problem, cfg):
    if problem.D != cfg.D or problem.T != cfg.T:
        raise ConfigurationError(
            f"problem is D={problem.D}, T={problem.T} but prior is D={cfg.D}, T={cfg.T}")


def _chain_kind(cfg):
    if cfg.T == 1 or cfg.alpha == 0.0:
        return "independent"
    if cfg.is_joint_sparsity:
        return "collapsed"
    return "chain"


def prior_gamma_marginal_var(cfg):
    """Scale ``v_t`` with ``Cov(gamma_t) = v_t Sigma0`` under the prior.

    ``v_1 = 1`` and ``v_t = alpha^2 v_{t-1} + beta``.
    """
    v = np.empty(cfg.T)
    v[0] = 1.0
    for t in range(1, cfg.T):
        v[t] = cfg.alpha ** 2 * v[t - 1] + cfg.beta
    return v


def init_sites(problem, cfg):
    """Initial sites.

    Gaussian ``f2``/``f3`` sites are vacuous and the ``f2`` Bernoulli sites
    are uniform. The ``f3`` Bernoulli sites are set to the prior activation
    probability of each coefficient, which is what an exact ``f3`` update of
    this vacuous state produces; the initial support marginals therefore
    equal the prior ones. Chain messages carry the prior.
    """
    _check_dims(problem, cfg)
    D, T = cfg.D, cfg.T
    Sigma0 = cfg.Sigma0
    scale = prior_gamma_marginal_var(cfg)
    zeros = np.zeros((D, T))
    sites = Sites(
        f2_prec=zeros.copy(), f2_precmean=zeros.copy(), f2_prob=np.full((D, T), 0.5),
        f3_prec=zeros.copy(), f3_precmean=zeros.copy(),
        f3_prob=clamp_prob(marginal_activation_prob(
            cfg.mu0[:, None], np.diag(Sigma0)[:, None] * scale[None, :])),
        f4_fwd_mean=np.tile(cfg.mu0, (T, 1)),
        f4_fwd_cov=scale[:, None, None] * Sigma0[None],
        f4_bwd_precmean=np.zeros((T, D)),
        f4_bwd_prec=np.zeros((T, D, D)),
    )
    return sites


# --------------------------------------------------------------------------
# joint approximation

def _x_joint(sites, problem, noise_var, full_cov):
    if not np.any(sites.f2_prec > 0):
        return None
    prec = sites.f2_prec.T
    if np.any(prec <= 0):
        # only reachable if a caller hands in partially vacuous sites
        prec = np.where(prec > 0, prec, 1e-10)
    AtY = (problem.A.T @ problem.Y).T
    mean, cov = woodbury_batch(problem.A, noise_var, prec, sites.f2_precmean.T, AtY,
                               full_cov=full_cov)
    if full_cov:
        var = np.diagonal(cov, axis1=1, axis2=2)
    else:
        var, cov = cov, None
    shrink = 1.0 / prec - var
    return mean.T, var.T, cov, shrink.T


def _gamma_joint(sites, cfg):
    kind = _chain_kind(cfg)
    lam, h = sites.f3_prec.T, sites.f3_precmean.T                 # (T, D)
    if kind == "independent":
        mean, cov = diag_site_update(sites.f4_fwd_mean, sites.f4_fwd_cov, lam, h)
    elif kind == "collapsed":
        m1, c1 = diag_site_update(cfg.mu0, cfg.Sigma0, lam.sum(0), h.sum(0))
        mean = np.broadcast_to(m1, (cfg.T, cfg.D)).copy()
        cov = np.broadcast_to(c1, (cfg.T, cfg.D, cfg.D)).copy()
    else:
        P, m = sites.f4_fwd_cov, sites.f4_fwd_mean
        J = sites.f4_bwd_prec.copy()
        idx = np.arange(cfg.D)
        J[:, idx, idx] += lam
        htot = sites.f4_bwd_precmean + h
        # (P^-1 + J)^-1 = (I + P J)^-1 P; P itself is never inverted
        M = P @ J
        M[:, idx, idx] += 1.0
        rhs = np.concatenate([P, (m + np.einsum("tij,tj->ti", P, htot))[..., None]], axis=2)
        sol = np.linalg.solve(M, rhs)
        cov = symmetrize(sol[..., :-1])
        mean = sol[..., -1]
    var = np.diagonal(cov, axis1=1, axis2=2)
    return mean.T, var.T, cov


def recompute_joint(sites, problem, cfg, full_cov=True):
    """Joint approximation implied by the current sites.

    The x-part combines the likelihood term (precision ``A^T A / noise_var``)
    with the diagonal ``f2`` sites through the Woodbury identity, the
    gamma-part combines ``f3`` sites with the chain messages, and the
    support marginals combine the two Bernoulli site families.
    """
    _check_dims(problem, cfg)
    noise_var = _noise_var(problem, cfg)
    D, T = cfg.D, cfg.T
    xj = _x_joint(sites, problem, noise_var, full_cov)
    if xj is None:
        x_mean, x_var, x_cov, shrink = np.zeros((D, T)), None, None, None
    else:
        x_mean, x_var, x_cov, shrink = xj
    g_mean, g_var, g_cov = _gamma_joint(sites, cfg)
    return Posterior(
        x_mean=x_mean, x_var=x_var, x_cov=x_cov, x_shrink=shrink,
        support_prob=combine_bernoulli(sites.f2_prob, sites.f3_prob),
        gamma_mean=g_mean, gamma_var=g_var, gamma_cov=g_cov if full_cov else None,
    )


# --------------------------------------------------------------------------
# site updates

def _damp_gaussian(new, old, d):
    return d * new + (1.0 - d) * old


def _damp_prob(new, old, d):
    return expit(d * logit(clamp_prob(new)) + (1.0 - d) * logit(clamp_prob(old)))


def _clip_site(mask, m_t, m_c, v_c, min_prec, new_prec, new_h):
    """Replace non-positive site precisions by `min_prec`, matching the mean.

    The site then moves the joint mean to the tilted mean while leaving the
    variance close to the cavity's.
    """
    h_clip = m_t * (min_prec + 1.0 / v_c) - m_c / v_c
    return np.where(mask, min_prec, new_prec), np.where(mask, h_clip, new_h)


def _check_skips(skip, name, opts):
    n = int(np.count_nonzero(skip))
    if n > opts.max_skip_fraction * skip.size:
        raise NumericalFailure(f"{name} sweep skipped {n} of {skip.size} sites")
    return n


def update_f2_parallel(sites, joint, problem, cfg, opts=SolverOptions()):
    """Parallel moment-matching update of all spike-and-slab sites.

    Every site is refreshed from the same pre-sweep joint. A site whose
    cavity is improper keeps its old value for this sweep; non-positive
    new precisions are handled as set by ``opts.negative_sites``.
    """
    tau0 = cfg.slab_var
    q = sites.f3_prob                               # z-cavity: joint / f2 = f3
    if joint.x_var is None:
        # vacuous x-cavity: the tilted distribution is the prior mixture
        m_t = np.zeros_like(q)
        v_t = np.maximum(q * tau0, VAR_FLOOR)
        b_t = q
        new_prec = 1.0 / v_t
        new_h = np.zeros_like(q)
        skip = np.zeros(q.shape, bool)
    else:
        lam, h = sites.f2_prec, sites.f2_precmean
        V = joint.x_var
        with np.errstate(divide="ignore", invalid="ignore"):
            # 1/V_joint - lam without cancellation: shrink / (V_site V_joint)
            cav_prec = joint.x_shrink * lam / V
            v_c = 1.0 / cav_prec
            m_c = joint.x_mean + v_c * (lam * joint.x_mean - h)
        bad = ~(np.isfinite(v_c) & (v_c > 0) & np.isfinite(m_c))
        v_c = np.where(bad, 1.0, v_c)
        m_c = np.where(bad, 0.0, m_c)
        tilt = spike_slab_tilted_moments(Gaussian1d(m_c, v_c), q, tau0)
        m_t, b_t = tilt.mean, tilt.bernoulli_prob
        v_t = np.maximum(tilt.var, VAR_FLOOR)
        new_prec = 1.0 / v_t - 1.0 / v_c
        new_h = m_t / v_t - m_c / v_c
        neg = ~(new_prec > opts.min_site_prec)
        if opts.negative_sites == "clip":
            new_prec, new_h = _clip_site(neg, m_t, m_c, v_c, opts.min_site_prec, new_prec, new_h)
            neg = np.zeros_like(neg)
        skip = bad | neg | ~np.isfinite(new_h)
    max_prec = 1.0 / opts.min_site_var
    over = (new_prec > max_prec) & ~skip
    scale = np.where(over, max_prec / np.where(over, new_prec, 1.0), 1.0)
    new_prec, new_h = new_prec * scale, new_h * scale
    new_p = expit(logit(clamp_prob(b_t)) - logit(clamp_prob(q)))

    n_skip = _check_skips(skip, "f2", opts)
    d = opts.damping
    out = sites.copy()
    keep = ~skip
    out.f2_prec = np.where(keep, _damp_gaussian(new_prec, sites.f2_prec, d), sites.f2_prec)
    out.f2_precmean = np.where(keep, _damp_gaussian(new_h, sites.f2_precmean, d),
                               sites.f2_precmean)
    out.f2_prob = np.where(keep, _damp_prob(new_p, sites.f2_prob, d), sites.f2_prob)
    out.skipped_f2 = n_skip
    return out


def update_f3_parallel(sites, joint, cfg, opts=SolverOptions()):
    """Parallel moment-matching update of all probit-link sites."""
    lam, h = sites.f3_prec, sites.f3_precmean
    q = sites.f2_prob                               # z-cavity: joint / f3 = f2
    with np.errstate(divide="ignore", invalid="ignore"):
        cav_prec = 1.0 / joint.gamma_var - lam
        v_c = 1.0 / cav_prec
        m_c = v_c * (joint.gamma_mean / joint.gamma_var - h)
    bad = ~(np.isfinite(v_c) & (v_c > 0) & np.isfinite(m_c))
    v_c = np.where(bad, 1.0, v_c)
    m_c = np.where(bad, 0.0, m_c)
    tilt = bernoulli_probit_tilted_moments(Gaussian1d(m_c, v_c), q)
    v_t = np.maximum(tilt.var, VAR_FLOOR)
    new_prec = 1.0 / v_t - 1.0 / v_c
    new_h = tilt.mean / v_t - m_c / v_c
    tiny = np.abs(new_prec) <= _ZERO_PREC_RTOL / v_c
    new_prec = np.where(tiny, 0.0, new_prec)
    new_h = np.where(tiny, 0.0, new_h)
    neg = new_prec < 0
    if opts.negative_sites == "clip":
        new_prec, new_h = _clip_site(neg, tilt.mean, m_c, v_c, opts.min_site_prec, new_prec, new_h)
        neg = np.zeros_like(neg)
    skip = bad | neg | ~np.isfinite(new_h)
    max_prec = 1.0 / opts.min_site_var
    over = (new_prec > max_prec) & ~skip
    scale = np.where(over, max_prec / np.where(over, new_prec, 1.0), 1.0)
    new_prec, new_h = new_prec * scale, new_h * scale
    new_p = expit(logit(clamp_prob(tilt.bernoulli_prob)) - logit(clamp_prob(q)))

    n_skip = _check_skips(skip, "f3", opts)
    d = opts.damping
    out = sites.copy()
    keep = ~skip
    out.f3_prec = np.where(keep, _damp_gaussian(new_prec, lam, d), lam)
    out.f3_precmean = np.where(keep, _damp_gaussian(new_h, h, d), h)
    out.f3_prob = np.where(keep, _damp_prob(new_p, sites.f3_prob, d), sites.f3_prob)
    out.skipped_f3 = n_skip
    return out


def update_f4_chain(sites, joint, cfg):
    """Exact Gaussian message passing along the Markov chain on Gamma.

    Every chain factor is Gaussian, so its EP update reduces to computing
    the forward message into each ``gamma_t`` (prior plus ``f3`` sites at
    earlier times) and the backward message (``f3`` sites at later times).
    Forward messages use a Kalman-style update that never inverts a
    covariance; backward messages are propagated in information form and
    never invert ``beta Sigma0``, so ``beta = 0`` is exact.

    `joint` is unused: the chain update needs only the ``f3`` sites. It is
    accepted to keep the signature uniform with the other sweeps.
    """
    kind = _chain_kind(cfg)
    D, T = cfg.D, cfg.T
    Sigma0, mu0 = cfg.Sigma0, cfg.mu0
    lam, h = sites.f3_prec.T, sites.f3_precmean.T                 # (T, D)
    out = sites.copy()
    idx = np.arange(D)

    if kind == "independent":
        out.f4_fwd_mean = np.tile(mu0, (T, 1))
        out.f4_fwd_cov = np.broadcast_to(Sigma0, (T, D, D)).copy()
        out.f4_bwd_prec = np.zeros((T, D, D))
        out.f4_bwd_precmean = np.zeros((T, D))
        return out

    if kind == "collapsed":
        # gamma_t = gamma_1 for all t: forward = prior x earlier sites,
        # backward = later sites
        cum_lam = np.cumsum(lam, axis=0) - lam
        cum_h = np.cumsum(h, axis=0) - h
        out.f4_fwd_mean, out.f4_fwd_cov = diag_site_update(
            np.broadcast_to(mu0, (T, D)), np.broadcast_to(Sigma0, (T, D, D)), cum_lam, cum_h)
        later_lam = lam.sum(0) - cum_lam - lam
        later_h = h.sum(0) - cum_h - h
        bwd = np.zeros((T, D, D))
        bwd[:, idx, idx] = later_lam
        out.f4_bwd_prec = bwd
        out.f4_bwd_precmean = later_h
        return out

    a, b = cfg.alpha, cfg.beta
    Q = b * Sigma0
    shift = (1.0 - a) * mu0
    fwd_m = np.empty((T, D))
    fwd_P = np.empty((T, D, D))
    m, P = mu0.copy(), Sigma0.copy()
    for t in range(T):
        fwd_m[t], fwd_P[t] = m, P
        mf, Pf = diag_site_update(m, P, lam[t], h[t])
        m = shift + a * mf
        P = symmetrize(a * a * Pf + Q)

    bwd_J = np.zeros((T, D, D))
    bwd_h = np.zeros((T, D))
    eye = np.eye(D)
    for t in range(T - 2, -1, -1):
        Jn = bwd_J[t + 1].copy()
        Jn[idx, idx] += lam[t + 1]
        hn = bwd_h[t + 1] + h[t + 1]
        # message to gamma_t: alpha^2 (I + J Q)^-1 J, alpha (I + J Q)^-1 (h - J shift)
        sol = np.linalg.solve(eye + Jn @ Q, np.column_stack([Jn, hn - Jn @ shift]))
        bwd_J[t] = symmetrize(a * a * sol[:, :D])
        bwd_h[t] = a * sol[:, D]
    out.f4_fwd_mean, out.f4_fwd_cov = fwd_m, fwd_P
    out.f4_bwd_prec, out.f4_bwd_precmean = bwd_J, bwd_h
    return out


# --------------------------------------------------------------------------
# driver

def _refresh(joint, **parts):
    return replace(joint, **parts)


def solve(problem, cfg, opts=SolverOptions(), callback=None):
    """Run EP to convergence.

    Parameters
    ----------
    problem : MmvProblem
    cfg : PriorConfig
    opts : SolverOptions
    callback : callable, optional
        Called as ``callback(iteration, sites, joint)`` after each cycle.

    Returns
    -------
    Posterior
        ``x_mean`` is the point estimate and ``support`` the MAP support.
        When the iteration budget runs out, ``converged`` is false and the
        iterate with the smallest change is returned.

    Raises
    ------
    NumericalFailure
        If a sweep skips too many sites or a covariance stays indefinite
        after jitter escalation. ``diagnostics`` holds the trace so far.
    """
    _check_dims(problem, cfg)
    noise_var = _noise_var(problem, cfg)
    if not noise_var > 0:
        raise ConfigurationError("noise variance must be positive")

    sites = init_sites(problem, cfg)
    joint = recompute_joint(sites, problem, cfg, full_cov=False)
    trace, diagnostics = [], []
    best = (np.inf, sites, 0)
    converged = False
    it = 0
    try:
        for it in range(1, opts.max_iters + 1):
            t0 = time.perf_counter()
            prev_x, prev_p = joint.x_mean, joint.support_prob

            sites = update_f2_parallel(sites, joint, problem, cfg, opts)
            x_mean, x_var, _, shrink = _x_joint(sites, problem, noise_var, False)
            joint = _refresh(joint, x_mean=x_mean, x_var=x_var, x_shrink=shrink,
                             support_prob=combine_bernoulli(sites.f2_prob, sites.f3_prob))

            sites = update_f3_parallel(sites, joint, cfg, opts)
            # the Gaussian gamma-part has no reader before the chain pass
            # replaces it, so only the support marginals are refreshed here
            joint = _refresh(joint,
                             support_prob=combine_bernoulli(sites.f2_prob, sites.f3_prob))

            sites = update_f4_chain(sites, joint, cfg)
            g_mean, g_var, _ = _gamma_joint(sites, cfg)
            joint = _refresh(joint, gamma_mean=g_mean, gamma_var=g_var)

            delta = float(max(np.max(np.abs(joint.x_mean - prev_x)),
                              np.max(np.abs(joint.support_prob - prev_p))))
            trace.append(delta)
            diagnostics.append({
                "iteration": it, "max_delta": delta,
                "skipped": sites.skipped_f2 + sites.skipped_f3,
                "wall_ms": 1e3 * (time.perf_counter() - t0),
            })
            if delta < best[0]:
                best = (delta, sites, it)
            if callback is not None:
                callback(it, sites, joint)
            if not np.isfinite(delta):
                raise NumericalFailure(f"non-finite update at iteration {it}")
            if delta <= opts.tol:
                converged = True
                break
    except NumericalFailure as err:
        err.diagnostics = diagnostics
        raise

    if not converged:
        logger.info("EP stopped after %d iterations (last change %.3g)", it, trace[-1])
        sites = best[1]
    final = recompute_joint(sites, problem, cfg, full_cov=opts.full_covariance)
    final.iterations = it
    final.converged = converged
    final.max_delta_trace = trace
    final.diagnostics = diagnostics
    return final


def write_diagnostics_csv(posterior, path):
    """Per-iteration solver trace: iteration, max delta, skipped sites, wall time."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "max_delta", "skipped", "wall_ms"])
        for row in posterior.diagnostics:
            w.writerow([row["iteration"], repr(row["max_delta"]), row["skipped"],
                        f"{row['wall_ms']:.3f}"])
