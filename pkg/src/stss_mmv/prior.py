"""The spatio-temporal spike-and-slab prior and synthetic MMV instances.

Generative model, for ``t = 1..T`` and ``i = 1..D``::

    gamma_1          ~ N(mu0, Sigma0)
    gamma_t | prev   ~ N((1 - alpha) mu0 + alpha prev, beta Sigma0)
    z_it | gamma_it  ~ Bernoulli(Phi(gamma_it))
    x_it             = z_it * c_it,      c_it ~ N(0, slab_var)
    y_t              = A x_t + e_t

``alpha**2 + beta == 1`` keeps every ``gamma_t`` marginally ``N(mu0, Sigma0)``.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .gaussian import KernelSpec, build_covariance, safe_cholesky
from .moments import probit, probit_inverse

FORWARD_KINDS = ("gaussian_iid", "column_correlated")


@dataclass(frozen=True)
class PriorConfig:
    """Hyperparameters of the spatio-temporal spike-and-slab model.

    `mu0` may be given as a scalar; it is broadcast to length `D`.
    `noise_var` may be left as ``None``, in which case the solver takes the
    noise variance stored on the problem.
    """

    D: int
    T: int
    mu0: np.ndarray = 0.0
    kernel: KernelSpec = field(default_factory=KernelSpec)
    alpha: float = 0.0
    beta: float = 1.0
    slab_var: float = 1.0
    noise_var: float = None
    require_stationary: bool = False

    def __post_init__(self):
        if int(self.D) != self.D or self.D < 1 or int(self.T) != self.T or self.T < 1:
            raise ConfigurationError("D and T must be positive integers")
        mu0 = np.broadcast_to(np.asarray(self.mu0, float), (int(self.D),)).copy()
        mu0.setflags(write=False)
        object.__setattr__(self, "mu0", mu0)
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigurationError("alpha must lie in [0, 1]")
        if self.beta < 0:
            raise ConfigurationError("beta must be nonnegative")
        if self.alpha == 0 and self.beta == 0:
            raise ConfigurationError("alpha and beta cannot both be zero")
        if self.require_stationary and abs(self.alpha ** 2 + self.beta - 1.0) > 1e-12:
            raise ConfigurationError(
                f"stationarity needs alpha^2 + beta = 1, got {self.alpha ** 2 + self.beta!r}")
        if not self.slab_var > 0:
            raise ConfigurationError("slab_var must be positive")
        if self.noise_var is not None and not self.noise_var > 0:
            raise ConfigurationError("noise_var must be positive")

    @property
    def Sigma0(self):
        return build_covariance(self.kernel, self.D)

    @property
    def is_joint_sparsity(self):
        return self.alpha == 1.0 and self.beta == 0.0


@dataclass
class GroundTruth:
    Gamma: np.ndarray
    Z: np.ndarray
    X: np.ndarray
    E: np.ndarray


@dataclass
class MmvProblem:
    """``Y = A X + E`` with known forward matrix and noise variance."""

    A: np.ndarray
    Y: np.ndarray
    noise_var: float

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, float))
        self.Y = np.asarray(self.Y, float)
        if self.Y.ndim == 1:
            self.Y = self.Y[:, None]
        if self.A.shape[0] != self.Y.shape[0]:
            raise ConfigurationError(
                f"A has {self.A.shape[0]} rows but Y has {self.Y.shape[0]}")
        if not self.noise_var > 0:
            raise ConfigurationError("noise_var must be positive")

    @property
    def N(self):
        return self.A.shape[0]

    @property
    def D(self):
        return self.A.shape[1]

    @property
    def T(self):
        return self.Y.shape[1]


def marginal_activation_prob(mu_i, sigma_ii):
    """Prior probability of a nonzero coefficient, ``Phi(mu / sqrt(1 + s))``."""
    return probit(np.asarray(mu_i, float) / np.sqrt(1.0 + np.asarray(sigma_ii, float)))


def calibrate_mu0_for_sparsity(target_active_per_column, D, sigma_ii):
    """Prior mean giving `target_active_per_column` expected nonzeros out of `D`."""
    if not 0 < target_active_per_column < D:
        raise ConfigurationError("target must lie strictly between 0 and D")
    return float(math.sqrt(1.0 + sigma_ii) * probit_inverse(target_active_per_column / D))


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_gamma_chain(cfg, rng_seed, n_samples=None):
    """Draw the latent support field from the Markov chain prior.

    Returns a ``(D, T)`` array, or ``(n_samples, D, T)`` when `n_samples`
    is given. The Cholesky factor of ``Sigma0`` is computed once and scaled
    by ``sqrt(beta)`` for the innovations.
    """
    rng = _rng(rng_seed)
    L = safe_cholesky(cfg.Sigma0)
    n = 1 if n_samples is None else int(n_samples)
    D, T = cfg.D, cfg.T
    mu0 = cfg.mu0
    G = np.empty((n, D, T))
    G[:, :, 0] = mu0 + rng.standard_normal((n, D)) @ L.T
    shift = (1.0 - cfg.alpha) * mu0
    scale = math.sqrt(cfg.beta)
    for t in range(1, T):
        G[:, :, t] = shift + cfg.alpha * G[:, :, t - 1]
        if scale > 0:
            G[:, :, t] += scale * (rng.standard_normal((n, D)) @ L.T)
    return G[0] if n_samples is None else G


def sample_support(Gamma, rng_seed):
    """Bernoulli draws ``Z ~ Ber(Phi(Gamma))``, returned as an int8 array."""
    rng = _rng(rng_seed)
    Gamma = np.asarray(Gamma, float)
    return (rng.random(Gamma.shape) < probit(Gamma)).astype(np.int8)


def forward_matrix(N, D, kind, rng, r=0.0):
    """Random forward matrix with ``E[A_ij^2] = 1/N``.

    ``column_correlated`` draws each row from ``N(0, C / N)`` with
    ``C_ij = r**|i-j|``, so column ``i`` and ``j`` correlate as ``r**|i-j|``.
    """
    if kind == "gaussian_iid":
        return rng.standard_normal((N, D)) / math.sqrt(N)
    if kind == "column_correlated":
        if not 0.0 <= r < 1.0:
            raise ConfigurationError("correlation r must lie in [0, 1)")
        idx = np.arange(D)
        C = float(r) ** np.abs(idx[:, None] - idx[None, :])
        L = safe_cholesky(C)
        return rng.standard_normal((N, D)) @ L.T / math.sqrt(N)
    raise ConfigurationError(f"unknown forward kind {kind!r}")


def sample_problem(cfg, N, forward_kind="gaussian_iid", snr_db=10.0, rng_seed=None,
                   r=0.0, support=None, max_resample=1):
    """Generate a synthetic MMV instance and its ground truth.

    Parameters
    ----------
    cfg : PriorConfig
    N : int
        Number of measurements per column.
    forward_kind : {'gaussian_iid', 'column_correlated'}
    snr_db : float
        ``10 log10(||AX||_F^2 / ||E||_F^2)``; the noise matrix is rescaled so
        this holds exactly for the realised draw. ``math.inf`` gives E = 0.
    rng_seed : int or numpy Generator
    r : float
        Column correlation for ``column_correlated``.
    support : tuple (Gamma, Z), optional
        Keep a previously sampled support and redraw only the coefficients,
        forward matrix and noise.

    Returns
    -------
    problem : MmvProblem
    truth : GroundTruth
    """
    if N < 1:
        raise ConfigurationError("N must be at least 1")
    rng = _rng(rng_seed)
    D, T = cfg.D, cfg.T
    if support is None:
        for attempt in range(max_resample + 1):
            Gamma = sample_gamma_chain(cfg, rng)
            Z = sample_support(Gamma, rng)
            if Z.any():
                break
        else:
            raise ConfigurationError("sampled support is empty; X is identically zero")
    else:
        Gamma, Z = (np.asarray(a) for a in support)
        if not Z.any():
            raise ConfigurationError("given support is empty; X is identically zero")
    X = Z * rng.normal(0.0, math.sqrt(cfg.slab_var), size=(D, T))
    A = forward_matrix(N, D, forward_kind, rng, r)
    signal = A @ X
    power = float(np.sum(signal ** 2))
    if math.isinf(snr_db):
        E = np.zeros((N, T))
        # solver still needs a positive noise level
        noise_var = 1e-8 * max(power / (N * T), 1e-300)
    else:
        E = rng.standard_normal((N, T))
        E *= math.sqrt(power / (10.0 ** (snr_db / 10.0) * float(np.sum(E ** 2))))
        noise_var = float(np.sum(E ** 2)) / (N * T)
    problem = MmvProblem(A, signal + E, noise_var)
    return problem, GroundTruth(Gamma, Z, X, E)


def realized_snr_db(truth, problem):
    AX = problem.A @ truth.X
    return 10.0 * math.log10(np.sum(AX ** 2) / np.sum(truth.E ** 2))
