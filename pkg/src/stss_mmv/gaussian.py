"""Dense Gaussian algebra, covariance kernels and guarded Cholesky solves.

Everything here is a pure function of its inputs. Matrices are dense
``numpy`` arrays; several helpers accept a leading batch axis so that the
per-time-step blocks of the solver can be processed in one call.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, NumericalFailure

#: Largest jitter, relative to ``trace / D``, tried before giving up.
MAX_RELATIVE_JITTER = 1e-4


@dataclass(frozen=True)
class GaussianNd:
    """Moment parameterisation ``N(mean, cov)``."""

    mean: np.ndarray
    cov: np.ndarray

    def to_natural(self):
        L = safe_cholesky(self.cov)
        precision = chol_inverse(L)
        return NaturalGaussianNd(precision @ self.mean, precision)


@dataclass(frozen=True)
class NaturalGaussianNd:
    """Natural parameterisation: precision-mean ``Λμ`` and precision ``Λ``."""

    precision_mean: np.ndarray
    precision: np.ndarray

    def to_moment(self):
        L = safe_cholesky(self.precision)
        cov = chol_inverse(L)
        return GaussianNd(cov @ self.precision_mean, cov)

    def __add__(self, other):
        return NaturalGaussianNd(self.precision_mean + other.precision_mean,
                                 self.precision + other.precision)


@dataclass(frozen=True)
class KernelSpec:
    """Prior covariance of the latent support field.

    Parameters
    ----------
    kind : {'squared_exponential', 'diagonal'}
    variance : float
        Marginal variance of every coordinate.
    lengthscale : float
        In index units; ignored by the diagonal kernel.
    jitter : float, optional
        Added to the diagonal. Defaults to ``1e-8 * variance``.
    """

    kind: str = "squared_exponential"
    variance: float = 1.0
    lengthscale: float = 1.0
    jitter: float = None

    def __post_init__(self):
        if self.kind not in ("squared_exponential", "diagonal"):
            raise ConfigurationError(f"unknown kernel kind {self.kind!r}")
        if not self.variance > 0:
            raise ConfigurationError("kernel variance must be positive")
        if not self.lengthscale > 0:
            raise ConfigurationError("kernel lengthscale must be positive")
        if self.jitter is None:
            object.__setattr__(self, "jitter", 1e-8 * self.variance)
        if self.jitter < 0:
            raise ConfigurationError("kernel jitter must be nonnegative")


def build_covariance(spec, D):
    """Return the ``D x D`` covariance matrix described by `spec`."""
    if int(D) != D or D < 1:
        raise ConfigurationError("D must be a positive integer")
    D = int(D)
    if spec.kind == "diagonal":
        return (spec.variance + spec.jitter) * np.eye(D)
    idx = np.arange(D, dtype=float)
    sq = (idx[:, None] - idx[None, :]) ** 2
    K = spec.variance * np.exp(-sq / (2.0 * spec.lengthscale ** 2))
    K[np.diag_indices(D)] = spec.variance + spec.jitter
    return K


def symmetrize(M):
    return 0.5 * (M + np.swapaxes(M, -1, -2))


def safe_cholesky(M):
    """Lower Cholesky factor of a (batch of) symmetric matrices.

    On failure the diagonal jitter is escalated by factors of ten, starting
    at ``1e-12 * trace / D``, up to ``1e-4 * trace / D``. Batched input is
    retried matrix by matrix so that one bad block does not perturb the rest.

    Raises
    ------
    NumericalFailure
        If the matrix stays indefinite at the largest jitter. The smallest
        eigenvalue is attached.
    """
    M = np.asarray(M, dtype=float)
    try:
        return np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        pass
    if M.ndim > 2:
        flat = M.reshape((-1,) + M.shape[-2:])
        out = np.empty_like(flat)
        for k in range(flat.shape[0]):
            out[k] = safe_cholesky(flat[k])
        return out.reshape(M.shape)

    D = M.shape[-1]
    scale = max(np.trace(M) / D, np.finfo(float).tiny)
    jitter = 1e-12 * scale
    eye = np.eye(D)
    while jitter <= MAX_RELATIVE_JITTER * scale * (1 + 1e-9):
        try:
            return np.linalg.cholesky(M + jitter * eye)
        except np.linalg.LinAlgError:
            jitter *= 10.0
    lam = float(np.linalg.eigvalsh(symmetrize(M))[0])
    raise NumericalFailure(
        f"matrix not positive definite after jitter {jitter / 10:.3g} "
        f"(smallest eigenvalue {lam:.3g})", eigenvalue=lam)


def chol_solve(L, B):
    """Solve ``(L L^T) X = B`` given the lower factor (batched)."""
    Z = np.linalg.solve(L, B)
    return np.linalg.solve(np.swapaxes(L, -1, -2), Z)


def chol_inverse(L):
    Linv = np.linalg.solve(L, np.broadcast_to(np.eye(L.shape[-1]), L.shape))
    return np.swapaxes(Linv, -1, -2) @ Linv


def posterior_from_likelihood_and_prior(lik, prior):
    """Multiply two Gaussians given in natural form.

    Returns the moment form of the product, ``cov = (Λ_lik + Λ_prior)^-1``
    and ``mean = cov (Λμ_lik + Λμ_prior)``.
    """
    P = symmetrize(np.asarray(lik.precision, float) + np.asarray(prior.precision, float))
    h = np.asarray(lik.precision_mean, float) + np.asarray(prior.precision_mean, float)
    L = safe_cholesky(P)
    cov = symmetrize(chol_inverse(L))
    return GaussianNd(cov @ h, cov)


def woodbury_posterior(A, noise_var, site_prec, site_precmean, y_projection):
    """Gaussian posterior of one measurement vector via the Woodbury identity.

    Combines the likelihood term with precision ``A^T A / noise_var`` and
    precision-mean ``y_projection / noise_var`` (where
    ``y_projection = A^T y``) with a diagonal site term. Cost is
    ``O(N D^2)`` instead of the ``O(D^3)`` of a direct inversion.

    Parameters
    ----------
    A : (N, D) array
    noise_var : float
    site_prec : (D,) array of positive site precisions
    site_precmean : (D,) array
    y_projection : (D,) array

    Returns
    -------
    GaussianNd
    """
    mean, cov = woodbury_batch(A, noise_var, np.asarray(site_prec, float)[None],
                               np.asarray(site_precmean, float)[None],
                               np.asarray(y_projection, float)[None])
    return GaussianNd(mean[0], cov[0])


def woodbury_batch(A, noise_var, site_prec, site_precmean, y_projection,
                   full_cov=True):
    """Batched :func:`woodbury_posterior` over a leading axis of length T.

    With ``full_cov=False`` only the diagonal of each covariance is
    returned, which is all the site updates need.
    """
    if not noise_var > 0:
        raise ConfigurationError("noise variance must be positive")
    A = np.asarray(A, float)
    site_prec = np.asarray(site_prec, float)
    if np.any(site_prec <= 0):
        raise ConfigurationError("Woodbury path needs strictly positive site precisions")
    N = A.shape[0]
    V = 1.0 / site_prec                                   # (T, D)
    AV = A[None, :, :] * V[:, None, :]                    # (T, N, D)
    M = noise_var * np.eye(N) + AV @ A.T                  # (T, N, N)
    L = safe_cholesky(symmetrize(M))
    C = np.linalg.solve(L, AV)                            # L^-1 A V
    h = y_projection / noise_var + site_precmean          # (T, D)
    # mean = V h - (AV)^T M^-1 (AV) h
    Ch = np.einsum("tnd,td->tn", C, h)
    mean = V * h - np.einsum("tnd,tn->td", C, Ch)
    if full_cov:
        cov = -np.swapaxes(C, -1, -2) @ C
        idx = np.arange(A.shape[1])
        cov[:, idx, idx] += V
        return mean, symmetrize(cov)
    return mean, V - np.einsum("tnd,tnd->td", C, C)


def diag_site_update(mean, cov, site_prec, site_precmean):
    """Condition ``N(mean, cov)`` on diagonal Gaussian sites (batched).

    Computes the moments of ``N(mean, cov) * prod_i N(x_i | ...)`` where
    the sites are given by nonnegative precisions and precision-means. A
    zero precision is a vacuous site. Uses the symmetric form
    ``B = I + S cov S`` with ``S = diag(sqrt(site_prec))`` so that no
    inverse of `cov` is needed; `cov` may be singular.
    """
    s = np.sqrt(site_prec)
    with np.errstate(divide="ignore", invalid="ignore"):
        b = np.where(s > 0, site_precmean / np.where(s > 0, s, 1.0), 0.0)
    PS = cov * s[..., None, :]                             # cov S
    B = s[..., :, None] * PS                               # S cov S
    idx = np.arange(mean.shape[-1])
    B[..., idx, idx] += 1.0
    L = safe_cholesky(symmetrize(B))
    W = np.linalg.solve(L, np.swapaxes(PS, -1, -2))        # L^-1 S cov
    new_cov = symmetrize(cov - np.swapaxes(W, -1, -2) @ W)
    r = b - s * mean
    Lr = np.linalg.solve(L, r[..., None])
    new_mean = mean + (np.swapaxes(W, -1, -2) @ Lr)[..., 0]
    return new_mean, new_cov
