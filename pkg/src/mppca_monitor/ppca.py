"""Single probabilistic PCA model.

    p(x)   = N(0, I_q)
    p(t|x) = N(W x + mu, sigma2 I_d)
    p(t)   = N(mu, C),  C = sigma2 I + W W^T

Inverses and determinants of C go through the q x q matrix
M = sigma2 I + W^T W (Woodbury identity and determinant lemma), so the
cost per sample is O(dq) once M is factored.
"""

from dataclasses import dataclass

import numpy as np
from scipy import linalg

LOG_2PI = np.log(2.0 * np.pi)
SIGMA2_FLOOR_REL = 1e-10


@dataclass(frozen=True)
class PpcaParams:
    """Parameters of one PPCA model.

    Attributes
    ----------
    W : ndarray of shape (d, q)
        Loading matrix.
    mu : ndarray of shape (d,)
        Data-space mean.
    sigma2 : float
        Isotropic noise variance.
    """

    W: np.ndarray
    mu: np.ndarray
    sigma2: float

    def __post_init__(self):
        W = np.array(self.W, dtype=float, ndmin=2)
        mu = np.array(self.mu, dtype=float).reshape(-1)
        sigma2 = float(self.sigma2)
        d, q = W.shape
        if mu.shape != (d,):
            raise ValueError(f"mu has length {mu.size}, expected {d}")
        if not 1 <= q < d:
            raise ValueError(f"latent dimension q={q} must satisfy 1 <= q < d={d}")
        if not (sigma2 > 0 and np.isfinite(sigma2)):
            raise ValueError(f"sigma2 must be positive and finite, got {sigma2}")
        W.setflags(write=False)
        mu.setflags(write=False)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma2", sigma2)

    @property
    def d(self) -> int:
        return self.W.shape[0]

    @property
    def q(self) -> int:
        return self.W.shape[1]

    @property
    def M(self) -> np.ndarray:
        return self.sigma2 * np.eye(self.q) + self.W.T @ self.W


@dataclass(frozen=True)
class PosteriorMoments:
    """Posterior mean <x> and second moment <x x^T> of the latent vector."""

    mean: np.ndarray
    second_moment: np.ndarray


def _as_samples(t, d):
    """Return t as a 2-D (N, d) array and whether the input was a single vector."""
    t = np.asarray(t, dtype=float)
    single = t.ndim == 1
    t = np.atleast_2d(t)
    if t.ndim != 2 or t.shape[1] != d:
        raise ValueError(f"expected samples of dimension {d}, got shape {np.shape(t)}")
    return t, single


def _gaussian_terms(W, sigma2, Z):
    """log|C| and the quadratic forms z^T C^-1 z for rows of Z.

    Works for any W shape (d, q), including q >= d, which the marginal
    densities of the missing-data code rely on.
    """
    d, q = W.shape
    M = sigma2 * np.eye(q) + W.T @ W
    chol = linalg.cho_factor(M, lower=True)
    logdet_M = 2.0 * np.sum(np.log(np.diag(chol[0])))
    logdet_C = (d - q) * np.log(sigma2) + logdet_M
    proj = Z @ W
    quad = (np.einsum("ij,ij->i", Z, Z) - np.einsum("ij,ij->i", proj, linalg.cho_solve(chol, proj.T).T)) / sigma2
    return logdet_C, quad


def model_covariance(p: PpcaParams) -> np.ndarray:
    """Data-space covariance C = sigma2 I + W W^T."""
    C = p.sigma2 * np.eye(p.d) + p.W @ p.W.T
    return 0.5 * (C + C.T)


def precision(p: PpcaParams) -> np.ndarray:
    """C^-1 via the Woodbury form sigma2^-1 (I - W M^-1 W^T)."""
    Minv_Wt = linalg.cho_solve(linalg.cho_factor(p.M), p.W.T)
    P = (np.eye(p.d) - p.W @ Minv_Wt) / p.sigma2
    return 0.5 * (P + P.T)


def log_density(p: PpcaParams, t):
    """Log of the marginal Gaussian density N(t; mu, C).

    ``t`` may be a single vector of length d (returns a float) or an
    (N, d) array (returns an array of length N).
    """
    T, single = _as_samples(t, p.d)
    logdet_C, quad = _gaussian_terms(p.W, p.sigma2, T - p.mu)
    out = -0.5 * (p.d * LOG_2PI + logdet_C + quad)
    return float(out[0]) if single else out


def posterior_moments(p: PpcaParams, t) -> PosteriorMoments:
    """Posterior N(M^-1 W^T (t - mu), sigma2 M^-1) of the latent vector."""
    T, single = _as_samples(t, p.d)
    chol = linalg.cho_factor(p.M)
    mean = linalg.cho_solve(chol, p.W.T @ (T - p.mu).T).T
    cov = p.sigma2 * linalg.cho_solve(chol, np.eye(p.q))
    cov = 0.5 * (cov + cov.T)
    second = cov[None, :, :] + mean[:, :, None] * mean[:, None, :]
    if single:
        return PosteriorMoments(mean[0], second[0])
    return PosteriorMoments(mean, second)


def log_likelihood(p: PpcaParams, data) -> float:
    """Sum of log_density over the rows of ``data``."""
    X, _ = _as_samples(data, p.d)
    if X.shape[0] == 0:
        raise ValueError("log_likelihood needs at least one sample")
    return float(np.sum(log_density(p, X)))


def sorted_eigh(S):
    """Eigen-decomposition of a symmetric matrix, eigenvalues descending.

    Each eigenvector is sign-normalised so that its largest-magnitude
    component is positive. Exact ties keep the eigensolver's order
    (stable sort), which is deterministic for a given input.
    """
    vals, vecs = np.linalg.eigh(0.5 * (S + S.T))
    order = np.argsort(-vals, kind="stable")
    vals = vals[order]
    vecs = vecs[:, order]
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vals, vecs * signs


def sigma2_floor(S) -> float:
    S = np.asarray(S)
    return SIGMA2_FLOOR_REL * max(float(np.trace(S)) / S.shape[0], np.finfo(float).tiny)


def ppca_from_covariance(S, mu, q) -> PpcaParams:
    """Maximum-likelihood PPCA given a sample covariance and mean."""
    S = np.asarray(S, dtype=float)
    d = S.shape[0]
    if not 1 <= q < d:
        raise ValueError(f"latent dimension q={q} must satisfy 1 <= q < d={d}")
    vals, vecs = sorted_eigh(S)
    sigma2 = max(float(np.mean(vals[q:])), sigma2_floor(S))
    scale = np.sqrt(np.maximum(vals[:q] - sigma2, 0.0))
    return PpcaParams(vecs[:, :q] * scale, mu, sigma2)


def sample_covariance(X, mu=None):
    X = np.asarray(X, dtype=float)
    if mu is None:
        mu = X.mean(axis=0)
    Z = X - mu
    return Z.T @ Z / X.shape[0]


def fit_ppca_closed_form(data, q: int) -> PpcaParams:
    """Closed-form maximum-likelihood PPCA fit.

    W = U_q (L_q - sigma2 I)^(1/2) with U_q, L_q the leading eigenpairs of
    the sample covariance, sigma2 the mean of the discarded eigenvalues
    (floored to keep C invertible on noiseless data).
    """
    X = np.asarray(data, dtype=float)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ValueError("data must be a non-empty (N, d) array")
    mu = X.mean(axis=0)
    return ppca_from_covariance(sample_covariance(X, mu), mu, q)
