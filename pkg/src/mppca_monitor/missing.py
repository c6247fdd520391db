"""Training and monitoring with missing sensor values (missing completely at random).

Missing entries are NaN in memory. Every routine groups samples by their
observation pattern so each pattern's covariance blocks are factored once.

Training fills the missing block of each sample with the conditional mean
under each local model and adds the conditional covariance of that block to
the component scatter matrix before the usual two-stage update. With no
missing values this is exactly ``em_fit``.
"""

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .mixture import (
    MixtureParams,
    TrainingConfig,
    TrainingReport,
    _converged,
    _log_pi,
    _posterior,
    choose_q,
    initialize,
    logger,
    m_step,
)
from .monitoring import ThresholdSet, detect, global_statistics
from .ppca import LOG_2PI, PpcaParams, _gaussian_terms, log_density, model_covariance, sample_covariance, sigma2_floor


@dataclass(frozen=True)
class MaskedSample:
    """One sample with an observation mask (True = observed)."""

    values: np.ndarray
    observed: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        o = np.array(self.observed, dtype=bool).reshape(-1)
        if v.shape != o.shape:
            raise ValueError("values and mask differ in length")
        if not o.any():
            raise ValueError("sample has no observed coordinates")
        v = np.where(o, v, np.nan)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "observed", o)

    @classmethod
    def from_nan(cls, values):
        v = np.asarray(values, dtype=float)
        return cls(v, ~np.isnan(v))


def _as_masked_array(data, d=None):
    if isinstance(data, MaskedSample):
        X = data.values[None, :]
    else:
        X = np.array(data, dtype=float, ndmin=2)
    if X.ndim != 2:
        raise ValueError("expected an (N, d) array")
    if d is not None and X.shape[1] != d:
        raise ValueError(f"data has dimension {X.shape[1]}, model expects {d}")
    observed = ~np.isnan(X)
    if not observed.any(axis=1).all():
        rows = np.flatnonzero(~observed.any(axis=1))
        raise ValueError(f"rows {rows[:10].tolist()} have no observed coordinates")
    return X, observed


def _patterns(observed):
    """Yield (pattern, row indices) for each distinct observation mask."""
    pats, inverse = np.unique(observed, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    for k, pat in enumerate(pats):
        yield pat, np.flatnonzero(inverse == k)


def _marginal_log_density_rows(p: PpcaParams, Xo, pat):
    if pat.all():
        return log_density(p, Xo)
    Wo = p.W[pat]
    logdet, quad = _gaussian_terms(Wo, p.sigma2, Xo - p.mu[pat])
    return -0.5 * (pat.sum() * LOG_2PI + logdet + quad)


def marginal_log_density(p: PpcaParams, data):
    """Log-density of the observed coordinates under N(mu_o, C_oo).

    ``data`` is a MaskedSample, a vector with NaN for missing entries, or an
    (N, d) array of such rows.
    """
    single = isinstance(data, MaskedSample) or np.ndim(data) == 1
    X, observed = _as_masked_array(data, p.d)
    out = np.empty(X.shape[0])
    for pat, rows in _patterns(observed):
        out[rows] = _marginal_log_density_rows(p, X[np.ix_(rows, pat)], pat)
    return float(out[0]) if single else out


def marginal_component_log_densities(m: MixtureParams, data):
    X, observed = _as_masked_array(data, m.d)
    out = np.empty((X.shape[0], m.K))
    for pat, rows in _patterns(observed):
        Xo = X[np.ix_(rows, pat)]
        for i, c in enumerate(m.components):
            out[rows, i] = _marginal_log_density_rows(c, Xo, pat)
    return out


def _conditional_blocks(c: PpcaParams, Xo, pat):
    """Conditional mean of the missing block and its covariance for one pattern."""
    C = model_covariance(c)
    miss = ~pat
    chol = linalg.cho_factor(C[np.ix_(pat, pat)])
    C_uo = C[np.ix_(miss, pat)]
    gain = linalg.cho_solve(chol, C_uo.T).T
    mean_u = c.mu[miss] + (Xo - c.mu[pat]) @ gain.T
    cov_u = C[np.ix_(miss, miss)] - gain @ C_uo.T
    return mean_u, 0.5 * (cov_u + cov_u.T)


def _per_component_fill(m: MixtureParams, X, observed, R=None):
    """Per-component completed data and, if R is given, weighted covariance corrections."""
    N, d = X.shape
    filled = [X.copy() for _ in range(m.K)]
    corrections = None if R is None else [np.zeros((d, d)) for _ in range(m.K)]
    for pat, rows in _patterns(observed):
        if pat.all():
            continue
        miss = ~pat
        Xo = X[np.ix_(rows, pat)]
        for i, c in enumerate(m.components):
            mean_u, cov_u = _conditional_blocks(c, Xo, pat)
            filled[i][np.ix_(rows, miss)] = mean_u
            if corrections is not None:
                corrections[i][np.ix_(miss, miss)] += R[rows, i].sum() * cov_u
    return filled, corrections


def conditional_impute(m: MixtureParams, data):
    """Fill missing entries with responsibility-weighted conditional means.

    Responsibilities use the marginal densities of the observed coordinates.
    Observed entries are returned unchanged.
    """
    single = isinstance(data, MaskedSample) or np.ndim(data) == 1
    X, observed = _as_masked_array(data, m.d)
    out = X.copy()
    if observed.all():
        return out[0] if single else out
    R, _ = _posterior(marginal_component_log_densities(m, X) + _log_pi(m.pi))
    filled, _ = _per_component_fill(m, X, observed)
    blend = sum(R[:, [i]] * filled[i] for i in range(m.K))
    out[~observed] = blend[~observed]
    return out[0] if single else out


def observed_log_likelihood(m: MixtureParams, data) -> float:
    _, lse = _posterior(marginal_component_log_densities(m, data) + _log_pi(m.pi))
    return float(lse.sum())


def em_fit_missing(data, config: TrainingConfig, init: MixtureParams | None = None) -> TrainingReport:
    """Two-stage EM on data with NaN-coded missing values.

    The trace holds the observed-data log-likelihood (sum of log mixture
    marginal densities). Initialisation runs on column-mean-filled data.
    """
    X, observed = _as_masked_array(data)
    never = np.flatnonzero(~observed.any(axis=0))
    if never.size:
        raise ValueError(f"columns {never.tolist()} are never observed; they cannot be identified")
    complete = bool(observed.all())
    if init is None:
        col_means = np.nanmean(X, axis=0)
        seeded = np.where(observed, X, col_means)
        q = config.q if config.q is not None else choose_q(seeded, config.rate)
        init = initialize(seeded, config.K, q, config.seed)
    m = init
    floor = sigma2_floor(sample_covariance(X) if complete else np.diag(np.nanvar(X, axis=0)))

    trace, reseeded = [], []
    converged = False
    iterations = 0
    while True:
        logp = marginal_component_log_densities(m, X)
        R, lse = _posterior(logp + _log_pi(m.pi))
        trace.append(float(lse.sum()))
        if _converged(trace, config.tol):
            converged = True
            break
        if iterations >= config.max_iterations:
            break
        worst = int(np.argmin(lse))
        if complete:
            m, empty = m_step(m, R, X, worst_sample=worst, floor=floor)
        else:
            filled, corr = _per_component_fill(m, X, observed, R)
            m, empty = m_step(m, R, filled, corr, worst_sample=worst, floor=floor)
        iterations += 1
        if empty:
            logger.warning("iteration %d: re-seeded empty components %s", iterations, empty)
            reseeded.append((iterations, empty))
    h = _entropy_missing(m, X)
    return TrainingReport(m, trace, iterations, converged, h, reseeded)


def _entropy_missing(m, X):
    logp = marginal_component_log_densities(m, X)
    R, _ = _posterior(logp + _log_pi(m.pi))
    pi = m.pi
    entropy = -np.sum(np.where(pi > 0, pi * _log_pi(np.where(pi > 0, pi, 1.0)), 0.0))
    return float(-np.sum(R * np.where(R > 0, logp, 0.0)) / X.shape[0] + entropy)


def monitor_missing(m: MixtureParams, th: ThresholdSet, data, mode: str = "combined", form: str = "posterior"):
    """Impute, then compute global statistics and alarms on the completed samples."""
    completed = conditional_impute(m, data)
    g = global_statistics(m, completed, form)
    return g, detect(g, th, mode)
