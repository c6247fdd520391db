"""Mixture of PPCA models trained with a two-stage EM schedule.

Each iteration:

1. responsibilities R_ni = pi_i p(t_n|i) / sum_j pi_j p(t_n|j), in log space;
2. stage one: pi_i = mean_n R_ni and mu_i = responsibility-weighted mean;
3. stage two (one GEM cycle for the loadings and noise, with the new mu_i):

       S_i      = sum_n R_ni (t_n - mu_i)(t_n - mu_i)^T / sum_n R_ni
       W_i_new  = S_i W_i (sigma2_i I + M_i^-1 W_i^T S_i W_i)^-1
       sigma2_i = tr(S_i - S_i W_i M_i^-1 W_i_new^T) / d

Both stages increase the expected complete-data log-likelihood for the
responsibilities of step 1, so the data log-likelihood never decreases.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.cluster.vq import kmeans2
from scipy.special import logsumexp

from .ppca import PpcaParams, log_density, ppca_from_covariance, sample_covariance, sigma2_floor, sorted_eigh

logger = logging.getLogger(__name__)

EMPTY_COMPONENT_FRACTION = 1e-6
K_MAX_DEFAULT = 10


@dataclass(frozen=True)
class MixtureParams:
    """K local PPCA models sharing d and q, plus mixing weights."""

    components: tuple
    pi: np.ndarray

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise ValueError("a mixture needs at least one component")
        shapes = {c.W.shape for c in comps}
        if len(shapes) != 1:
            raise ValueError(f"components disagree on (d, q): {sorted(shapes)}")
        pi = np.array(self.pi, dtype=float).reshape(-1)
        if pi.shape != (len(comps),):
            raise ValueError(f"pi has length {pi.size}, expected {len(comps)}")
        if np.any(pi < 0) or abs(pi.sum() - 1.0) > 1e-12:
            raise ValueError(f"mixing weights must be nonnegative and sum to 1, got {pi.tolist()}")
        pi.setflags(write=False)
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "pi", pi)

    @property
    def K(self) -> int:
        return len(self.components)

    @property
    def d(self) -> int:
        return self.components[0].d

    @property
    def q(self) -> int:
        return self.components[0].q


@dataclass
class TrainingConfig:
    """Settings for em_fit / select_k.

    ``q`` fixes the latent dimension; when it is None, ``rate`` picks it by
    cumulative eigenvalue contribution on the pooled data.
    """

    K: int = 1
    q: int | None = None
    rate: float = 0.9
    max_iterations: int = 500
    tol: float = 1e-6
    seed: int = 0
    k_range: tuple = (1, K_MAX_DEFAULT)

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.q is None and not 0 < self.rate <= 1:
            raise ValueError("rate must lie in (0, 1]")


@dataclass
class TrainingReport:
    params: MixtureParams
    log_likelihood_trace: list
    iterations: int
    converged: bool
    h_value: float
    reseeded: list = field(default_factory=list)

    @property
    def log_likelihood(self) -> float:
        return self.log_likelihood_trace[-1]


def _check_data(data, d=None):
    X = np.asarray(data, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("data must be a non-empty (N, d) array")
    if d is not None and X.shape[1] != d:
        raise ValueError(f"data has dimension {X.shape[1]}, model expects {d}")
    if not np.all(np.isfinite(X)):
        raise ValueError("data contains non-finite values; use the missing-data routines")
    return X


def component_log_densities(m: MixtureParams, data) -> np.ndarray:
    """(N, K) matrix of log p(t_n | i)."""
    X = _check_data(data, m.d)
    return np.column_stack([log_density(c, X) for c in m.components])


def _log_pi(pi):
    with np.errstate(divide="ignore"):
        return np.log(pi)


def _posterior(log_joint):
    """Row-normalise (N, K) log joint densities; returns (R, per-row log evidence)."""
    lse = logsumexp(log_joint, axis=1)
    R = np.exp(log_joint - lse[:, None])
    R /= R.sum(axis=1, keepdims=True)
    return R, lse


def responsibilities(m: MixtureParams, data) -> np.ndarray:
    """Posterior probability of each local model for every sample (rows sum to 1)."""
    R, _ = _posterior(component_log_densities(m, data) + _log_pi(m.pi))
    return R


def mixture_log_likelihood(m: MixtureParams, data) -> float:
    _, lse = _posterior(component_log_densities(m, data) + _log_pi(m.pi))
    return float(lse.sum())


def entropy_criterion(m: MixtureParams, data) -> float:
    """Model-count criterion H = -(1/N) sum_n sum_i R_ni ln p(t_n|i) - sum_i pi_i ln pi_i.

    Smaller is better. ``0 ln 0`` is taken as 0 in both sums.
    """
    logp = component_log_densities(m, data)
    R, _ = _posterior(logp + _log_pi(m.pi))
    fit_term = -np.sum(R * np.where(R > 0, logp, 0.0)) / logp.shape[0]
    pi = m.pi
    entropy = -np.sum(np.where(pi > 0, pi * _log_pi(np.where(pi > 0, pi, 1.0)), 0.0))
    return float(fit_term + entropy)


def choose_q(data, rate: float) -> int:
    """Smallest q whose leading eigenvalues carry at least ``rate`` of the total variance.

    Capped at d - 1 so the result is a valid PPCA latent dimension.
    """
    if not 0 < rate <= 1:
        raise ValueError("rate must lie in (0, 1]")
    X = _check_data(data)
    vals, _ = sorted_eigh(sample_covariance(X))
    vals = np.maximum(vals, 0.0)
    total = vals.sum()
    if total <= 0:
        return 1
    ratio = np.cumsum(vals) / total
    q = int(np.searchsorted(ratio, rate - 1e-12) + 1)
    return max(1, min(q, X.shape[1] - 1))


def initialize(data, K: int, q: int, seed: int = 0) -> MixtureParams:
    """Starting mixture from classical PCA on K groups of samples.

    Groups come from k-means (k-means++ seeding, then Lloyd iterations)
    driven by ``seed``. A group too small for a q-dimensional fit falls back
    to the pooled PCA model with its mean moved halfway to a random sample.
    """
    X = _check_data(data)
    N, d = X.shape
    if K < 1:
        raise ValueError("K must be >= 1")
    mu = X.mean(axis=0)
    pooled = ppca_from_covariance(sample_covariance(X, mu), mu, q)
    if K == 1:
        return MixtureParams((pooled,), np.ones(1))
    rng = np.random.default_rng(seed)
    _, labels = kmeans2(X, K, minit="++", iter=50, seed=rng)
    comps = []
    for i in range(K):
        g = np.flatnonzero(labels == i)
        if g.size >= q + 1:
            mu_g = X[g].mean(axis=0)
            comps.append(ppca_from_covariance(sample_covariance(X[g], mu_g), mu_g, q))
        else:
            jitter = X[rng.integers(N)]
            comps.append(PpcaParams(pooled.W, 0.5 * (pooled.mu + jitter), pooled.sigma2))
    return MixtureParams(tuple(comps), np.full(K, 1.0 / K))


def _update_component(c: PpcaParams, S, mu, floor):
    """One GEM cycle for W and sigma2 given the weighted covariance S about mu."""
    W, s2 = c.W, c.sigma2
    q = W.shape[1]
    d = W.shape[0]
    chol = linalg.cho_factor(s2 * np.eye(q) + W.T @ W)
    SW = S @ W
    Minv_WtSW = linalg.cho_solve(chol, W.T @ SW)
    W_new = linalg.solve((s2 * np.eye(q) + Minv_WtSW).T, SW.T).T
    Minv_Wnew_t = linalg.cho_solve(chol, W_new.T)
    s2_new = (np.trace(S) - np.sum(SW * Minv_Wnew_t.T)) / d
    s2_new = max(float(s2_new), floor)
    return PpcaParams(W_new, mu, s2_new)


def m_step(m: MixtureParams, R, completed, cov_correction=None, worst_sample=None, floor=0.0):
    """Two-stage parameter update for fixed responsibilities.

    ``completed`` is either an (N, d) data array shared by all components or a
    list of K per-component arrays (missing-data case, each row filled with
    that component's conditional expectation). ``cov_correction`` holds the
    per-component sums sum_n R_ni Cov[t_n | t_obs, i] added to the weighted
    scatter. ``floor`` is the lower bound on each sigma2; the caller derives
    it from the pooled data so a component shrinking onto a few samples
    cannot drive its noise to zero. Returns the new mixture and the indices
    of re-seeded components.
    """
    N = R.shape[0]
    Nk = R.sum(axis=0)
    empty = [i for i in range(m.K) if Nk[i] < EMPTY_COMPONENT_FRACTION * N]
    comps = []
    for i, c in enumerate(m.components):
        Xi = completed[i] if isinstance(completed, (list, tuple)) else completed
        if i in empty:
            mu = Xi[worst_sample] if worst_sample is not None else c.mu
            comps.append(PpcaParams(c.W, mu, c.sigma2))
            continue
        r = R[:, i]
        mu = r @ Xi / Nk[i]
        Z = Xi - mu
        S = (Z * r[:, None]).T @ Z
        if cov_correction is not None:
            S = S + cov_correction[i]
        S = 0.5 * (S + S.T) / Nk[i]
        comps.append(_update_component(c, S, mu, max(floor, sigma2_floor(S))))
    pi = Nk / N
    if empty:
        pi = pi.copy()
        pi[empty] = 1.0 / N
    pi = pi / pi.sum()
    return MixtureParams(tuple(comps), pi), empty


def _converged(trace, tol):
    return len(trace) > 1 and abs(trace[-1] - trace[-2]) <= tol * abs(trace[-2])


def em_fit(data, config: TrainingConfig, init: MixtureParams | None = None) -> TrainingReport:
    """Fit a K-component mixture of PPCA by two-stage EM.

    The log-likelihood trace holds the value of every parameter set visited,
    starting with the initial one. Stops when the relative change falls
    below ``config.tol`` or after ``config.max_iterations`` updates.
    """
    X = _check_data(data)
    q = config.q if config.q is not None else choose_q(X, config.rate)
    m = init if init is not None else initialize(X, config.K, q, config.seed)
    floor = sigma2_floor(sample_covariance(X))

    trace = []
    reseeded = []
    converged = False
    iterations = 0
    while True:
        log_joint = component_log_densities(m, X) + _log_pi(m.pi)
        R, lse = _posterior(log_joint)
        trace.append(float(lse.sum()))
        if _converged(trace, config.tol):
            converged = True
            break
        if iterations >= config.max_iterations:
            break
        m, empty = m_step(m, R, X, worst_sample=int(np.argmin(lse)), floor=floor)
        iterations += 1
        if empty:
            logger.warning("iteration %d: re-seeded empty components %s", iterations, empty)
            reseeded.append((iterations, empty))
    return TrainingReport(m, trace, iterations, converged, entropy_criterion(m, X), reseeded)


@dataclass
class SelectionResult:
    best_K: int
    reports: dict
    h_values: dict
    failures: dict = field(default_factory=dict)


def select_k(data, config: TrainingConfig, k_values=None, rule: str = "argmin", delta=None) -> SelectionResult:
    """Fit every K in ``k_values`` and pick the model count.

    ``rule="argmin"`` takes the K with the smallest entropy criterion.
    ``rule="delta"`` takes the smallest K for which moving to K + 1 changes
    the criterion by at most ``delta`` (default 0.05 |H(1)|).
    """
    X = _check_data(data)
    if k_values is None:
        k_values = range(config.k_range[0], config.k_range[1] + 1)
    k_values = sorted(int(k) for k in k_values)
    if not k_values or k_values[0] < 1:
        raise ValueError("k_values must be positive integers")
    q = config.q if config.q is not None else choose_q(X, config.rate)

    reports, h_values, failures = {}, {}, {}
    for K in k_values:
        cfg = TrainingConfig(K=K, q=q, rate=config.rate, max_iterations=config.max_iterations,
                             tol=config.tol, seed=config.seed, k_range=config.k_range)
        try:
            rep = em_fit(X, cfg)
        except (np.linalg.LinAlgError, ValueError) as exc:
            logger.warning("fit failed for K=%d (seed %d): %s", K, config.seed, exc)
            failures[K] = str(exc)
            continue
        if not np.isfinite(rep.h_value):
            failures[K] = "non-finite criterion"
            continue
        reports[K] = rep
        h_values[K] = rep.h_value
    if not h_values:
        raise RuntimeError(f"every fit failed: {failures}")

    fitted = sorted(h_values)
    if rule == "argmin":
        best = min(fitted, key=lambda k: (h_values[k], k))
    elif rule == "delta":
        if delta is None:
            delta = 0.05 * abs(h_values[fitted[0]])
        best = fitted[-1]
        for a, b in zip(fitted, fitted[1:]):
            if abs(h_values[a] - h_values[b]) <= delta:
                best = a
                break
    else:
        raise ValueError(f"unknown rule {rule!r}")
    return SelectionResult(best, reports, h_values, failures)
