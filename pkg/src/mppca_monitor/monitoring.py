"""Monitoring statistics, KDE alarm limits, detection logic and MAR/FAR.

Per local model i, with z = t - mu_i:

    T2_i  = sigma_i^-2 z^T W_i M_i^-1 W_i^T z            (principal subspace)
    SPE_i = || sigma_i^-1 (I - W_i M_i^-1 W_i^T) z ||^2     (residual subspace)
    Tc2_i = z^T (sigma_i^2 I + W_i W_i^T)^-1 z              (composite)

The global statistic is the responsibility-weighted mean of the locals.
``form="literal"`` swaps M_i^-1 for M_i in T2 and SPE; Tc2 is unchanged.
"""

from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.special import ndtr

from .mixture import MixtureParams, responsibilities

FORMS = ("posterior", "literal")
MODES = ("combined", "dual")
STATISTICS = ("t2", "spe", "tc2")
BANDWIDTH_FACTOR = 1.06


@dataclass(frozen=True)
class LocalStatistics:
    t2: np.ndarray
    spe: np.ndarray
    tc2: np.ndarray
    model_index: int


@dataclass(frozen=True)
class GlobalStatistics:
    t2: np.ndarray
    spe: np.ndarray
    tc2: np.ndarray
    weights: np.ndarray

    def get(self, name):
        return getattr(self, name)


@dataclass(frozen=True)
class ThresholdSet:
    """Alarm limits for each global statistic at confidence ``alpha``."""

    t2: float
    spe: float
    tc2: float
    alpha: float
    bandwidths: dict
    n_samples: int

    def get(self, name):
        return getattr(self, name)


@dataclass(frozen=True)
class EvaluationReport:
    """Missing and false alarm rates in percent; None when undefined."""

    mar: float | None
    far: float | None
    true_alarms: int
    missed: int
    false_alarms: int
    true_silent: int

    def as_dict(self):
        return {
            "mar": self.mar,
            "far": self.far,
            "true_alarms": self.true_alarms,
            "missed": self.missed,
            "false_alarms": self.false_alarms,
            "true_silent": self.true_silent,
        }


def _samples(t, d):
    T = np.asarray(t, dtype=float)
    single = T.ndim == 1
    T = np.atleast_2d(T)
    if T.ndim != 2 or T.shape[1] != d:
        raise ValueError(f"expected samples of dimension {d}, got shape {np.shape(t)}")
    return T, single


def _local_arrays(c, Z, form):
    chol = linalg.cho_factor(c.M)
    proj = Z @ c.W
    sq = np.einsum("ij,ij->i", Z, Z)
    Minv_proj = linalg.cho_solve(chol, proj.T).T
    tc2 = (sq - np.einsum("ij,ij->i", proj, Minv_proj)) / c.sigma2
    if form == "posterior":
        t2 = np.einsum("ij,ij->i", proj, Minv_proj) / c.sigma2
        resid = Z - Minv_proj @ c.W.T
    elif form == "literal":
        M_proj = proj @ c.M
        t2 = np.einsum("ij,ij->i", M_proj, M_proj)
        resid = Z - M_proj @ c.W.T
    else:
        raise ValueError(f"unknown statistic form {form!r}; expected one of {FORMS}")
    spe = np.einsum("ij,ij->i", resid, resid) / c.sigma2
    return np.maximum(t2, 0.0), spe, np.maximum(tc2, 0.0)


def local_statistics(m: MixtureParams, i: int, t, form: str = "posterior") -> LocalStatistics:
    """T2, SPE and Tc2 of sample(s) ``t`` under local model ``i`` (0-based)."""
    if not 0 <= i < m.K:
        raise IndexError(f"model index {i} out of range for K={m.K}")
    T, single = _samples(t, m.d)
    c = m.components[i]
    t2, spe, tc2 = _local_arrays(c, T - c.mu, form)
    if single:
        return LocalStatistics(float(t2[0]), float(spe[0]), float(tc2[0]), i)
    return LocalStatistics(t2, spe, tc2, i)


def all_local_statistics(m: MixtureParams, t, form: str = "posterior"):
    """(N, K) arrays of T2, SPE and Tc2 for every sample and local model."""
    T, _ = _samples(t, m.d)
    cols = [_local_arrays(c, T - c.mu, form) for c in m.components]
    return tuple(np.column_stack([col[j] for col in cols]) for j in range(3))


def global_statistics(m: MixtureParams, t, form: str = "posterior", weights=None) -> GlobalStatistics:
    """Responsibility-weighted global statistics.

    The responsibilities already sum to one per sample, so the weighted sum
    needs no denominator. ``weights`` overrides the responsibilities.
    """
    T, single = _samples(t, m.d)
    R = responsibilities(m, T) if weights is None else np.atleast_2d(np.asarray(weights, dtype=float))
    t2, spe, tc2 = all_local_statistics(m, T, form)
    g = [np.sum(R * s, axis=1) for s in (t2, spe, tc2)]
    if single:
        return GlobalStatistics(float(g[0][0]), float(g[1][0]), float(g[2][0]), R[0])
    return GlobalStatistics(g[0], g[1], g[2], R)


def optimal_bandwidth(samples) -> float:
    """Rule-of-thumb Gaussian-kernel bandwidth 1.06 s N^(-1/5).

    ``s`` is the sample standard deviation (N - 1 denominator).
    """
    z = np.asarray(samples, dtype=float).reshape(-1)
    if z.size < 2:
        raise ValueError("bandwidth needs at least two samples")
    s = float(np.std(z, ddof=1))
    if not s > 0:
        raise ValueError("samples are degenerate (zero standard deviation)")
    return BANDWIDTH_FACTOR * s * z.size ** (-0.2)


def kde_density(samples, h: float, z):
    """Gaussian-kernel density estimate (1/Nh) sum_n phi((z - z_n)/h)."""
    if not h > 0:
        raise ValueError("bandwidth must be positive")
    zn = np.asarray(samples, dtype=float).reshape(-1)
    if zn.size == 0:
        raise ValueError("kde needs at least one sample")
    zq = np.asarray(z, dtype=float)
    dens = np.array([np.exp(-0.5 * ((v - zn) / h) ** 2).sum() for v in zq.reshape(-1)])
    dens /= zn.size * h * np.sqrt(2.0 * np.pi)
    return float(dens[0]) if zq.ndim == 0 else dens.reshape(zq.shape)


def kde_cdf(samples, h: float, z):
    """Cumulative distribution of the Gaussian-kernel density estimate."""
    zn = np.asarray(samples, dtype=float).reshape(-1)
    zq = np.asarray(z, dtype=float)
    out = np.array([ndtr((v - zn) / h).mean() for v in zq.reshape(-1)])
    return float(out[0]) if zq.ndim == 0 else out.reshape(zq.shape)


def threshold(samples, alpha: float, h: float | None = None, tol: float = 1e-8, max_steps: int = 200) -> float:
    """Value J_th at which the KDE cumulative distribution reaches ``alpha``.

    Bisection on [min - 10h, max + 10h] until the CDF is within ``tol`` of
    ``alpha``.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    zn = np.asarray(samples, dtype=float).reshape(-1)
    if h is None:
        h = optimal_bandwidth(zn)
    lo, hi = zn.min() - 10 * h, zn.max() + 10 * h
    for _ in range(max_steps):
        mid = 0.5 * (lo + hi)
        F = kde_cdf(zn, h, mid)
        if abs(F - alpha) <= tol:
            return float(mid)
        if F < alpha:
            lo = mid
        else:
            hi = mid
    raise RuntimeError(f"bisection did not reach tolerance {tol} in {max_steps} steps")


def fit_thresholds(g: GlobalStatistics, alpha: float = 0.99) -> ThresholdSet:
    """Per-statistic KDE thresholds from statistics of normal operating data."""
    limits, bandwidths = {}, {}
    for name in STATISTICS:
        z = np.asarray(g.get(name), dtype=float).reshape(-1)
        h = optimal_bandwidth(z)
        bandwidths[name] = h
        limits[name] = threshold(z, alpha, h)
    n = int(np.size(g.tc2))
    return ThresholdSet(limits["t2"], limits["spe"], limits["tc2"], alpha, bandwidths, n)


def detect(g: GlobalStatistics, th: ThresholdSet, mode: str = "combined"):
    """Alarm flags.

    ``combined``: alarm iff Tc2 > J_tc2. ``dual``: alarm iff T2 > J_t2 or
    SPE > J_spe. Returns a bool for a single sample, else a bool array.
    """
    if mode == "combined":
        alarm = np.asarray(g.tc2) > th.tc2
    elif mode == "dual":
        alarm = (np.asarray(g.t2) > th.t2) | (np.asarray(g.spe) > th.spe)
    else:
        raise ValueError(f"unknown detection mode {mode!r}; expected one of {MODES}")
    return bool(alarm) if alarm.ndim == 0 else alarm


def evaluate(alarms, fault_labels) -> EvaluationReport:
    """Missing alarm rate over faulty samples and false alarm rate over normal ones."""
    a = np.asarray(alarms, dtype=bool).reshape(-1)
    f = np.asarray(fault_labels, dtype=bool).reshape(-1)
    if a.shape != f.shape:
        raise ValueError(f"{a.size} alarms but {f.size} labels")
    tp = int(np.sum(a & f))
    fn = int(np.sum(~a & f))
    fp = int(np.sum(a & ~f))
    tn = int(np.sum(~a & ~f))
    mar = 100.0 * fn / (tp + fn) if tp + fn else None
    far = 100.0 * fp / (fp + tn) if fp + tn else None
    return EvaluationReport(mar, far, tp, fn, fp, tn)
