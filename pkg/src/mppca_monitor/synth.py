"""Synthetic multi-mode process data with injected faults and MCAR masking.

Normal samples come from a mixture of PPCA models: pick a component by its
weight, draw x ~ N(0, I), emit t = W x + mu + noise. The test stream is
drawn the same way, then a fault is applied from ``onset`` (0-based row
index) onward, then entries are hidden at random.

Randomness comes from ``numpy.random.SeedSequence(seed).spawn(5)``, one child
stream each for training draws, test draws, the fault, the training mask and
the test mask, so changing one part of a scenario leaves the others fixed.
"""

from dataclasses import dataclass, field

import numpy as np

from .data_io import Dataset
from .mixture import MixtureParams
from .ppca import PpcaParams, model_covariance

FAULT_KINDS = ("step", "ramp", "gain", "noise")


@dataclass
class FaultSpec:
    """Fault applied to ``variables`` from row ``onset`` of the test stream.

    ``magnitude`` is in units of ``unit``. By default each affected variable
    uses its own within-mode standard deviation, sqrt(C_jj) averaged over
    the generating modes:

    - step:  add magnitude * unit
    - ramp:  add a linear drift reaching magnitude * unit at the last row
    - gain:  scale the deviation from the sample's component mean by 1 + magnitude
    - noise: add N(0, (magnitude * unit)^2) noise
    """

    kind: str = "step"
    magnitude: float = 0.0
    onset: int = 0
    variables: tuple = (0,)
    unit: float | None = None

    def __post_init__(self):
        if self.kind not in FAULT_KINDS:
            raise ValueError(f"fault kind must be one of {FAULT_KINDS}, got {self.kind!r}")
        if self.magnitude < 0:
            raise ValueError("fault magnitude must be nonnegative")
        self.variables = tuple(int(v) for v in self.variables)


@dataclass
class ScenarioSpec:
    mixture: MixtureParams
    n_normal: int = 1000
    n_test: int = 750
    fault: FaultSpec = field(default_factory=FaultSpec)
    missing_rate: float = 0.0
    train_missing_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n_normal < 1 or self.n_test < 1:
            raise ValueError("sample counts must be positive")
        if not 0 <= self.fault.onset <= self.n_test:
            raise ValueError(f"fault onset {self.fault.onset} outside test range [0, {self.n_test}]")
        if any(not 0 <= v < self.mixture.d for v in self.fault.variables):
            raise ValueError("fault variables out of range")
        for r in (self.missing_rate, self.train_missing_rate):
            if not 0 <= r < 1:
                raise ValueError("missing rates must lie in [0, 1)")


def make_mixture(K: int, d: int, q: int, separation: float = 10.0, noise_std: float = 0.3, seed: int = 0,
                 weights=None) -> MixtureParams:
    """Random K-mode PPCA mixture with well separated means.

    Loadings have standard-normal entries. The means sit on a scaled random
    orthonormal frame so every pair is ``separation`` times the largest
    per-mode standard deviation apart (the square root of the top eigenvalue
    of any component covariance).
    """
    if K > d:
        raise ValueError("this layout needs K <= d")
    rng = np.random.default_rng(seed)
    Ws = [rng.standard_normal((d, q)) for _ in range(K)]
    s2 = noise_std ** 2
    spread = max(np.sqrt(np.linalg.eigvalsh(s2 * np.eye(d) + W @ W.T)[-1]) for W in Ws)
    frame, _ = np.linalg.qr(rng.standard_normal((d, d)))
    centre = rng.standard_normal(d)
    comps = tuple(
        PpcaParams(Ws[i], centre + separation * spread / np.sqrt(2.0) * frame[:, i] * (K > 1), s2) for i in range(K)
    )
    pi = np.full(K, 1.0 / K) if weights is None else np.asarray(weights, dtype=float) / np.sum(weights)
    return MixtureParams(comps, pi)


def sample_mixture(m: MixtureParams, n: int, rng):
    """Draw n samples; returns (data, component index per row)."""
    z = rng.choice(m.K, size=n, p=m.pi)
    X = np.empty((n, m.d))
    for i, c in enumerate(m.components):
        rows = np.flatnonzero(z == i)
        x = rng.standard_normal((rows.size, c.q))
        e = rng.standard_normal((rows.size, c.d)) * np.sqrt(c.sigma2)
        X[rows] = x @ c.W.T + c.mu + e
    return X, z


def _apply_fault(X, z, m, f: FaultSpec, rng):
    X = X.copy()
    n = X.shape[0]
    rows = np.arange(f.onset, n)
    cols = list(f.variables)
    if rows.size == 0 or f.magnitude == 0:
        return X
    unit = f.unit if f.unit is not None else variable_scale(m)[cols]
    if f.kind == "step":
        X[np.ix_(rows, cols)] += f.magnitude * unit
    elif f.kind == "ramp":
        ramp = (rows - f.onset + 1) / rows.size
        X[np.ix_(rows, cols)] += f.magnitude * ramp[:, None] * unit
    elif f.kind == "gain":
        means = np.array([m.components[i].mu for i in z[rows]])[:, cols]
        X[np.ix_(rows, cols)] = means + (1.0 + f.magnitude) * (X[np.ix_(rows, cols)] - means)
    elif f.kind == "noise":
        X[np.ix_(rows, cols)] += rng.standard_normal((rows.size, len(cols))) * f.magnitude * unit
    return X


def _mask(X, rate, rng):
    """Hide entries completely at random, keeping at least one per row."""
    if rate <= 0:
        return X
    X = X.copy()
    hide = rng.random(X.shape) < rate
    full = hide.all(axis=1)
    if full.any():
        keep = rng.integers(X.shape[1], size=int(full.sum()))
        hide[np.flatnonzero(full), keep] = False
    X[hide] = np.nan
    return X


def generate(spec: ScenarioSpec):
    """Return (training Dataset, labelled test Dataset) for a scenario."""
    s_train, s_test, s_fault, s_mtrain, s_mtest = np.random.SeedSequence(spec.seed).spawn(5)
    m = spec.mixture
    names = [f"x{j + 1}" for j in range(m.d)]
    Xtr, _ = sample_mixture(m, spec.n_normal, np.random.default_rng(s_train))
    Xte, zte = sample_mixture(m, spec.n_test, np.random.default_rng(s_test))
    Xte = _apply_fault(Xte, zte, m, spec.fault, np.random.default_rng(s_fault))
    Xtr = _mask(Xtr, spec.train_missing_rate, np.random.default_rng(s_mtrain))
    Xte = _mask(Xte, spec.missing_rate, np.random.default_rng(s_mtest))
    labels = np.arange(spec.n_test) >= spec.fault.onset
    train = Dataset(Xtr, names, None, f"synthetic seed={spec.seed} train")
    test = Dataset(Xte, names, labels, f"synthetic seed={spec.seed} test")
    return train, test


def benchmark_scenario(seed: int = 0, K: int = 3, d: int = 10, q: int = 3, magnitude: float = 5.0,
                       variables=(0, 1), kind: str = "step", n_normal: int = 1000, n_test: int = 750,
                       onset: int = 428, missing_rate: float = 0.0, separation: float = 10.0,
                       noise_std: float = 0.3) -> ScenarioSpec:
    """Default desk-scale benchmark: 3 modes in 10 variables, fault on 2 variables
    from the 429th test sample."""
    m = make_mixture(K, d, q, separation=separation, noise_std=noise_std, seed=seed)
    fault = FaultSpec(kind, magnitude, onset, tuple(variables))
    return ScenarioSpec(m, n_normal, n_test, fault, missing_rate, 0.0, seed)


def scenario_to_dict(spec: ScenarioSpec) -> dict:
    m = spec.mixture
    return {
        "mixture": {
            "pi": [float(v) for v in m.pi],
            "components": [
                {"W": [list(map(float, r)) for r in c.W], "mu": [float(v) for v in c.mu], "sigma2": float(c.sigma2)}
                for c in m.components
            ],
        },
        "n_normal": spec.n_normal,
        "n_test": spec.n_test,
        "fault": {
            "kind": spec.fault.kind,
            "magnitude": float(spec.fault.magnitude),
            "onset": spec.fault.onset,
            "variables": list(spec.fault.variables),
            "unit": spec.fault.unit,
        },
        "missing_rate": spec.missing_rate,
        "train_missing_rate": spec.train_missing_rate,
        "seed": spec.seed,
    }


def scenario_from_dict(doc: dict) -> ScenarioSpec:
    """Build a scenario from a parsed JSON document.

    The ``mixture`` entry is either explicit (``pi`` and ``components``) or a
    recipe for make_mixture (``K``, ``d``, ``q`` and optional ``separation``,
    ``noise_std``, ``seed``).
    """
    mix = doc["mixture"]
    if "components" in mix:
        comps = tuple(PpcaParams(c["W"], c["mu"], c["sigma2"]) for c in mix["components"])
        m = MixtureParams(comps, mix["pi"])
    else:
        m = make_mixture(int(mix["K"]), int(mix["d"]), int(mix["q"]), float(mix.get("separation", 10.0)),
                         float(mix.get("noise_std", 0.3)), int(mix.get("seed", doc.get("seed", 0))))
    f = doc.get("fault", {})
    fault = FaultSpec(f.get("kind", "step"), float(f.get("magnitude", 0.0)), int(f.get("onset", 0)),
                      tuple(f.get("variables", (0,))), f.get("unit"))
    return ScenarioSpec(m, int(doc.get("n_normal", 1000)), int(doc.get("n_test", 750)), fault,
                        float(doc.get("missing_rate", 0.0)), float(doc.get("train_missing_rate", 0.0)),
                        int(doc.get("seed", 0)))


def variable_scale(m: MixtureParams) -> np.ndarray:
    """Per-variable within-mode standard deviation, averaged over modes."""
    return np.sqrt(np.mean([np.diag(model_covariance(c)) for c in m.components], axis=0))
