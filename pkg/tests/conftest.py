import numpy as np
import pytest

from mppca_monitor.mixture import MixtureParams
from mppca_monitor.ppca import PpcaParams

ACCEPTANCE_RESULTS = {}


def random_ppca(rng, d, q, mu_scale=1.0):
    W = rng.normal(size=(d, q))
    mu = rng.normal(size=d) * mu_scale
    return PpcaParams(W, mu, float(rng.uniform(0.1, 2.0)))


def random_mixture(rng, K, d, q, mu_scale=3.0):
    comps = tuple(random_ppca(rng, d, q, mu_scale) for _ in range(K))
    pi = rng.dirichlet(np.ones(K) * 2.0)
    pi = pi / pi.sum()
    return MixtureParams(comps, pi)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[key]
        tag = "SKIP" if ok is None else "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"{tag}  {key}: {detail}")
