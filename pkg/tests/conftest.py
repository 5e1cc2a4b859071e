import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from civa.core import DatasetCollection, ReferenceSet, build_cross_covariance_cache, center_datasets

settings.register_profile(
    "civa", deadline=None, max_examples=30, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("civa")


def make_instance(seed, N=4, K=3, M=2, V=500):
    """Centered data with dependent sources across datasets, references
    loosely tied to the first sources and a random (non-unit) demixing set."""
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((K, N, N))
    S = rng.standard_normal((K, N, V)) + 0.5 * rng.standard_normal((1, N, V))
    data = center_datasets(DatasetCollection(np.einsum("kij,kjv->kiv", A, S)))
    cache = build_cross_covariance_cache(data)
    refs = ReferenceSet(S[0, :M] + 0.5 * rng.standard_normal((M, V))) if M else None
    W = rng.standard_normal((K, N, N))
    return data, cache, refs, W


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def instance():
    return make_instance(3)


# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
