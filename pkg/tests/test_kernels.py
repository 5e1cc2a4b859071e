import numpy as np
import pytest

from civa import kernels
from civa.constraints import VARIANTS
from civa.core import random_init
from civa.hybrid import HybridConfig, generate_hybrid
from civa.iva_g import SolverSettings
from civa.metrics import joint_isi_from
from civa.solver import make_problem, solve

pytestmark = pytest.mark.skipif(not kernels.HAS_NUMBA, reason="numba not installed")


@pytest.fixture(scope="module")
def problem():
    data, truth, refs = generate_hybrid(HybridConfig(N=4, K=5, V=3000, seed=3))
    return make_problem(data, refs)


@pytest.mark.parametrize("variant", VARIANTS)
@pytest.mark.parametrize("iters, atol", [(1, 1e-13), (8, 1e-9)])
def test_backends_agree(problem, variant, iters, atol):
    # the unit-length steps amplify round-off by roughly ten every few sweeps,
    # so bitwise-close agreement is only expected over short horizons
    init = random_init(4, 5, 1)
    s = SolverSettings(max_iters=iters)
    a = solve(variant, problem, init=init, settings=s, backend="numba")
    b = solve(variant, problem, init=init, settings=s, backend="numpy")
    assert a.backend == "numba" and b.backend == "numpy"
    np.testing.assert_allclose(a.W, b.W, atol=atol)
    np.testing.assert_allclose(a.objective_trace, b.objective_trace, rtol=1e-10)
    assert a.decay_events == b.decay_events
    if a.mu_trace is not None:
        np.testing.assert_allclose(a.mu_trace, b.mu_trace, atol=1e3 * atol)


@pytest.mark.parametrize("variant", ["civa-fixed", "tf-civa"])
def test_backends_reach_same_quality(variant):
    data, truth, refs = generate_hybrid(HybridConfig(N=4, K=5, V=3000, seed=3))
    problem = make_problem(data, refs)
    init = random_init(4, 5, 1)
    a = solve(variant, problem, init=init, backend="numba")
    b = solve(variant, problem, init=init, backend="numpy")
    assert abs(joint_isi_from(a.W, truth.mixing) - joint_isi_from(b.W, truth.mixing)) < 0.02
    assert a.final_objective == pytest.approx(b.final_objective, rel=1e-3)


@pytest.mark.parametrize("flag, expected", [("numpy", "numpy"), ("NUMBA", "numba"), (" numpy ", "numpy")])
def test_env_flag(monkeypatch, flag, expected):
    monkeypatch.setenv(kernels.ENV_FLAG, flag)
    assert kernels.requested_backend() == expected
    mod = kernels.get_backend()
    assert mod is (kernels._numpy if expected == "numpy" else kernels._numba)


def test_env_flag_drives_solver(monkeypatch, problem):
    monkeypatch.setenv(kernels.ENV_FLAG, "numpy")
    rep = solve("iva-g-v", problem, settings=SolverSettings(max_iters=2))
    assert rep.backend == "numpy"


def test_default_is_numba(monkeypatch):
    monkeypatch.delenv(kernels.ENV_FLAG, raising=False)
    assert kernels.requested_backend() == "numba"


def test_bad_flag(monkeypatch):
    monkeypatch.setenv(kernels.ENV_FLAG, "fortran")
    with pytest.raises(ValueError):
        kernels.requested_backend()
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")
