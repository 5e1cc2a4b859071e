import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from civa import constraints as C
from civa.core import DemixingSet, scv_covariances
from civa.errors import ConfigError, DegenerateSignalError
from civa.kernels import ARGMAX, ARGMIN

from conftest import make_instance


def central_diff(f, x, h=1e-6):
    out = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        out[i] = (f(x + e) - f(x - e)) / (2 * h)
    return out


def rel_err(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


def with_row(W, k, n, w):
    W2 = W.copy()
    W2[k, n] = w
    return W2


def state(M, K, **kw):
    st_ = C.ConstraintState.initial(M, K, C.ConstraintSettings(**kw))
    return st_


class TestSimilarity:
    @given(st.integers(0, 2**31))
    def test_self_and_sign(self, seed):
        a = np.random.default_rng(seed).standard_normal(20)
        assert C.similarity(a, a) == pytest.approx(1.0, abs=1e-12)
        assert C.similarity(a, -a) == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal(self):
        assert C.similarity([1, -1, 0, 0], [0, 0, 1, -1]) == 0.0

    def test_centering_hand_example(self):
        assert C.similarity([1.0, -1.0], [1.0, 0.0]) == pytest.approx(1.0, abs=1e-15)
        assert C.similarity([1.0, -1.0], [1.0, 0.0], center=False) == pytest.approx(1 / np.sqrt(2))

    def test_zero_variance(self):
        with pytest.raises(DegenerateSignalError):
            C.similarity(np.ones(5), np.arange(5.0))

    def test_cache_form_equals_sample_form(self):
        data, cache, refs, W = make_instance(0)
        proj = refs.project(data)
        for k in range(3):
            for n in range(4):
                y = W[k, n] @ data.datasets[k]
                for m in range(2):
                    expect = C.similarity(refs.references[m], y)
                    assert C.similarity_from_cache(W[k, n], cache, proj, m, k) == pytest.approx(expect, abs=1e-12)
        E = C.eps_matrix(W, cache, proj)
        assert E.shape == (2, 4, 3)
        assert C.paired_eps(W, cache, proj).shape == (2, 3)


class TestSimilarityGradient:
    @pytest.mark.parametrize("seed", range(4))
    def test_finite_differences(self, seed):
        data, cache, refs, W = make_instance(seed, N=4, V=500)
        proj = refs.project(data)
        for k in range(3):
            w = W[k, 1]
            g = C.similarity_gradient(0, w, cache, proj, k)
            fd = central_diff(lambda v: C.similarity(refs.references[0], v @ data.datasets[k]), w.copy())
            assert rel_err(g, fd) < 1e-6

    def test_stationary_at_perfect_match(self, rng):
        r = rng.standard_normal(50)
        np.testing.assert_allclose(C.similarity_grad_y(r, 3 * r), 0.0, atol=1e-10)

    def test_hand_direction(self):
        g = C.similarity_grad_y([1.0, 0.0], [1.0, 1.0], center=False)
        np.testing.assert_allclose(g, np.array([0.5, -0.5]) / np.sqrt(2), atol=1e-15)
        assert g @ np.array([1.0, 1.0]) == pytest.approx(0.0, abs=1e-15)

    def test_centered_gradient_matches_fd(self, rng):
        r, y = rng.standard_normal(30), rng.standard_normal(30)
        fd = central_diff(lambda v: C.similarity(r, v), y.copy())
        assert rel_err(C.similarity_grad_y(r, y), fd) < 1e-6


class TestPenalty:
    def test_inactive(self):
        s = state(2, 2)
        s.rho[:] = 0.3
        assert C.penalty_value(s, np.full((2, 2), 0.5)) == 0.0

    def test_violated_hand_value(self):
        s = state(1, 1, gamma=100.0)
        s.rho[:] = 0.6
        assert C.penalty_value(s, [[0.5]]) == pytest.approx(0.5, abs=1e-12)

    def test_satisfied_with_multiplier(self):
        s = state(1, 1, gamma=100.0)
        s.rho[:] = 0.6
        s.mu[:] = 0.5
        assert C.penalty_value(s, [[0.7]]) == pytest.approx(-0.00125, abs=1e-15)


class TestMultiplier:
    def test_satisfied(self):
        alpha, mu = C.update_multiplier(0.5, 100.0, 0.6, 0.7)
        assert alpha == pytest.approx(-9.5)
        assert mu == 0.0

    def test_violated(self):
        alpha, mu = C.update_multiplier(0.0, 100.0, 0.6, 0.5)
        assert alpha == pytest.approx(10.0)
        assert mu == pytest.approx(10.0)

    @given(st.floats(0, 10), st.floats(0.01, 100), st.floats(0, 1))
    def test_fixed_point(self, mu, gamma, rho):
        assert C.update_multiplier(mu, gamma, rho, rho)[1] == mu

    @given(st.floats(0, 10), st.floats(0.01, 100), st.floats(0, 1), st.floats(0, 1))
    def test_nonnegative(self, mu, gamma, rho, eps):
        assert C.update_multiplier(mu, gamma, rho, eps)[1] >= 0.0


class TestThresholds:
    def test_pt_example(self):
        s = state(1, 2, gamma=3.0, thresholds=C.PT_THRESHOLDS)
        assert C.select_threshold("pt", s, np.array([[0.42, 0.55]]), 0, 0) == pytest.approx(0.4)

    def test_pt_tie_goes_to_smaller(self):
        s = state(1, 1, thresholds=C.PT_THRESHOLDS)
        assert C.select_threshold("pt", s, np.array([[0.45]]), 0, 0) == pytest.approx(0.4)

    def test_ar_examples(self):
        s = state(1, 1)
        assert C.select_threshold("ar", s, 0.345, 0, 0) == pytest.approx(0.35)
        s.scheme[0, 0] = ARGMAX
        assert C.select_threshold("ar", s, 0.345, 0, 0) == pytest.approx(0.34)

    def test_ar_fallbacks(self):
        s = state(1, 1)
        assert C.select_threshold("ar", s, 0.995, 0, 0) == pytest.approx(0.99)
        s.scheme[0, 0] = ARGMAX
        assert C.select_threshold("ar", s, 0.001, 0, 0) == pytest.approx(0.01)

    def test_fixed(self):
        s = state(1, 1, rho=0.5)
        assert C.select_threshold("fixed", s, 0.9, 0, 0) == 0.5

    @given(st.floats(0.0, 1.0))
    def test_ar_brackets_eps(self, eps):
        s = state(1, 1)
        lo = C.select_threshold("ar", s, eps, 0, 0)
        s.scheme[0, 0] = ARGMAX
        hi = C.select_threshold("ar", s, eps, 0, 0)
        P = C.AR_THRESHOLDS
        if P[0] <= eps < P[-1]:
            assert hi <= eps < lo
            assert lo - hi == pytest.approx(0.01)

    @given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=6))
    def test_pt_matches_brute_force(self, eps):
        P = C.PT_THRESHOLDS
        s = state(1, len(eps), thresholds=P)
        got = C.select_threshold("pt", s, np.array([eps]), 0, 0)
        dist = [min(abs(p - e) for e in eps) for p in P]
        assert got == P[int(np.argmin(dist))]

    def test_unknown_strategy(self):
        with pytest.raises(ConfigError):
            C.select_threshold("bogus", state(1, 1), 0.5, 0, 0)


class TestScheme:
    @pytest.mark.parametrize(
        "mu, before, after",
        [(1.2, ARGMIN, ARGMAX), (0.0, ARGMAX, ARGMIN), (0.4, ARGMAX, ARGMAX), (0.4, ARGMIN, ARGMIN)],
    )
    def test_switch(self, mu, before, after):
        s = state(1, 1, mu_max=1.0)
        s.mu[0, 0] = mu
        s.scheme[0, 0] = before
        assert C.maybe_switch_scheme(s, 0, 0) == after


class TestConstraintGradient:
    def test_unconstrained_row_is_zero(self):
        data, cache, refs, W = make_instance(1)
        proj = refs.project(data)
        s = state(2, 3)
        s.rho[:] = 0.99
        np.testing.assert_array_equal(C.grad_constraint_term(s, W, cache, proj, 3, 0), 0.0)

    def test_inactive_is_zero(self):
        data, cache, refs, W = make_instance(1)
        proj = refs.project(data)
        s = state(2, 3)
        s.rho[:] = 0.0
        np.testing.assert_array_equal(C.grad_constraint_term(s, W, cache, proj, 0, 1), 0.0)

    @pytest.mark.parametrize("seed", range(5))
    @pytest.mark.parametrize("active", [True, False])
    def test_penalty_finite_differences(self, seed, active):
        data, cache, refs, W = make_instance(seed)
        proj = refs.project(data)
        eps = C.paired_eps(W, cache, proj)
        s = state(2, 3, gamma=5.0)
        rng = np.random.default_rng(seed)
        if active:
            s.rho[:] = np.minimum(eps + 0.2, 0.99)
            s.mu[:] = rng.uniform(0, 1, (2, 3))
        else:
            s.rho[:] = np.maximum(eps - 0.2, 0.0)
        for n in range(2):
            for k in range(3):
                fd = central_diff(lambda w: C.penalty_value(s, C.paired_eps(with_row(W, k, n, w), cache, proj)),
                                  W[k, n].copy())
                g = C.grad_constraint_term(s, W, cache, proj, n, k)
                if active:
                    assert rel_err(g, fd) < 1e-6
                else:
                    np.testing.assert_array_equal(g, 0.0)
                    assert np.max(np.abs(fd)) < 1e-9

    def test_lagrangian_finite_differences(self):
        data, cache, refs, W = make_instance(11)
        proj = refs.project(data)
        Sig = scv_covariances(DemixingSet(W), cache).covariances
        s = state(2, 3, gamma=3.0)
        s.rho[:] = 0.9
        s.mu[:] = 0.3
        for n, k in [(0, 0), (1, 2), (3, 1)]:
            fd = central_diff(lambda w: C.lagrangian_value(with_row(W, k, n, w), Sig, cache, proj, s), W[k, n].copy())
            assert rel_err(C.grad_lagrangian(W, Sig, cache, proj, s, n, k), fd) < 1e-6


class TestRegularizer:
    def test_single_reference(self):
        data, cache, refs, W = make_instance(2, M=1)
        proj = refs.project(data)
        eps = C.paired_eps(W, cache, proj)
        assert C.j_ref_value(W, cache, proj) == pytest.approx(-np.sum(eps**2), abs=1e-14)
        for k in range(3):
            e, de = C._eps_and_grad(W[k, 0], cache.blocks[k, k], proj.B[k, 0], proj.rr[0])
            np.testing.assert_array_equal(C.grad_j_ref(W, cache, proj, 0, k), -2 * e * de)

    def test_orthogonal_references_recovered_exactly(self, rng):
        from civa.core import DatasetCollection, ReferenceSet, build_cross_covariance_cache, center_datasets

        M, N, K, V = 3, 3, 2, 600
        Q, _ = np.linalg.qr(rng.standard_normal((V, N)))
        S = (Q.T - Q.T.mean(axis=1, keepdims=True)) * np.sqrt(V)
        # exactly orthogonal, zero-mean rows
        S = np.linalg.qr(S.T - S.T.mean(axis=0))[0].T * np.sqrt(V)
        X = np.stack([S] * K)
        data = center_datasets(DatasetCollection(X))
        cache = build_cross_covariance_cache(data)
        proj = ReferenceSet(S[:M]).project(data)
        W = np.stack([np.eye(N)] * K)
        assert C.j_ref_value(W, cache, proj) == pytest.approx(-M * K, abs=1e-9)

    @pytest.mark.parametrize("t", [0.25, 0.5, 0.75, 1.0])
    def test_decreases_as_similarity_grows(self, t):
        data, cache, refs, W = make_instance(3, M=1)
        proj = refs.project(data)
        best = np.linalg.solve(cache.blocks[0, 0], proj.B[0, 0])
        w0 = W[0, 0] / np.linalg.norm(W[0, 0])
        best = best / np.linalg.norm(best) * np.sign(best @ w0)
        # interpolating toward the maximizer of the similarity raises it monotonically
        path = [with_row(W, 0, 0, (1 - s) * w0 + s * best) for s in (0.0, t / 2, t)]
        eps = [C.paired_eps(Wp, cache, proj)[0, 0] for Wp in path]
        jr = [C.j_ref_value(Wp, cache, proj) for Wp in path]
        assert eps[0] <= eps[1] <= eps[2]
        assert jr[0] >= jr[1] >= jr[2]
        if t == 1.0:
            assert eps[2] == pytest.approx(np.sqrt(proj.B[0, 0] @ np.linalg.solve(cache.blocks[0, 0], proj.B[0, 0]) / proj.rr[0]))

    def test_unconstrained_row_is_zero(self):
        data, cache, refs, W = make_instance(4)
        proj = refs.project(data)
        np.testing.assert_array_equal(C.grad_j_ref(W, cache, proj, 2, 0), 0.0)

    @pytest.mark.parametrize("seed", range(5))
    def test_finite_differences(self, seed):
        data, cache, refs, W = make_instance(seed, N=4, K=2, M=3)
        proj = refs.project(data)
        for n in range(3):
            for k in range(2):
                fd = central_diff(lambda w: C.j_ref_value(with_row(W, k, n, w), cache, proj), W[k, n].copy())
                assert rel_err(C.grad_j_ref(W, cache, proj, n, k), fd) < 1e-6

    @pytest.mark.parametrize("lam", [0.5, 1.0, 3.0])
    def test_tf_objective_gradient(self, lam):
        data, cache, refs, W = make_instance(6)
        proj = refs.project(data)
        Sig = scv_covariances(DemixingSet(W), cache).covariances
        for n, k in [(0, 1), (1, 0), (2, 2)]:
            fd = central_diff(lambda w: C.tf_objective(with_row(W, k, n, w), Sig, cache, proj, lam), W[k, n].copy())
            assert rel_err(C.grad_tf(W, Sig, cache, proj, lam, n, k), fd) < 1e-6

    def test_needs_references(self):
        data, cache, refs, W = make_instance(5)
        from civa.core import ProjectedReferences

        with pytest.raises(ConfigError):
            C.j_ref_value(W, cache, ProjectedReferences.empty(3, 4))


class TestSettings:
    @pytest.mark.parametrize(
        "kw",
        [{"gamma": 0}, {"mu_max": -1}, {"thresholds": [0.5, 0.4]}, {"thresholds": [0.0, 0.5]}, {"rho": 1.5},
         {"thresholds": []}],
    )
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            C.ConstraintSettings(**kw)

    def test_defaults(self):
        pt = C.ConstraintSettings.defaults("pt-civa")
        assert pt.gamma == 3.0 and np.array_equal(pt.thresholds, C.PT_THRESHOLDS)
        ar = C.ConstraintSettings.defaults("ar-civa")
        assert ar.gamma == 100.0 and ar.mu_max == 1.0 and len(ar.thresholds) == 99
        assert C.RegularizerSettings().lam == 1.0
        with pytest.raises(ConfigError):
            C.RegularizerSettings(lam=0)
