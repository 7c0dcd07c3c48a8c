import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import lasso_brute_force, lasso_kkt_residual
from tadell.exceptions import (
    ConvergenceWarning,
    DimensionMismatch,
    NonConvergence,
    NotPSD,
    ZeroColumn,
)
from tadell.sparse import (
    WeightedQuadratic,
    lasso,
    lasso_gram,
    mutual_coherence,
    soft_threshold,
    weighted_lasso,
    whiten,
)


@pytest.mark.parametrize("v, t, expected", [(3.0, 1.0, 2.0), (-0.5, 1.0, 0.0), (-3.0, 1.0, -2.0)])
def test_soft_threshold(v, t, expected):
    assert soft_threshold(v, t) == expected


def test_soft_threshold_vectorized():
    np.testing.assert_array_equal(soft_threshold(np.array([3.0, -0.5, -3.0]), 1.0), [2.0, 0.0, -2.0])


class TestLasso:
    def test_orthonormal_dictionary(self):
        s = lasso(np.eye(2), np.array([1.0, 0.2]), 0.2)
        np.testing.assert_allclose(s, [0.9, 0.1], atol=1e-12)

    def test_unpenalized_is_exact_solve(self):
        Q = np.array([[2.0, 1.0], [0.5, 3.0]])
        t = np.array([1.0, -2.0])
        np.testing.assert_allclose(lasso(Q, t, 0.0), np.linalg.solve(Q, t), atol=1e-10)

    def test_random_instance_against_kkt_oracle(self, rng):
        Q = rng.standard_normal((4, 3))
        t = rng.standard_normal(4)
        s = lasso(Q, t, 0.5)
        assert lasso_kkt_residual(Q, t, 0.5, s) <= 1e-6

    def test_brute_force_agreement(self, rng):
        for _ in range(20):
            Q = rng.standard_normal((6, 3))
            t = rng.standard_normal(6)
            mu = rng.uniform(0, 2 * np.abs(Q.T @ t).max())
            np.testing.assert_allclose(lasso(Q, t, mu), lasso_brute_force(Q, t, mu), atol=1e-8)

    def test_shape_errors(self):
        with pytest.raises(DimensionMismatch):
            lasso(np.eye(3), np.ones(2), 0.1)

    def test_nonconvergence_flag(self, rng):
        Q = rng.standard_normal((5, 8))
        t = rng.standard_normal(5)
        with pytest.raises(NonConvergence) as err:
            lasso(Q, t, 1e-3, tol=1e-14, max_iters=2, strict=True)
        assert err.value.best is not None and err.value.best.shape == (8,)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            s = lasso(Q, t, 1e-3, tol=1e-14, max_iters=2)
        assert s.shape == (8,)
        assert any(issubclass(w.category, ConvergenceWarning) for w in caught)

    def test_deterministic(self, rng):
        Q = rng.standard_normal((7, 5))
        t = rng.standard_normal(7)
        np.testing.assert_array_equal(lasso(Q, t, 0.3), lasso(Q, t, 0.3))


@settings(max_examples=60, deadline=None)
@given(
    d=st.integers(1, 10),
    k=st.integers(1, 6),
    seed=st.integers(0, 2**31 - 1),
    frac=st.floats(0.0, 1.5),
)
def test_lasso_properties(d, k, seed, frac):
    r = np.random.default_rng(seed)
    Q = r.standard_normal((d, k))
    t = r.standard_normal(d)
    mu_max = 2 * np.abs(Q.T @ t).max()
    mu = frac * mu_max
    s, info = lasso_gram(Q.T @ Q, Q.T @ t, mu, trace_length=10_001)
    # monotone objective across sweeps
    trace = info.objective_trace
    assert np.all(np.diff(trace) <= 1e-12 * (1 + np.abs(trace[:-1])))
    # KKT certificate from the primal data
    assert lasso_kkt_residual(Q, t, mu, s) <= 1e-6
    if mu >= mu_max:
        assert np.all(s == 0.0)


def test_threshold_shutoff_exact(rng):
    Q = rng.standard_normal((6, 4))
    t = rng.standard_normal(6)
    mu = 2 * np.abs(Q.T @ t).max()
    assert np.all(lasso(Q, t, mu) == 0.0)


class TestWhiten:
    def test_identity(self):
        np.testing.assert_array_equal(whiten(WeightedQuadratic(np.eye(3))), np.eye(3))

    def test_diagonal(self):
        np.testing.assert_allclose(whiten(WeightedQuadratic(np.diag([4.0, 9.0]))), np.diag([2.0, 3.0]))

    def test_round_trip(self):
        A = np.array([[2.0, 1.0], [1.0, 2.0]])
        W = whiten(WeightedQuadratic(A))
        np.testing.assert_allclose(W.T @ W, A, atol=1e-12)
        assert np.allclose(W, np.triu(W))

    def test_singular_psd_gets_jitter(self):
        v = np.array([1.0, 2.0, 3.0])
        A = np.outer(v, v)
        W = whiten(A)
        assert np.linalg.norm(W.T @ W - A) <= 1e-6 * np.linalg.norm(A)

    def test_zero_block_is_left_out(self):
        A = np.zeros((3, 3))
        A[0, 0] = 4.0
        W = whiten(A)
        np.testing.assert_array_equal(W.T @ W, A)

    def test_not_psd(self):
        with pytest.raises(NotPSD):
            whiten(np.array([[1.0, 0.0], [0.0, -1.0]]))
        with pytest.raises(NotPSD):
            whiten(np.array([[1.0, 5.0], [5.0, 1.0]]))


@settings(max_examples=50, deadline=None)
@given(arrays(float, (5, 4), elements=st.floats(-10, 10)), st.floats(0.0, 1.0))
def test_whiten_round_trip_property(X, jitter):
    A = X.T @ X + 1e-3 * np.eye(4)
    W = whiten(WeightedQuadratic(A, jitter))
    err = np.linalg.norm(W.T @ W - (A + jitter * np.eye(4)))
    assert err <= 1e-10 * np.linalg.norm(A)


class TestWeightedLasso:
    def test_identity_weight_reduces_to_lasso(self, rng):
        K = rng.standard_normal((5, 3))
        b = rng.standard_normal(5)
        np.testing.assert_allclose(weighted_lasso(K, b, WeightedQuadratic(np.eye(5)), 0.4),
                                   lasso(K, b, 0.4), atol=1e-12)

    def test_uniform_block_weights(self, rng):
        L, D = rng.standard_normal((3, 2)), rng.standard_normal((2, 2))
        K = np.vstack([L, D])
        b = rng.standard_normal(5)
        w = np.eye(5)  # block-diag(Gamma = I, rho I) with rho = 1
        np.testing.assert_allclose(weighted_lasso(K, b, w, 0.2), lasso(K, b, 0.2), atol=1e-12)

    def test_random_system_against_kkt_oracle(self, rng):
        X = rng.standard_normal((20, 6))
        gamma = X.T @ X / 20
        K = rng.standard_normal((6, 4))
        b = rng.standard_normal(6)
        s = weighted_lasso(K, b, WeightedQuadratic(gamma), 0.3)
        # KKT of ||b - Ks||^2_gamma + mu|s|_1 in the original coordinates
        grad = 2 * K.T @ gamma @ (K @ s - b)
        viol = [abs(g + 0.3 * np.sign(v)) if v else max(abs(g) - 0.3, 0) for g, v in zip(grad, s)]
        assert max(viol) <= 1e-6

    def test_zero_descriptor_weight_matches_model_only(self, rng):
        L, D = rng.standard_normal((4, 3)), rng.standard_normal((2, 3))
        gamma = np.cov(rng.standard_normal((4, 10)))
        b = rng.standard_normal(6)
        A = np.zeros((6, 6))
        A[:4, :4] = gamma
        s_coupled = weighted_lasso(np.vstack([L, D]), b, A, 0.1)
        s_model = weighted_lasso(L, b[:4], gamma, 0.1)
        np.testing.assert_array_equal(s_coupled, s_model)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            weighted_lasso(np.eye(3), np.ones(3), np.eye(2), 0.1)


class TestMutualCoherence:
    def test_orthogonal(self):
        assert mutual_coherence(np.eye(3)) == 0.0

    def test_repeated_column(self):
        Q = np.array([[1.0, 1.0, 0.0], [2.0, 2.0, 1.0]])
        assert mutual_coherence(Q) == pytest.approx(1.0)

    def test_45_degrees(self):
        Q = np.array([[1.0, 1 / np.sqrt(2)], [0.0, 1 / np.sqrt(2)]])
        assert mutual_coherence(Q) == pytest.approx(0.7071067811865476, abs=1e-12)

    def test_zero_column(self):
        with pytest.raises(ZeroColumn):
            mutual_coherence(np.array([[1.0, 0.0], [1.0, 0.0]]))

    def test_single_column(self):
        with pytest.raises(DimensionMismatch):
            mutual_coherence(np.ones((3, 1)))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), d=st.integers(1, 8), k=st.integers(2, 6))
def test_coherence_bounds_and_scale_invariance(seed, d, k):
    r = np.random.default_rng(seed)
    Q = r.standard_normal((d, k))
    m = mutual_coherence(Q)
    assert 0.0 <= m <= 1.0
    scales = r.uniform(0.1, 10.0, size=k)
    assert mutual_coherence(Q * scales) == pytest.approx(m, abs=1e-12)


def test_stacking_lowers_coherence():
    r = np.random.default_rng(0)
    top, stacked = [], []
    for _ in range(200):
        L = r.standard_normal((10, 5))
        D = r.standard_normal((10, 5))
        top.append(mutual_coherence(L))
        stacked.append(mutual_coherence(np.vstack([L, D])))
    assert np.mean(stacked) < np.mean(top)


@pytest.mark.parametrize("seed", range(10))
def test_rank_deficient_dictionary_still_certified(seed):
    # a basis fitted on two tasks has rank two; coordinate descent crawls there
    rng = np.random.default_rng(seed)
    Q = rng.standard_normal((8, 2)) @ rng.standard_normal((2, 8))
    target = rng.standard_normal(8)
    with warnings.catch_warnings():
        warnings.simplefilter("error", ConvergenceWarning)
        s = lasso(Q, target, 3e-4)
    assert lasso_kkt_residual(Q, target, 3e-4, s) <= 1e-6
