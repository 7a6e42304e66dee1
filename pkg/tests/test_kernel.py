import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sgpipp.env import make_rng
from sgpipp.errors import InvalidArgument, NumericalFailure
from sgpipp.kernel import RbfKernel, jittered_cholesky

K2 = RbfKernel(1.0, [1.0, 1.0])


def test_eval_self_is_variance():
    k = RbfKernel(2.5, [0.3, 4.0])
    assert k.eval([0.1, 0.2], [0.1, 0.2]) == 2.5


def test_eval_unit_distance():
    # exp(-1/2) evaluated independently at 40 digits
    assert K2.eval([0, 0], [1, 0]) == pytest.approx(0.6065306597126334236, rel=1e-14)


def test_eval_symmetry():
    rng = make_rng(0)
    k = RbfKernel(1.3, [0.4, 1.7, 2.0])
    for _ in range(100):
        x, y = rng.normal(size=3), rng.normal(size=3)
        assert k.eval(x, y) == k.eval(y, x)


def test_validation():
    with pytest.raises(InvalidArgument):
        RbfKernel(0.0, [1.0])
    with pytest.raises(InvalidArgument):
        RbfKernel(1.0, [1.0, -1.0])
    with pytest.raises(InvalidArgument):
        K2.eval([0, 0, 0], [0, 0, 0])
    with pytest.raises(InvalidArgument):
        K2.cov(np.zeros((0, 2)), np.zeros((3, 2)))


def test_cov_shapes_and_entries():
    k = RbfKernel(1.7, [0.5, 2.0])
    np.testing.assert_array_equal(k.cov([[0.2, 0.3]], [[0.2, 0.3]]), [[1.7]])
    A = make_rng(1).normal(size=(3, 2))
    B = make_rng(2).normal(size=(5, 2))
    K = k.cov(A, B)
    assert K.shape == (3, 5)
    brute = np.array([[k.eval(a, b) for b in B] for a in A])
    np.testing.assert_allclose(K, brute, rtol=1e-12)


def test_cov_psd_with_jitter():
    A = make_rng(3).uniform(size=(20, 2))
    K = RbfKernel(1.0, [0.2, 0.2]).cov(A, A)
    np.testing.assert_array_equal(K, K.T)
    assert np.linalg.eigvalsh(K + 1e-6 * np.eye(20)).min() > 0


def test_jittered_cholesky_handles_duplicates():
    A = np.repeat(make_rng(4).uniform(size=(10, 2)), 2, axis=0)
    K = RbfKernel(2.0, [0.3, 0.3]).cov(A, A)
    L, jitter = jittered_cholesky(K, 2.0)
    assert jitter >= 2e-6
    np.testing.assert_allclose(L @ L.T, K + jitter * np.eye(len(K)), atol=1e-10)


def test_jittered_cholesky_failure():
    with pytest.raises(NumericalFailure):
        jittered_cholesky(-np.eye(3), 1.0)


def test_grad_first_matches_finite_differences():
    rng = make_rng(5)
    k = RbfKernel(1.4, [0.3, 0.7, 1.1])
    A, B = rng.normal(size=(4, 3)), rng.normal(size=(6, 3))
    G = rng.normal(size=(4, 6))
    g = k.grad_first(A, B, G)
    h = 1e-6
    fd = np.zeros_like(A)
    for i in range(4):
        for j in range(3):
            Ap, Am = A.copy(), A.copy()
            Ap[i, j] += h
            Am[i, j] -= h
            fd[i, j] = (np.sum(G * k.cov(Ap, B)) - np.sum(G * k.cov(Am, B))) / (2 * h)
    np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 3.0), st.floats(0.0, 3.0))
def test_monotone_in_distance(d1, d2):
    lo, hi = sorted((d1, d2))
    assert K2.eval([0, 0], [lo, 0]) >= K2.eval([0, 0], [hi, 0])


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (6, 2), elements=st.floats(-2, 2, allow_nan=False, width=64)))
def test_values_in_range(A):
    K = K2.cov(A, A)
    assert np.all(K > 0) and np.all(K <= 1.0 + 1e-15)
    np.testing.assert_allclose(np.diag(K), 1.0, rtol=0, atol=1e-12)
