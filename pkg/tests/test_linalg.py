import numpy as np
import pytest

from gdps.errors import ValidationError
from gdps.linalg import cosine, cosine_flagged, covariance, gini, svd


def brute_force_gini(x):
    x = np.asarray(x, dtype=np.float64)
    k = x.size
    total = 0.0
    for i in range(k):
        for j in range(k):
            total += abs(x[i] - x[j])
    return total / (2.0 * k * k * x.mean())


def brute_force_covariance(a, b, center):
    a = np.asarray(a, dtype=np.float64).copy()
    b = np.asarray(b, dtype=np.float64).copy()
    if center:
        a -= a.mean(axis=0)
        b -= b.mean(axis=0)
    m, d = a.shape
    out = np.zeros((d, b.shape[1]))
    for i in range(d):
        for j in range(b.shape[1]):
            out[i, j] = sum(a[s, i] * b[s, j] for s in range(m)) / m
    return out


def test_cosine_identity():
    assert cosine([1.0, 0.0], [1.0, 0.0]) == 1.0


def test_cosine_orthogonal():
    assert cosine([1.0, 0.0], [0.0, 1.0]) == 0.0


def test_cosine_analytic_45_degrees():
    assert abs(cosine([1.0, 1.0], [1.0, 0.0]) - 0.70710678) < 1e-8


def test_cosine_zero_norm_flagged_not_raised():
    value, flag = cosine_flagged([0.0, 0.0], [1.0, 2.0])
    assert value == 0.0 and flag is True
    value, flag = cosine_flagged([1.0, 2.0], [3.0, 4.0])
    assert flag is False


def test_cosine_clamped_and_scale_invariant(rng):
    for _ in range(50):
        u = rng.standard_normal(6)
        v = rng.standard_normal(6)
        c = cosine(u, v)
        assert -1.0 <= c <= 1.0
        assert abs(cosine(3.7 * u, 0.002 * v) - c) < 1e-12
        assert abs(cosine(v, u) - c) < 1e-15


def test_svd_diagonal():
    res = svd(np.diag([3.0, 2.0, 1.0]))
    assert np.allclose(res.sigma, [3.0, 2.0, 1.0])


def test_svd_rank_one():
    a = np.array([2.0, 0.0, 0.0])
    b = np.array([0.0, 5.0])
    res = svd(np.outer(a, b))
    assert abs(res.sigma[0] - 10.0) < 1e-10
    assert np.all(res.sigma[1:] < 1e-10)


def test_svd_reconstruction_random(rng):
    m = rng.standard_normal((20, 8))
    res = svd(m)
    rel = np.linalg.norm(m - res.reconstruct()) / np.linalg.norm(m)
    assert rel <= 1e-10
    # orthonormal factors
    assert np.allclose(res.u.T @ res.u, np.eye(8), atol=1e-8)
    assert np.allclose(res.v.T @ res.v, np.eye(8), atol=1e-8)
    assert np.all(np.diff(res.sigma) <= 1e-12)


def test_svd_frobenius_identity(rng):
    for _ in range(10):
        m = rng.standard_normal((rng.integers(2, 12), rng.integers(2, 12)))
        res = svd(m)
        assert abs((res.sigma**2).sum() - (m**2).sum()) <= 1e-10 * (m**2).sum()


def test_svd_eckart_young(rng):
    m = rng.standard_normal((12, 9))
    res = svd(m)
    for k in (1, 3, 7):
        approx = res.truncate(k).reconstruct()
        resid = np.linalg.norm(m - approx)
        tail = np.sqrt((res.sigma[k:] ** 2).sum())
        assert abs(resid - tail) <= 1e-8 * max(tail, 1.0)


def test_svd_rejects_bad_input():
    with pytest.raises(ValidationError):
        svd(np.array([[np.nan, 1.0]]))
    with pytest.raises(ValidationError):
        svd(np.zeros((0, 3)))


def test_covariance_analytic():
    a = np.array([[1.0, 0.0], [-1.0, 0.0]])
    out = covariance(a, a, center=True)
    assert np.allclose(out, [[1.0, 0.0], [0.0, 0.0]])


def test_covariance_disjoint_support():
    a = np.array([[1.0, 0.0], [2.0, 0.0], [3.0, 0.0]])
    b = np.array([[0.0, 4.0], [0.0, 5.0], [0.0, 6.0]])
    out = covariance(a, b, center=True)
    assert out[0, 0] == 0.0 and out[1, 1] == 0.0 and out[1, 0] == 0.0


def test_covariance_matches_brute_force(rng):
    a = rng.standard_normal((50, 3))
    b = rng.standard_normal((50, 3))
    for center in (True, False):
        got = covariance(a, b, center=center)
        want = brute_force_covariance(a, b, center)
        assert np.max(np.abs(got - want)) < 1e-12


def test_covariance_errors():
    with pytest.raises(ValidationError, match="row-count"):
        covariance(np.zeros((3, 2)), np.zeros((4, 2)))
    with pytest.raises(ValidationError, match="2 rows"):
        covariance(np.ones((1, 2)), np.ones((1, 2)), center=True)


def test_gini_uniform_is_zero():
    assert gini([1.0, 1.0, 1.0, 1.0]) == 0.0


def test_gini_one_hot():
    # brute force: sum |x_i - x_j| = 6, denominator 2*16*0.25 = 8
    assert abs(brute_force_gini([1.0, 0.0, 0.0, 0.0]) - 0.75) < 1e-15
    assert abs(gini([1.0, 0.0, 0.0, 0.0]) - 0.75) < 1e-12


def test_gini_2_1_1_matches_brute_force():
    want = brute_force_gini([2.0, 1.0, 1.0])  # = 4 / 24 = 1/6
    assert abs(want - 1.0 / 6.0) < 1e-15
    assert abs(gini([2.0, 1.0, 1.0]) - want) < 1e-12


def test_gini_random_matches_brute_force(rng):
    for _ in range(20):
        x = rng.random(int(rng.integers(2, 12)))
        assert abs(gini(x) - brute_force_gini(x)) < 1e-10


def test_gini_invariances(rng):
    x = rng.random(9)
    g = gini(x)
    assert abs(gini(x[::-1]) - g) < 1e-12
    assert abs(gini(17.3 * x) - g) < 1e-12
    assert 0.0 <= g < 1.0


def test_gini_errors():
    with pytest.raises(ValidationError):
        gini([0.0, 0.0])
    with pytest.raises(ValidationError):
        gini([1.0, -0.5])
    with pytest.raises(ValidationError):
        gini([])


def test_svdresult_truncate_bounds(rng):
    res = svd(rng.standard_normal((5, 4)))
    with pytest.raises(ValidationError):
        res.truncate(9)
