import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from otdd.errors import ConvergenceError, DataError, DimensionMismatchError
from otdd.linalg import (
    bures_w2_squared,
    bures_w2_squared_commuting,
    spd_sqrt,
    spd_sqrt_exact,
    spd_sqrt_newton_schulz,
)
from otdd.stats import MomentSummary


def random_spd(rng, d, cond=10.0):
    Q, _ = np.linalg.qr(rng.normal(size=(d, d)))
    w = np.geomspace(1.0, 1.0 / cond, d) if d > 1 else np.ones(1)
    return (Q * w) @ Q.T


def gauss(mean, cov):
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    return MomentSummary(mean, np.atleast_2d(np.asarray(cov, dtype=float)), 10)


def w2_oracle(m1, A, m2, B):
    """Trace term via the eigenvalues of AB, which are those of A^1/2 B A^1/2."""
    ev = np.linalg.eigvals(A @ B).real
    cross = np.sum(np.sqrt(np.clip(ev, 0, None)))
    return float(np.sum((m1 - m2) ** 2) + np.trace(A) + np.trace(B) - 2 * cross)


def test_sqrt_exact_against_scipy(rng):
    for d in (1, 2, 5, 12):
        A = random_spd(rng, d, cond=100)
        np.testing.assert_allclose(spd_sqrt_exact(A), scipy.linalg.sqrtm(A).real, atol=1e-10)


def test_sqrt_exact_semidefinite():
    A = np.diag([4.0, 0.0])
    np.testing.assert_allclose(spd_sqrt_exact(A), np.diag([2.0, 0.0]))


def test_sqrt_exact_rejects_indefinite():
    with pytest.raises(DataError):
        spd_sqrt_exact(np.diag([1.0, -1.0]))


def test_newton_schulz_default_tolerance(rng):
    A = random_spd(rng, 8, cond=50)
    S = spd_sqrt_newton_schulz(A)
    assert np.linalg.norm(S @ S - A) / np.linalg.norm(A) <= 1e-6


def test_newton_schulz_tight_tolerance_matches_exact(rng):
    for cond in (1.0, 1e2, 1e4):
        A = random_spd(rng, 10, cond=cond)
        S = spd_sqrt_newton_schulz(A, max_iters=30, tol=1e-10)
        E = spd_sqrt_exact(A)
        assert np.linalg.norm(S - E) / np.linalg.norm(E) < 1e-5


def test_newton_schulz_reports_non_convergence(rng):
    A = random_spd(rng, 6, cond=1e8)
    with pytest.raises(ConvergenceError) as info:
        spd_sqrt_newton_schulz(A, max_iters=3, tol=1e-12)
    assert info.value.iterations == 3
    assert info.value.residual > 1e-12


def test_newton_schulz_zero_matrix():
    np.testing.assert_array_equal(spd_sqrt_newton_schulz(np.zeros((3, 3))), np.zeros((3, 3)))


def test_spd_sqrt_unknown_mode():
    with pytest.raises(ValueError):
        spd_sqrt(np.eye(2), mode="cholesky")


@pytest.mark.parametrize("m1, s1, m2, s2", [(0, 1, 0, 1), (0, 1, 3, 1), (1, 4, -2, 0.25), (0, 0, 0, 9)])
def test_bures_one_dimensional_closed_form(m1, s1, m2, s2):
    # in 1-D the distance is (m1-m2)^2 + (sd1-sd2)^2
    got = bures_w2_squared(gauss(m1, s1), gauss(m2, s2))
    assert got == pytest.approx((m1 - m2) ** 2 + (np.sqrt(s1) - np.sqrt(s2)) ** 2, abs=1e-12)


def test_bures_against_eigenvalue_oracle(rng):
    for d in (2, 4, 9):
        m1, m2 = rng.normal(size=d), rng.normal(size=d)
        A, B = random_spd(rng, d, 20), random_spd(rng, d, 5) * 3
        for mode in ("exact", "newton_schulz"):
            got = bures_w2_squared(gauss(m1, A), gauss(m2, B), sqrt_mode=mode)
            assert got == pytest.approx(w2_oracle(m1, A, m2, B), rel=1e-5, abs=1e-8)


def test_bures_identical_is_zero(rng):
    A = random_spd(rng, 5)
    m = rng.normal(size=5)
    assert bures_w2_squared(gauss(m, A), gauss(m, A)) == 0.0


def test_bures_symmetric(rng):
    a = gauss(rng.normal(size=4), random_spd(rng, 4, 30))
    b = gauss(rng.normal(size=4), random_spd(rng, 4, 3))
    assert bures_w2_squared(a, b) == pytest.approx(bures_w2_squared(b, a), rel=1e-10)


def test_bures_dimension_mismatch():
    with pytest.raises(DimensionMismatchError):
        bures_w2_squared(gauss([0, 0], np.eye(2)), gauss([0, 0, 0], np.eye(3)))


def test_commuting_form_equals_general_on_commuting_pairs(rng):
    Q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
    A = (Q * [1.0, 2.0, 3.0, 4.0]) @ Q.T
    B = (Q * [0.5, 5.0, 1.0, 2.0]) @ Q.T
    a, b = gauss(np.zeros(4), A), gauss(np.ones(4), B)
    assert bures_w2_squared_commuting(a, b, check=True) == pytest.approx(bures_w2_squared(a, b), rel=1e-9)
    da, db = gauss(np.zeros(3), np.diag([1.0, 4.0, 9.0])), gauss(np.zeros(3), np.diag([4.0, 4.0, 1.0]))
    assert bures_w2_squared_commuting(da, db) == pytest.approx(1.0 + 0.0 + 4.0)


def test_commuting_check_rejects_non_commuting():
    A = np.array([[2.0, 1.0], [1.0, 2.0]])
    B = np.diag([1.0, 3.0])
    with pytest.raises(DataError):
        bures_w2_squared_commuting(gauss([0, 0], A), gauss([0, 0], B), check=True)


@settings(max_examples=30, deadline=None)
@given(d=st.integers(1, 6), seed=st.integers(0, 2**32 - 1))
def test_bures_nonnegative_and_triangle(d, seed):
    rng = np.random.default_rng(seed)
    g = [gauss(rng.normal(size=d), random_spd(rng, d, 10) + 0.1 * np.eye(d)) for _ in range(3)]
    w = lambda x, y: np.sqrt(bures_w2_squared(x, y))
    assert w(g[0], g[1]) >= 0
    assert w(g[0], g[2]) <= w(g[0], g[1]) + w(g[1], g[2]) + 1e-9
