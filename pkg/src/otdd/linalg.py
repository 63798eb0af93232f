"""Square roots of PSD matrices and the 2-Wasserstein distance between Gaussians."""
from __future__ import annotations

import numpy as np

from .errors import ConvergenceError, DataError, DimensionMismatchError
from .stats import MomentSummary

SQRT_MODES = ("exact", "newton_schulz")


def _sym(A):
    return 0.5 * (A + A.T)


def spd_sqrt_exact(A: np.ndarray) -> np.ndarray:
    """Principal square root through a symmetric eigendecomposition.

    Eigenvalues that are negative by less than ``1e-6`` of the trace scale are
    treated as round-off and clamped to zero.
    """
    A = _sym(np.asarray(A, dtype=np.float64))
    w, V = np.linalg.eigh(A)
    scale = max(abs(np.trace(A)) / A.shape[0], np.abs(w).max(initial=0.0))
    if w.size and w[0] < -1e-6 * scale:
        raise DataError(f"matrix is not PSD (smallest eigenvalue {w[0]:.3g})")
    w = np.sqrt(np.clip(w, 0.0, None))
    return _sym((V * w) @ V.T)


def spd_sqrt_newton_schulz(A: np.ndarray, max_iters: int = 20, tol: float = 1e-6) -> np.ndarray:
    """Coupled Newton-Schulz iteration for the square root of a PSD matrix.

    ``A`` is first divided by its Frobenius norm so every eigenvalue lies in
    ``(0, 1]`` and the iteration contracts.  Raises :class:`ConvergenceError`
    when the relative residual ``||S S - A||_F / ||A||_F`` is still above
    ``tol`` after ``max_iters`` steps.
    """
    A = _sym(np.asarray(A, dtype=np.float64))
    norm = np.linalg.norm(A)
    if norm == 0.0:
        return np.zeros_like(A)
    I = np.eye(A.shape[0])
    Y = A / norm
    Z = I.copy()
    res = np.inf
    for it in range(1, max_iters + 1):
        T = 0.5 * (3.0 * I - Z @ Y)
        Y = Y @ T
        Z = T @ Z
        res = np.linalg.norm(Y @ Y * norm - A) / norm
        if res <= tol:
            return _sym(Y) * np.sqrt(norm)
    raise ConvergenceError(
        f"Newton-Schulz did not reach tol={tol:g} in {max_iters} iterations (residual {res:.3g})",
        residual=res,
        iterations=max_iters,
    )


def spd_sqrt(A, mode: str = "exact", **kw) -> np.ndarray:
    if mode == "exact":
        return spd_sqrt_exact(A)
    if mode == "newton_schulz":
        return spd_sqrt_newton_schulz(A, **kw)
    raise ValueError(f"unknown sqrt mode {mode!r}; expected one of {SQRT_MODES}")


def _check_dims(a: MomentSummary, b: MomentSummary):
    if a.d != b.d:
        raise DimensionMismatchError(f"feature dimensions differ: {a.d} vs {b.d}")


def bures_trace_term(cov_a, cov_b, sqrt_a=None, mode: str = "exact") -> float:
    """``tr(A + B - 2 (A^1/2 B A^1/2)^1/2)``; ``sqrt_a`` may be passed in when cached."""
    if sqrt_a is None:
        sqrt_a = spd_sqrt(cov_a, mode)
    cross = spd_sqrt(_sym(sqrt_a @ cov_b @ sqrt_a), mode)
    return float(np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.trace(cross))


def bures_w2_squared(a: MomentSummary, b: MomentSummary, sqrt_mode: str = "exact", sqrt_a=None) -> float:
    """Squared 2-Wasserstein distance between N(a.mean, a.cov) and N(b.mean, b.cov).

    Negative results from round-off are clamped to zero.
    """
    _check_dims(a, b)
    diff = a.mean - b.mean
    val = float(diff @ diff)
    if not np.array_equal(a.covariance, b.covariance):
        val += bures_trace_term(a.covariance, b.covariance, sqrt_a, sqrt_mode)
    return max(val, 0.0)


def commutator_norm(A, B) -> float:
    return float(np.linalg.norm(A @ B - B @ A))


def bures_w2_squared_commuting(a: MomentSummary, b: MomentSummary, check: bool = False, sqrt_mode: str = "exact") -> float:
    """Mean shift plus ``||A^1/2 - B^1/2||_F^2``; exact only when the covariances commute.

    With ``check=True`` the commutator is verified first.
    """
    _check_dims(a, b)
    A, B = a.covariance, b.covariance
    if check:
        scale = max(np.linalg.norm(A) * np.linalg.norm(B), 1e-300)
        if commutator_norm(A, B) > 1e-8 * scale:
            raise DataError("covariances do not commute")
    diff = a.mean - b.mean
    if _is_diagonal(A) and _is_diagonal(B):
        root_gap = np.sqrt(np.clip(np.diag(A), 0, None)) - np.sqrt(np.clip(np.diag(B), 0, None))
        gap = float(root_gap @ root_gap)
    else:
        R = spd_sqrt(A, sqrt_mode) - spd_sqrt(B, sqrt_mode)
        gap = float(np.sum(R * R))
    return max(float(diff @ diff) + gap, 0.0)


def _is_diagonal(A) -> bool:
    return not np.any(A - np.diag(np.diag(A)))
