"""Numpy reference implementations of the hot kernels.

Selected automatically when the compiled extension is unavailable or when
``OTDD_NO_EXT`` is set.  Signatures match ``_ckernels`` exactly.
"""
import numpy as np
from scipy.special import logsumexp


def softmin_rows(C, g, logb, eps, out):
    """``out[i] = -eps * log sum_j exp((g[j] - C[i, j]) / eps + logb[j])``."""
    M = (g - C) / eps
    M += logb
    out[:] = -eps * logsumexp(M, axis=1)
    return out


def softmin_cols(C, f, loga, eps, out):
    """``out[j] = -eps * log sum_i exp((f[i] - C[i, j]) / eps + loga[i])``."""
    M = (f[:, None] - C) / eps
    M += loga[:, None]
    out[:] = -eps * logsumexp(M, axis=0)
    return out


def plan_from_potentials(C, f, g, loga, logb, eps, out):
    M = (f[:, None] + g[None, :] - C) / eps
    M += loga[:, None]
    M += logb[None, :]
    np.exp(M, out=out)
    return out


REFINE = 1e-6


def assemble_cost(G, XA, XB, xa2, xb2, ya, yb, L, q, out):
    """Hybrid ground cost from the Gram matrix ``G = X_a X_b^T``.

    ``out[i, j] = |x_i - x'_j|^2 + L[ya[i], yb[j]]``, square-rooted when
    ``q == 1``.  The feature term uses ``|x|^2 + |x'|^2 - 2 G``; entries that
    fall below ``REFINE * (|x|^2 + |x'|^2)`` lost most of their digits to
    cancellation and are recomputed from the coordinate differences.
    ``out`` may alias ``G``.
    """
    norms = xa2[:, None] + xb2[None, :]
    S = norms - 2.0 * G
    ii, jj = np.nonzero(S < REFINE * norms)
    if ii.size:
        D = XA[ii] - XB[jj]
        S[ii, jj] = np.einsum("ij,ij->i", D, D)
    S += L[np.ix_(ya, yb)]
    if q == 1:
        np.sqrt(S, out=S)
    out[:] = S
    return out
