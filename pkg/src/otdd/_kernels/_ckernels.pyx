# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the Sinkhorn sweeps and ground-cost assembly.

Reductions run in ascending index order on a single thread, so results are
bit-reproducible for a given input.
"""
from libc.math cimport exp, log, sqrt, INFINITY

ctypedef double f64


def softmin_rows(const f64[:, ::1] C, const f64[::1] g, const f64[::1] logb, f64 eps, f64[::1] out):
    cdef Py_ssize_t n = C.shape[0], m = C.shape[1], i, j
    cdef f64 inv = 1.0 / eps, mx, s, v
    with nogil:
        for i in range(n):
            mx = -INFINITY
            for j in range(m):
                v = (g[j] - C[i, j]) * inv + logb[j]
                if v > mx:
                    mx = v
            s = 0.0
            for j in range(m):
                s += exp((g[j] - C[i, j]) * inv + logb[j] - mx)
            out[i] = -eps * (mx + log(s))
    return out.base


def softmin_cols(const f64[:, ::1] C, const f64[::1] f, const f64[::1] loga, f64 eps, f64[::1] out):
    cdef Py_ssize_t n = C.shape[0], m = C.shape[1], i, j
    cdef f64 inv = 1.0 / eps, v, fi
    cdef f64[::1] mx = out.copy()
    cdef f64[::1] s = out.copy()
    with nogil:
        for j in range(m):
            mx[j] = -INFINITY
            s[j] = 0.0
        for i in range(n):
            fi = f[i] * inv + loga[i]
            for j in range(m):
                v = fi - C[i, j] * inv
                if v > mx[j]:
                    mx[j] = v
        for i in range(n):
            fi = f[i] * inv + loga[i]
            for j in range(m):
                s[j] += exp(fi - C[i, j] * inv - mx[j])
        for j in range(m):
            out[j] = -eps * (mx[j] + log(s[j]))
    return out.base


def plan_from_potentials(const f64[:, ::1] C, const f64[::1] f, const f64[::1] g,
                         const f64[::1] loga, const f64[::1] logb, f64 eps, f64[:, ::1] out):
    cdef Py_ssize_t n = C.shape[0], m = C.shape[1], i, j
    cdef f64 inv = 1.0 / eps, fi
    with nogil:
        for i in range(n):
            fi = f[i] * inv + loga[i]
            for j in range(m):
                out[i, j] = exp(fi + (g[j] - C[i, j]) * inv + logb[j])
    return out.base


DEF REFINE = 1e-6


def assemble_cost(const f64[:, ::1] G, const f64[:, ::1] XA, const f64[:, ::1] XB,
                  const f64[::1] xa2, const f64[::1] xb2,
                  const long[::1] ya, const long[::1] yb, const f64[:, ::1] L, int q,
                  f64[:, ::1] out):
    cdef Py_ssize_t n = G.shape[0], m = G.shape[1], d = XA.shape[1], i, j, t
    cdef f64 v, norms, diff
    with nogil:
        for i in range(n):
            for j in range(m):
                norms = xa2[i] + xb2[j]
                v = norms - 2.0 * G[i, j]
                if v < REFINE * norms:
                    # cancellation-dominated: recompute from differences
                    v = 0.0
                    for t in range(d):
                        diff = XA[i, t] - XB[j, t]
                        v += diff * diff
                v += L[ya[i], yb[j]]
                if q == 1:
                    v = sqrt(v)
                out[i, j] = v
    return out.base
