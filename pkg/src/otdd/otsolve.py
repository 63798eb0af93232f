"""Discrete optimal transport solvers.

``sinkhorn`` runs entropic OT in the log domain on dual potentials, with an
epsilon-scaling warm start.  ``exact_ot`` solves the transportation linear
program: as an assignment problem when both measures are uniform and the same
size, otherwise with the HiGHS simplex solver.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.optimize import linear_sum_assignment, linprog

from . import _kernels
from .errors import DataError, SizeCapError, SolverError

DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITERS = 5000
EXACT_CAP = 4_000_000
_SCALING_STAGES = 4
_STAGE_TOL = 1e-3


@dataclass
class TransportPlan:
    plan: np.ndarray
    objective: float
    converged: bool = True
    iterations: int = 0
    marginal_error: float = 0.0
    entropic_objective: Optional[float] = None
    epsilon: Optional[float] = None

    @property
    def shape(self):
        return self.plan.shape


def uniform(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


def _check_measure(w, name):
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1 or w.size == 0:
        raise DataError(f"{name} must be a nonempty vector")
    if not np.all(np.isfinite(w)) or np.any(w <= 0):
        raise DataError(f"{name} must have strictly positive finite entries")
    if abs(w.sum() - 1.0) > 1e-12 * max(1, w.size):
        raise DataError(f"{name} sums to {w.sum()!r}, expected 1")
    return w


def _check_problem(a, b, C):
    a = _check_measure(a, "a")
    b = _check_measure(b, "b")
    C = np.ascontiguousarray(C, dtype=np.float64)
    if C.shape != (a.size, b.size):
        raise DataError(f"cost matrix shape {C.shape} does not match marginals ({a.size}, {b.size})")
    if not np.all(np.isfinite(C)):
        raise DataError("cost matrix has non-finite entries")
    if C.size and C.min() < 0:
        raise DataError("cost matrix has negative entries")
    return a, b, C


def marginal_error(P, a, b) -> float:
    """Largest L1 violation over the two marginals."""
    return float(max(np.abs(P.sum(axis=1) - a).sum(), np.abs(P.sum(axis=0) - b).sum()))


def sinkhorn(
    a,
    b,
    C,
    epsilon: float,
    tol: float = DEFAULT_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
    scaling: bool = True,
    log_domain: bool = True,
    round_plan: bool = True,
) -> TransportPlan:
    """Entropic OT between ``a`` and ``b`` under cost ``C``.

    Convergence means the L1 violation of both marginals is at most ``tol``.
    A run that exhausts ``max_iters`` returns with ``converged=False``.

    ``objective`` is the transport cost ``<P, C>`` of the returned plan;
    ``entropic_objective`` adds ``epsilon * KL(P | a x b)`` and is evaluated
    before rounding.  With ``round_plan`` the plan is projected onto the
    exact marginals, so ``objective`` never undercuts the LP optimum;
    ``marginal_error`` always reports the unrounded iterate.
    """
    if not epsilon > 0:
        raise DataError("epsilon must be positive")
    a, b, C = _check_problem(a, b, C)
    if not log_domain:
        return _sinkhorn_scaling(a, b, C, epsilon, tol, max_iters)

    cmax = float(C.max())
    if cmax == 0.0:
        P = np.outer(a, b)
        return TransportPlan(P, 0.0, True, 0, marginal_error(P, a, b), 0.0, epsilon)

    Cs = C / cmax
    eps = epsilon / cmax
    loga, logb = np.log(a), np.log(b)
    f = np.zeros(a.size)
    g = np.zeros(b.size)
    f_new = np.empty_like(f)

    if scaling:
        schedule = eps * np.logspace(1.0, 0.0, _SCALING_STAGES)
    else:
        schedule = np.array([eps])
    stage_cap = max(1, max_iters // (4 * len(schedule)))

    it = 0
    err = np.inf
    for s, e in enumerate(schedule):
        last = s == len(schedule) - 1
        cap = max_iters - it if last else min(stage_cap, max_iters - it)
        # warm-start stages only need to land near the next stage's solution
        stage_tol = tol if last else max(tol, _STAGE_TOL)
        _kernels.softmin_rows(Cs, g, logb, e, f)
        for _ in range(cap):
            _kernels.softmin_cols(Cs, f, loga, e, g)
            _kernels.softmin_rows(Cs, g, logb, e, f_new)
            it += 1
            # row marginal of the plan built from (f, g); columns are exact
            err = float(np.abs(a * np.expm1((f - f_new) / e)).sum())
            if not np.isfinite(err):
                raise SolverError(f"non-finite Sinkhorn iterate at epsilon={epsilon:g}; epsilon too small")
            if err <= stage_tol:
                break
            f, f_new = f_new, f
        if it >= max_iters:
            break

    e = schedule[-1]
    P = _kernels.plan_from_potentials(Cs, f, g, loga, logb, e, np.empty_like(Cs))
    if not np.all(np.isfinite(P)):
        raise SolverError(f"non-finite transport plan at epsilon={epsilon:g}")
    r, c = P.sum(axis=1), P.sum(axis=0)
    merr = float(max(np.abs(r - a).sum(), np.abs(c - b).sum()))
    entropic = float(cmax * (r @ f + c @ g))
    if round_plan:
        P = round_to_marginals(P, a, b)
    return TransportPlan(
        plan=P,
        objective=float(np.sum(P * C)),
        converged=bool(merr <= tol),
        iterations=it,
        marginal_error=merr,
        entropic_objective=entropic,
        epsilon=float(epsilon),
    )


def round_to_marginals(P, a, b):
    """Project a nearly feasible plan onto the coupling polytope.

    Rows and then columns are scaled down where they carry excess mass; the
    remaining deficit is filled with a rank-one correction.  The result has
    marginals ``a`` and ``b`` up to floating-point round-off.
    """
    P = P * np.minimum(a / P.sum(axis=1), 1.0)[:, None]
    P *= np.minimum(b / P.sum(axis=0), 1.0)[None, :]
    dr = a - P.sum(axis=1)
    dc = b - P.sum(axis=0)
    mass = dr.sum()
    if mass > 0:
        P += np.outer(np.clip(dr, 0, None), np.clip(dc, 0, None)) / mass
    return P


def _sinkhorn_scaling(a, b, C, epsilon, tol, max_iters):
    """Plain matrix-scaling iterations ``u = a / Kv``, ``v = b / K^T u``."""
    K = np.exp(-C / epsilon)
    u = np.ones_like(a)
    v = np.ones_like(b)
    it = 0
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for it in range(1, max_iters + 1):
            u = a / (K @ v)
            v = b / (K.T @ u)
            if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
                raise SolverError(f"kernel underflow at epsilon={epsilon:g}; use the log-domain solver")
            if np.abs(u * (K @ v) - a).sum() <= tol:
                break
    P = u[:, None] * K * v[None, :]
    merr = marginal_error(P, a, b)
    pos = P > 0
    kl = float(np.sum(P[pos] * np.log(P[pos] / np.outer(a, b)[pos])))
    obj = float(np.sum(P * C))
    return TransportPlan(P, obj, merr <= tol, it, merr, obj + epsilon * kl, float(epsilon))


def sinkhorn_divergence(a, b, C_ab, C_aa, C_bb, epsilon, tol=DEFAULT_TOL, max_iters=DEFAULT_MAX_ITERS) -> float:
    """Debiased entropic cost ``OT_e(a, b) - OT_e(a, a)/2 - OT_e(b, b)/2``, clamped at zero."""
    ab = sinkhorn(a, b, C_ab, epsilon, tol, max_iters).entropic_objective
    aa = sinkhorn(a, a, C_aa, epsilon, tol, max_iters).entropic_objective
    bb = sinkhorn(b, b, C_bb, epsilon, tol, max_iters).entropic_objective
    return max(ab - 0.5 * aa - 0.5 * bb, 0.0)


def exact_ot(a, b, C, max_entries: int = EXACT_CAP) -> TransportPlan:
    """Exact solution of the discrete transportation problem."""
    a, b, C = _check_problem(a, b, C)
    n, m = C.shape
    if n * m > max_entries:
        raise SizeCapError(f"{n}x{m} problem exceeds the exact-solver cap of {max_entries} entries; use sinkhorn")
    if abs(a.sum() - b.sum()) > 1e-12 * max(n, m):
        raise DataError("marginals carry different total mass")

    if n == m and np.all(a == a[0]) and np.all(b == b[0]):
        rows, cols = linear_sum_assignment(C)
        P = np.zeros((n, m))
        P[rows, cols] = 1.0 / n
        obj = float(C[rows, cols].sum() / n)
        return TransportPlan(P, obj, True, 0, marginal_error(P, a, b))

    # equality constraints on row and column sums; the last column is implied
    ii = np.repeat(np.arange(n), m)
    jj = np.tile(np.arange(m), n)
    idx = np.arange(n * m)
    A_rows = sparse.csr_matrix((np.ones(n * m), (ii, idx)), shape=(n, n * m))
    A_cols = sparse.csr_matrix((np.ones(n * m), (jj, idx)), shape=(m, n * m))[:-1]
    A_eq = sparse.vstack([A_rows, A_cols]).tocsr()
    b_eq = np.concatenate([a, b[:-1]])
    res = linprog(
        C.ravel(),
        A_eq=A_eq,
        b_eq=b_eq,
        bounds=(0, None),
        method="highs-ds",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if res.status != 0:
        raise SolverError(f"exact OT solver failed: {res.message}")
    P = np.clip(res.x, 0.0, None).reshape(n, m)
    return TransportPlan(P, float(np.sum(P * C)), True, int(res.nit), marginal_error(P, a, b))


def write_plan_csv(plan: np.ndarray, path, dense: bool = False, threshold: float = 1e-12) -> None:
    """Write a coupling as ``i,j,mass`` triplets (entries below ``threshold`` dropped) or densely."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if dense:
            w.writerow([f"j{j}" for j in range(plan.shape[1])])
            for row in plan:
                w.writerow([repr(float(v)) for v in row])
        else:
            w.writerow(["i", "j", "mass"])
            for i, j in zip(*np.nonzero(plan >= threshold)):
                w.writerow([int(i), int(j), repr(float(plan[i, j]))])
