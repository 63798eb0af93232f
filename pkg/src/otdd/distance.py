"""Optimal transport dataset distance.

Each labeled sample ``(x, y)`` is compared with ``(x', y')`` through

    s = ||x - x'||^2 + W_2^2(alpha_y, beta_y')

where ``alpha_y`` is the distribution of features carrying label ``y``.  The
label term comes from a precomputed ``k_A x k_B`` matrix, built from the
empirical class measures (``exact``), from Gaussian fits (``gaussian``) or
from class centroids only (``means``).  The outer problem transports the two
datasets under cost ``s`` (``q=2``) or ``sqrt(s)`` (``q=1``), and the
distance is the ``q``-th root of its optimal value.
"""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from . import _kernels
from .dataset import LabeledDataset, class_partition, subsample
from .errors import DataError, DimensionMismatchError, SizeCapError
from .linalg import SQRT_MODES, bures_w2_squared, spd_sqrt
from .otsolve import EXACT_CAP, TransportPlan, exact_ot, sinkhorn, uniform
from .stats import DEFAULT_BATCH, MomentSummary, all_moments, feature_scale, regularize

SCHEMA_VERSION = 1
LABEL_METHODS = ("exact", "gaussian", "means")
OUTER_SOLVERS = ("sinkhorn", "exact")


@dataclass
class OtddConfig:
    label_method: str = "gaussian"
    inner_p: int = 2
    q: int = 2
    outer_solver: str = "sinkhorn"
    # None means epsilon_rel * mean(ground cost), resolved per run
    epsilon: Optional[float] = None
    epsilon_rel: float = 0.1
    tol: float = 1e-6
    max_iters: int = 5000
    # absolute ridge shared by both datasets; None means cov_reg_rel * pooled feature scale
    cov_reg: Optional[float] = None
    cov_reg_rel: float = 1e-6
    sqrt_mode: str = "exact"
    diagonal_cov: bool = False
    seed: int = 0
    max_samples: Optional[int] = None
    batch_size: int = DEFAULT_BATCH
    inner_solver: str = "exact"
    inner_epsilon_rel: float = 0.01
    inner_fallback: bool = False
    exact_cap: int = EXACT_CAP
    threads: int = 1
    keep_plan: bool = True

    def __post_init__(self):
        if self.label_method not in LABEL_METHODS:
            raise DataError(f"label_method must be one of {LABEL_METHODS}, got {self.label_method!r}")
        if self.outer_solver not in OUTER_SOLVERS:
            raise DataError(f"outer_solver must be one of {OUTER_SOLVERS}, got {self.outer_solver!r}")
        if self.inner_solver not in OUTER_SOLVERS:
            raise DataError(f"inner_solver must be one of {OUTER_SOLVERS}, got {self.inner_solver!r}")
        if self.q not in (1, 2):
            raise DataError(f"outer order q must be 1 or 2, got {self.q}")
        if self.inner_p != 2:
            raise DataError("only inner_p=2 is supported")
        if self.sqrt_mode not in SQRT_MODES:
            raise DataError(f"sqrt_mode must be one of {SQRT_MODES}")
        if self.epsilon is not None and not self.epsilon > 0:
            raise DataError("epsilon must be positive")
        if self.cov_reg is not None and self.cov_reg < 0:
            raise DataError("cov_reg must be nonnegative")
        if self.max_samples is not None and self.max_samples < 1:
            raise DataError("max_samples must be positive")


@dataclass
class LabelDistanceMatrix:
    values: np.ndarray
    method: str
    inner_solver_config: Optional[dict] = None

    @property
    def shape(self):
        return self.values.shape


@dataclass
class OtddResult:
    distance: float
    raw_objective: float
    label_distances: Optional[LabelDistanceMatrix]
    plan: Optional[TransportPlan]
    sizes: dict
    config: dict
    timings: dict = field(default_factory=dict)
    plan_info: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return self.plan_info.get("converged", True)

    def to_dict(self, inline_limit: int = 10_000, sidecar: Optional[str] = None) -> dict:
        """JSON-ready document.

        The label matrix is inlined when it has at most ``inline_limit``
        entries; otherwise only ``sidecar`` (a CSV path) is recorded.
        """
        doc = {
            "schema_version": SCHEMA_VERSION,
            "distance": self.distance,
            "raw_objective": self.raw_objective,
            "q": self.config["q"],
            "converged": self.converged,
            "solver": self.plan_info,
            "sizes": self.sizes,
            "config": self.config,
            "timings": self.timings,
        }
        L = self.label_distances
        if L is not None:
            entry = {"method": L.method, "shape": list(L.shape), "inner_solver": L.inner_solver_config}
            if L.values.size <= inline_limit:
                entry["values"] = L.values.tolist()
            else:
                entry["path"] = sidecar
            doc["label_distances"] = entry
        return doc


# -- label distances ---------------------------------------------------------


def _pool_map(fn, items, threads):
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


def _check_moment_dims(mA, mB):
    dA = next(iter(mA.values())).d
    dB = next(iter(mB.values())).d
    if dA != dB:
        raise DimensionMismatchError(f"feature dimensions differ: {dA} vs {dB}")


def label_distance_matrix_gaussian(momentsA, momentsB, sqrt_mode: str = "exact", threads: int = 1) -> LabelDistanceMatrix:
    """Closed-form ``W_2^2`` between the Gaussian fits of every class pair."""
    _check_moment_dims(momentsA, momentsB)
    kA, kB = len(momentsA), len(momentsB)
    roots = _pool_map(lambda y: spd_sqrt(momentsA[y].covariance, sqrt_mode), range(kA), threads)
    pairs = [(i, j) for i in range(kA) for j in range(kB)]
    vals = _pool_map(lambda p: bures_w2_squared(momentsA[p[0]], momentsB[p[1]], sqrt_mode, roots[p[0]]), pairs, threads)
    return LabelDistanceMatrix(np.array(vals).reshape(kA, kB), "gaussian")


def label_distance_matrix_means(momentsA, momentsB) -> LabelDistanceMatrix:
    """Squared distances between class centroids."""
    _check_moment_dims(momentsA, momentsB)
    MA = np.array([momentsA[y].mean for y in range(len(momentsA))])
    MB = np.array([momentsB[y].mean for y in range(len(momentsB))])
    return LabelDistanceMatrix(pairwise_sq_dists(MA, MB), "means")


def label_distance_matrix_exact(
    dsA: LabeledDataset,
    dsB: LabeledDataset,
    solver: str = "exact",
    epsilon_rel: float = 0.01,
    tol: float = 1e-6,
    max_iters: int = 5000,
    fallback: bool = False,
    cap: int = EXACT_CAP,
    threads: int = 1,
) -> LabelDistanceMatrix:
    """``W_2^2`` between the uniform empirical measures of every class pair.

    With ``solver="sinkhorn"`` (or ``fallback=True`` for pairs over ``cap``)
    the entropic plan's transport cost is used, at
    ``epsilon = epsilon_rel * mean(cost)``.
    """
    _check_dims(dsA, dsB)
    gA = class_partition(dsA).groups
    gB = class_partition(dsB).groups

    def solve(pair):
        XA = dsA.features[gA[pair[0]]]
        XB = dsB.features[gB[pair[1]]]
        C = pairwise_sq_dists(XA, XB)
        a, b = uniform(len(XA)), uniform(len(XB))
        use_exact = solver == "exact"
        if use_exact and C.size > cap:
            if not fallback:
                raise SizeCapError(
                    f"class pair {pair} is {C.shape[0]}x{C.shape[1]}, over the exact cap of {cap}; "
                    "enable the sinkhorn fallback"
                )
            use_exact = False
        if use_exact:
            return exact_ot(a, b, C, max_entries=cap).objective
        eps = epsilon_rel * float(C.mean()) if C.mean() > 0 else 1.0
        return sinkhorn(a, b, C, eps, tol, max_iters).objective

    pairs = [(i, j) for i in range(len(gA)) for j in range(len(gB))]
    vals = np.array(_pool_map(solve, pairs, threads)).reshape(len(gA), len(gB))
    config = {"solver": solver, "fallback": fallback, "cap": cap}
    if solver == "sinkhorn" or fallback:
        config.update(epsilon_rel=epsilon_rel, tol=tol, max_iters=max_iters)
    return LabelDistanceMatrix(vals, "exact", config)


# -- ground cost -------------------------------------------------------------


def _check_dims(dsA, dsB):
    if dsA.d != dsB.d:
        raise DimensionMismatchError(f"feature dimensions differ: {dsA.d} vs {dsB.d}")


def pairwise_sq_dists(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """``||x_i - y_j||^2`` via the Gram expansion, with near-cancelling entries recomputed directly."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    Y = np.ascontiguousarray(Y, dtype=np.float64)
    zero = np.zeros((1, 1))
    G = X @ Y.T
    return _kernels.assemble_cost(
        G,
        X,
        Y,
        np.einsum("ij,ij->i", X, X),
        np.einsum("ij,ij->i", Y, Y),
        np.zeros(X.shape[0], dtype=np.int64),
        np.zeros(Y.shape[0], dtype=np.int64),
        zero,
        2,
        G,
    )


def ground_cost(dsA: LabeledDataset, dsB: LabeledDataset, L, q: int = 2) -> np.ndarray:
    """``||x_i - x'_j||^2 + L[y_i, y'_j]``, square-rooted when ``q == 1``."""
    _check_dims(dsA, dsB)
    values = L.values if isinstance(L, LabelDistanceMatrix) else np.asarray(L, dtype=np.float64)
    if values.shape != (dsA.k, dsB.k):
        raise DataError(f"label distance matrix is {values.shape}, datasets have ({dsA.k}, {dsB.k}) classes")
    if q not in (1, 2):
        raise DataError("q must be 1 or 2")
    XA, XB = dsA.features, dsB.features
    G = XA @ XB.T
    return _kernels.assemble_cost(
        G,
        XA,
        XB,
        np.einsum("ij,ij->i", XA, XA),
        np.einsum("ij,ij->i", XB, XB),
        np.ascontiguousarray(dsA.labels),
        np.ascontiguousarray(dsB.labels),
        np.ascontiguousarray(values, dtype=np.float64),
        q,
        G,
    )


# -- pipeline ----------------------------------------------------------------


def _subsample_pair(dsA, dsB, cfg):
    if cfg.max_samples is None:
        return dsA, dsB
    seeds = np.random.SeedSequence(cfg.seed).generate_state(2, np.uint64)
    if dsA.n > cfg.max_samples:
        dsA = subsample(dsA, cfg.max_samples, int(seeds[0]), stratified=dsA.k <= cfg.max_samples)
    if dsB.n > cfg.max_samples:
        dsB = subsample(dsB, cfg.max_samples, int(seeds[1]), stratified=dsB.k <= cfg.max_samples)
    return dsA, dsB


def pair_moments(dsA, dsB, cfg: OtddConfig):
    """Class moments of both datasets with one shared covariance ridge.

    Returns ``(momentsA, momentsB, ridge)``.  Using the same ridge on both
    sides keeps the Gaussian label distances below the empirical ones.
    """
    mA = all_moments(dsA, cfg.batch_size, 0.0, cfg.threads)
    mB = all_moments(dsB, cfg.batch_size, 0.0, cfg.threads)
    if cfg.cov_reg is not None:
        reg = cfg.cov_reg
    else:
        reg = cfg.cov_reg_rel * 0.5 * (feature_scale(mA) + feature_scale(mB))
    if cfg.diagonal_cov:
        mA = {y: m.diagonal() for y, m in mA.items()}
        mB = {y: m.diagonal() for y, m in mB.items()}
    return regularize(mA, reg), regularize(mB, reg), float(reg)


def _outer_solve(a, b, C, cfg, resolved):
    if cfg.outer_solver == "exact":
        return exact_ot(a, b, C, max_entries=cfg.exact_cap)
    eps = cfg.epsilon if cfg.epsilon is not None else cfg.epsilon_rel * float(C.mean())
    if not eps > 0:
        eps = 1.0
    resolved["epsilon"] = eps
    return sinkhorn(a, b, C, eps, cfg.tol, cfg.max_iters)


def _finish(dsA, dsB, cfg, C, L, timings, resolved, t_start):
    t = time.perf_counter()
    res = _outer_solve(dsA.weights, dsB.weights, C, cfg, resolved)
    timings["outer_solve"] = time.perf_counter() - t
    timings["total"] = time.perf_counter() - t_start
    raw = max(res.objective, 0.0)
    distance = raw if cfg.q == 1 else float(np.sqrt(raw))
    config = asdict(cfg)
    config.update(resolved)
    info = {
        "solver": cfg.outer_solver,
        "converged": bool(res.converged),
        "iterations": int(res.iterations),
        "marginal_error": float(res.marginal_error),
    }
    if res.epsilon is not None:
        info["epsilon"] = res.epsilon
        info["entropic_objective"] = res.entropic_objective
    sizes = {"n": dsA.n, "m": dsB.n, "k_A": dsA.k, "k_B": dsB.k, "d": dsA.d}
    return OtddResult(distance, raw, L, res if cfg.keep_plan else None, sizes, config, timings, info)


@dataclass
class CostStage:
    """Everything the outer solve needs: (subsampled) datasets, cost, label matrix."""

    dsA: LabeledDataset
    dsB: LabeledDataset
    cost: np.ndarray
    label_distances: Optional[LabelDistanceMatrix]
    timings: dict
    resolved: dict
    t_start: float


def prepare_ground_cost(
    dsA: LabeledDataset,
    dsB: LabeledDataset,
    cfg: Optional[OtddConfig] = None,
    label_distances: Optional[LabelDistanceMatrix] = None,
) -> CostStage:
    """Run every stage before the outer transport problem, timing each one."""
    cfg = cfg or OtddConfig()
    _check_dims(dsA, dsB)
    t_start = time.perf_counter()
    timings = {}
    resolved = {}

    t = time.perf_counter()
    dsA, dsB = _subsample_pair(dsA, dsB, cfg)
    timings["subsample"] = time.perf_counter() - t

    L = label_distances
    if L is None:
        t = time.perf_counter()
        if cfg.label_method in ("gaussian", "means"):
            mA, mB, reg = pair_moments(dsA, dsB, cfg)
            resolved["cov_reg"] = reg
        timings["moments"] = time.perf_counter() - t

        t = time.perf_counter()
        if cfg.label_method == "gaussian":
            L = label_distance_matrix_gaussian(mA, mB, cfg.sqrt_mode, cfg.threads)
        elif cfg.label_method == "means":
            L = label_distance_matrix_means(mA, mB)
        else:
            L = label_distance_matrix_exact(
                dsA,
                dsB,
                cfg.inner_solver,
                cfg.inner_epsilon_rel,
                cfg.tol,
                cfg.max_iters,
                cfg.inner_fallback,
                cfg.exact_cap,
                cfg.threads,
            )
        timings["label_distances"] = time.perf_counter() - t

    t = time.perf_counter()
    C = ground_cost(dsA, dsB, L, cfg.q)
    timings["ground_cost"] = time.perf_counter() - t
    return CostStage(dsA, dsB, C, L, timings, resolved, t_start)


def solve_stage(stage: CostStage, cfg: Optional[OtddConfig] = None) -> OtddResult:
    cfg = cfg or OtddConfig()
    return _finish(stage.dsA, stage.dsB, cfg, stage.cost, stage.label_distances, stage.timings, stage.resolved, stage.t_start)


def otdd_distance(
    dsA: LabeledDataset,
    dsB: LabeledDataset,
    cfg: Optional[OtddConfig] = None,
    label_distances: Optional[LabelDistanceMatrix] = None,
) -> OtddResult:
    """Dataset distance between ``dsA`` and ``dsB``.

    Stages (timed individually): optional subsampling, class moments, label
    distance matrix, ground cost, outer transport problem.  A precomputed
    ``label_distances`` skips the moment and label stages.
    """
    cfg = cfg or OtddConfig()
    return solve_stage(prepare_ground_cost(dsA, dsB, cfg, label_distances), cfg)


def feature_ot_distance(dsA: LabeledDataset, dsB: LabeledDataset, cfg: Optional[OtddConfig] = None) -> OtddResult:
    """Label-agnostic baseline: the same pipeline with every label distance zero."""
    zeros = LabelDistanceMatrix(np.zeros((dsA.k, dsB.k)), "none")
    return otdd_distance(dsA, dsB, cfg, label_distances=zeros)


# -- augmented representation ------------------------------------------------


def augmented_embed(ds: LabeledDataset, moments: dict, means_only: bool = False, diagonal_approx: bool = False) -> np.ndarray:
    """Stack ``[x, mu_y, sqrt(diag Sigma_y)]`` for every row.

    Squared Euclidean distances between embeddings of two datasets equal the
    ``q=2`` ground cost with diagonal-covariance Gaussian label distances.
    ``means_only`` drops the covariance block.  Non-diagonal covariances are
    rejected unless ``diagonal_approx`` is set, in which case their
    off-diagonal entries are ignored.
    """
    k = ds.k
    if len(moments) != k:
        raise DataError(f"moment map has {len(moments)} classes, dataset has {k}")
    mu = np.array([moments[y].mean for y in range(k)])
    if mu.shape[1] != ds.d:
        raise DimensionMismatchError(f"moment dimension {mu.shape[1]} != feature dimension {ds.d}")
    blocks = [ds.features, mu[ds.labels]]
    if not means_only:
        covs = [moments[y].covariance for y in range(k)]
        if not diagonal_approx:
            for y, S in enumerate(covs):
                if np.any(S - np.diag(np.diag(S))):
                    raise DataError(f"class {y} covariance is not diagonal; set the diagonal approximation flag")
        roots = np.sqrt(np.clip(np.array([np.diag(S) for S in covs]), 0.0, None))
        blocks.append(roots[ds.labels])
    return np.hstack(blocks)


def otdd_distance_augmented(dsA: LabeledDataset, dsB: LabeledDataset, cfg: Optional[OtddConfig] = None) -> OtddResult:
    """Gaussian (or centroid) OTDD with diagonal covariances via augmented vectors.

    Matches :func:`otdd_distance` with ``diagonal_cov=True`` without forming
    the label distance matrix.
    """
    cfg = cfg or OtddConfig()
    if cfg.label_method == "exact":
        raise DataError("the augmented path supports the gaussian and means label methods only")
    cfg = replace(cfg, diagonal_cov=True)
    _check_dims(dsA, dsB)
    t_start = time.perf_counter()
    timings = {}
    resolved = {"augmented": True}
    t = time.perf_counter()
    dsA, dsB = _subsample_pair(dsA, dsB, cfg)
    timings["subsample"] = time.perf_counter() - t

    t = time.perf_counter()
    mA, mB, reg = pair_moments(dsA, dsB, cfg)
    resolved["cov_reg"] = reg
    timings["moments"] = time.perf_counter() - t

    t = time.perf_counter()
    means_only = cfg.label_method == "means"
    EA = augmented_embed(dsA, mA, means_only)
    EB = augmented_embed(dsB, mB, means_only)
    C = pairwise_sq_dists(EA, EB)
    if cfg.q == 1:
        np.sqrt(C, out=C)
    timings["ground_cost"] = time.perf_counter() - t
    return _finish(dsA, dsB, cfg, C, None, timings, resolved, t_start)


def coupling_class_mass(plan: np.ndarray, labelsA, labelsB, kA: int, kB: int) -> np.ndarray:
    """Total plan mass between each pair of classes (a ``kA x kB`` matrix)."""
    M = np.zeros((kA, plan.shape[1]))
    np.add.at(M, labelsA, plan)
    out = np.zeros((kA, kB))
    np.add.at(out.T, labelsB, M.T)
    return out
