"""Command-line front end: ``otdd dist|pairwise|robustness|correlate|bench``.

Exit status: 0 success, 2 usage error, 3 data error, 4 solver failure or
(with ``--strict``) non-convergence.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import load_dataset, subsample
from .distance import (
    SCHEMA_VERSION,
    OtddConfig,
    otdd_distance,
    otdd_distance_augmented,
    prepare_ground_cost,
    solve_stage,
)
from .errors import DataError, OtddError, SolverError
from .otsolve import write_plan_csv
from .synthetic import gaussian_classes

log = logging.getLogger("otdd")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_SOLVER = 0, 2, 3, 4


class NotConverged(OtddError):
    pass


# -- helpers -----------------------------------------------------------------


def _now():
    return datetime.now(timezone.utc).isoformat()


def file_digest(path) -> str:
    h = hashlib.sha256()
    try:
        with open(path, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 20), b""):
                h.update(chunk)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror or exc}") from exc
    return h.hexdigest()


def resolve_threads(flag) -> int:
    if flag is not None:
        return max(1, flag)
    env = os.environ.get("OTDD_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise DataError(f"OTDD_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def _label_column(value):
    try:
        return int(value)
    except ValueError:
        return value


def _load(path, args):
    return load_dataset(path, label_column=_label_column(args.label_column), has_header=args.header)


def config_from_args(args) -> OtddConfig:
    cov_reg = args.reg_cov if args.reg_cov_absolute else None
    return OtddConfig(
        label_method=args.method,
        q=args.outer_q,
        outer_solver=args.outer,
        epsilon=args.epsilon,
        epsilon_rel=args.epsilon_rel,
        tol=args.tol,
        max_iters=args.max_iters,
        cov_reg=cov_reg,
        cov_reg_rel=args.reg_cov,
        sqrt_mode=args.sqrt_mode,
        diagonal_cov=args.diagonal_cov,
        seed=args.seed,
        max_samples=args.max_samples,
        inner_solver=args.inner,
        inner_fallback=args.inner_fallback,
        threads=resolve_threads(args.threads),
        keep_plan=bool(getattr(args, "coupling", None)),
    )


def compute(dsA, dsB, cfg, augmented=False):
    if augmented:
        return otdd_distance_augmented(dsA, dsB, cfg)
    return otdd_distance(dsA, dsB, cfg)


def _manifest(command, args, inputs, cfg, started):
    recorded = {k: v for k, v in vars(args).items() if k not in ("func", "replay")}
    return {
        "command": command,
        "tool_version": __version__,
        "seed": args.seed,
        "config": cfg,
        "inputs": [{"path": str(p), "sha256": file_digest(p)} for p in inputs],
        "args": recorded,
        "timestamps": {"started": started, "finished": _now()},
    }


def _emit(text: str, out):
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _write_matrix_csv(values, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"b{j}" for j in range(values.shape[1])])
        for row in values:
            w.writerow([repr(float(v)) for v in row])


def _fmt(v):
    return "" if v is None else repr(float(v))


# -- dist --------------------------------------------------------------------


def _replay_args(args):
    """Load the manifest named by ``--replay``, verify input digests, merge its args."""
    doc = json.loads(Path(args.replay).read_text(encoding="utf-8"))
    manifest = doc.get("manifest", doc)
    for entry in manifest["inputs"]:
        actual = file_digest(entry["path"])
        if actual != entry["sha256"]:
            raise DataError(f"{entry['path']}: content digest changed since the recorded run")
    merged = dict(manifest["args"])
    for key in ("out", "coupling", "label_dist", "quiet", "strict"):
        merged[key] = getattr(args, key)
    return argparse.Namespace(**merged, func=args.func, replay=None)


def cmd_dist(args) -> int:
    if args.replay:
        args = _replay_args(args)
    if not args.src or not args.tgt:
        raise DataError("dist requires --src and --tgt (or --replay)")
    started = _now()
    dsA, dsB = _load(args.src, args), _load(args.tgt, args)
    cfg = config_from_args(args)
    res = compute(dsA, dsB, cfg, args.augmented)

    sidecar = None
    L = res.label_distances
    if L is not None and (args.label_dist or L.values.size > 10_000):
        sidecar = args.label_dist or (str(args.out) + ".labels.csv" if args.out else "label_distances.csv")
        _write_matrix_csv(L.values, sidecar)
    if args.coupling and res.plan is not None:
        write_plan_csv(res.plan.plan, args.coupling, dense=args.dense_coupling)

    if args.format == "json":
        doc = res.to_dict(sidecar=sidecar)
        doc["manifest"] = _manifest("dist", args, [args.src, args.tgt], res.config, started)
        text = json.dumps(doc, indent=2) + "\n"
    else:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["src", "tgt", "method", "q", "distance", "raw_objective", "converged", "epsilon"])
        w.writerow([args.src, args.tgt, cfg.label_method, cfg.q, _fmt(res.distance), _fmt(res.raw_objective), res.converged, _fmt(res.config.get("epsilon"))])
        text = buf.getvalue()
    _emit(text, args.out)
    if not res.converged:
        if args.strict:
            raise NotConverged("outer Sinkhorn solve did not converge")
        log.warning("outer Sinkhorn solve did not converge (marginal error %.3g)", res.plan_info["marginal_error"])
    return EXIT_OK


# -- pairwise ----------------------------------------------------------------


def _collect_inputs(paths):
    out = []
    for p in map(Path, paths):
        if p.is_dir():
            out.extend(sorted(q for q in p.iterdir() if q.is_file() and q.suffix in (".csv", ".bin", ".otdd")))
        else:
            out.append(p)
    return out


def cmd_pairwise(args) -> int:
    started = _now()
    paths = _collect_inputs(args.inputs)
    if len(paths) < 2:
        raise DataError("pairwise needs at least two datasets")
    datasets = [_load(p, args) for p in paths]
    cfg = config_from_args(args)
    n = len(paths)
    jobs = [(i, j) for i in range(n) for j in range(i + 1, n)]

    def run(job):
        i, j = job
        try:
            res = compute(datasets[i], datasets[j], cfg, args.augmented)
        except OtddError as exc:
            return job, None, exc
        return job, res, None

    workers = min(cfg.threads, len(jobs))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            outcomes = list(pool.map(run, jobs))
    else:
        outcomes = [run(j) for j in jobs]

    M = np.zeros((n, n))
    failed = set()
    manifests = []
    first_error = None
    for (i, j), res, exc in outcomes:
        if exc is not None:
            failed.update({(i, j), (j, i)})
            log.warning("pair (%s, %s) failed: %s", paths[i], paths[j], exc)
            first_error = first_error or exc
            continue
        if not res.converged:
            log.warning("pair (%s, %s) did not converge", paths[i], paths[j])
            if args.strict:
                first_error = first_error or NotConverged(f"pair ({paths[i]}, {paths[j]}) did not converge")
        M[i, j] = M[j, i] = res.distance
        manifests.append({"pair": [str(paths[i]), str(paths[j])], "distance": res.distance, "config": res.config, "solver": res.plan_info})
    if first_error is not None and args.strict:
        raise first_error

    names = [p.stem for p in paths]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["dataset"] + names)
    for i in range(n):
        w.writerow([names[i]] + ["" if (i, j) in failed else repr(float(M[i, j])) for j in range(n)])
    _emit(buf.getvalue(), args.out)

    manifest_path = args.manifests or (str(args.out) + ".manifest.json" if args.out else None)
    if manifest_path:
        doc = _manifest("pairwise", args, paths, manifests[0]["config"] if manifests else None, started)
        doc["schema_version"] = SCHEMA_VERSION
        doc["pairs"] = manifests
        Path(manifest_path).write_text(json.dumps(doc, indent=2, default=str) + "\n", encoding="utf-8")
    return EXIT_OK


# -- robustness --------------------------------------------------------------


def draw_seed(seed: int, size_src: int, size_tgt: int, rep: int) -> int:
    return int(np.random.SeedSequence([seed, size_src, size_tgt, rep]).generate_state(1, np.uint64)[0])


def robustness_table(dsA, dsB, sizes, reps, seed, cfg, grid="full", stratified=True, augmented=False):
    """Rows ``(size_src, size_tgt, rep, seed, distance)`` over the size grid.

    Each draw subsamples the source with the draw seed and the target with
    the draw seed plus one.
    """
    limit = min(dsA.n, dsB.n)
    if max(sizes) > limit:
        raise DataError(f"size {max(sizes)} exceeds the smaller dataset ({limit} rows)")
    if grid == "diagonal":
        cells = [(s, s) for s in sizes]
    else:
        cells = [(s, t) for s in sizes for t in sizes]
    rows = []
    for s, t in cells:
        for rep in range(reps):
            ds = draw_seed(seed, s, t, rep)
            A = subsample(dsA, s, ds, stratified)
            B = subsample(dsB, t, (ds + 1) % 2**64, stratified)
            rows.append((s, t, rep, ds, compute(A, B, cfg, augmented).distance))
    return rows


def cmd_robustness(args) -> int:
    sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
    if not sizes or min(sizes) <= 0:
        raise DataError("--sizes must list positive integers")
    dsA, dsB = _load(args.src, args), _load(args.tgt, args)
    cfg = config_from_args(args)
    rows = robustness_table(dsA, dsB, sizes, args.reps, args.seed, cfg, args.grid, not args.no_stratify, args.augmented)

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["size_src", "size_tgt", "rep", "seed", "distance"])
    for s, t, rep, ds, dist in rows:
        w.writerow([s, t, rep, ds, repr(dist)])
    cells = sorted({(r[0], r[1]) for r in rows}, key=lambda c: (sizes.index(c[0]), sizes.index(c[1])))
    for s, t in cells:
        vals = np.array([r[4] for r in rows if (r[0], r[1]) == (s, t)])
        w.writerow([s, t, "mean", "", repr(float(vals.mean()))])
        w.writerow([s, t, "std", "", repr(float(vals.std(ddof=1)) if vals.size > 1 else 0.0)])
    _emit(buf.getvalue(), args.out)
    return EXIT_OK


# -- correlate ---------------------------------------------------------------


def correlation_report(distance, transfer) -> dict:
    """Pearson r and Spearman rho (average ranks for ties); ``None`` when undefined."""
    from scipy import stats

    x = np.asarray(distance, dtype=float)
    y = np.asarray(transfer, dtype=float)
    out = {"n": int(x.size), "pearson_r": None, "pearson_p": None, "spearman_rho": None, "spearman_p": None}
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        out["note"] = "zero-variance column; correlation undefined"
        return out
    r = stats.pearsonr(x, y)
    rho = stats.spearmanr(x, y)
    out.update(
        pearson_r=float(np.clip(r.statistic, -1, 1)),
        pearson_p=float(r.pvalue),
        spearman_rho=float(rho.statistic),
        spearman_p=float(rho.pvalue),
    )
    return out


def cmd_correlate(args) -> int:
    try:
        with open(args.table, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            missing = {"pair", "distance", "transfer"} - set(reader.fieldnames or ())
            if missing:
                raise DataError(f"{args.table}: missing columns {sorted(missing)}")
            rows = list(reader)
    except OSError as exc:
        raise DataError(f"cannot read {args.table}: {exc.strerror or exc}") from exc
    dist, trans = [], []
    for line, row in enumerate(rows, start=2):
        try:
            d, t = float(row["distance"]), float(row["transfer"])
        except (TypeError, ValueError):
            raise DataError(f"{args.table}: row {line} has a non-numeric distance or transfer value") from None
        if not (math.isfinite(d) and math.isfinite(t)):
            raise DataError(f"{args.table}: row {line} has a non-finite value")
        dist.append(d)
        trans.append(t)
    if len(dist) < 3:
        raise DataError(f"{args.table}: need at least 3 complete rows, found {len(dist)}")
    rep = correlation_report(dist, trans)
    if args.format == "json":
        text = json.dumps({"schema_version": SCHEMA_VERSION, **rep}, indent=2) + "\n"
    else:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        keys = ["n", "pearson_r", "pearson_p", "spearman_rho", "spearman_p"]
        w.writerow(keys)
        w.writerow(["" if rep[k] is None else rep[k] for k in keys])
        text = buf.getvalue()
    _emit(text, args.out)
    return EXIT_OK


# -- bench -------------------------------------------------------------------

BENCH_STAGES = ("moments", "label_distances", "ground_cost", "outer_solve")


def bench_rows(sizes, dims, classes, methods, outer, seed, threads=1, q=2):
    """Time every pipeline stage for each (n, d, k, method) cell on synthetic data."""
    rows = []
    for n in sizes:
        for d in dims:
            for k in classes:
                A = gaussian_classes(n, d, k, seed=seed)
                B = gaussian_classes(n, d, k, seed=seed + 1, shift=0.5)
                for method in methods:
                    row = {"n": n, "m": n, "d": d, "k": k, "class_size": -(-n // k), "method": method}
                    try:
                        cfg = OtddConfig(
                            label_method=method,
                            outer_solver=outer if outer != "none" else "sinkhorn",
                            q=q,
                            seed=seed,
                            threads=threads,
                            keep_plan=False,
                        )
                        stage = prepare_ground_cost(A, B, cfg)
                        distance = None
                        if outer != "none":
                            res = solve_stage(stage, cfg)
                            distance = res.distance
                        row.update({s: stage.timings.get(s) for s in BENCH_STAGES})
                        row["distance"] = distance
                        row["status"] = "ok"
                    except (MemoryError, OtddError) as exc:
                        row["status"] = f"error: {type(exc).__name__}: {exc}"
                    rows.append(row)
    return rows


def cmd_bench(args) -> int:
    def ints(s):
        vals = [int(v) for v in s.split(",") if v.strip()]
        if not vals or min(vals) <= 0:
            raise DataError(f"grid values must be positive integers, got {s!r}")
        return vals

    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    rows = bench_rows(ints(args.sizes), ints(args.dims), ints(args.classes), methods, args.outer, args.seed, resolve_threads(args.threads))
    cols = ["n", "m", "d", "k", "class_size", "method", *BENCH_STAGES, "distance", "status"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow(["" if r.get(c) is None else r.get(c) for c in cols])
    _emit(buf.getvalue(), args.out)
    return EXIT_OK


# -- parser ------------------------------------------------------------------


def _global_flags():
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    g.add_argument("--threads", type=int, default=None, help="worker threads (default: OTDD_THREADS or CPU count)")
    g.add_argument("--strict", action="store_true", help="treat solver non-convergence as an error (exit 4)")
    g.add_argument("--out", default=None, help="output file (default stdout)")
    g.add_argument("--format", choices=("json", "csv"), default="json")
    g.add_argument("--quiet", action="store_true")
    return p


def _data_flags():
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("input options")
    g.add_argument("--label-column", default="-1", help="label column name or 0-based index (default: last)")
    hdr = g.add_mutually_exclusive_group()
    hdr.add_argument("--header", dest="header", action="store_true", default=None)
    hdr.add_argument("--no-header", dest="header", action="store_false")
    return p


def _distance_flags():
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("distance options")
    g.add_argument("--method", choices=("gaussian", "exact", "means"), default="gaussian")
    g.add_argument("--outer", choices=("sinkhorn", "exact"), default="sinkhorn")
    g.add_argument("--outer-q", type=int, choices=(1, 2), default=2)
    g.add_argument("--epsilon", type=float, default=None, help="absolute entropic regularization")
    g.add_argument("--epsilon-rel", type=float, default=0.1, help="epsilon relative to the mean ground cost (default 0.1)")
    g.add_argument("--tol", type=float, default=1e-6)
    g.add_argument("--max-iters", type=int, default=5000)
    g.add_argument("--max-samples", type=int, default=None)
    g.add_argument("--reg-cov", type=float, default=1e-6, help="covariance ridge, relative to feature scale")
    g.add_argument("--reg-cov-absolute", action="store_true", help="interpret --reg-cov as an absolute value")
    g.add_argument("--sqrt-mode", choices=("exact", "newton_schulz"), default="exact")
    g.add_argument("--diagonal-cov", action="store_true", help="use diagonal covariances")
    g.add_argument("--augmented", action="store_true", help="augmented-vector path (implies --diagonal-cov)")
    g.add_argument("--inner", choices=("exact", "sinkhorn"), default="exact", help="solver for exact label distances")
    g.add_argument("--inner-fallback", action="store_true", help="use sinkhorn for class pairs over the exact cap")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="otdd", description="Optimal transport distances between labeled datasets.")
    parser.add_argument("--version", action="version", version=f"otdd {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    common = [_global_flags(), _data_flags()]

    p = sub.add_parser("dist", parents=common + [_distance_flags()], help="distance between two datasets")
    p.add_argument("--src")
    p.add_argument("--tgt")
    p.add_argument("--coupling", default=None, help="write the transport plan as CSV")
    p.add_argument("--dense-coupling", action="store_true", help="dense plan CSV instead of i,j,mass triplets")
    p.add_argument("--label-dist", default=None, help="write the label distance matrix as CSV")
    p.add_argument("--replay", default=None, help="rerun from a result JSON or manifest")
    p.set_defaults(func=cmd_dist)

    p = sub.add_parser("pairwise", parents=common + [_distance_flags()], help="all-pairs distance matrix")
    p.add_argument("inputs", nargs="+", help="dataset files or directories")
    p.add_argument("--manifests", default=None, help="per-pair manifest JSON path")
    p.set_defaults(func=cmd_pairwise)

    p = sub.add_parser("robustness", parents=common + [_distance_flags()], help="distances on subsamples of varying size")
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--sizes", required=True, help="comma-separated subsample sizes")
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--grid", choices=("full", "diagonal"), default="full")
    p.add_argument("--no-stratify", action="store_true")
    p.set_defaults(func=cmd_robustness)

    p = sub.add_parser("correlate", parents=[_global_flags()], help="correlate distances with transfer scores")
    p.add_argument("table", help="CSV with columns pair, distance, transfer")
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("bench", parents=[_global_flags()], help="stage timings on synthetic data")
    p.add_argument("--sizes", default="500", help="comma-separated dataset sizes (n = m)")
    p.add_argument("--dims", default="8")
    p.add_argument("--classes", default="5")
    p.add_argument("--methods", default="gaussian,exact")
    p.add_argument("--outer", choices=("sinkhorn", "exact", "none"), default="sinkhorn")
    p.set_defaults(func=cmd_bench, format="csv")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING, format="otdd: %(levelname)s: %(message)s")
    try:
        return args.func(args)
    except DataError as exc:
        print(f"otdd: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NotConverged, SolverError) as exc:
        print(f"otdd: solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OtddError as exc:
        print(f"otdd: error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
