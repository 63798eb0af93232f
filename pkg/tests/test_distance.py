import itertools
import json

import numpy as np
import pytest
import scipy.linalg

from otdd.dataset import LabeledDataset
from otdd.distance import (
    LabelDistanceMatrix,
    OtddConfig,
    augmented_embed,
    coupling_class_mass,
    feature_ot_distance,
    ground_cost,
    label_distance_matrix_exact,
    label_distance_matrix_gaussian,
    label_distance_matrix_means,
    otdd_distance,
    otdd_distance_augmented,
    pair_moments,
    pairwise_sq_dists,
    prepare_ground_cost,
)
from otdd.errors import DataError, DimensionMismatchError, SizeCapError
from otdd.stats import all_moments
from otdd.synthetic import gaussian_classes, label_flip_triplet, shared_class_pair

from conftest import random_dataset


def reference_otdd(dsA, dsB, reg, q):
    """Entry-by-entry OTDD for tiny uniform datasets of equal size.

    Gaussian label distances use scipy's matrix square root; the outer
    problem is solved by enumerating permutations.
    """

    def moments(ds, y):
        X = ds.features[ds.labels == y]
        mu = X.mean(axis=0)
        return mu, (X - mu).T @ (X - mu) / len(X) + reg * np.eye(ds.d)

    def w2(p, r):
        (m1, A), (m2, B) = p, r
        rA = scipy.linalg.sqrtm(A).real
        cross = scipy.linalg.sqrtm(rA @ B @ rA).real
        return max(float(np.sum((m1 - m2) ** 2) + np.trace(A + B - 2 * cross)), 0.0)

    MA = [moments(dsA, y) for y in range(dsA.k)]
    MB = [moments(dsB, y) for y in range(dsB.k)]
    n = dsA.n
    C = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            s = np.sum((dsA.features[i] - dsB.features[j]) ** 2) + w2(MA[dsA.labels[i]], MB[dsB.labels[j]])
            C[i, j] = np.sqrt(s) if q == 1 else s
    best = min(C[np.arange(n), list(p)].sum() for p in itertools.permutations(range(n))) / n
    return best if q == 1 else np.sqrt(best)


@pytest.mark.parametrize("q", [1, 2])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_matches_reference_implementation(q, seed):
    rng = np.random.default_rng(seed)
    dsA, dsB = random_dataset(rng, 6, 2, 2), random_dataset(rng, 6, 2, 3)
    cfg = OtddConfig(q=q, outer_solver="exact", cov_reg=0.05)
    got = otdd_distance(dsA, dsB, cfg).distance
    assert got == pytest.approx(reference_otdd(dsA, dsB, 0.05, q), rel=1e-8)


def test_pairwise_sq_dists_exact_zero_diagonal(rng):
    X = 1e4 + rng.normal(size=(50, 7))
    D = pairwise_sq_dists(X, X)
    assert np.all(np.diag(D) == 0.0)
    ref = np.sum((X[:, None] - X[None]) ** 2, axis=-1)
    np.testing.assert_allclose(D, ref, rtol=1e-6, atol=1e-6)
    assert D.min() >= 0


def test_ground_cost_adds_label_term(rng):
    dsA, dsB = random_dataset(rng, 7, 3, 2), random_dataset(rng, 5, 3, 3)
    L = rng.uniform(0, 4, (2, 3))
    C2 = ground_cost(dsA, dsB, L, q=2)
    ref = np.sum((dsA.features[:, None] - dsB.features[None]) ** 2, axis=-1) + L[dsA.labels][:, dsB.labels]
    np.testing.assert_allclose(C2, ref, rtol=1e-12)
    np.testing.assert_allclose(ground_cost(dsA, dsB, L, q=1), np.sqrt(ref), rtol=1e-12)


def test_ground_cost_shape_checks(rng):
    dsA, dsB = random_dataset(rng, 7, 3, 2), random_dataset(rng, 5, 3, 3)
    with pytest.raises(DataError):
        ground_cost(dsA, dsB, np.zeros((3, 3)))
    with pytest.raises(DimensionMismatchError):
        otdd_distance(dsA, random_dataset(rng, 5, 4, 2))


def test_label_methods_order(rng):
    # centroid-only <= Gaussian (shared ridge 0) <= empirical
    dsA, dsB = random_dataset(rng, 40, 3, 3), random_dataset(rng, 36, 3, 2)
    mA, mB, _ = pair_moments(dsA, dsB, OtddConfig(cov_reg=0.0))
    Lm = label_distance_matrix_means(mA, mB).values
    Lg = label_distance_matrix_gaussian(mA, mB).values
    Le = label_distance_matrix_exact(dsA, dsB).values
    assert np.all(Lm <= Lg + 1e-10)
    assert np.all(Lg <= Le + 1e-8)


def test_label_gaussian_threads_identical(rng):
    mA = all_moments(random_dataset(rng, 60, 4, 5), reg=1e-3)
    mB = all_moments(random_dataset(rng, 60, 4, 4), reg=1e-3)
    one = label_distance_matrix_gaussian(mA, mB, threads=1).values
    many = label_distance_matrix_gaussian(mA, mB, threads=3).values
    np.testing.assert_array_equal(one, many)


def test_label_exact_cap_and_fallback(rng):
    dsA, dsB = random_dataset(rng, 30, 2, 2), random_dataset(rng, 30, 2, 2)
    with pytest.raises(SizeCapError):
        label_distance_matrix_exact(dsA, dsB, cap=10)
    L = label_distance_matrix_exact(dsA, dsB, cap=10, fallback=True)
    ref = label_distance_matrix_exact(dsA, dsB).values
    assert L.inner_solver_config["fallback"] is True
    assert np.all(L.values >= ref - 1e-9)
    np.testing.assert_allclose(L.values, ref, rtol=0.1, atol=0.05)


def test_self_distance_zero(rng):
    ds = random_dataset(rng, 25, 3, 3)
    for method in ("gaussian", "exact", "means"):
        for q in (1, 2):
            res = otdd_distance(ds, ds, OtddConfig(label_method=method, q=q, outer_solver="exact"))
            assert res.distance == 0.0


def test_symmetry_sinkhorn(rng):
    dsA, dsB = random_dataset(rng, 30, 2, 3), random_dataset(rng, 40, 2, 2)
    cfg = OtddConfig(epsilon=0.5, tol=1e-9)
    ab = otdd_distance(dsA, dsB, cfg).distance
    ba = otdd_distance(dsB, dsA, cfg).distance
    assert ab == pytest.approx(ba, rel=1e-6)


def test_label_names_do_not_matter(rng):
    # swapping class ids is a relabeling, so the distance stays zero
    ds = random_dataset(rng, 20, 2, 2)
    flipped = LabeledDataset(ds.features, 1 - ds.labels)
    assert otdd_distance(ds, flipped, OtddConfig(outer_solver="exact")).distance == 0.0


def test_label_free_baseline_ignores_labels(rng):
    ds = random_dataset(rng, 20, 2, 2)
    shuffled = LabeledDataset(ds.features, rng.permutation(ds.labels))
    cfg = OtddConfig(outer_solver="exact")
    assert feature_ot_distance(ds, shuffled, cfg).distance == 0.0
    assert otdd_distance(ds, shuffled, cfg).distance > 0.0


def test_labels_flip_ordering():
    ref, pair1, pair2 = label_flip_triplet()
    cfg = OtddConfig(outer_solver="exact")
    f1, f2 = (feature_ot_distance(ref, p, cfg).distance for p in (pair1, pair2))
    o1, o2 = (otdd_distance(ref, p, cfg).distance for p in (pair1, pair2))
    assert f2 < f1 and o1 < o2


def test_block_diagonal_coupling():
    dsA, dsB = shared_class_pair()
    res = otdd_distance(dsA, dsB, OtddConfig(outer_solver="exact"))
    M = coupling_class_mass(res.plan.plan, dsA.labels, dsB.labels, dsA.k, dsB.k)
    assert M.sum() == pytest.approx(1.0)
    assert np.trace(M) > 0.9


def test_coupling_class_mass_small():
    P = np.array([[0.1, 0.2], [0.3, 0.4]])
    M = coupling_class_mass(P, np.array([0, 0]), np.array([1, 0]), 1, 2)
    np.testing.assert_allclose(M, [[0.6, 0.4]])


@pytest.mark.parametrize("method", ["gaussian", "means"])
@pytest.mark.parametrize("q", [1, 2])
def test_augmented_matches_matrix_path(rng, method, q):
    dsA, dsB = random_dataset(rng, 40, 3, 3), random_dataset(rng, 30, 3, 2)
    cfg = OtddConfig(label_method=method, q=q, diagonal_cov=True, outer_solver="exact")
    a = otdd_distance_augmented(dsA, dsB, cfg).distance
    b = otdd_distance(dsA, dsB, cfg).distance
    assert a == pytest.approx(b, rel=1e-8)


def test_augmented_embedding_rejects_full_covariance(rng):
    ds = random_dataset(rng, 30, 2, 2)
    moments = all_moments(ds)
    with pytest.raises(DataError):
        augmented_embed(ds, moments)
    E = augmented_embed(ds, moments, diagonal_approx=True)
    assert E.shape == (30, 6)
    assert augmented_embed(ds, moments, means_only=True).shape == (30, 4)


def test_shared_ridge_is_reported(rng):
    dsA, dsB = random_dataset(rng, 30, 2, 2), random_dataset(rng, 30, 2, 2)
    res = otdd_distance(dsA, dsB, OtddConfig(cov_reg=0.125))
    assert res.config["cov_reg"] == 0.125
    res = otdd_distance(dsA, dsB)
    assert res.config["cov_reg"] > 0
    assert res.config["epsilon"] == pytest.approx(0.1 * prepare_ground_cost(dsA, dsB).cost.mean())


def test_subsampling_is_seeded():
    big = gaussian_classes(400, 2, 4, seed=1)
    other = gaussian_classes(300, 2, 4, seed=2)
    cfg = OtddConfig(max_samples=50, seed=9)
    r1, r2 = otdd_distance(big, other, cfg), otdd_distance(big, other, cfg)
    assert r1.distance == r2.distance
    assert r1.sizes["n"] == 50 and r1.sizes["m"] == 50
    assert otdd_distance(big, other, OtddConfig(max_samples=50, seed=10)).distance != r1.distance


def test_result_document_is_json(rng):
    dsA, dsB = random_dataset(rng, 20, 2, 2), random_dataset(rng, 20, 2, 3)
    res = otdd_distance(dsA, dsB)
    doc = json.loads(json.dumps(res.to_dict()))
    assert doc["distance"] == res.distance
    assert doc["label_distances"]["shape"] == [2, 3]
    assert set(doc["timings"]) >= {"moments", "label_distances", "ground_cost", "outer_solve", "total"}
    assert "path" in res.to_dict(inline_limit=1, sidecar="L.csv")["label_distances"]


def test_precomputed_label_matrix_skips_stages(rng):
    dsA, dsB = random_dataset(rng, 20, 2, 2), random_dataset(rng, 20, 2, 3)
    L = LabelDistanceMatrix(np.ones((2, 3)), "custom")
    res = otdd_distance(dsA, dsB, label_distances=L)
    assert "moments" not in res.timings
    assert res.label_distances is L


def test_config_validation():
    for bad in (
        dict(label_method="nope"),
        dict(q=3),
        dict(outer_solver="lp"),
        dict(epsilon=-1.0),
        dict(cov_reg=-1.0),
        dict(sqrt_mode="eig"),
        dict(max_samples=0),
    ):
        with pytest.raises(DataError):
            OtddConfig(**bad)
