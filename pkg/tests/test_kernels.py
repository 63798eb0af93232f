import os
import subprocess
import sys

import numpy as np
import pytest

import otdd._kernels as K
from otdd.otsolve import sinkhorn, uniform

needs_ext = pytest.mark.skipif(K.compiled is None, reason="compiled kernels not built")


def problem(rng, n=37, m=23):
    C = rng.uniform(0, 1, (n, m))
    return C, rng.normal(size=n) * 0.1, rng.normal(size=m) * 0.1, np.log(uniform(n)), np.log(uniform(m))


@needs_ext
@pytest.mark.parametrize("eps", [1.0, 0.05, 1e-3])
def test_softmin_backends_agree(rng, eps):
    C, f, g, la, lb = problem(rng)
    for name, args, size in (("softmin_rows", (C, g, lb, eps), C.shape[0]), ("softmin_cols", (C, f, la, eps), C.shape[1])):
        a = getattr(K.compiled, name)(*args, np.empty(size))
        b = getattr(K.python, name)(*args, np.empty(size))
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)


@needs_ext
def test_plan_backends_agree(rng):
    C, f, g, la, lb = problem(rng)
    a = K.compiled.plan_from_potentials(C, f, g, la, lb, 0.1, np.empty_like(C))
    b = K.python.plan_from_potentials(C, f, g, la, lb, 0.1, np.empty_like(C))
    np.testing.assert_allclose(a, b, rtol=1e-12)


@needs_ext
@pytest.mark.parametrize("q", [1, 2])
def test_assemble_cost_backends_agree(rng, q):
    XA = rng.normal(size=(30, 4))
    XB = np.vstack([XA[:5], rng.normal(size=(20, 4))])
    ya = rng.integers(0, 3, 30).astype(np.int64)
    yb = rng.integers(0, 2, 25).astype(np.int64)
    L = rng.uniform(0, 2, (3, 2))
    args = lambda: (XA @ XB.T, XA, XB, (XA**2).sum(1), (XB**2).sum(1), ya, yb, L, q)
    a = K.compiled.assemble_cost(*args(), np.empty((30, 25)))
    b = K.python.assemble_cost(*args(), np.empty((30, 25)))
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)
    # shared rows with equal labels must be exact zeros
    same = ya[:5] == yb[:5]
    assert np.all(np.diag(a[:5, :5])[same & (L[ya[:5], yb[:5]] == 0)] == 0.0)


def test_softmin_stable_at_tiny_epsilon(rng):
    C, f, g, la, lb = problem(rng)
    out = K.softmin_rows(C, g, lb, 1e-8, np.empty(C.shape[0]))
    assert np.all(np.isfinite(out))
    # at vanishing epsilon the soft minimum is the hard minimum
    np.testing.assert_allclose(out, (C - g).min(axis=1), atol=1e-6)


def test_backend_name():
    assert K.BACKEND in ("cython", "numpy")
    assert (K.BACKEND == "cython") == (K.compiled is not None)


def test_fallback_selected_by_environment():
    code = (
        "import numpy as np, otdd._kernels as K;"
        "from otdd.otsolve import sinkhorn, uniform;"
        "C = np.random.default_rng(0).uniform(0, 1, (20, 30));"
        "print(K.BACKEND, repr(sinkhorn(uniform(20), uniform(30), C, 0.05).objective))"
    )
    env = dict(os.environ, OTDD_NO_EXT="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True).stdout.split()
    assert out[0] == "numpy"
    C = np.random.default_rng(0).uniform(0, 1, (20, 30))
    assert float(out[1]) == pytest.approx(sinkhorn(uniform(20), uniform(30), C, 0.05).objective, rel=1e-10)
