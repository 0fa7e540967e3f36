from __future__ import annotations

import os
import subprocess
import sys

import numpy as np
import pytest

from edgesim import kernels
from edgesim.kernels import _pykernels


def test_default_backend_is_compiled_when_built():
    if "compiled" in kernels.available_backends():
        assert kernels.BACKEND == "compiled"
    else:
        assert kernels.BACKEND == "python"


def test_env_var_forces_python_backend():
    env = dict(os.environ, EDGESIM_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from edgesim import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_match_topic_basic(backend):
    assert backend.match_topic("a/+/c", "a/b/c")
    assert backend.match_topic("a/#", "a")
    assert backend.match_topic("#", "x/y/z")
    assert not backend.match_topic("a/+", "a/b/c")
    assert not backend.match_topic("a/b/c", "a/b")


def test_close_pairs_matches_brute_force(backend):
    rng = np.random.default_rng(11)
    for _ in range(20):
        n = int(rng.integers(0, 50))
        xs, ys = rng.uniform(0, 30, n), rng.uniform(0, 30, n)
        got = [(i, j) for i, j, _ in backend.close_pairs(xs, ys, 6.0)]
        want = [(i, j) for i in range(n) for j in range(i + 1, n)
                if np.hypot(xs[i] - xs[j], ys[i] - ys[j]) < 6.0]
        assert got == want


def test_close_pairs_reports_distance(backend):
    [(i, j, d)] = backend.close_pairs(np.array([0.0, 3.0]), np.array([0.0, 4.0]), 6.0)
    assert (i, j) == (0, 1) and d == 5.0


def test_backends_agree_on_numerics():
    backends = kernels.available_backends()
    if len(backends) < 2:
        pytest.skip("compiled backend not built")
    c, p = backends["compiled"], backends["python"]
    rng = np.random.default_rng(5)
    X = rng.standard_normal((97, 3))
    y = (rng.random(97) < 0.5).astype(float)
    w = rng.standard_normal(4)
    np.testing.assert_allclose(c.logistic_grad(w, X, y), p.logistic_grad(w, X, y), rtol=0, atol=1e-13)
    assert abs(c.cross_entropy(w, X, y) - p.cross_entropy(w, X, y)) < 1e-13
    order = rng.permutation(97)
    dc = c.sgd_epoch(w, np.zeros(4), X, y, order, 10, 0.1)
    dp = p.sgd_epoch(w, np.zeros(4), X, y, order, 10, 0.1)
    np.testing.assert_allclose(dc, dp, rtol=0, atol=1e-12)


def test_sgd_epoch_does_not_mutate_inputs(backend):
    w = np.array([0.5, -0.5, 0.1])
    delta = np.zeros(3)
    X = np.array([[1.0, 2.0], [-1.0, 0.5]])
    y = np.array([1.0, 0.0])
    out = backend.sgd_epoch(w, delta, X, y, np.array([1, 0]), 1, 0.5)
    assert np.all(delta == 0) and np.all(w == [0.5, -0.5, 0.1])
    assert not np.all(out == 0)


def test_sgd_epoch_flags_non_finite(backend):
    X = np.array([[np.inf, 0.0]])
    with pytest.raises(FloatingPointError):
        backend.sgd_epoch(np.zeros(3), np.zeros(3), X, np.array([1.0]), np.array([0]), 1, 0.1)


def test_cross_entropy_stable_for_large_margins(backend):
    X = np.array([[1000.0], [-1000.0]])
    y = np.array([0.0, 1.0])
    assert backend.cross_entropy(np.array([1.0, 0.0]), X, y) == pytest.approx(1000.0)


def test_euclid_helper():
    assert _pykernels.euclid(0, 0, 3, 4) == 5.0
