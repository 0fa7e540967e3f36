"""Pure-Python / numpy implementations of the hot kernels.

Always importable; used when the compiled extension is missing or when
``EDGESIM_PURE_PYTHON=1`` is set.
"""
from __future__ import annotations

import math

import numpy as np


def match_topic(pattern: str, topic: str) -> bool:
    plevels = pattern.split("/")
    tlevels = topic.split("/")
    n = len(tlevels)
    for i, p in enumerate(plevels):
        if p == "#":
            return True
        if i >= n:
            return False
        if p != "+" and p != tlevels[i]:
            return False
    return len(plevels) == n


def close_pairs(xs, ys, threshold: float) -> list[tuple[int, int, float]]:
    xs = np.ascontiguousarray(xs, dtype=np.float64)
    ys = np.ascontiguousarray(ys, dtype=np.float64)
    n = xs.shape[0]
    out: list[tuple[int, int, float]] = []
    for i in range(n - 1):
        dx = xs[i + 1:] - xs[i]
        dy = ys[i + 1:] - ys[i]
        d = np.sqrt(dx * dx + dy * dy)
        for k in np.flatnonzero(d < threshold):
            out.append((i, i + 1 + int(k), float(d[k])))
    return out


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def logistic_grad(w, X, y) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    m, d = X.shape
    z = X @ w[:d] + w[d]
    r = _sigmoid(z) - y
    g = np.empty(d + 1)
    g[:d] = r @ X / m
    g[d] = r.sum() / m
    return g


def cross_entropy(w, X, y) -> float:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    d = X.shape[1]
    z = X @ w[:d] + w[d]
    # softplus(z) - y*z, stable for large |z|
    loss = np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z))) - y * z
    return float(loss.mean())


def sgd_epoch(w_start, delta, X, y, order, batch_size: int, alpha: float) -> np.ndarray:
    """One epoch of minibatch SGD accumulating into a copy of ``delta``."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w_start = np.asarray(w_start, dtype=np.float64)
    delta = np.array(delta, dtype=np.float64)
    order = np.asarray(order, dtype=np.intp)
    n = order.shape[0]
    for b in range(0, n, batch_size):
        idx = order[b:b + batch_size]
        with np.errstate(invalid="ignore", over="ignore"):
            g = logistic_grad(w_start + delta, X[idx], y[idx])
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient")
        delta -= alpha * g
        if not np.all(np.isfinite(delta)):
            raise FloatingPointError("non-finite weights")
    return delta


def euclid(ax: float, ay: float, bx: float, by: float) -> float:
    return math.hypot(ax - bx, ay - by)
