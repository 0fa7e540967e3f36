# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot kernels; same contracts as _pykernels."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log1p, fabs, sqrt, isfinite

cnp.import_array()


def match_topic(str pattern, str topic):
    cdef list plevels = pattern.split("/")
    cdef list tlevels = topic.split("/")
    cdef Py_ssize_t n = len(tlevels)
    cdef Py_ssize_t np_ = len(plevels)
    cdef Py_ssize_t i
    cdef str p
    for i in range(np_):
        p = <str>plevels[i]
        if p == "#":
            return True
        if i >= n:
            return False
        if p != "+" and p != <str>tlevels[i]:
            return False
    return np_ == n


def close_pairs(xs, ys, double threshold):
    cdef const double[::1] x = np.ascontiguousarray(xs, dtype=np.float64)
    cdef const double[::1] y = np.ascontiguousarray(ys, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t i, j
    cdef double dx, dy, d
    out = []
    for i in range(n - 1):
        for j in range(i + 1, n):
            dx = x[j] - x[i]
            dy = y[j] - y[i]
            d = sqrt(dx * dx + dy * dy)
            if d < threshold:
                out.append((i, j, d))
    return out


cdef inline double _sigmoid(double z) nogil:
    cdef double ez
    if z >= 0:
        return 1.0 / (1.0 + exp(-z))
    ez = exp(z)
    return ez / (1.0 + ez)


cdef void _grad_rows(const double[::1] w, const double[:, ::1] X, const double[::1] y,
                     const Py_ssize_t[::1] rows, Py_ssize_t start, Py_ssize_t stop,
                     double[::1] g) nogil:
    cdef Py_ssize_t d = X.shape[1]
    cdef Py_ssize_t k, j, r
    cdef double z, res
    cdef double m = stop - start
    for j in range(d + 1):
        g[j] = 0.0
    for k in range(start, stop):
        r = rows[k]
        z = w[d]
        for j in range(d):
            z += X[r, j] * w[j]
        res = _sigmoid(z) - y[r]
        for j in range(d):
            g[j] += res * X[r, j]
        g[d] += res
    for j in range(d + 1):
        g[j] /= m


def logistic_grad(w, X, y):
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef const double[::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef Py_ssize_t m = Xv.shape[0]
    cdef Py_ssize_t[::1] rows = np.arange(m, dtype=np.intp)
    g = np.zeros(Xv.shape[1] + 1)
    cdef double[::1] gv = g
    _grad_rows(wv, Xv, yv, rows, 0, m, gv)
    return g


def cross_entropy(w, X, y):
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef const double[::1] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef Py_ssize_t m = Xv.shape[0]
    cdef Py_ssize_t d = Xv.shape[1]
    cdef Py_ssize_t i, j
    cdef double z, total = 0.0
    for i in range(m):
        z = wv[d]
        for j in range(d):
            z += Xv[i, j] * wv[j]
        total += (z if z > 0 else 0.0) + log1p(exp(-fabs(z))) - yv[i] * z
    return total / m


def sgd_epoch(w_start, delta, X, y, order, Py_ssize_t batch_size, double alpha):
    cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef const double[::1] w0 = np.ascontiguousarray(w_start, dtype=np.float64)
    cdef const Py_ssize_t[::1] rows = np.ascontiguousarray(order, dtype=np.intp)
    out = np.array(delta, dtype=np.float64)
    cdef double[::1] dv = out
    cdef Py_ssize_t p = w0.shape[0]
    cdef Py_ssize_t n = rows.shape[0]
    cdef double[::1] w = np.empty(p)
    cdef double[::1] g = np.empty(p)
    cdef Py_ssize_t b, j, stop
    b = 0
    while b < n:
        stop = b + batch_size
        if stop > n:
            stop = n
        for j in range(p):
            w[j] = w0[j] + dv[j]
        _grad_rows(w, Xv, yv, rows, b, stop, g)
        for j in range(p):
            if not isfinite(g[j]):
                raise FloatingPointError("non-finite gradient")
            dv[j] -= alpha * g[j]
            if not isfinite(dv[j]):
                raise FloatingPointError("non-finite weights")
        b = stop
    return out
