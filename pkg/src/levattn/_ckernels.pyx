# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. Mirrors ``levattn._pykernels`` exactly."""
import numpy as np

from cpython.mem cimport PyMem_Free, PyMem_Malloc
from libc.math cimport fabs, pow


cdef inline double _gram(double[:, ::1] buf, Py_ssize_t i, Py_ssize_t j) noexcept nogil:
    if i <= j:
        return buf[i, j + 1]
    return buf[j, i + 1]


cdef inline double _pinv(double[:, ::1] buf, Py_ssize_t i, Py_ssize_t j) noexcept nogil:
    if i >= j:
        return buf[i, j]
    return buf[j, i]


def new_online_buffer(Py_ssize_t d):
    return np.zeros((d, d + 1))


def unpack_gram(buf):
    upper = np.triu(buf[:, 1:])
    return upper + np.triu(upper, 1).T


def unpack_pinv(buf):
    lower = np.tril(buf[:, :-1])
    return lower + np.tril(lower, -1).T


cdef void _gram_update(double[:, ::1] buf, const double[::1] row) noexcept nogil:
    cdef Py_ssize_t d = row.shape[0]
    cdef Py_ssize_t i, j
    for i in range(d):
        for j in range(i, d):
            buf[i, j + 1] += row[i] * row[j]


def gram_update(double[:, ::1] buf, const double[::1] row):
    if buf.shape[0] != row.shape[0] or buf.shape[1] != row.shape[0] + 1:
        raise ValueError("buffer/row dimension mismatch")
    _gram_update(buf, row)


cdef double _online_step(double[:, ::1] buf, const double[::1] row,
                         double span_tol, double* a, double* e) noexcept nogil:
    cdef Py_ssize_t d = row.shape[0]
    cdef Py_ssize_t i, j
    cdef double s2 = 0.0, rho2 = 0.0, s = 0.0, acc, score, g
    for i in range(d):
        s2 += row[i] * row[i]
    if s2 == 0.0:
        return 0.0
    for i in range(d):
        acc = 0.0
        for j in range(d):
            acc += _pinv(buf, i, j) * row[j]
        a[i] = acc
        s += row[i] * acc
    for i in range(d):
        acc = 0.0
        for j in range(d):
            acc += _gram(buf, i, j) * a[j]
        e[i] = row[i] - acc
        rho2 += e[i] * e[i]
    if rho2 > span_tol * s2:
        score = 1.0
        for i in range(d):
            e[i] /= rho2
        for i in range(d):
            for j in range(i + 1):
                buf[i, j] += -a[i] * e[j] - e[i] * a[j] + (1.0 + s) * e[i] * e[j]
    else:
        score = s
        if score > 1.0:
            score = 1.0
        if score < 0.0:
            score = 0.0
        g = 1.0 / (1.0 + s)
        for i in range(d):
            for j in range(i + 1):
                buf[i, j] -= a[i] * a[j] * g
    _gram_update(buf, row)
    return score


def online_step(double[:, ::1] buf, const double[::1] row, double span_tol):
    cdef Py_ssize_t d = row.shape[0]
    if buf.shape[0] != d or buf.shape[1] != d + 1:
        raise ValueError("buffer/row dimension mismatch")
    cdef double* work = <double*> PyMem_Malloc(2 * max(d, 1) * sizeof(double))
    if work == NULL:
        raise MemoryError()
    try:
        return _online_step(buf, row, span_tol, work, work + d)
    finally:
        PyMem_Free(work)


def online_scores(K, double span_tol):
    cdef double[:, ::1] Kv = np.ascontiguousarray(K, dtype=np.float64)
    cdef Py_ssize_t n = Kv.shape[0], d = Kv.shape[1], j
    buf_arr = np.zeros((d, d + 1))
    scores_arr = np.empty(n)
    cdef double[:, ::1] buf = buf_arr
    cdef double[::1] scores = scores_arr
    cdef double* work = <double*> PyMem_Malloc(2 * max(d, 1) * sizeof(double))
    if work == NULL:
        raise MemoryError()
    try:
        with nogil:
            for j in range(n):
                scores[j] = _online_step(buf, Kv[j], span_tol, work, work + d)
    finally:
        PyMem_Free(work)
    return scores_arr, buf_arr


def khatri_rao_power(K, int h):
    cdef double[:, ::1] Kv = np.ascontiguousarray(K, dtype=np.float64)
    cdef Py_ssize_t n = Kv.shape[0], d = Kv.shape[1]
    cdef Py_ssize_t width = 1, r, step, a, b, size
    for step in range(h):
        width *= d
    out_arr = np.empty((n, width))
    cdef double[:, ::1] out = out_arr
    cdef double v
    with nogil:
        for r in range(n):
            out[r, 0] = 1.0
            size = 1
            for step in range(h):
                # expand in place from the back so earlier entries stay readable
                a = size - 1
                while a >= 0:
                    v = out[r, a]
                    for b in range(d - 1, -1, -1):
                        out[r, a * d + b] = v * Kv[r, b]
                    a -= 1
                size *= d
    return out_arr


def powered_scores(rows, q, double p):
    cdef double[:, ::1] R = np.ascontiguousarray(rows, dtype=np.float64)
    cdef const double[::1] qv = np.ascontiguousarray(q, dtype=np.float64)
    cdef Py_ssize_t m = R.shape[0], d = R.shape[1], i, j
    out_arr = np.empty(m)
    cdef double[::1] out = out_arr
    cdef double acc
    with nogil:
        for i in range(m):
            acc = 0.0
            for j in range(d):
                acc += R[i, j] * qv[j]
            out[i] = pow(fabs(acc), p)
    return out_arr
