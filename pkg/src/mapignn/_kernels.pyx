# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the message-passing and neighbour-search kernels."""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, fabs, INFINITY

cnp.import_array()


def scatter_add_rows(values, index, Py_ssize_t n):
    cdef double[:, ::1] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef const cnp.int64_t[::1] idx = np.ascontiguousarray(index, dtype=np.int64)
    cdef Py_ssize_t rows = v.shape[0], d = v.shape[1], r, c, t
    out_arr = np.zeros((n, d), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    for r in range(rows):
        t = idx[r]
        for c in range(d):
            out[t, c] += v[r, c]
    return out_arr


def segment_softmax(logits, weight, indptr):
    cdef const double[::1] l = np.ascontiguousarray(logits, dtype=np.float64)
    cdef const double[::1] w = np.ascontiguousarray(weight, dtype=np.float64)
    cdef const cnp.int64_t[::1] ptr = np.ascontiguousarray(indptr, dtype=np.int64)
    cdef Py_ssize_t n = ptr.shape[0] - 1, i, e, lo, hi
    cdef double peak, total
    out_arr = np.empty(l.shape[0], dtype=np.float64)
    cdef double[::1] out = out_arr
    for i in range(n):
        lo = ptr[i]
        hi = ptr[i + 1]
        if hi <= lo:
            raise ValueError("every segment must hold at least one entry")
        peak = l[lo]
        for e in range(lo + 1, hi):
            if l[e] > peak:
                peak = l[e]
        total = 0.0
        for e in range(lo, hi):
            out[e] = w[e] * exp(l[e] - peak)
            total += out[e]
        for e in range(lo, hi):
            out[e] /= total
    return out_arr


def segment_softmax_backward(alpha, grad, indptr):
    cdef const double[::1] a = np.ascontiguousarray(alpha, dtype=np.float64)
    cdef const double[::1] g = np.ascontiguousarray(grad, dtype=np.float64)
    cdef const cnp.int64_t[::1] ptr = np.ascontiguousarray(indptr, dtype=np.int64)
    cdef Py_ssize_t n = ptr.shape[0] - 1, i, e
    cdef double inner
    out_arr = np.empty(a.shape[0], dtype=np.float64)
    cdef double[::1] out = out_arr
    for i in range(n):
        inner = 0.0
        for e in range(ptr[i], ptr[i + 1]):
            inner += a[e] * g[e]
        for e in range(ptr[i], ptr[i + 1]):
            out[e] = a[e] * (g[e] - inner)
    return out_arr


def spmm(indptr, src, alpha, z):
    cdef const cnp.int64_t[::1] ptr = np.ascontiguousarray(indptr, dtype=np.int64)
    cdef const cnp.int64_t[::1] s = np.ascontiguousarray(src, dtype=np.int64)
    cdef const double[::1] a = np.ascontiguousarray(alpha, dtype=np.float64)
    cdef const double[:, ::1] zz = np.ascontiguousarray(z, dtype=np.float64)
    cdef Py_ssize_t n = ptr.shape[0] - 1, d = zz.shape[1], i, e, c, j
    cdef double w
    out_arr = np.zeros((n, d), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    for i in range(n):
        for e in range(ptr[i], ptr[i + 1]):
            j = s[e]
            w = a[e]
            for c in range(d):
                out[i, c] += w * zz[j, c]
    return out_arr


def spmm_backward(indptr, src, alpha, z, grad):
    cdef const cnp.int64_t[::1] ptr = np.ascontiguousarray(indptr, dtype=np.int64)
    cdef const cnp.int64_t[::1] s = np.ascontiguousarray(src, dtype=np.int64)
    cdef const double[::1] a = np.ascontiguousarray(alpha, dtype=np.float64)
    cdef const double[:, ::1] zz = np.ascontiguousarray(z, dtype=np.float64)
    cdef const double[:, ::1] g = np.ascontiguousarray(grad, dtype=np.float64)
    cdef Py_ssize_t n = ptr.shape[0] - 1, d = zz.shape[1], i, e, c, j
    cdef double acc, w
    ga_arr = np.empty(a.shape[0], dtype=np.float64)
    gz_arr = np.zeros((zz.shape[0], d), dtype=np.float64)
    cdef double[::1] ga = ga_arr
    cdef double[:, ::1] gz = gz_arr
    for i in range(n):
        for e in range(ptr[i], ptr[i + 1]):
            j = s[e]
            w = a[e]
            acc = 0.0
            for c in range(d):
                acc += g[i, c] * zz[j, c]
                gz[j, c] += w * g[i, c]
            ga[e] = acc
    return ga_arr, gz_arr


def knn_positions(values, Py_ssize_t k):
    cdef const double[:, ::1] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef Py_ssize_t b = v.shape[0], n = v.shape[1], kk = min(k, n - 1)
    cdef Py_ssize_t g, a, j, slot, pos
    cdef double d
    out_arr = np.empty((b, n, kk), dtype=np.int64)
    best_arr = np.empty(kk, dtype=np.float64)
    cdef cnp.int64_t[:, :, ::1] out = out_arr
    cdef double[::1] best = best_arr
    cdef Py_ssize_t filled
    if kk <= 0:
        return out_arr
    for g in range(b):
        for a in range(n):
            filled = 0
            for j in range(n):
                if j == a:
                    continue
                d = fabs(v[g, a] - v[g, j])
                # strict comparison keeps earlier (lower) positions ahead on ties
                if filled == kk and d >= best[kk - 1]:
                    continue
                slot = filled if filled < kk else kk - 1
                while slot > 0 and best[slot - 1] > d:
                    if slot < kk:
                        best[slot] = best[slot - 1]
                        out[g, a, slot] = out[g, a, slot - 1]
                    slot -= 1
                best[slot] = d
                out[g, a, slot] = j
                if filled < kk:
                    filled += 1
    return out_arr


def elu_forward(x, double alpha):
    arr = np.ascontiguousarray(x, dtype=np.float64)
    cdef const double[::1] v = arr.reshape(-1)
    out_arr = np.empty(arr.shape, dtype=np.float64)
    cdef double[::1] out = out_arr.reshape(-1)
    cdef Py_ssize_t i, n = v.shape[0]
    cdef double t
    for i in range(n):
        t = v[i]
        out[i] = t if t > 0 else alpha * (exp(t) - 1.0)
    return out_arr


def elu_backward(out, grad, double alpha):
    o_arr = np.ascontiguousarray(out, dtype=np.float64)
    cdef const double[::1] o = o_arr.reshape(-1)
    cdef const double[::1] g = np.ascontiguousarray(grad, dtype=np.float64).reshape(-1)
    res_arr = np.empty(o_arr.shape, dtype=np.float64)
    cdef double[::1] res = res_arr.reshape(-1)
    cdef Py_ssize_t i, n = o.shape[0]
    for i in range(n):
        res[i] = g[i] if o[i] > 0 else g[i] * (o[i] + alpha)
    return res_arr
