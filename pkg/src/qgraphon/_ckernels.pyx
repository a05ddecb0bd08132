# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled norm kernels; see _pykernels for the reference semantics."""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs

cnp.import_array()

# full recompute of the running sums every 4096 Gray steps bounds drift
cdef unsigned long long _RESYNC_MASK = (1ULL << 12) - 1


cdef inline int _ctz(unsigned long long x) nogil:
    cdef int k = 0
    while (x & 1) == 0:
        x >>= 1
        k += 1
    return k


def cut_norm_enum(w_in):
    cdef const double[:, ::1] w = np.ascontiguousarray(w_in, dtype=np.float64)
    cdef Py_ssize_t n = w.shape[0]
    cdef double[::1] r = np.zeros(n)
    cdef unsigned char[::1] inS = np.zeros(n, dtype=np.uint8)
    cdef unsigned long long i, total = 1ULL << n
    cdef unsigned long long mask = _RESYNC_MASK
    cdef int p
    cdef Py_ssize_t q, a
    cdef double pos, neg, best = 0.0
    with nogil:
        for i in range(1, total):
            p = _ctz(i)
            inS[p] ^= 1
            if (i & mask) == 0:
                for q in range(n):
                    r[q] = 0.0
                for a in range(n):
                    if inS[a]:
                        for q in range(n):
                            r[q] += w[a, q]
            elif inS[p]:
                for q in range(n):
                    r[q] += w[p, q]
            else:
                for q in range(n):
                    r[q] -= w[p, q]
            pos = 0.0
            neg = 0.0
            for q in range(n):
                if r[q] > 0:
                    pos += r[q]
                else:
                    neg -= r[q]
            if pos > best:
                best = pos
            if neg > best:
                best = neg
    return best


def op_norm_enum(w_in):
    cdef const double[:, ::1] w = np.ascontiguousarray(w_in, dtype=np.float64)
    cdef Py_ssize_t n = w.shape[0]
    cdef double[::1] s = np.zeros(n)
    cdef double[::1] phi = np.ones(n)
    cdef unsigned long long i, total = 1ULL << (n - 1)
    cdef unsigned long long mask = _RESYNC_MASK
    cdef int p
    cdef Py_ssize_t u, v
    cdef double acc, best = 0.0
    with nogil:
        for u in range(n):
            acc = 0.0
            for v in range(n):
                acc += w[u, v]
            s[u] = acc
            best += fabs(acc)
        for i in range(1, total):
            p = _ctz(i)
            phi[p] = -phi[p]
            if (i & mask) == 0:
                for u in range(n):
                    acc = 0.0
                    for v in range(n):
                        acc += w[u, v] * phi[v]
                    s[u] = acc
            else:
                for u in range(n):
                    s[u] += 2.0 * phi[p] * w[u, p]
            acc = 0.0
            for u in range(n):
                acc += fabs(s[u])
            if acc > best:
                best = acc
    return best


def cut_norm_alternating(w_in, starts_in, int max_iter=100):
    cdef const double[:, ::1] w = np.ascontiguousarray(w_in, dtype=np.float64)
    cdef const double[:, ::1] starts = np.ascontiguousarray(starts_in, dtype=np.float64)
    cdef Py_ssize_t n = w.shape[0], R = starts.shape[0]
    cdef double[::1] S = np.zeros(n)
    cdef double[::1] T = np.zeros(n)
    cdef Py_ssize_t k, a, b
    cdef int it, si
    cdef double sign, val, v1, v2, new, acc, best = 0.0
    with nogil:
        for k in range(R):
            for si in range(2):
                sign = 1.0 if si == 0 else -1.0
                for a in range(n):
                    S[a] = starts[k, a]
                val = -1.0
                for it in range(max_iter):
                    v1 = 0.0
                    for b in range(n):
                        acc = 0.0
                        for a in range(n):
                            if S[a] != 0.0:
                                acc += w[a, b]
                        acc = sign * acc
                        if acc > 0:
                            T[b] = 1.0
                            v1 += acc
                        else:
                            T[b] = 0.0
                    v2 = 0.0
                    for a in range(n):
                        acc = 0.0
                        for b in range(n):
                            if T[b] != 0.0:
                                acc += w[a, b]
                        acc = sign * acc
                        if acc > 0:
                            S[a] = 1.0
                            v2 += acc
                        else:
                            S[a] = 0.0
                    new = v1 if v1 > v2 else v2
                    if new <= val:
                        break
                    val = new
                if val > best:
                    best = val
    return best
