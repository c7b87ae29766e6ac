# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled coordinate descent kernel. Same contract as ``_cd_py.cd_gram``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs

cnp.import_array()


cdef inline double _soft(double a, double t) nogil:
    if a > t:
        return a - t
    if a < -t:
        return a + t
    return 0.0


cdef double _sweep(double[:, ::1] G, double[::1] c, double[::1] pen,
                   double[::1] b, double[::1] Gb, Py_ssize_t[::1] idx,
                   Py_ssize_t nidx) nogil:
    cdef Py_ssize_t t, i, j
    cdef Py_ssize_t m = b.shape[0]
    cdef double gjj, bj, a, new, d, maxd = 0.0
    for t in range(nidx):
        j = idx[t]
        gjj = G[j, j]
        bj = b[j]
        if gjj <= 0.0:
            if bj != 0.0:
                for i in range(m):
                    Gb[i] -= bj * G[j, i]
                b[j] = 0.0
                if fabs(bj) > maxd:
                    maxd = fabs(bj)
            continue
        a = c[j] - Gb[j] + gjj * bj
        new = _soft(a, pen[j]) / gjj
        d = new - bj
        if d != 0.0:
            for i in range(m):
                Gb[i] += d * G[j, i]
            b[j] = new
            if fabs(d) > maxd:
                maxd = fabs(d)
    return maxd


cdef inline double _maxabs(double[::1] b) nogil:
    cdef Py_ssize_t i
    cdef double v = 0.0
    for i in range(b.shape[0]):
        if fabs(b[i]) > v:
            v = fabs(b[i])
    return v


def cd_gram(double[:, ::1] G, double[::1] c, double[::1] pen, double[::1] beta,
            double tol=1e-7, long max_sweeps=100000):
    cdef Py_ssize_t m = beta.shape[0]
    cdef Py_ssize_t i, j, nact
    cdef long sweeps = 0
    cdef bint converged = False
    cdef double maxd, s
    cdef double[::1] Gb = np.zeros(m, dtype=np.float64)
    cdef Py_ssize_t[::1] full = np.arange(m, dtype=np.intp)
    cdef Py_ssize_t[::1] active = np.zeros(m, dtype=np.intp)

    with nogil:
        while sweeps < max_sweeps:
            for i in range(m):
                s = 0.0
                for j in range(m):
                    s += G[i, j] * beta[j]
                Gb[i] = s
            maxd = _sweep(G, c, pen, beta, Gb, full, m)
            sweeps += 1
            if maxd <= tol * (1.0 + _maxabs(beta)):
                converged = True
                break
            nact = 0
            for j in range(m):
                if beta[j] != 0.0:
                    active[nact] = j
                    nact += 1
            while sweeps < max_sweeps:
                maxd = _sweep(G, c, pen, beta, Gb, active, nact)
                sweeps += 1
                if maxd <= tol * (1.0 + _maxabs(beta)):
                    break
    return int(sweeps), bool(converged)
