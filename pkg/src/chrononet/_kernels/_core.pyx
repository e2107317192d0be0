# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled single-pass versions of the cosine-model kernels.

One traversal of the m x n cell grid computes the loss and all five gradient
blocks without materializing any intermediate matrices.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport cos, fabs, pow, sin

cnp.import_array()


def cosine_model_predict(double[::1] phases, double[::1] L, double[::1] A,
                         double[::1] phi, double[::1] omega):
    cdef Py_ssize_t m = phases.shape[0]
    cdef Py_ssize_t n = L.shape[0]
    out = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, p
    for i in range(m):
        for p in range(n):
            o[i, p] = L[p] + A[p] * cos(omega[p] * phases[i] + phi[p])
    return out


def cosine_model_loss_grad(double[:, ::1] x, double[::1] phases,
                           double[::1] L, double[::1] A,
                           double[::1] phi, double[::1] omega,
                           double q=1.0):
    cdef Py_ssize_t m = x.shape[0]
    cdef Py_ssize_t n = x.shape[1]
    cdef double inv = 1.0 / (m * n)

    d_phases = np.zeros(m, dtype=np.float64)
    dL = np.zeros(n, dtype=np.float64)
    dA = np.zeros(n, dtype=np.float64)
    dphi = np.zeros(n, dtype=np.float64)
    domega = np.zeros(n, dtype=np.float64)
    cdef double[::1] d_phases_v = d_phases
    cdef double[::1] dL_v = dL
    cdef double[::1] dA_v = dA
    cdef double[::1] dphi_v = dphi
    cdef double[::1] domega_v = domega

    cdef double loss = 0.0
    cdef double th, cth, sth, r, w, was, sgn
    cdef Py_ssize_t i, p
    for i in range(m):
        for p in range(n):
            th = omega[p] * phases[i] + phi[p]
            cth = cos(th)
            sth = sin(th)
            r = x[i, p] - (L[p] + A[p] * cth)
            sgn = 1.0 if r > 0.0 else (-1.0 if r < 0.0 else 0.0)
            if q == 1.0:
                loss += fabs(r)
                w = sgn * inv
            elif q == 2.0:
                loss += r * r
                w = 2.0 * inv * r
            else:
                loss += pow(fabs(r), q)
                w = 0.0 if r == 0.0 else q * pow(fabs(r), q - 1.0) * sgn * inv
            was = w * A[p] * sth
            d_phases_v[i] += was * omega[p]
            dL_v[p] -= w
            dA_v[p] -= w * cth
            dphi_v[p] += was
            domega_v[p] += was * phases[i]
    return loss * inv, d_phases, dL, dA, dphi, domega
