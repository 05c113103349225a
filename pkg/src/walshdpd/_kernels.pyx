# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: batched Walsh-Hadamard butterflies and memory-polynomial
amplification. Pure-numpy equivalents live in ``_fallback``."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def fwht_natural(double complex[:, ::1] a):
    """In-place unnormalized Hadamard transform of every row, natural order."""
    cdef Py_ssize_t rows = a.shape[0], n = a.shape[1]
    cdef Py_ssize_t r, h, i, j
    cdef double complex u, v
    for r in range(rows):
        h = 1
        while h < n:
            i = 0
            while i < n:
                for j in range(i, i + h):
                    u = a[r, j]
                    v = a[r, j + h]
                    a[r, j] = u + v
                    a[r, j + h] = u - v
                i += 2 * h
            h *= 2


def mempoly(const double complex[::1] x, const double complex[:, ::1] coeffs):
    """y(n) = sum_k sum_m coeffs[k, m] * x(n-m) * |x(n-m)|^(2k), zero history."""
    cdef Py_ssize_t n_samples = x.shape[0]
    cdef Py_ssize_t n_orders = coeffs.shape[0], n_taps = coeffs.shape[1]
    cdef Py_ssize_t n, k, m, p
    cdef double mag2, env
    cdef double complex xm, acc
    out = np.zeros(n_samples, dtype=np.complex128)
    cdef double complex[::1] y = out
    for n in range(n_samples):
        acc = 0
        for k in range(n_orders):
            for m in range(n_taps):
                if n - m < 0:
                    continue
                xm = x[n - m]
                mag2 = xm.real * xm.real + xm.imag * xm.imag
                env = 1.0
                for p in range(k):
                    env = env * mag2
                acc = acc + coeffs[k, m] * (xm * env)
        y[n] = acc
    return out
