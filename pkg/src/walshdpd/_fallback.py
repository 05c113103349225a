"""Pure-numpy versions of the compiled kernels, used when the extension is absent."""

import numpy as np


def fwht_natural(a):
    """In-place unnormalized Hadamard transform of every row, natural order."""
    rows, n = a.shape
    h = 1
    while h < n:
        view = a.reshape(rows, n // (2 * h), 2, h)
        u = view[:, :, 0, :].copy()
        v = view[:, :, 1, :]
        view[:, :, 0, :] = u + v
        view[:, :, 1, :] = u - v
        h *= 2


def mempoly(x, coeffs):
    """y(n) = sum_k sum_m coeffs[k, m] * x(n-m) * |x(n-m)|^(2k), zero history."""
    x = np.asarray(x, dtype=np.complex128)
    n_orders, n_taps = coeffs.shape
    mag2 = x.real * x.real + x.imag * x.imag
    y = np.zeros_like(x)
    env = np.ones_like(mag2)
    terms = []
    for k in range(n_orders):
        terms.append(x * env)
        env = env * mag2
    # accumulate k-major / m-minor, the same order as the compiled loop
    for k in range(n_orders):
        for m in range(n_taps):
            if m == 0:
                y += coeffs[k, 0] * terms[k]
            else:
                y[m:] += coeffs[k, m] * terms[k][:-m]
    return y
