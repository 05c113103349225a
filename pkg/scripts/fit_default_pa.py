"""Offline fit of the default surrogate amplifier coefficients.

Reference response: a short linear filter followed by a Rapp soft limiter
(smoothness 1, saturation 0.9) with amplitude-dependent phase (75 deg asymptote, knee at 0.2), 15 dB gain.
The ridge-regularized least-squares memory-polynomial fit (K=7, M=3) is printed as the
constants committed in ``walshdpd/pa_model.py``. Nothing imports this file.
"""

import numpy as np

from walshdpd.signal import WaveformSpec, generate_multicarrier

GAIN_DB = 15.0
A_SAT = 0.9
PHASE_MAX_DEG = 75.0
PHASE_KNEE = 0.2
RIDGE = 3e-5  # keeps the taps from cancelling each other with large coefficients
FILTER = np.array([1.0, 0.10 * np.exp(-0.6j), -0.04 * np.exp(0.4j), 0.015])
K, M = 7, 3


def reference(x):
    v = np.convolve(x, FILTER)[: x.size]
    a = np.abs(v)
    amp = a / np.sqrt(1 + (a / A_SAT) ** 2)
    phase = np.radians(PHASE_MAX_DEG) * a**2 / (PHASE_KNEE**2 + a**2)
    return 10 ** (GAIN_DB / 20) * amp * np.exp(1j * (np.angle(v) + phase))


def regressors(x):
    cols = []
    for k in range(1, K + 1, 2):
        basis = x * np.abs(x) ** (k - 1)
        for m in range(M + 1):
            cols.append(np.concatenate([np.zeros(m, complex), basis[: x.size - m]]))
    return np.stack(cols, axis=1)


def main():
    pieces = []
    for i, peak in enumerate([0.3, 0.6, 0.9, 1.1]):
        x = generate_multicarrier(WaveformSpec(256, 0.1, 2**15, seed=1000 + i)).samples
        pieces.append(x * peak / np.abs(x).max())
    x = np.concatenate(pieces)
    y = reference(x)
    A = regressors(x)
    n = A.shape[1]
    A = np.vstack([A, np.sqrt(RIDGE * x.size) * np.eye(n)])
    y = np.concatenate([y, np.zeros(n)])
    coeffs, *_ = np.linalg.lstsq(A, y, rcond=None)
    coeffs = coeffs.reshape((K + 1) // 2, M + 1)
    coeffs *= 10 ** (GAIN_DB / 20) / abs(coeffs[0].sum())
    np.set_printoptions(precision=17, floatmode="unique")
    print("_DEFAULT_RE =", repr(coeffs.real.tolist()))
    print("_DEFAULT_IM =", repr(coeffs.imag.tolist()))


if __name__ == "__main__":
    main()
