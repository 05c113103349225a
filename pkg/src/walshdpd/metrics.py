"""Figures of merit: NMSE, EVM, Welch PSD, ACLR, AM-AM/AM-PM and the FLOPS
complexity measure."""

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import (
    DimensionError,
    InsufficientDataError,
    InvalidBandError,
    InvalidSpecError,
    UndefinedReferenceError,
)

NMSE_FLOOR_DB = -200.0
PHASE_GUARD = 1e-6
F_SYMB_IQ = 20e9  # symbols/s for the IQ-domain network (1 GHz band, 10x oversampled)


def _pair(a, b):
    a = np.asarray(getattr(a, "samples", a), dtype=np.complex128)
    b = np.asarray(getattr(b, "samples", b), dtype=np.complex128)
    if a.shape != b.shape:
        raise DimensionError(f"length mismatch: {a.shape} vs {b.shape}")
    return a, b


def _energy(v):
    return float(np.sum(v.real**2 + v.imag**2))


def to_db(ratio):
    if ratio <= 0:
        return NMSE_FLOOR_DB
    return max(10.0 * np.log10(ratio), NMSE_FLOOR_DB)


def nmse(y_true, y_pred):
    """Normalized mean square error in dB, clamped at -200 dB."""
    y, yh = _pair(y_true, y_pred)
    ref = _energy(y)
    if not ref > 0:
        raise UndefinedReferenceError("NMSE reference has zero power")
    return to_db(_energy(yh - y) / ref)


def ls_gain(x, y):
    """Least-squares complex gain g minimising ||y - g x||."""
    x, y = _pair(x, y)
    ref = _energy(x)
    if not ref > 0:
        raise UndefinedReferenceError("gain reference has zero power")
    return complex(np.vdot(x, y) / ref)


def evm(x, y, gain_mode="ls_complex_gain"):
    """Error vector magnitude in percent.

    ``ls_complex_gain`` divides ``y`` by its least-squares gain against ``x``
    first; ``unit`` compares the raw sequences.
    """
    x, y = _pair(x, y)
    ref = _energy(x)
    if not ref > 0:
        raise UndefinedReferenceError("EVM reference has zero power")
    if gain_mode == "ls_complex_gain":
        g = complex(np.vdot(x, y) / ref)
        if g == 0:
            raise UndefinedReferenceError("least-squares gain is zero")
        y = y / g
    elif gain_mode != "unit":
        raise ValueError(f"unknown gain_mode {gain_mode!r}")
    return 100.0 * float(np.sqrt(_energy(y - x) / ref))


@dataclass(frozen=True)
class PsdConfig:
    segment_length: int = 4096
    overlap_fraction: float = 0.5

    def validate(self):
        n = self.segment_length
        if n < 2 or n & (n - 1):
            raise InvalidSpecError("segment_length must be a power of two")
        if not 0 <= self.overlap_fraction < 1:
            raise InvalidSpecError("overlap_fraction must lie in [0, 1)")


def psd(w, cfg=PsdConfig()):
    """Welch estimate with a Hann window, two-sided and centred on DC.

    Returns ``(freqs, density)`` with ``freqs`` in cycles/sample on
    ``[-0.5, 0.5)``. Densities are scaled so ``density.sum() / L`` equals the
    mean power of the waveform (up to window averaging).
    """
    cfg.validate()
    s = np.asarray(getattr(w, "samples", w), dtype=np.complex128)
    L = cfg.segment_length
    if s.size < L:
        raise InsufficientDataError(f"{s.size} samples < PSD segment length {L}")
    step = max(1, int(round(L * (1 - cfg.overlap_fraction))))
    starts = np.arange(0, s.size - L + 1, step)
    win = np.hanning(L + 1)[:-1]  # periodic Hann
    win_power = np.sum(win**2)
    acc = np.zeros(L)
    for start in starts:
        spec = np.fft.fft(s[start : start + L] * win)
        acc += spec.real**2 + spec.imag**2
    density = np.fft.fftshift(acc / (starts.size * win_power))
    freqs = np.fft.fftshift(np.fft.fftfreq(L))
    return freqs, density


def band_power(freqs, density, lo, hi):
    mask = (freqs >= lo) & (freqs < hi)
    return float(np.sum(density[mask]))


def aclr(w, bandwidth, cfg=PsdConfig()):
    """Adjacent-channel leakage ratios ``(lower, upper, worst)`` in dB.

    The main channel is ``[-B/2, B/2)`` and the adjacent channels are the
    equal-width bands directly beside it; ``bandwidth`` is in cycles/sample.
    """
    if not 0 < bandwidth or 1.5 * bandwidth > 0.5:
        raise InvalidBandError(f"bandwidth {bandwidth} puts adjacent bands beyond Nyquist")
    freqs, density = psd(w, cfg)
    b = bandwidth
    main = band_power(freqs, density, -b / 2, b / 2)
    if not main > 0:
        raise UndefinedReferenceError("main-channel power is zero")
    lower = band_power(freqs, density, -1.5 * b, -b / 2)
    upper = band_power(freqs, density, b / 2, 1.5 * b)
    lo_db = 10 * np.log10(max(lower, 1e-300) / main)
    up_db = 10 * np.log10(max(upper, 1e-300) / main)
    return float(lo_db), float(up_db), float(max(lo_db, up_db))


def amam_ampm(x, y):
    """Per-sample scatter ``(|x|, |y|, phase_deg)``.

    Samples with ``|x| < 1e-6`` are dropped from all three arrays.
    """
    x, y = _pair(x, y)
    keep = np.abs(x) >= PHASE_GUARD
    x, y = x[keep], y[keep]
    return np.abs(x), np.abs(y), np.degrees(np.angle(y / x))


def flops_per_symbol(k, n, I, O):
    return 2 * n * (I + k * n + O) + O


def flops(spec, f_symb=F_SYMB_IQ):
    """Complexity ``[2 n (I + k n + O) + O] * f_symb``, evaluated exactly.

    ``spec`` is anything with ``hidden_layers``, ``hidden_width``,
    ``input_size`` and ``output_size`` attributes.
    """
    ops = flops_per_symbol(
        int(spec.hidden_layers), int(spec.hidden_width), int(spec.input_size), int(spec.output_size)
    )
    total = ops * Fraction(f_symb)
    return int(total) if total.denominator == 1 else float(total)
