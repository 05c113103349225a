"""Surrogate power amplifier and measured-pair replay.

The surrogate is an odd-order memory polynomial

    y(n) = sum_k sum_m a[k, m] * x(n - m) * |x(n - m)|^(k - 1),  k = 1, 3, ..., K

with saturation normalized to unit input amplitude.
"""

import json
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import FormatError, InvalidSpecError, NumericInputError, UndefinedPowerError
from .signal import IqWaveform

# Produced by scripts/fit_default_pa.py; rows are orders 1, 3, 5, 7, columns taps 0..3.
_DEFAULT_RE = [
    [3.2769505896232043, 1.4251162167529068, 0.24175833316091297, -0.22118247895079557],
    [-6.702922012856061, -3.5656895933751955, -1.4363730615894517, -0.45476457965191774],
    [4.906916002700188, 4.16836011028301, 2.948430385268031, 1.7635301190771824],
    [-0.3164302273975768, -1.4628997998331112, -1.5937596812190802, -1.134211413499463],
]
_DEFAULT_IM = [
    [2.9547350548714277, 0.7344603621352185, -0.351533692440185, -0.2848887388869133],
    [4.025132980142431, 2.182492539145837, 1.2713522747730637, 1.2223204870265159],
    [-5.670656565601801, -4.54072566565166, -3.254102287169227, -2.139919183357017],
    [1.4687581703285744, 2.316966468190138, 1.9821069444827348, 1.1247883137186414],
]


@dataclass(frozen=True, eq=False)
class MemoryPolynomialPA:
    coeffs: np.ndarray  # shape ((K + 1) // 2, M + 1), complex

    def __post_init__(self):
        c = np.ascontiguousarray(self.coeffs, dtype=np.complex128)
        if c.ndim != 2 or c.shape[0] < 1 or c.shape[1] < 1:
            raise InvalidSpecError("coefficients must be a (orders, taps) matrix")
        if c[0, 0] == 0:
            raise InvalidSpecError("a[1, 0] must be non-zero")
        if not np.all(np.isfinite(c)):
            raise InvalidSpecError("coefficients must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def K(self):
        return 2 * self.coeffs.shape[0] - 1

    @property
    def M(self):
        return self.coeffs.shape[1] - 1

    @property
    def smallsig_gain_db(self):
        return 20 * np.log10(abs(small_signal_gain(self)))

    def to_json(self):
        return {
            "K": self.K,
            "M": self.M,
            "re": [float(v) for v in self.coeffs.real.ravel()],
            "im": [float(v) for v in self.coeffs.imag.ravel()],
        }

    @classmethod
    def from_json(cls, obj):
        try:
            K, M = int(obj["K"]), int(obj["M"])
            re = np.asarray(obj["re"], dtype=np.float64)
            im = np.asarray(obj["im"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed PA model: {exc}") from None
        if K < 1 or K % 2 == 0 or M < 0:
            raise FormatError(f"invalid K={K}, M={M}")
        shape = ((K + 1) // 2, M + 1)
        if re.size != shape[0] * shape[1] or im.size != re.size:
            raise FormatError(f"expected {shape[0] * shape[1]} coefficients per part")
        return cls((re + 1j * im).reshape(shape))


def save_pa(pa, path):
    with open(path, "w") as fh:
        json.dump(pa.to_json(), fh, indent=2)
        fh.write("\n")


def load_pa(path):
    with open(path) as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: {exc}") from None
    return MemoryPolynomialPA.from_json(obj)


def default_pa():
    """K=7, M=3 surrogate with 15 dB small-signal gain and unit-amplitude saturation."""
    return MemoryPolynomialPA(np.array(_DEFAULT_RE) + 1j * np.array(_DEFAULT_IM))


def small_signal_gain(pa):
    return complex(np.sum(pa.coeffs[0]))


def amplify(w, pa):
    """Run a waveform (or bare sample array) through the amplifier.

    History before the first sample is taken as zero.
    """
    s = w.samples if isinstance(w, IqWaveform) else np.asarray(w, dtype=np.complex128)
    if not np.all(np.isfinite(s)):
        raise NumericInputError("amplifier input contains non-finite samples")
    y = kernels.mempoly(np.ascontiguousarray(s), pa.coeffs)
    return w.with_samples(y) if isinstance(w, IqWaveform) else y


def tone_gain_db(pa, amplitude, n=64):
    """Steady-state gain (dB) for a DC tone of the given amplitude."""
    y = amplify(np.full(n, amplitude, dtype=np.complex128), pa)
    return 20 * np.log10(abs(y[-1]) / amplitude)


def tone_phase_deg(pa, amplitude, n=64):
    y = amplify(np.full(n, amplitude, dtype=np.complex128), pa)
    return float(np.degrees(np.angle(y[-1])))


def compression_point(pa, db=1.0):
    """Input amplitude at which the tone gain sits ``db`` below the small-signal gain."""
    g0 = pa.smallsig_gain_db
    lo, hi = 1e-3, 1.0
    if g0 - tone_gain_db(pa, hi) < db:
        raise InvalidSpecError(f"amplifier does not compress by {db} dB below unit drive")
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if g0 - tone_gain_db(pa, mid) < db:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def nominal_drive(x, pa, backoff_db=0.0):
    """Scale ``x`` so its peak sits at the 1 dB compression amplitude (minus backoff)."""
    s = x.samples
    peak = np.max(np.abs(s))
    if not peak > 0:
        raise UndefinedPowerError("cannot drive an all-zero waveform")
    target = compression_point(pa) * 10 ** (-backoff_db / 20)
    return x.with_samples(s * (target / peak))


@dataclass(frozen=True, eq=False)
class ReplayPA:
    input_ref: IqWaveform
    output_ref: IqWaveform
    lag: int = 0

    def __post_init__(self):
        if len(self.input_ref) != len(self.output_ref):
            raise InvalidSpecError("replay pair must have equal lengths after alignment")

    def amplify(self, w):
        """Return the recorded output for the recorded input; any other input is rejected."""
        s = w.samples if isinstance(w, IqWaveform) else np.asarray(w)
        if s.shape != self.input_ref.samples.shape or not np.array_equal(
            s, self.input_ref.samples
        ):
            raise InvalidSpecError("a replayed amplifier can only reproduce its recorded input")
        return w.with_samples(self.output_ref.samples) if isinstance(w, IqWaveform) else (
            self.output_ref.samples.copy()
        )


def align_pair(x, y, max_lag):
    """Integer-lag alignment of a recorded input/output pair.

    The lag maximizes ``|sum x(n) conj(y(n + lag))|`` over ``[-max_lag, max_lag]``;
    a positive lag means ``y`` trails ``x``. Both sequences are trimmed to the
    overlapping region.
    """
    xs, ys = x.samples, y.samples
    if min(xs.size, ys.size) < 2 * max_lag:
        raise InvalidSpecError("waveforms too short for the requested lag search")
    if not (np.any(xs) and np.any(ys)):
        raise UndefinedPowerError("cannot align a zero-power waveform")
    n = min(xs.size, ys.size)
    xs, ys = xs[:n], ys[:n]
    best, best_val = 0, -1.0
    for lag in range(-max_lag, max_lag + 1):
        if lag >= 0:
            c = np.vdot(xs[: n - lag], ys[lag:])
        else:
            c = np.vdot(xs[-lag:], ys[: n + lag])
        if abs(c) > best_val:
            best, best_val = lag, abs(c)
    if best >= 0:
        xa, ya = xs[: n - best], ys[best:]
    else:
        xa, ya = xs[-best:], ys[: n + best]
    return ReplayPA(x.with_samples(xa), y.with_samples(ya), best)


def run_pa(pa, w):
    """Dispatch to either amplifier kind."""
    if isinstance(pa, ReplayPA):
        return pa.amplify(w)
    return amplify(w, pa)
