"""Complex baseband waveforms: generation, measurement and file persistence."""

import csv
import enum
import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, InvalidSpecError, LengthError, UndefinedPowerError

MAGIC = b"WDPD"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHQd")
ROLLOFF = 0.1


class Constellation(str, enum.Enum):
    QPSK = "QPSK"
    QAM16 = "QAM16"


@dataclass(frozen=True, eq=False)
class IqWaveform:
    """Uniformly sampled complex baseband sequence.

    ``sample_rate`` is in units of the symbol rate (i.e. the oversampling
    factor), so a 10x oversampled signal has ``sample_rate == 10``.
    """

    samples: np.ndarray
    sample_rate: float = 1.0

    def __post_init__(self):
        s = np.ascontiguousarray(self.samples, dtype=np.complex128)
        if s.ndim != 1 or s.size == 0:
            raise InvalidSpecError("waveform must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(s)):
            raise InvalidSpecError("waveform contains non-finite samples")
        if not (self.sample_rate > 0 and np.isfinite(self.sample_rate)):
            raise InvalidSpecError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "sample_rate", float(self.sample_rate))

    def __len__(self):
        return self.samples.size

    def with_samples(self, samples):
        return IqWaveform(samples, self.sample_rate)

    @property
    def power(self):
        return float(np.mean(self.samples.real**2 + self.samples.imag**2))


@dataclass(frozen=True)
class WaveformSpec:
    n_carriers: int = 256
    occupied_fraction: float = 0.1
    n_samples: int = 2**16
    seed: int = 0
    constellation: Constellation = Constellation.QAM16

    def validate(self):
        if self.n_carriers < 1:
            raise InvalidSpecError("n_carriers must be positive")
        if not 0 < self.occupied_fraction <= 1:
            raise InvalidSpecError("occupied_fraction must lie in (0, 1]")
        if self.n_samples < 1 or self.n_samples < 16 * self.n_carriers:
            raise InvalidSpecError("n_samples must be at least 16 x n_carriers")
        if not 0 <= self.seed < 2**64:
            raise InvalidSpecError("seed must be a 64-bit unsigned integer")
        Constellation(self.constellation)

    @property
    def fft_size(self):
        """Samples per multicarrier symbol (carrier spacing = 1 / fft_size)."""
        return max(self.n_carriers, int(round(self.n_carriers / self.occupied_fraction)))


def _constellation_points(kind, size, rng):
    kind = Constellation(kind)
    if kind is Constellation.QPSK:
        bits = rng.integers(0, 2, size=(2, size))
        return ((2 * bits[0] - 1) + 1j * (2 * bits[1] - 1)) / np.sqrt(2)
    levels = np.array([-3.0, -1.0, 1.0, 3.0])
    idx = rng.integers(0, 4, size=(2, size))
    return (levels[idx[0]] + 1j * levels[idx[1]]) / np.sqrt(10)


def generate_multicarrier(spec):
    """Unit-power multicarrier stimulus centred at DC.

    Consecutive symbols of ``fft_size`` samples carry fresh constellation points
    on ``n_carriers`` contiguous bins (zero-padded inverse DFT), shifted by half
    a carrier spacing so the grid is symmetric about DC. The concatenated signal
    is then shaped by a raised-cosine spectral mask that is flat over the inner
    90 % of the occupied band and reaches zero at its edges, so nothing outside
    ``occupied_fraction`` of the sampling band survives. A single carrier is a
    pure complex exponential.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    sample_rate = 1.0 / spec.occupied_fraction
    if spec.n_carriers == 1:
        point = _constellation_points(spec.constellation, 1, rng)[0]
        x = np.full(spec.n_samples, point / abs(point), dtype=np.complex128)
        return IqWaveform(x, sample_rate)

    n_fft = spec.fft_size
    n_symbols = -(-spec.n_samples // n_fft)
    bins = np.arange(spec.n_carriers) - spec.n_carriers // 2
    grid = np.zeros((n_symbols, n_fft), dtype=np.complex128)
    grid[:, bins % n_fft] = _constellation_points(
        spec.constellation, n_symbols * spec.n_carriers, rng
    ).reshape(n_symbols, spec.n_carriers)
    x = np.fft.ifft(grid, axis=1).reshape(-1)[: spec.n_samples]
    if spec.n_carriers % 2 == 0:
        x = x * np.exp(1j * np.pi * np.arange(x.size) / n_fft)

    spectrum = np.fft.fft(x) * spectral_mask(x.size, spec.occupied_fraction)
    return normalize_power(IqWaveform(np.fft.ifft(spectrum), sample_rate), 1.0)


def spectral_mask(n, occupied_fraction, rolloff=ROLLOFF):
    """Raised-cosine band mask on the ``fftfreq(n)`` grid."""
    f = np.abs(np.fft.fftfreq(n))
    edge = occupied_fraction / 2
    knee = edge * (1 - rolloff)
    mask = np.zeros(n)
    mask[f <= knee] = 1.0
    taper = (f > knee) & (f < edge)
    mask[taper] = 0.5 * (1 + np.cos(np.pi * (f[taper] - knee) / (edge - knee)))
    return mask


def _samples(w):
    return w.samples if isinstance(w, IqWaveform) else np.asarray(w, dtype=np.complex128)


def papr(w):
    """Peak-to-average power ratio in dB."""
    s = _samples(w)
    p = s.real**2 + s.imag**2
    mean = p.mean()
    if not mean > 0:
        raise UndefinedPowerError("PAPR undefined for an all-zero waveform")
    return float(max(10 * np.log10(p.max() / mean), 0.0))


def normalize_power(w, target_power=1.0):
    s = w.samples
    power = np.mean(s.real**2 + s.imag**2)
    if not power > 0:
        raise UndefinedPowerError("cannot normalize a zero-power waveform")
    return w.with_samples(s * np.sqrt(target_power / power))


def save_waveform(w, path):
    s = w.samples
    iq = np.empty(2 * s.size, dtype="<f8")
    iq[0::2] = s.real
    iq[1::2] = s.imag
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, s.size, w.sample_rate))
        fh.write(iq.tobytes())


def load_waveform(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: file too short for a waveform header")
    magic, version, count, sample_rate = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    payload = raw[_HEADER.size :]
    if len(payload) != 16 * count:
        raise LengthError(
            f"{path}: header declares {count} samples, payload holds {len(payload) / 16:g}"
        )
    iq = np.frombuffer(payload, dtype="<f8")
    s = np.empty(count, dtype=np.complex128)
    s.real = iq[0::2]
    s.imag = iq[1::2]
    return IqWaveform(s, sample_rate)


def save_csv(w, path):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["i", "q"])
        for v in w.samples:
            out.writerow([repr(float(v.real)), repr(float(v.imag))])


def load_csv(path, sample_rate=1.0):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip().lower() for c in rows[0]] != ["i", "q"]:
        raise FormatError(f"{path}: expected header row 'i,q'")
    try:
        values = [complex(float(r[0]), float(r[1])) for r in rows[1:] if r]
    except (ValueError, IndexError) as exc:
        raise FormatError(f"{path}: malformed row ({exc})") from None
    return IqWaveform(np.array(values, dtype=np.complex128), sample_rate)


def load_any(path, sample_rate=1.0):
    """Load a binary waveform file, or CSV when the name ends in ``.csv``."""
    if str(path).lower().endswith(".csv"):
        return load_csv(path, sample_rate)
    return load_waveform(path)
