"""Sequency-ordered Walsh-Hadamard analysis and synthesis of complex blocks.

Indexing is 0-based: row 0 of a basis is the constant function and row ``i``
has exactly ``i`` sign changes. Two normalizations are supported:

``orthonormal``
    ``1/sqrt(N)`` in both directions (default; Parseval holds).
``analysis``
    Unscaled forward sum ``X(i) = sum_n x(n) W_i(n)``, ``1/N`` on the inverse.
"""

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import kernels
from .errors import DimensionError, InsufficientDataError, InvalidOrderError, InvalidSpecError

ORTHONORMAL = "orthonormal"
ANALYSIS = "analysis"
NORMALIZATIONS = (ORTHONORMAL, ANALYSIS)
MAX_ORDER = 4096


def _check_order(order):
    if (
        not isinstance(order, (int, np.integer))
        or order < 2
        or order > MAX_ORDER
        or order & (order - 1)
    ):
        raise InvalidOrderError(
            f"Walsh order must be a power of two in [2, {MAX_ORDER}], got {order!r}"
        )
    return int(order)


def _check_norm(normalization):
    if normalization not in NORMALIZATIONS:
        raise InvalidSpecError(f"unknown normalization {normalization!r}")


def _bit_reverse(values, bits):
    out = np.zeros_like(values)
    for b in range(bits):
        out |= ((values >> b) & 1) << (bits - 1 - b)
    return out


@lru_cache(maxsize=None)
def sequency_permutation(order):
    """Natural-order Hadamard row index for each sequency index.

    Sequency ``i`` lives in natural row ``bitrev(gray(i))``.
    """
    order = _check_order(order)
    bits = order.bit_length() - 1
    idx = np.arange(order, dtype=np.int64)
    perm = _bit_reverse(idx ^ (idx >> 1), bits)
    perm.setflags(write=False)
    return perm


def sign_changes(row):
    row = np.asarray(row)
    return int(np.count_nonzero(row[1:] != row[:-1]))


@dataclass(frozen=True)
class WalshBasis:
    order: int
    rows: np.ndarray = field(repr=False)
    normalization: str = ORTHONORMAL

    @property
    def forward_scale(self):
        return 1.0 / np.sqrt(self.order) if self.normalization == ORTHONORMAL else 1.0

    @property
    def inverse_scale(self):
        if self.normalization == ORTHONORMAL:
            return 1.0 / np.sqrt(self.order)
        return 1.0 / self.order


def sequency_basis(order, normalization=ORTHONORMAL):
    """Build the ``order x order`` matrix of +/-1 Walsh rows in sequency order."""
    order = _check_order(order)
    _check_norm(normalization)
    bits = order.bit_length() - 1
    n = np.arange(order)
    # natural-order Hadamard entry: (-1)^popcount(r & n)
    r = sequency_permutation(order)[:, None]
    anded = r & n[None, :]
    parity = np.zeros_like(anded)
    for b in range(bits):
        parity ^= (anded >> b) & 1
    rows = (1 - 2 * parity).astype(np.int8)
    for i in range(order):
        if sign_changes(rows[i]) != i:  # self-check of the construction
            raise AssertionError(f"sequency construction failed at row {i}")
    rows.setflags(write=False)
    return WalshBasis(order, rows, normalization)


def _as_blocks(x, order):
    x = np.asarray(x, dtype=np.complex128)
    if x.shape[-1] != order:
        raise DimensionError(f"block length {x.shape[-1]} does not match order {order}")
    return x


def forward(block, basis):
    """Sequency spectrum of one block (or a stack of blocks) by dense product."""
    x = _as_blocks(block, basis.order)
    return basis.forward_scale * (x @ basis.rows.T.astype(np.float64))


def inverse(coeffs, basis):
    """Time-domain block(s) from sequency coefficients by dense product."""
    X = _as_blocks(coeffs, basis.order)
    return basis.inverse_scale * (X @ basis.rows.astype(np.float64))


def fast_forward(block, order, normalization=ORTHONORMAL):
    """Butterfly transform; accepts a single block or a ``(rows, order)`` stack."""
    order = _check_order(order)
    _check_norm(normalization)
    x = _as_blocks(block, order)
    work = np.ascontiguousarray(x.reshape(-1, order)).copy()
    kernels.fwht_natural(work)
    out = work[:, sequency_permutation(order)]
    if normalization == ORTHONORMAL:
        out *= 1.0 / np.sqrt(order)
    return out.reshape(x.shape)


def fast_inverse(coeffs, order, normalization=ORTHONORMAL):
    order = _check_order(order)
    _check_norm(normalization)
    X = _as_blocks(coeffs, order)
    flat = X.reshape(-1, order)
    work = np.empty(flat.shape, dtype=np.complex128)
    work[:, sequency_permutation(order)] = flat
    kernels.fwht_natural(work)
    work *= 1.0 / np.sqrt(order) if normalization == ORTHONORMAL else 1.0 / order
    return work.reshape(X.shape)


def blockize(samples, order):
    """Split samples into non-overlapping blocks aligned to the start.

    Returns ``(blocks, dropped)`` where ``blocks`` has shape
    ``(len // order, order)`` and ``dropped`` is the trailing remainder count.
    """
    order = _check_order(order)
    x = np.asarray(getattr(samples, "samples", samples), dtype=np.complex128)
    n_blocks = x.size // order
    if n_blocks == 0:
        raise InsufficientDataError(
            f"waveform of {x.size} samples is shorter than one block of {order}"
        )
    used = n_blocks * order
    return x[:used].reshape(n_blocks, order), x.size - used


def deblockize(blocks):
    return np.asarray(blocks).reshape(-1)


def pack_real(coeffs):
    """``[Re X(0..N-1), Im X(0..N-1)]`` along the last axis."""
    X = np.asarray(coeffs, dtype=np.complex128)
    return np.concatenate([X.real, X.imag], axis=-1)


def unpack_real(values):
    v = np.asarray(values, dtype=np.float64)
    if v.shape[-1] % 2:
        raise DimensionError(f"packed length {v.shape[-1]} is odd")
    half = v.shape[-1] // 2
    out = np.empty(v.shape[:-1] + (half,), dtype=np.complex128)
    out.real = v[..., :half]
    out.imag = v[..., half:]
    return out
