import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from walshdpd import kernels, pa_model

needs_ext = pytest.mark.skipif(kernels.compiled is None, reason="compiled extension not built")


def test_fallback_fwht_matches_sylvester():
    h = np.array([[1.0]])
    while h.shape[0] < 16:
        h = np.block([[h, h], [h, -h]])
    rng = np.random.default_rng(0)
    x = rng.normal(size=(3, 16)) + 1j * rng.normal(size=(3, 16))
    work = x.copy()
    kernels.fallback.fwht_natural(work)
    np.testing.assert_allclose(work, x @ h.T, atol=1e-12)


@needs_ext
@settings(max_examples=30, deadline=None)
@given(st.integers(1, 10), st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_fwht_backends_agree_bitwise(log2n, seed, rows):
    rng = np.random.default_rng(seed)
    n = 2**log2n
    x = rng.normal(size=(rows, n)) + 1j * rng.normal(size=(rows, n))
    a, b = x.copy(), x.copy()
    kernels.compiled.fwht_natural(a)
    kernels.fallback.fwht_natural(b)
    np.testing.assert_array_equal(a, b)


@needs_ext
@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_mempoly_backends_agree(orders, taps, seed):
    rng = np.random.default_rng(seed)
    coeffs = rng.normal(size=(orders, taps)) + 1j * rng.normal(size=(orders, taps))
    x = 0.7 * (rng.normal(size=257) + 1j * rng.normal(size=257))
    np.testing.assert_allclose(
        kernels.compiled.mempoly(x, coeffs), kernels.fallback.mempoly(x, coeffs), rtol=1e-13, atol=1e-13
    )


def test_short_input_shorter_than_memory():
    coeffs = pa_model.default_pa().coeffs
    x = np.array([0.1 + 0.2j, -0.3j])
    y_fb = kernels.fallback.mempoly(x, coeffs)
    assert y_fb.shape == (2,)
    np.testing.assert_allclose(kernels.mempoly(x, coeffs), y_fb, atol=1e-14)


def test_env_forces_pure_python():
    env = dict(os.environ, WALSHDPD_PURE_PYTHON="1")
    out = subprocess.run(
        [sys.executable, "-c", "from walshdpd import kernels; print(kernels.BACKEND)"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "python"


@needs_ext
def test_compiled_backend_active_by_default():
    assert kernels.BACKEND == "compiled"
