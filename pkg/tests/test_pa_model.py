import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from walshdpd import pa_model as P
from walshdpd.errors import FormatError, InvalidSpecError, NumericInputError, UndefinedPowerError
from walshdpd.metrics import aclr, band_power, psd
from walshdpd.signal import IqWaveform, WaveformSpec, generate_multicarrier


def naive_mempoly(x, coeffs):
    """Direct double sum, used as an oracle for the kernels."""
    y = np.zeros_like(x)
    for n in range(x.size):
        for k in range(coeffs.shape[0]):
            for m in range(coeffs.shape[1]):
                if n - m >= 0:
                    v = x[n - m]
                    y[n] += coeffs[k, m] * v * abs(v) ** (2 * k)
    return y


@pytest.fixture(scope="module")
def pa():
    return P.default_pa()


@pytest.fixture(scope="module")
def stimulus():
    return generate_multicarrier(WaveformSpec(seed=11))


def test_default_shape(pa):
    assert (pa.K, pa.M) == (7, 3)
    assert pa.coeffs.shape == (4, 4)
    assert not pa.coeffs.flags.writeable


def test_zero_in_zero_out(pa):
    np.testing.assert_array_equal(P.amplify(np.zeros(16, complex), pa), 0)


def test_memoryless_cubic_hand_value():
    cubic = P.MemoryPolynomialPA(np.array([[1.0], [-0.1]]))
    y = P.amplify(np.ones(4, complex), cubic)
    np.testing.assert_allclose(y, 0.9)


def test_against_naive_oracle(pa):
    rng = np.random.default_rng(4)
    x = 0.4 * (rng.normal(size=300) + 1j * rng.normal(size=300))
    np.testing.assert_allclose(P.amplify(x, pa), naive_mempoly(x, pa.coeffs), rtol=1e-12, atol=1e-12)


def test_small_signal_gain(pa):
    assert pa.smallsig_gain_db == pytest.approx(15.0, abs=1e-9)
    assert P.tone_gain_db(pa, 10 ** (-30 / 20)) == pytest.approx(15.0, abs=0.2)
    assert P.tone_gain_db(pa, 10 ** (-40 / 20)) == pytest.approx(pa.smallsig_gain_db, abs=0.2)


def test_compression_at_unit_drive(pa):
    assert pa.smallsig_gain_db - P.tone_gain_db(pa, 1.0) >= 3.0


def test_am_pm_present(pa):
    shift = P.tone_phase_deg(pa, 1.0) - P.tone_phase_deg(pa, 1e-3)
    assert abs(shift) >= 5.0


def test_small_signal_gain_examples():
    assert 20 * np.log10(abs(P.small_signal_gain(P.MemoryPolynomialPA(np.array([[5.623]]))))) == (
        pytest.approx(15.0, abs=1e-3)
    )
    assert P.small_signal_gain(P.MemoryPolynomialPA(np.array([[1.0, 0.0]]))) == 1.0


def test_compression_point_definition(pa):
    a = P.compression_point(pa)
    assert pa.smallsig_gain_db - P.tone_gain_db(pa, a) == pytest.approx(1.0, abs=1e-6)


def test_nominal_drive_puts_peak_at_p1db(pa, stimulus):
    xd = P.nominal_drive(stimulus, pa)
    assert np.max(np.abs(xd.samples)) == pytest.approx(P.compression_point(pa))
    with pytest.raises(UndefinedPowerError):
        P.nominal_drive(IqWaveform(np.zeros(8)), pa)


def test_baseline_aclr_at_nominal_drive(pa, stimulus):
    y = P.amplify(P.nominal_drive(stimulus, pa), pa)
    assert -35.0 <= aclr(y, 0.1)[2] <= -22.0


def test_spectral_regrowth(pa, stimulus):
    def out_of_band(w):
        f, d = psd(w)
        return d.sum() - band_power(f, d, -0.05, 0.05)

    x = stimulus
    y = P.amplify(x, pa)
    gain2 = abs(P.small_signal_gain(pa)) ** 2
    ratio = (out_of_band(y) / gain2) / out_of_band(x)
    assert 10 * np.log10(ratio) >= 15.0


def test_am_am_compresses(pa, stimulus):
    x = P.nominal_drive(stimulus, pa).samples
    y = P.amplify(x, pa)
    a, b = np.abs(x), np.abs(y)
    order = np.argsort(a)
    dec = a.size // 10
    lo, hi = order[:dec], order[-dec:]
    slope_lo = np.polyfit(a[lo], b[lo], 1)[0]
    slope_hi = np.polyfit(a[hi], b[hi], 1)[0]
    assert slope_hi < slope_lo


@settings(max_examples=15, deadline=None)
@given(st.integers(4, 40), st.integers(0, 10_000))
def test_time_invariance(shift, seed):
    pa = P.default_pa()
    rng = np.random.default_rng(seed)
    x = 0.3 * (rng.normal(size=200) + 1j * rng.normal(size=200))
    y = P.amplify(x, pa)
    shifted = P.amplify(np.concatenate([np.zeros(shift, complex), x]), pa)
    np.testing.assert_allclose(shifted[shift:], y, atol=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.floats(-np.pi, np.pi), st.integers(0, 10_000))
def test_phase_covariance_memoryless(phi, seed):
    memless = P.MemoryPolynomialPA(P.default_pa().coeffs[:, :1])
    rng = np.random.default_rng(seed)
    x = 0.5 * (rng.normal(size=64) + 1j * rng.normal(size=64))
    rot = np.exp(1j * phi)
    np.testing.assert_allclose(P.amplify(rot * x, memless), rot * P.amplify(x, memless), atol=1e-12)


def test_causality(pa):
    x = np.zeros(32, complex)
    x[10] = 0.5
    y = P.amplify(x, pa)
    assert np.all(y[:10] == 0)
    assert np.all(y[14:] == 0)


def test_non_finite_input(pa):
    with pytest.raises(NumericInputError):
        P.amplify(np.array([0.1, np.inf], dtype=complex), pa)


def test_waveform_in_waveform_out(pa, stimulus):
    y = P.amplify(stimulus, pa)
    assert isinstance(y, IqWaveform) and y.sample_rate == stimulus.sample_rate


def test_invalid_models():
    with pytest.raises(InvalidSpecError):
        P.MemoryPolynomialPA(np.array([[0.0, 1.0]]))
    with pytest.raises(InvalidSpecError):
        P.MemoryPolynomialPA(np.array([1.0, 2.0]))


def test_json_round_trip(tmp_path, pa):
    path = tmp_path / "pa.json"
    P.save_pa(pa, path)
    back = P.load_pa(path)
    np.testing.assert_array_equal(back.coeffs, pa.coeffs)
    obj = pa.to_json()
    assert obj["K"] == 7 and obj["M"] == 3 and len(obj["re"]) == 16
    # k-major, m-minor ordering
    assert obj["re"][1] == pa.coeffs[0, 1].real


@pytest.mark.parametrize(
    "obj",
    [
        {"K": 2, "M": 0, "re": [1.0], "im": [0.0]},
        {"K": 3, "M": 0, "re": [1.0], "im": [0.0]},
        {"K": 1, "M": 0, "re": [1.0]},
        {"K": 1, "M": 0, "re": ["a"], "im": [0]},
    ],
)
def test_json_malformed(obj):
    with pytest.raises(FormatError):
        P.MemoryPolynomialPA.from_json(obj)


def test_load_garbage(tmp_path):
    path = tmp_path / "x.json"
    path.write_text("{not json")
    with pytest.raises(FormatError):
        P.load_pa(path)


def _delay(x, d):
    return np.concatenate([np.zeros(d, complex), x[: x.size - d]])


def test_align_known_lags(stimulus):
    x = IqWaveform(stimulus.samples[:4096])
    r = P.align_pair(x, x.with_samples(_delay(x.samples, 7)), 16)
    assert r.lag == 7 and len(r.input_ref) == 4096 - 7
    assert P.align_pair(x, x, 16).lag == 0
    pa = P.default_pa()
    y = P.amplify(_delay(0.3 * x.samples, 3), pa)
    assert P.align_pair(x, x.with_samples(y), 16).lag == 3


def test_align_zero_power():
    z = IqWaveform(np.zeros(64))
    with pytest.raises(UndefinedPowerError):
        P.align_pair(z, z, 4)
    with pytest.raises(InvalidSpecError):
        P.align_pair(z, z, 40)


def test_replay_only_reproduces_recording(stimulus):
    x = IqWaveform(stimulus.samples[:1024])
    y = x.with_samples(2 * x.samples)
    rep = P.align_pair(x, y, 4)
    np.testing.assert_array_equal(P.run_pa(rep, rep.input_ref).samples, 2 * x.samples)
    with pytest.raises(InvalidSpecError):
        rep.amplify(x.with_samples(x.samples * 1.01))
