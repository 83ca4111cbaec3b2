import hashlib
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from seilab import sigmodel as S
from seilab.pipeline import locate_preamble


complex_arrays = arrays(np.complex128, st.integers(1, 256),
                        elements=st.complex_numbers(max_magnitude=1e3, allow_nan=False, allow_infinity=False))


def test_ideal_preamble_shape_energy_periodicity():
    x = S.generate_ideal_preamble().samples
    assert x.shape == (320,)
    assert abs(np.sum(np.abs(x) ** 2) - 1) <= 1e-12
    assert np.array_equal(x[0:16], x[16:32])
    # long training symbol repeats after its 32-sample guard
    assert np.allclose(x[192:256], x[256:320], atol=1e-15)


@given(complex_arrays, st.integers(0, 2**63))
def test_neutral_profile_is_exact_identity(x, seed):
    y = S.apply_emitter(S.EmitterProfile.neutral(), x, seed)
    assert np.array_equal(y, x)


def test_cfo_is_pure_rotation():
    prof = S.EmitterProfile("c", cfo=1000.0)
    y = S.apply_emitter(prof, np.ones(4096), 0)
    n = np.arange(4096)
    assert np.allclose(y, np.exp(2j * np.pi * n * 5e-5), atol=1e-12)


def test_one_db_gain_imbalance_image_tone():
    # oracle: closed-form image ratio of y = a*I + j*b*Q with a/b = 10^(1/20)
    a = 10 ** (1 / 40)
    b = 1 / a
    expect = 10 * math.log10(((a - b) / (a + b)) ** 2)
    assert expect == pytest.approx(-24.8, abs=0.05)
    n = np.arange(1024)
    tone = np.exp(2j * np.pi * 37 * n / 1024)
    spec = np.abs(np.fft.fft(S.iq_imbalance(tone, 1.0, 0.0))) ** 2
    measured = 10 * math.log10(spec[-37 % 1024] / spec[37])
    assert measured == pytest.approx(expect, abs=1e-9)
    assert S.image_rejection_db(1.0, 0.0) == pytest.approx(expect, abs=1e-12)


def test_channel_infinite_snr_is_identity():
    x = np.exp(1j * np.arange(100))
    assert np.array_equal(S.apply_channel(x, math.inf, 3), x)


def test_channel_noise_power_at_zero_db():
    x = np.ones(200_000, complex)
    y = S.apply_channel(x, 0.0, 11)
    assert np.mean(np.abs(y - x) ** 2) == pytest.approx(1.0, rel=0.02)


def test_channel_snr_estimate_at_30_db():
    rng = np.random.default_rng(0)
    x = np.exp(2j * np.pi * rng.random(100_000))
    assert S.measured_snr_db(x, S.apply_channel(x, 30.0, 5)) == pytest.approx(30.0, abs=0.5)


def test_channel_noise_monotone_in_snr():
    x = np.ones(20_000, complex)
    powers = [np.mean(np.abs(S.apply_channel(x, snr, 9) - x) ** 2) for snr in np.linspace(-5, 40, 10)]
    assert all(a > b for a, b in zip(powers, powers[1:]))


def test_sdr_quantization_sqnr_12_bit():
    n = np.arange(40_000)
    x = 0.5 * np.exp(2j * np.pi * 0.0123 * n)
    prof = S.SdrProfile("q", sample_rate=20e6, adc_bits=12)
    y = S.apply_sdr_receive(prof, x, 0).samples
    sqnr = 10 * math.log10(np.mean(np.abs(x) ** 2) / np.mean(np.abs(y - x) ** 2))
    assert sqnr >= 6.02 * 12 - 10


def test_half_duplex_adds_one_hop():
    assert S.apply_sdr_receive(S.HACKRF, np.ones(64), 0).meta["receive_hops"] == 1
    assert S.apply_sdr_receive(S.B210, np.ones(64), 0).meta["receive_hops"] == 0


def test_20mhz_receive_preserves_passband():
    rng = np.random.default_rng(1)
    x = rng.standard_normal(4096) + 1j * rng.standard_normal(4096)
    prof = S.SdrProfile("p", sample_rate=20e6, adc_bits=None)
    y = S.apply_sdr_receive(prof, x, 0).samples
    assert y.size == x.size
    ratio_db = 20 * np.log10(np.abs(np.fft.fft(y)) / np.abs(np.fft.fft(x)))
    assert np.max(np.abs(ratio_db)) <= 0.1


def test_dataset_size_and_determinism():
    profs = S.default_profiles()
    frames = S.synthesize_dataset(profs, 3, 30.0, 42)
    assert len(frames) == 24
    again = S.synthesize_dataset(profs, 3, 30.0, 42)
    digest = lambda fs: hashlib.sha256(b"".join(f.samples.tobytes() for f in fs)).hexdigest()
    assert digest(frames) == digest(again)
    assert [f.emitter_id for f in frames[:4]] == ["E0", "E0", "E0", "E1"]


def test_eight_by_thousand_dataset_count():
    lay = S.FrameLayout(lead_min=1, lead_max=2, payload_symbols=0, tail=0)
    frames = S.synthesize_dataset(S.default_profiles(), 1000, math.inf, 0, lay)
    assert len(frames) == 8000


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32))
def test_noise_free_offset_recoverable(seed):
    prof = S.default_profiles()[seed % 8]
    fr = S.synthesize_frame(prof, math.inf, seed)
    assert abs(locate_preamble(fr.samples) - fr.meta["preamble_start"]) <= 1


def test_default_profiles_are_separable():
    assert S.min_pairwise_distance(S.default_profiles()) >= 1.0


def test_profile_validation():
    with pytest.raises(ValueError):
        S.EmitterProfile("x", cfo=1e6)
    with pytest.raises(ValueError):
        S.EmitterProfile("x", pa_coeffs=(0.0, 0.0))
    with pytest.raises(ValueError):
        S.SdrProfile("x", sample_rate=10e6)


def test_profile_dict_round_trip():
    for p in S.default_profiles():
        assert S.EmitterProfile.from_dict(p.to_dict()) == p
    assert S.SdrProfile.from_dict(S.HACKRF.to_dict()) == S.HACKRF
