import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from seilab import features as F
from seilab import pipeline as P
from seilab import sigmodel as S


def sos_response(sos, f, fs):
    # direct evaluation of the cascaded biquads on the unit circle
    z1 = np.exp(-2j * np.pi * np.asarray(f) / fs)
    h = np.ones_like(z1)
    for b0, b1, b2, a0, a1, a2 in sos:
        h *= (b0 + b1 * z1 + b2 * z1 ** 2) / (a0 + a1 * z1 + a2 * z1 ** 2)
    return 20 * np.log10(np.abs(h))


def test_elliptic_filter_response_at_200mhz():
    spec = P.FilterSpec()
    sos = P.design_elliptic_filter(spec, 200e6)
    assert sos_response(sos, [8.865e6], 200e6)[0] >= -0.5 - 1e-9
    assert abs(sos_response(sos, [0.0], 200e6)[0]) <= spec.passband_ripple + 1e-9
    assert sos_response(sos, [3 * 8.865e6], 200e6)[0] <= -20


def test_filter_rejects_bad_cutoff():
    with pytest.raises(ValueError):
        P.design_elliptic_filter(P.FilterSpec(cutoff=11e6), 20e6)


def test_noise_only_record_has_no_frames():
    rng = np.random.default_rng(3)
    rec = S.IqFrame(rng.standard_normal(20_000) + 1j * rng.standard_normal(20_000))
    assert P.detect_frames(rec, 0.5) == []


def _concat(frames):
    starts, x = [], []
    off = 0
    for f in frames:
        starts.append((off + f.meta["preamble_start"], off + f.meta["preamble_start"] + f.meta["burst_length"]))
        x.append(f.samples)
        off += f.samples.size
    return np.concatenate(x), starts


def test_detects_ten_frames_at_30db():
    prof = S.default_profiles()[2]
    frames = [S.synthesize_frame(prof, math.inf, k) for k in range(10)]
    x, truth = _concat(frames)
    x = S.apply_channel(x, 30.0, 99, signal_power=1.0)
    ranges = P.detect_frames(S.IqFrame(x))
    assert len(ranges) == 10
    for (a, b), (s, e) in zip(ranges, truth):
        assert a <= s + 32 and b >= e - 32
        assert a <= s < b


def test_close_frames_both_starts_covered():
    prof = S.default_profiles()[0]
    lay = S.FrameLayout(lead_min=160, lead_max=161, tail=10)
    frames = [S.synthesize_frame(prof, math.inf, k, lay) for k in range(2)]
    x, truth = _concat(frames)
    ranges = P.detect_frames(S.IqFrame(x))
    for s, _ in truth:
        assert any(a <= s < b for a, b in ranges)


def test_known_offset_noise_free():
    x = np.zeros(3000, complex)
    x[1000:1320] = S.ideal_preamble()
    assert abs(P.locate_preamble(x) - 1000) <= 1
    assert np.allclose(P.extract_preamble(x), S.ideal_preamble())


@pytest.mark.parametrize("seed", range(5))
def test_pure_noise_raises(seed):
    rng = np.random.default_rng(seed)
    with pytest.raises(P.NoPreambleFound):
        P.extract_preamble(rng.standard_normal(2000) + 1j * rng.standard_normal(2000))


def test_zero_cfo_noise_free():
    assert abs(P.estimate_cfo(S.ideal_preamble())) <= 1e-6


@pytest.mark.parametrize("cfo", [-200e3, -3e3, 1e3, 150e3, 600e3])
def test_cfo_noise_free_recovery(cfo):
    assert P.estimate_cfo(P.apply_cfo(S.ideal_preamble(), cfo)) == pytest.approx(cfo, abs=1e-3)


def test_cfo_ambiguity_wraps():
    r = P.cfo_range()
    assert r == pytest.approx(20e6 / 32)
    est = P.estimate_cfo(P.apply_cfo(S.ideal_preamble(), r + 5e3), refine=False)
    assert est == pytest.approx(r + 5e3 - 2 * r, abs=1.0)
    # every carrier the emitter model allows sits inside the range
    assert S.MAX_CFO_HZ < r


def test_cfo_correction_fixed_point_noise_free():
    y = P.apply_cfo(S.ideal_preamble(), 12_345.0)
    est = P.estimate_cfo(y)
    assert abs(P.estimate_cfo(P.apply_cfo(y, -est))) <= 1e-6


def test_cfo_correction_fixed_point_at_30db():
    for t in range(100):
        y = S.apply_channel(P.apply_cfo(S.ideal_preamble(), 1e3), 30.0, t)
        assert abs(P.estimate_cfo(P.apply_cfo(y, -P.estimate_cfo(y)))) <= 50


def test_downsample_lengths():
    assert P.downsample(np.ones(3200), 200e6).size == 320
    x = np.exp(1j * np.arange(50))
    assert np.array_equal(P.downsample(x, 20e6), x)
    with pytest.raises(ValueError):
        P.downsample(x, 30e6)


def test_downsample_keeps_inband_tone_amplitude():
    n = np.arange(64_000)
    x = np.exp(2j * np.pi * 1.25e6 * n / 200e6)
    y = P.downsample(x, 200e6)
    mid = np.abs(y[500:-500])
    assert np.max(np.abs(20 * np.log10(mid))) <= 0.1


nonzero = arrays(np.complex128, st.integers(1, 200),
                 elements=st.complex_numbers(min_magnitude=1e-3, max_magnitude=1e3,
                                             allow_nan=False, allow_infinity=False))
scales = st.complex_numbers(min_magnitude=1e-3, max_magnitude=1e3, allow_nan=False, allow_infinity=False)


@given(nonzero, scales)
def test_energy_normalize_scale_invariant(x, c):
    y = P.energy_normalize(x)
    assert abs(np.sum(np.abs(y) ** 2) - 1) <= 1e-12
    # a complex scale leaves only its phase behind
    assert np.allclose(P.energy_normalize(c * x), y * c / abs(c), atol=1e-12)
    if abs(c) > 0:
        assert np.allclose(P.energy_normalize(abs(c) * x), y, atol=1e-12)


def test_energy_normalize_unit_input_unchanged():
    x = S.ideal_preamble()
    assert np.allclose(P.energy_normalize(x), x, atol=1e-15)
    with pytest.raises(ValueError):
        P.energy_normalize(np.zeros(4))


def test_residual_of_ideal_is_zero():
    r = P.make_residual(P.Preamble(S.ideal_preamble() * np.exp(0.7j)))
    assert np.sum(np.abs(r.samples) ** 2) <= 1e-20


def test_residual_recovers_orthogonal_distortion():
    rng = np.random.default_rng(4)
    ideal = S.ideal_preamble()
    d = 0.05 * (rng.standard_normal(320) + 1j * rng.standard_normal(320))
    d -= np.vdot(ideal, d) * ideal
    r = P.make_residual(P.Preamble(ideal + d))
    assert np.allclose(r.samples, d, atol=1e-12)


def test_residual_energy_grows_with_noise():
    ideal = S.ideal_preamble()

    def energy(snr):
        return np.mean([np.sum(np.abs(P.make_residual(P.Preamble(P.energy_normalize(
            S.apply_channel(ideal, snr, k)))).samples) ** 2) for k in range(100)])

    assert energy(9.0) > energy(30.0)


def test_pipeline_recovers_nearly_all_frames():
    frames = S.synthesize_dataset(S.default_profiles(), 125, 30.0, 5)
    pre = P.run_pipeline_many(frames)
    assert len(pre) >= 995
    assert all(p.stages == P.ALL_STAGES for p in pre)
    assert all(p.normalized for p in pre)


def test_pipeline_empty_record():
    assert P.run_pipeline(S.IqFrame(np.zeros(1, complex))) == []
    assert P.run_pipeline(S.IqFrame(np.zeros(5000, complex))) == []


def test_pipeline_oversampled_record():
    prof = S.default_profiles()[1]
    fr = S.synthesize_frame(prof, 30.0, 8)
    rec = S.apply_sdr_receive(S.B210, fr.samples, 1)
    pre = P.run_pipeline(rec)
    assert len(pre) == 1
    assert abs(np.sum(np.abs(pre[0].samples) ** 2) - 1) <= 1e-12


@settings(max_examples=15, deadline=None)
@given(scales.filter(lambda c: abs(c) > 1e-2), st.integers(0, 1000))
def test_pipeline_scale_invariance(c, seed):
    fr = S.synthesize_frame(S.default_profiles()[seed % 8], 30.0, seed)
    a = P.run_pipeline(fr)
    b = P.run_pipeline(S.IqFrame(c * fr.samples, fr.sample_rate, fr.emitter_id, fr.snr_db, fr.seed))
    assert len(a) == len(b) == 1
    phase = c / abs(c)
    assert np.allclose(b[0].samples, phase * a[0].samples, atol=1e-9)
    assert np.allclose(F.gabor_fingerprint(a[0]), F.gabor_fingerprint(b[0]), atol=1e-9)


def test_preamble_validates_length_and_energy():
    with pytest.raises(ValueError):
        P.Preamble(np.ones(10))
    with pytest.raises(ValueError):
        P.Preamble(np.ones(320), normalized=True)
