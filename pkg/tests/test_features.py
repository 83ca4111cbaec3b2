import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from seilab import features as F
from seilab.pipeline import Preamble
from seilab.sigmodel import ideal_preamble


def rand_preamble(rng):
    x = rng.standard_normal(320) + 1j * rng.standard_normal(320)
    return x / np.linalg.norm(x)


def naive_moments(values):
    # two-pass population moments, scalar loops
    v = [float(t) for t in values]
    n = len(v)
    mu = math.fsum(v) / n
    m2 = math.fsum((t - mu) ** 2 for t in v) / n
    m3 = math.fsum((t - mu) ** 3 for t in v) / n
    m4 = math.fsum((t - mu) ** 4 for t in v) / n
    if m2 <= 1e-24:
        return (0.0, 0.0, 0.0)
    return (m2, m3 / m2 ** 1.5, m4 / m2 ** 2 - 3.0)


def naive_dgt(x, sigma=16.0):
    L = x.size
    k = np.arange(L)
    d = np.minimum(k, L - k)
    g = np.exp(-0.5 * (d / sigma) ** 2)
    g /= np.linalg.norm(g)
    E = np.exp(-2j * np.pi * np.outer(k, k) / L)
    return np.stack([E @ (x * np.roll(g, n)) for n in range(L)], axis=1)


def test_dgt_matches_direct_sum():
    x = rand_preamble(np.random.default_rng(0))
    assert np.allclose(F.dgt(x), naive_dgt(x), atol=1e-12)


def test_dgt_impulse_concentrates_in_time():
    x = np.zeros(320, complex)
    x[100] = 1
    # time resolution is set by the window, so use a narrow one
    energy = np.sum(np.abs(F.dgt(x, F.GaussianWindow(sigma=2.0))) ** 2, axis=0)
    assert energy[97:104].sum() >= 0.9 * energy.sum()


def test_dgt_tone_concentrates_in_frequency():
    x = np.exp(2j * np.pi * 40 * np.arange(320) / 320)
    energy = np.sum(np.abs(F.dgt(x)) ** 2, axis=1)
    assert int(np.argmax(energy)) == 40
    assert energy[36:45].sum() >= 0.9 * energy.sum()


def test_dgt_round_trip():
    rng = np.random.default_rng(1)
    for _ in range(20):
        x = rand_preamble(rng)
        assert np.linalg.norm(F.idgt(F.dgt(x)) - x) / np.linalg.norm(x) <= 1e-6


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32), st.complex_numbers(min_magnitude=1e-3, max_magnitude=1e3,
                                                 allow_nan=False, allow_infinity=False))
def test_surface_normalized_and_scale_invariant(seed, c):
    x = rand_preamble(np.random.default_rng(seed))
    s = F.gabor_surface(x).values
    assert s.max() == 1.0
    assert s.min() >= 0
    assert np.allclose(F.gabor_surface(c * x).values, s, atol=1e-12)
    assert np.allclose(F.gabor_fingerprint(c * x), F.gabor_fingerprint(x), atol=1e-9, rtol=1e-9)
    assert np.array_equal(F.gabor_image(F.gabor_surface(c * x)).pixels.shape, (320, 320, 3))


def test_zero_signal_surface_rejected():
    with pytest.raises(ValueError):
        F.gabor_surface(np.zeros(320))


def test_fingerprint_length():
    fp = F.fingerprint(F.gabor_surface(ideal_preamble()))
    assert len(fp) == 771 == 3 * (256 + 1)
    g = F.PatchGrid(8, 8)
    assert F.fingerprint(F.gabor_surface(ideal_preamble()), g).stats.size == 3 * (64 + 1)


def test_fingerprint_determinism():
    x = rand_preamble(np.random.default_rng(5))
    assert np.array_equal(F.gabor_fingerprint(x), F.gabor_fingerprint(x.copy()))


def test_constant_patch_convention():
    assert np.array_equal(F.patch_moments(np.full((1, 400), 0.3)), [[0.0, 0.0, 0.0]])


def test_ramp_patch_matches_oracle():
    ramp = np.arange(1, 401, dtype=float).reshape(1, 400) / 400
    assert np.allclose(F.patch_moments(ramp)[0], naive_moments(ramp[0]), rtol=0, atol=1e-12)


@given(arrays(np.float64, (3, 400), elements=st.floats(0, 1)))
def test_patch_moments_property(patches):
    got = F.patch_moments(patches)
    for row, g in zip(patches, got):
        want = naive_moments(row)
        if want[0] > 1e-20:
            assert np.allclose(g, want, rtol=1e-9, atol=1e-12)
        else:
            assert g[0] <= 1e-20


def test_split_patches_layout():
    v = np.arange(320 * 320, dtype=float).reshape(320, 320)
    p = F.split_patches(v, F.PatchGrid())
    assert p.shape == (256, 400)
    assert np.array_equal(p[1], v[0:20, 20:40].reshape(-1))
    assert np.array_equal(p[16], v[20:40, 0:20].reshape(-1))
    with pytest.raises(ValueError):
        F.split_patches(v, F.PatchGrid(7, 7))


def test_time_tensor_examples():
    x = ideal_preamble()
    assert np.allclose(F.time_tensor(x).rows[2], np.abs(x), rtol=0, atol=1e-15)
    one = np.zeros(320, complex)
    one[0] = 1
    assert np.array_equal(F.time_tensor(one).rows[:, 0], [1, 0, 1, 0])


@given(arrays(np.complex128, 320, elements=st.complex_numbers(max_magnitude=10, allow_nan=False,
                                                              allow_infinity=False)))
def test_time_tensor_polar_round_trip(x):
    lam, theta = F.time_tensor(x).rows[2:]
    assert np.allclose(lam * np.cos(theta), x.real, atol=1e-12)
    assert np.allclose(lam * np.sin(theta), x.imag, atol=1e-12)


def test_freq_tensor_examples():
    d = np.zeros(320, complex)
    d[0] = 1
    rows = F.freq_tensor(d).rows
    assert np.allclose(rows[0], 1) and np.allclose(rows[1], 0)
    tone = np.exp(2j * np.pi * 5 * np.arange(320) / 320)
    assert int(np.argmax(F.freq_tensor(tone).rows[2])) == 5


def test_freq_tensor_parseval():
    x = rand_preamble(np.random.default_rng(8))
    lam_t = F.time_tensor(x).rows[2]
    lam_f = F.freq_tensor(x).rows[2]
    assert np.sum(lam_t ** 2) == pytest.approx(np.sum(lam_f ** 2) / 320, rel=1e-12)


def test_unit_scale_round_trip():
    x = rand_preamble(np.random.default_rng(2))
    rows = F.time_tensor(x).rows
    assert np.allclose(F.unit_unscale(F.unit_scale(rows)), rows, atol=1e-12)
    flat = F.tensor_batch([Preamble(x, normalized=True)])
    assert flat.shape == (1, 1280)
    assert np.allclose(F.samples_from_batch(flat)[0], x, atol=1e-6)


def test_gabor_image_endpoints():
    table = F.colormap_table()
    assert table.shape == (256, 3)
    img = F.gabor_image(F.GaborSurface(np.array([[0.0, 1.0]]))).pixels
    assert np.array_equal(img[0, 0], table[0])
    assert np.array_equal(img[0, 1], table[-1])


def test_gabor_image_luminance_monotone():
    ramp = F.GaborSurface(np.linspace(0, 1, 256)[None, :])
    lum = F.luminance(F.gabor_image(ramp).pixels[0])
    assert np.all(np.diff(lum) >= 0)


def test_feature_file_round_trip(tmp_path):
    a = np.random.default_rng(0).random((3, 771))
    F.save_features(tmp_path / "f.bin", a, kind="mda_gabor")
    b, meta = F.load_features(tmp_path / "f.bin")
    assert np.array_equal(b, a.astype(np.float32))
    assert meta["kind"] == "mda_gabor" and meta["shape"] == [3, 771]
