"""Synthetic 802.11a emitters: ideal preamble, hardware impairments, AWGN and SDR capture.

Every operation here is a pure function of its inputs and an integer seed.
Baseband synthesis runs at 20 MHz; SDR capture resamples to the radio's rate.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import signal as sps

BASE_RATE = 20e6
PREAMBLE_LEN = 320
STS_LEN = 160
SHORT_PERIOD = 16
LONG_PERIOD = 64
CARRIER_HZ = 5.805e9
MAX_CFO_HZ = 40e-6 * CARRIER_HZ

# IEEE 802.11a training sequences, subcarriers -26..26
_STS_FREQ = math.sqrt(13 / 6) * np.array(
    [0, 0, 1 + 1j, 0, 0, 0, -1 - 1j, 0, 0, 0, 1 + 1j, 0, 0, 0, -1 - 1j, 0, 0, 0,
     -1 - 1j, 0, 0, 0, 1 + 1j, 0, 0, 0, 0, 0, 0, 0, -1 - 1j, 0, 0, 0, -1 - 1j, 0,
     0, 0, 1 + 1j, 0, 0, 0, 1 + 1j, 0, 0, 0, 1 + 1j, 0, 0, 0, 1 + 1j, 0, 0]
)
_LTS_FREQ = np.array(
    [1, 1, -1, -1, 1, 1, -1, 1, -1, 1, 1, 1, 1, 1, 1, -1, -1, 1, 1, -1, 1, -1, 1,
     1, 1, 1, 0, 1, -1, -1, 1, 1, -1, 1, -1, 1, -1, -1, -1, -1, -1, 1, 1, -1, -1,
     1, -1, 1, -1, 1, 1, 1, 1],
    dtype=complex,
)


def _ifft64(values: np.ndarray) -> np.ndarray:
    bins = np.zeros(64, dtype=complex)
    for k, v in zip(range(-26, 27), values):
        bins[k % 64] = v
    return np.fft.ifft(bins)


@dataclass(frozen=True)
class IdealPreamble:
    samples: np.ndarray

    @property
    def sts_region(self) -> slice:
        return slice(0, STS_LEN)

    @property
    def lts_region(self) -> slice:
        return slice(STS_LEN, PREAMBLE_LEN)


_IDEAL_CACHE: np.ndarray | None = None


def generate_ideal_preamble() -> IdealPreamble:
    """Return the 320-sample STS+LTS preamble at 20 MHz, scaled to unit energy."""
    global _IDEAL_CACHE
    if _IDEAL_CACHE is None:
        short = _ifft64(_STS_FREQ)
        long_sym = _ifft64(_LTS_FREQ)
        sts = np.tile(short[:SHORT_PERIOD], STS_LEN // SHORT_PERIOD)
        lts = np.concatenate([long_sym[-32:], long_sym, long_sym])
        x = np.concatenate([sts, lts])
        x = x / np.sqrt(np.sum(np.abs(x) ** 2))
        x.setflags(write=False)
        _IDEAL_CACHE = x
    return IdealPreamble(_IDEAL_CACHE)


def ideal_preamble() -> np.ndarray:
    """Shortcut for the ideal preamble samples (read-only array)."""
    return generate_ideal_preamble().samples


@dataclass(frozen=True)
class EmitterProfile:
    """Hardware impairment parameters of one transmitter.

    ``dc_offset`` is relative to the RMS of the signal it is added to, the
    power amplifier is ``a1*x + a3*x*|x|^2``.
    """

    emitter_id: str
    iq_gain_imbalance: float = 0.0  # dB
    iq_phase_imbalance: float = 0.0  # degrees
    cfo: float = 0.0  # Hz
    dc_offset: complex = 0j
    pa_coeffs: tuple[float, float] = (1.0, 0.0)
    phase_noise_linewidth: float = 0.0  # Hz

    def __post_init__(self):
        values = [self.iq_gain_imbalance, self.iq_phase_imbalance, self.cfo,
                  self.dc_offset.real, self.dc_offset.imag, *self.pa_coeffs,
                  self.phase_noise_linewidth]
        if not all(math.isfinite(v) for v in values):
            raise ValueError(f"non-finite parameter in profile {self.emitter_id!r}")
        a1, _ = self.pa_coeffs
        if a1 <= 0:
            raise ValueError("PA linear gain a1 must be positive")
        if abs(self.cfo) > MAX_CFO_HZ:
            raise ValueError(f"cfo {self.cfo} Hz outside +/-40 ppm of {CARRIER_HZ} Hz")
        if self.phase_noise_linewidth < 0:
            raise ValueError("phase noise linewidth must be >= 0")

    @classmethod
    def neutral(cls, emitter_id: str = "neutral") -> "EmitterProfile":
        return cls(emitter_id)

    def vector(self) -> np.ndarray:
        """Dimensionless parameter vector used for separability checks."""
        a1, a3 = self.pa_coeffs
        return np.array([
            self.iq_gain_imbalance / 0.5,
            self.iq_phase_imbalance / 2.0,
            self.dc_offset.real / 0.05,
            self.dc_offset.imag / 0.05,
            (a1 - 1.0) / 0.05,
            a3 / 0.02,
            self.phase_noise_linewidth / 500.0,
        ])

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["dc_offset"] = [self.dc_offset.real, self.dc_offset.imag]
        d["pa_coeffs"] = list(self.pa_coeffs)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EmitterProfile":
        d = dict(d)
        dc = d.get("dc_offset", 0j)
        if isinstance(dc, (list, tuple)):
            dc = complex(dc[0], dc[1])
        d["dc_offset"] = complex(dc)
        d["pa_coeffs"] = tuple(float(v) for v in d.get("pa_coeffs", (1.0, 0.0)))
        return cls(**d)


@dataclass(frozen=True)
class SdrProfile:
    """Receive/transmit model of an adversary radio.

    ``adc_bits=None`` disables quantization (an ideal converter).  Each extra
    receive hop re-adds noise at ``hop_snr_db`` and re-quantizes.
    """

    name: str
    sample_rate: float = 40e6
    adc_bits: int | None = 12
    duplex: str = "full"
    extra_receive_hops: int = 0
    hop_snr_db: float = 35.0

    def __post_init__(self):
        if self.sample_rate not in (20e6, 40e6):
            raise ValueError(f"unsupported SDR sample rate {self.sample_rate}")
        if self.adc_bits is not None and self.adc_bits < 4:
            raise ValueError("adc_bits must be >= 4")
        if self.duplex not in ("full", "half"):
            raise ValueError(f"duplex must be 'full' or 'half', got {self.duplex!r}")
        if self.extra_receive_hops < 0:
            raise ValueError("extra_receive_hops must be >= 0")

    def with_bits(self, adc_bits: int | None) -> "SdrProfile":
        return dataclasses.replace(self, adc_bits=adc_bits, name=f"{self.name}-{adc_bits}b")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SdrProfile":
        return cls(**d)


B210 = SdrProfile("b210", sample_rate=40e6, adc_bits=12, duplex="full", extra_receive_hops=0)
HACKRF = SdrProfile("hackrf", sample_rate=20e6, adc_bits=8, duplex="half", extra_receive_hops=1)
IDEAL_SDR = SdrProfile("ideal", sample_rate=20e6, adc_bits=None, duplex="full",
                       extra_receive_hops=0, hop_snr_db=math.inf)
SDR_PROFILES = {p.name: p for p in (B210, HACKRF, IDEAL_SDR)}


@dataclass
class IqFrame:
    samples: np.ndarray
    sample_rate: float = BASE_RATE
    emitter_id: str | None = None
    snr_db: float | None = None
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=complex)
        if self.samples.size == 0:
            raise ValueError("IqFrame needs at least one sample")


def _rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(int(seed) & 0xFFFFFFFFFFFFFFFF)


def iq_imbalance(x: np.ndarray, gain_db: float, phase_deg: float) -> np.ndarray:
    """``alpha*I + j*beta*exp(j*phi)*Q`` with ``alpha/beta = 10**(gain_db/20)``."""
    alpha = 10 ** (gain_db / 40)
    beta = 1 / alpha
    phi = math.radians(phase_deg)
    return alpha * x.real + 1j * beta * np.exp(1j * phi) * x.imag


def image_rejection_db(gain_db: float, phase_deg: float) -> float:
    """Image-tone power relative to the wanted tone for :func:`iq_imbalance`."""
    alpha = 10 ** (gain_db / 40)
    beta = 1 / alpha
    e = beta * np.exp(1j * math.radians(phase_deg))
    return 10 * math.log10(abs(alpha - e) ** 2 / abs(alpha + e) ** 2)


def apply_emitter(profile: EmitterProfile, x: Sequence[complex], seed: int,
                  sample_rate: float = BASE_RATE) -> np.ndarray:
    """Pass ``x`` through the transmitter impairment chain of ``profile``.

    Chain: IQ imbalance, carrier offset with Wiener phase noise, DC offset,
    memoryless cubic PA.  Stages whose parameters are neutral are skipped, so
    the neutral profile returns ``x`` bit for bit.
    """
    y = np.array(x, dtype=complex)
    if y.size == 0:
        raise ValueError("apply_emitter needs a nonempty input")
    rng = _rng(seed)
    if profile.iq_gain_imbalance != 0 or profile.iq_phase_imbalance != 0:
        y = iq_imbalance(y, profile.iq_gain_imbalance, profile.iq_phase_imbalance)
    if profile.cfo != 0 or profile.phase_noise_linewidth > 0:
        n = np.arange(y.size)
        phase = 2 * np.pi * profile.cfo * n / sample_rate
        if profile.phase_noise_linewidth > 0:
            step = math.sqrt(2 * np.pi * profile.phase_noise_linewidth / sample_rate)
            walk = np.concatenate([[0.0], np.cumsum(rng.standard_normal(y.size - 1) * step)])
            phase = phase + walk
        y = y * np.exp(1j * phase)
    if profile.dc_offset != 0:
        y = y + profile.dc_offset * np.sqrt(np.mean(np.abs(y) ** 2))
    a1, a3 = profile.pa_coeffs
    if a1 != 1 or a3 != 0:
        peak2 = np.max(np.abs(y) ** 2)
        if abs(a3 * peak2) >= a1:
            raise ValueError("PA nonlinearity folds over at this drive level")
        y = a1 * y + a3 * y * np.abs(y) ** 2
    return y


def apply_channel(x: Sequence[complex], snr_db: float, seed: int,
                  signal_power: float | None = None) -> np.ndarray:
    """Add circular white Gaussian noise at ``snr_db`` per sample.

    ``signal_power`` defaults to the mean power of ``x``; pass the burst power
    when ``x`` contains idle gaps.  ``snr_db=inf`` disables the noise.
    """
    x = np.asarray(x, dtype=complex)
    if math.isnan(snr_db) or snr_db == -math.inf:
        raise ValueError(f"invalid snr_db {snr_db}")
    if snr_db == math.inf:
        return x.copy()
    p = float(np.mean(np.abs(x) ** 2)) if signal_power is None else float(signal_power)
    if p <= 0:
        raise ValueError("apply_channel needs a signal with nonzero energy")
    sigma = math.sqrt(p / 10 ** (snr_db / 10) / 2)
    rng = _rng(seed)
    noise = rng.standard_normal(x.size) + 1j * rng.standard_normal(x.size)
    return x + sigma * noise


def measured_snr_db(clean: np.ndarray, noisy: np.ndarray) -> float:
    noise = noisy - clean
    return 10 * math.log10(np.mean(np.abs(clean) ** 2) / np.mean(np.abs(noise) ** 2))


def quantize(x: np.ndarray, bits: int | None) -> np.ndarray:
    """Uniform mid-rise quantizer per rail over +/-4 sigma of the signal."""
    if bits is None:
        return np.array(x, dtype=complex)
    sigma = math.sqrt(np.mean(np.abs(x) ** 2) / 2)
    if sigma == 0:
        return np.array(x, dtype=complex)
    full = 4 * sigma
    step = 2 * full / 2 ** bits
    top = full - step / 2

    def rail(v):
        return np.clip(step * (np.floor(v / step) + 0.5), -top, top)

    return rail(x.real) + 1j * rail(x.imag)


def resample(x: np.ndarray, from_rate: float, to_rate: float) -> np.ndarray:
    if from_rate == to_rate:
        return np.array(x, dtype=complex)
    ratio = to_rate / from_rate
    if ratio >= 1:
        up, down = int(round(ratio)), 1
    else:
        up, down = 1, int(round(1 / ratio))
    if not math.isclose(up / down, ratio):
        raise ValueError(f"non-integer resampling ratio {from_rate} -> {to_rate}")
    return sps.resample_poly(x, up, down)


def apply_sdr_receive(profile: SdrProfile, x: Sequence[complex], seed: int,
                      *, emitter_id: str | None = None, snr_db: float | None = None) -> IqFrame:
    """Capture a 20 MHz waveform with an SDR: resample, quantize, then extra hops."""
    y = resample(np.asarray(x, dtype=complex), BASE_RATE, profile.sample_rate)
    y = quantize(y, profile.adc_bits)
    rng = _rng(seed)
    hops = 0
    for _ in range(profile.extra_receive_hops):
        if math.isfinite(profile.hop_snr_db):
            y = apply_channel(y, profile.hop_snr_db, int(rng.integers(2**63)))
        y = quantize(y, profile.adc_bits)
        hops += 1
    return IqFrame(y, profile.sample_rate, emitter_id, snr_db, seed,
                   meta={"sdr": profile.name, "receive_hops": hops})


def sdr_transmit(profile: SdrProfile, x: Sequence[complex]) -> np.ndarray:
    """DAC model of an SDR: upsample to the radio rate, quantize, back to 20 MHz."""
    x = np.asarray(x, dtype=complex)
    y = resample(x, BASE_RATE, profile.sample_rate)
    y = quantize(y, profile.adc_bits)
    return resample(y, profile.sample_rate, BASE_RATE)[: x.size]


def ofdm_payload(n_symbols: int, rng: np.random.Generator) -> np.ndarray:
    """Random QPSK on the 52 used subcarriers, 64-point IFFT plus 16-sample CP."""
    used = np.r_[1:27, 38:64]
    out = []
    for _ in range(n_symbols):
        bins = np.zeros(64, dtype=complex)
        bins[used] = (rng.choice([-1, 1], used.size) + 1j * rng.choice([-1, 1], used.size)) / math.sqrt(2)
        sym = np.fft.ifft(bins) * math.sqrt(64 * 64 / used.size)
        out.append(np.concatenate([sym[-16:], sym]))
    return np.concatenate(out) if out else np.zeros(0, complex)


@dataclass(frozen=True)
class FrameLayout:
    lead_min: int = 160
    lead_max: int = 480
    payload_symbols: int = 4
    tail: int = 160


def frame_seed(base_seed: int, frame_index: int) -> int:
    return (int(base_seed) ^ int(frame_index)) & 0xFFFFFFFFFFFFFFFF


def synthesize_frame(profile: EmitterProfile, snr_db: float, seed: int,
                     layout: FrameLayout = FrameLayout(),
                     preamble: np.ndarray | None = None) -> IqFrame:
    """One framed transmission: idle lead-in, impaired burst, idle tail, noise.

    The burst is ``preamble`` (ideal by default) followed by an OFDM payload,
    scaled to unit RMS before the transmitter chain.  ``meta['preamble_start']``
    records where the preamble begins.
    """
    rng = _rng(seed)
    lead = int(rng.integers(layout.lead_min, layout.lead_max))
    pre = ideal_preamble() if preamble is None else np.asarray(preamble, dtype=complex)
    pre = pre / np.sqrt(np.mean(np.abs(pre) ** 2))
    burst = np.concatenate([pre, ofdm_payload(layout.payload_symbols, rng)])
    tx = apply_emitter(profile, burst, int(rng.integers(2**63)))
    power = float(np.mean(np.abs(tx) ** 2))
    record = np.concatenate([np.zeros(lead, complex), tx, np.zeros(layout.tail, complex)])
    record = apply_channel(record, snr_db, int(rng.integers(2**63)), signal_power=power)
    return IqFrame(record, BASE_RATE, profile.emitter_id,
                   None if math.isinf(snr_db) else snr_db, seed,
                   meta={"preamble_start": lead, "burst_length": burst.size})


def synthesize_dataset(profiles: Sequence[EmitterProfile], count_per_emitter: int,
                       snr_db: float, seed: int, layout: FrameLayout = FrameLayout()) -> list[IqFrame]:
    """``count_per_emitter`` labelled frames per profile.

    Frame ``i`` (global index, emitter-major) uses seed ``seed ^ i`` so any
    parallel split reproduces the serial output.
    """
    if not profiles:
        raise ValueError("synthesize_dataset needs at least one profile")
    if count_per_emitter < 1:
        raise ValueError("count_per_emitter must be >= 1")
    frames = []
    for e, prof in enumerate(profiles):
        for k in range(count_per_emitter):
            idx = e * count_per_emitter + k
            frames.append(synthesize_frame(prof, snr_db, frame_seed(seed, idx), layout))
    return frames


# Default emitter families.  Band index permutations spread emitters so no two
# share a band in any parameter.
_TPLINK_BANDS = {
    "iq_gain_imbalance": (0.4, 2.4),
    "iq_phase_imbalance": (1.0, 9.0),
    "dc_mag": (0.03, 0.15),
    "dc_phase": (0.0, 2 * np.pi),
    "pa_a3": (-0.035, -0.005),
    "phase_noise_linewidth": (50.0, 450.0),
}
_PERMS = {
    "iq_gain_imbalance": [0, 5, 2, 7, 4, 1, 6, 3],
    "iq_phase_imbalance": [3, 0, 6, 2, 7, 5, 1, 4],
    "dc_mag": [6, 2, 4, 0, 1, 7, 3, 5],
    "dc_phase": [1, 4, 7, 3, 6, 0, 5, 2],
    "pa_a3": [4, 7, 1, 5, 0, 3, 2, 6],
    "phase_noise_linewidth": [2, 6, 0, 4, 3, 1, 7, 5],
}


def _band_draw(rng, lo, hi, band, n_bands, fill=0.5):
    width = (hi - lo) / n_bands
    start = lo + band * width + width * (1 - fill) / 2
    return float(start + rng.uniform(0, fill * width))


def default_profiles(n: int = 8, seed: int = 2023) -> list[EmitterProfile]:
    """The shipped authorized emitter set: same model, serial-number differences."""
    if n > 8:
        raise ValueError("default band layout supports at most 8 emitters")
    rng = _rng(seed)
    out = []
    for k in range(n):
        p = {name: _band_draw(rng, *_TPLINK_BANDS[name], _PERMS[name][k], 8) for name in _TPLINK_BANDS}
        out.append(EmitterProfile(
            emitter_id=f"E{k}",
            iq_gain_imbalance=p["iq_gain_imbalance"],
            iq_phase_imbalance=p["iq_phase_imbalance"],
            cfo=float(rng.uniform(-0.8, 0.8) * MAX_CFO_HZ),
            dc_offset=p["dc_mag"] * complex(np.exp(1j * p["dc_phase"])),
            pa_coeffs=(1.0, p["pa_a3"]),
            phase_noise_linewidth=p["phase_noise_linewidth"],
        ))
    return out


def sdr_family_profile(emitter_id: str, unit: int, seed: int = 7) -> EmitterProfile:
    """A unit of the adversary's SDR model (Eve is unit 0, the decoy unit 1).

    The family's IQ paths skew the opposite way to the authorized model's
    (negative gain and phase imbalance), with weak LO leakage; units differ
    slightly within the family band.
    """
    rng = _rng(seed * 1000 + unit)
    return EmitterProfile(
        emitter_id=emitter_id,
        iq_gain_imbalance=-float(rng.uniform(1.8, 2.2)),
        iq_phase_imbalance=-float(rng.uniform(7.0, 9.0)),
        cfo=float(rng.uniform(-0.3, 0.3) * MAX_CFO_HZ),
        dc_offset=float(rng.uniform(0.015, 0.025)) * complex(np.exp(1j * rng.uniform(0.6, 0.9))),
        pa_coeffs=(1.0, float(rng.uniform(-0.004, -0.002))),
        phase_noise_linewidth=float(rng.uniform(20, 40)),
    )


def min_pairwise_distance(profiles: Sequence[EmitterProfile]) -> float:
    v = np.array([p.vector() for p in profiles])
    d = np.sqrt(((v[:, None, :] - v[None, :, :]) ** 2).sum(-1))
    return float(d[np.triu_indices(len(profiles), 1)].min())
