"""SEI feature representations of a 320-sample preamble.

* Gabor RF-DNA fingerprint: patch statistics of the normalized |DGT|^2 surface.
* Time tensor: rows (i, q, magnitude, phase) of the samples.
* Frequency tensor: the same four rows of the DFT coefficients.
* Gabor image: the surface pushed through a fixed 256-entry colormap.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ._colormap import VIRIDIS

N_S = 320


@dataclass(frozen=True)
class GaussianWindow:
    sigma: float = 16.0
    length: int = N_S

    def samples(self) -> np.ndarray:
        if not (math.isfinite(self.sigma) and self.sigma > 0) or self.length < 2:
            raise ValueError(f"degenerate Gaussian window {self}")
        k = np.arange(self.length)
        d = np.minimum(k, self.length - k)
        g = np.exp(-0.5 * (d / self.sigma) ** 2)
        return g / np.linalg.norm(g)


_DEFAULT_WINDOW = GaussianWindow()
_SHIFT_CACHE: dict = {}


def _shifted_windows(window: GaussianWindow) -> np.ndarray:
    """Row n holds the window circularly centred on sample n."""
    if window not in _SHIFT_CACHE:
        g = window.samples()
        L = window.length
        idx = (np.arange(L)[None, :] - np.arange(L)[:, None]) % L
        _SHIFT_CACHE[window] = g[idx]
    return _SHIFT_CACHE[window]


def _samples_of(p) -> np.ndarray:
    return np.asarray(getattr(p, "samples", p), dtype=complex)


def dgt(p, window: GaussianWindow = _DEFAULT_WINDOW) -> np.ndarray:
    """Gabor coefficients on a full lattice: time hop 1, ``length`` frequency bins.

    Returns a ``[frequency, time]`` complex matrix
    ``c[m, n] = sum_k x[k] g[k - n] exp(-2j*pi*m*k/M)``.
    """
    x = _samples_of(p)
    G = _shifted_windows(window)
    if x.size != G.shape[0]:
        raise ValueError(f"expected {G.shape[0]} samples, got {x.size}")
    return np.fft.fft(x[None, :] * G, axis=1).T


def dual_window(window: GaussianWindow = _DEFAULT_WINDOW) -> np.ndarray:
    """Canonical dual of the hop-1 Gabor frame (diagonal frame operator)."""
    G = _shifted_windows(window)
    M = window.length
    frame_diag = M * np.sum(np.abs(G) ** 2, axis=0)
    return G / frame_diag[None, :]


def idgt(coeffs: np.ndarray, window: GaussianWindow = _DEFAULT_WINDOW) -> np.ndarray:
    """Synthesis with the canonical dual window; inverts :func:`dgt`."""
    M = window.length
    per_time = np.fft.ifft(coeffs, axis=0).T * M  # [time n, sample k]
    return np.sum(dual_window(window) * per_time, axis=0)


@dataclass
class GaborSurface:
    values: np.ndarray  # [frequency, time], in [0, 1]

    @property
    def time_axis(self) -> np.ndarray:
        return np.arange(self.values.shape[1])

    @property
    def freq_axis(self) -> np.ndarray:
        return np.arange(self.values.shape[0])


def gabor_surface(p, window: GaussianWindow = _DEFAULT_WINDOW) -> GaborSurface:
    s = np.abs(dgt(p, window)) ** 2
    peak = s.max()
    if not peak > 0:
        raise ValueError("Gabor surface of a zero signal")
    return GaborSurface(s / peak)


@dataclass(frozen=True)
class PatchGrid:
    rows: int = 16
    cols: int = 16
    min_elements: int = 15

    @property
    def n_patches(self) -> int:
        return self.rows * self.cols


@dataclass
class Fingerprint:
    stats: np.ndarray
    n_patches: int

    def __len__(self):
        return self.stats.size


def patch_moments(patches: np.ndarray) -> np.ndarray:
    """Population variance, skewness and excess kurtosis of each row.

    Rows with (numerically) zero variance get (0, 0, 0).
    """
    x = np.asarray(patches, dtype=float)
    mu = x.mean(axis=1, keepdims=True)
    d = x - mu
    d2 = d * d
    m2 = np.mean(d2, axis=1)
    m3 = np.mean(d2 * d, axis=1)
    m4 = np.mean(d2 * d2, axis=1)
    flat = m2 <= 1e-24 * np.maximum(1.0, mu[:, 0] ** 2)
    safe = np.where(flat, 1.0, m2)
    skew = np.where(flat, 0.0, m3 / safe ** 1.5)
    kurt = np.where(flat, 0.0, m4 / safe ** 2 - 3.0)
    return np.stack([np.where(flat, 0.0, m2), skew, kurt], axis=1)


def split_patches(values: np.ndarray, grid: PatchGrid) -> np.ndarray:
    H, W = values.shape
    if H % grid.rows or W % grid.cols:
        raise ValueError(f"{grid.rows}x{grid.cols} grid does not tile a {H}x{W} surface")
    ph, pw = H // grid.rows, W // grid.cols
    if ph * pw < grid.min_elements:
        raise ValueError(f"patches of {ph * pw} elements are below the {grid.min_elements}-element floor")
    return values.reshape(grid.rows, ph, grid.cols, pw).transpose(0, 2, 1, 3).reshape(grid.n_patches, ph * pw)


def fingerprint(surface: GaborSurface, grid: PatchGrid = PatchGrid()) -> Fingerprint:
    """(variance, skewness, kurtosis) per patch in row-major order, whole surface last."""
    v = surface.values
    patches = split_patches(v, grid)
    stats = np.concatenate([patch_moments(patches), patch_moments(v.reshape(1, -1))])
    return Fingerprint(stats.reshape(-1), grid.n_patches)


def gabor_fingerprint(p, grid: PatchGrid = PatchGrid(), window: GaussianWindow = _DEFAULT_WINDOW) -> np.ndarray:
    return fingerprint(gabor_surface(p, window), grid).stats


@dataclass
class TimeTensor:
    rows: np.ndarray  # [4, N_s]: i, q, magnitude, phase


@dataclass
class FreqTensor:
    rows: np.ndarray  # [4, N_s]: I, Q, magnitude, phase of the DFT


def _polar_rows(z: np.ndarray) -> np.ndarray:
    theta = np.arctan2(z.imag, z.real)
    theta[theta == -np.pi] = np.pi
    return np.stack([z.real, z.imag, np.hypot(z.real, z.imag), theta])


def unit_scale(rows: np.ndarray) -> np.ndarray:
    """Fixed affine map of time-tensor rows (i, q, lambda, theta) into [0, 1] for sigmoid outputs."""
    rows = np.asarray(rows, dtype=float)
    out = np.empty_like(rows)
    out[..., 0:2, :] = 0.5 + 2.0 * rows[..., 0:2, :]
    out[..., 2, :] = 2.0 * rows[..., 2, :]
    out[..., 3, :] = (rows[..., 3, :] + np.pi) / (2 * np.pi)
    return out


def unit_unscale(rows: np.ndarray) -> np.ndarray:
    rows = np.asarray(rows, dtype=float)
    out = np.empty_like(rows)
    out[..., 0:2, :] = (rows[..., 0:2, :] - 0.5) / 2.0
    out[..., 2, :] = rows[..., 2, :] / 2.0
    out[..., 3, :] = rows[..., 3, :] * 2 * np.pi - np.pi
    return out


def tensor_batch(preambles) -> np.ndarray:
    """Unit-scaled, flattened time tensors, shape [n, 1280]."""
    return np.array([unit_scale(time_tensor(p).rows).reshape(-1) for p in preambles], dtype=np.float32)


def samples_from_batch(flat: np.ndarray, n_s: int = 320) -> np.ndarray:
    """Complex sequences rebuilt from the (i, q) rows of unit-scaled tensors."""
    rows = unit_unscale(np.asarray(flat, dtype=float).reshape(len(flat), 4, n_s))
    return rows[:, 0] + 1j * rows[:, 1]


def time_tensor(p) -> TimeTensor:
    return TimeTensor(_polar_rows(_samples_of(p)))


def freq_tensor(p) -> FreqTensor:
    return FreqTensor(_polar_rows(np.fft.fft(_samples_of(p))))


COLORMAP_ID = "viridis-256"
_CMAP = np.array(VIRIDIS)


@dataclass
class GaborImage:
    pixels: np.ndarray  # [H, W, 3] in [0, 1]


def colormap_table() -> np.ndarray:
    return _CMAP.copy()


def gabor_image(surface: GaborSurface, colormap: np.ndarray | None = None) -> GaborImage:
    table = _CMAP if colormap is None else np.asarray(colormap)
    idx = np.clip(np.floor(surface.values * (len(table) - 1) + 0.5), 0, len(table) - 1).astype(int)
    return GaborImage(table[idx])


def luminance(rgb: np.ndarray) -> np.ndarray:
    """Rec. 709 relative luminance of linearized sRGB triples."""
    c = np.asarray(rgb, dtype=float)
    lin = np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)
    return lin @ np.array([0.2126, 0.7152, 0.0722])


def save_features(path, array: np.ndarray, **meta) -> None:
    """Flat little-endian float32 blob plus a JSON sidecar describing it."""
    path = Path(path)
    arr = np.ascontiguousarray(array, dtype="<f4")
    path.write_bytes(arr.tobytes())
    sidecar = {"shape": list(arr.shape), "dtype": "float32", "byteorder": "little", "ordering": "C"}
    sidecar.update({k: (asdict(v) if hasattr(v, "__dataclass_fields__") else v) for k, v in meta.items()})
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, indent=2))


def load_features(path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    arr = np.frombuffer(path.read_bytes(), dtype="<f4").reshape(meta["shape"])
    return arr, meta
