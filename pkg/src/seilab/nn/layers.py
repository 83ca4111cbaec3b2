"""Layer kinds for a small NHWC numpy network.

Every layer follows the same protocol:

``build(in_shape, rng, dtype) -> out_shape``
    allocate parameters, validate shapes (sample axis excluded)
``forward(x, training) -> y``
    caches what ``backward`` needs
``backward(dy) -> dx``
    fills ``self.grads`` (overwritten, not accumulated)
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

KINDS = ("dense", "conv2d", "conv2d_transpose", "maxpool", "upsample", "flatten", "batchnorm")
ACTIVATIONS = ("none", "relu", "sigmoid", "softmax")
_PARAMETRIC = ("dense", "conv2d", "conv2d_transpose", "batchnorm")


@dataclass
class LayerSpec:
    kind: str
    units: int = 0  # units for dense, filters for convolutions
    kernel: tuple = (1, 1)
    stride: tuple | None = None
    padding: str = "same"
    activation: str = "none"
    momentum: float = 0.9

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.kind not in _PARAMETRIC and self.activation != "none":
            raise ValueError(f"{self.kind} layers take no activation")
        self.kernel = tuple(int(k) for k in self.kernel)
        if self.stride is None:
            self.stride = self.kernel if self.kind in ("maxpool", "upsample") else (1, 1)
        self.stride = tuple(int(s) for s in self.stride)
        if len(self.kernel) != 2 or len(self.stride) != 2 or min(self.kernel + self.stride) < 1:
            raise ValueError(f"kernel/stride must be two positive integers: {self.kernel}, {self.stride}")
        if self.padding not in ("same", "valid"):
            raise ValueError(f"padding must be 'same' or 'valid', got {self.padding!r}")
        if self.kind in ("dense", "conv2d", "conv2d_transpose") and self.units < 1:
            raise ValueError(f"{self.kind} needs a positive unit/filter count")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kernel"], d["stride"] = list(self.kernel), list(self.stride)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        return cls(**d)


def dense(units, activation="none"):
    return LayerSpec("dense", units=units, activation=activation)


def conv2d(filters, kernel, stride=(1, 1), padding="same", activation="none"):
    return LayerSpec("conv2d", units=filters, kernel=kernel, stride=stride, padding=padding, activation=activation)


def conv2d_transpose(filters, kernel, stride=(1, 1), padding="same", activation="none"):
    return LayerSpec("conv2d_transpose", units=filters, kernel=kernel, stride=stride, padding=padding,
                     activation=activation)


def maxpool(pool, stride=None, padding="valid"):
    return LayerSpec("maxpool", kernel=pool, stride=stride, padding=padding)


def upsample(size):
    return LayerSpec("upsample", kernel=size)


def flatten():
    return LayerSpec("flatten")


def batchnorm(activation="none", momentum=0.9):
    return LayerSpec("batchnorm", activation=activation, momentum=momentum)


# activations -----------------------------------------------------------------

def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softmax(z):
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def activate(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0)
    if kind == "sigmoid":
        return _sigmoid(z)
    if kind == "softmax":
        return _softmax(z)
    return z


def activate_backward(kind: str, y: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the pre-activation, given the activation output ``y``."""
    if kind == "relu":
        return dy * (y > 0)
    if kind == "sigmoid":
        return dy * y * (1 - y)
    if kind == "softmax":
        return y * (dy - np.sum(dy * y, axis=-1, keepdims=True))
    return dy


# convolution taps ------------------------------------------------------------

def same_pads(size: int, k: int, s: int) -> tuple[int, int, int]:
    """(out, pad_before, pad_after) for TF-style 'same' padding."""
    out = -(-size // s)
    total = max((out - 1) * s + k - size, 0)
    return out, total // 2, total - total // 2


def window(a: np.ndarray, i: int, j: int, sh: int, sw: int, ho: int, wo: int) -> np.ndarray:
    """Strided view of the inputs that kernel tap (i, j) sees, shape (N, ho, wo, C)."""
    return a[:, i:i + sh * (ho - 1) + 1:sh, j:j + sw * (wo - 1) + 1:sw, :]


def _tap_grad(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Sum over batch and space of outer products of channel vectors."""
    return np.tensordot(a, b, axes=([0, 1, 2], [0, 1, 2]))


# layers ----------------------------------------------------------------------

class Layer:
    def __init__(self, spec: LayerSpec):
        self.spec = spec
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.in_shape = self.out_shape = None

    # parameters that receive L2 decay
    decay = ("w",)
    # when set, backward receives the gradient w.r.t. the pre-activation (fused output loss)
    fused = False

    def _act_backward(self, dy):
        return dy if self.fused else activate_backward(self.spec.activation, self._y, dy)

    def build(self, in_shape, rng, dtype):
        raise NotImplementedError

    def forward(self, x, training=False):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    def _he(self, rng, shape, fan_in, dtype):
        lim = math.sqrt(6.0 / fan_in)
        return rng.uniform(-lim, lim, size=shape).astype(dtype)


class Dense(Layer):
    def build(self, in_shape, rng, dtype):
        if len(in_shape) != 1:
            raise ValueError(f"dense expects a flat input, got {in_shape}")
        d, u = in_shape[0], self.spec.units
        self.params = {"w": self._he(rng, (d, u), d, dtype), "b": np.zeros(u, dtype)}
        return (u,)

    def forward(self, x, training=False):
        self._x = x
        self._y = activate(self.spec.activation, x @ self.params["w"] + self.params["b"])
        return self._y

    def backward(self, dy):
        dz = self._act_backward(dy)
        self.grads = {"w": self._x.T @ dz, "b": dz.sum(axis=0)}
        return dz @ self.params["w"].T


class Conv2D(Layer):
    def build(self, in_shape, rng, dtype):
        if len(in_shape) != 3:
            raise ValueError(f"conv2d expects (H, W, C), got {in_shape}")
        H, W, C = in_shape
        (kh, kw), (sh, sw), f = self.spec.kernel, self.spec.stride, self.spec.units
        if self.spec.padding == "same":
            ho, pt, pb = same_pads(H, kh, sh)
            wo, pl, pr = same_pads(W, kw, sw)
        else:
            ho, wo, pt, pb, pl, pr = (H - kh) // sh + 1, (W - kw) // sw + 1, 0, 0, 0, 0
        if ho < 1 or wo < 1:
            raise ValueError(f"kernel {self.spec.kernel} does not fit input {in_shape}")
        self._pads = ((0, 0), (pt, pb), (pl, pr), (0, 0))
        self.params = {"w": self._he(rng, (kh, kw, C, f), kh * kw * C, dtype), "b": np.zeros(f, dtype)}
        return (ho, wo, f)

    def forward(self, x, training=False):
        (kh, kw), (sh, sw) = self.spec.kernel, self.spec.stride
        self._x = x
        xp = np.pad(x, self._pads)
        w = self.params["w"]
        ho, wo, f = self.out_shape
        z = np.zeros((x.shape[0], ho, wo, f), dtype=x.dtype)
        for i in range(kh):
            for j in range(kw):
                z += window(xp, i, j, sh, sw, ho, wo) @ w[i, j]
        z += self.params["b"]
        self._y = activate(self.spec.activation, z)
        return self._y

    def backward(self, dy):
        (kh, kw), (sh, sw) = self.spec.kernel, self.spec.stride
        dz = self._act_backward(dy)
        xp = np.pad(self._x, self._pads)
        w = self.params["w"]
        ho, wo, _ = self.out_shape
        dxp = np.zeros_like(xp)
        dw = np.empty_like(w)
        for i in range(kh):
            for j in range(kw):
                dw[i, j] = _tap_grad(window(xp, i, j, sh, sw, ho, wo), dz)
                window(dxp, i, j, sh, sw, ho, wo)[...] += dz @ w[i, j].T
        self.grads = {"w": dw, "b": dz.sum(axis=(0, 1, 2))}
        (pt, pb), (pl, pr) = self._pads[1], self._pads[2]
        return dxp[:, pt:xp.shape[1] - pb, pl:xp.shape[2] - pr, :]


class Conv2DTranspose(Layer):
    """Adjoint of a strided convolution; 'same' gives output size ``in * stride``."""

    def build(self, in_shape, rng, dtype):
        if len(in_shape) != 3:
            raise ValueError(f"conv2d_transpose expects (H, W, C), got {in_shape}")
        H, W, C = in_shape
        (kh, kw), (sh, sw), f = self.spec.kernel, self.spec.stride, self.spec.units
        full_h, full_w = (H - 1) * sh + kh, (W - 1) * sw + kw
        if self.spec.padding == "same":
            ho, wo = H * sh, W * sw
        else:
            ho, wo = full_h, full_w
        # crop (or zero-extend) the full scatter to the target size
        ct = max(full_h - ho, 0) // 2 if self.spec.padding == "same" else 0
        cl = max(full_w - wo, 0) // 2 if self.spec.padding == "same" else 0
        self._full = (full_h, full_w)
        self._crop = (ct, cl)
        self.params = {"w": self._he(rng, (kh, kw, f, C), kh * kw * C, dtype), "b": np.zeros(f, dtype)}
        return (ho, wo, f)

    def _to_out(self, full):
        ho, wo, _ = self.out_shape
        ct, cl = self._crop
        n, fh, fw, f = full.shape
        out = np.zeros((n, ho, wo, f), dtype=full.dtype)
        h, w = min(ho, fh - ct), min(wo, fw - cl)
        out[:, :h, :w] = full[:, ct:ct + h, cl:cl + w]
        return out

    def _from_out(self, dy):
        ct, cl = self._crop
        n = dy.shape[0]
        full = np.zeros((n,) + self._full + (dy.shape[3],), dtype=dy.dtype)
        h, w = min(dy.shape[1], self._full[0] - ct), min(dy.shape[2], self._full[1] - cl)
        full[:, ct:ct + h, cl:cl + w] = dy[:, :h, :w]
        return full

    def forward(self, x, training=False):
        (kh, kw), (sh, sw) = self.spec.kernel, self.spec.stride
        self._x = x
        n, H, W, _ = x.shape
        w = self.params["w"]
        full = np.zeros((n,) + self._full + (self.spec.units,), dtype=x.dtype)
        for i in range(kh):
            for j in range(kw):
                window(full, i, j, sh, sw, H, W)[...] += x @ w[i, j].T
        z = self._to_out(full) + self.params["b"]
        self._y = activate(self.spec.activation, z)
        return self._y

    def backward(self, dy):
        (kh, kw), (sh, sw) = self.spec.kernel, self.spec.stride
        dz = self._act_backward(dy)
        dfull = self._from_out(dz)
        _, H, W, _ = self._x.shape
        w = self.params["w"]
        dx = np.zeros_like(self._x)
        dw = np.empty_like(w)
        for i in range(kh):
            for j in range(kw):
                win = window(dfull, i, j, sh, sw, H, W)
                dw[i, j] = _tap_grad(win, self._x)
                dx += win @ w[i, j]
        self.grads = {"w": dw, "b": dz.sum(axis=(0, 1, 2))}
        return dx


class MaxPool(Layer):
    def build(self, in_shape, rng, dtype):
        if len(in_shape) != 3:
            raise ValueError(f"maxpool expects (H, W, C), got {in_shape}")
        H, W, C = in_shape
        (ph, pw), (sh, sw) = self.spec.kernel, self.spec.stride
        if self.spec.padding == "same":
            ho, pt, pb = same_pads(H, ph, sh)
            wo, pl, pr = same_pads(W, pw, sw)
        else:
            ho, wo, pt, pb, pl, pr = (H - ph) // sh + 1, (W - pw) // sw + 1, 0, 0, 0, 0
        if ho < 1 or wo < 1:
            raise ValueError(f"pool {self.spec.kernel} does not fit input {in_shape}")
        self._pads = ((0, 0), (pt, pb), (pl, pr), (0, 0))
        return (ho, wo, C)

    def forward(self, x, training=False):
        (ph, pw), (sh, sw) = self.spec.kernel, self.spec.stride
        xp = np.pad(x, self._pads, constant_values=-np.inf)
        ho, wo, c = self.out_shape
        win = sliding_window_view(xp, (ph, pw), axis=(1, 2))[:, ::sh, ::sw][:, :ho, :wo]
        win = win.reshape(x.shape[0], ho, wo, c, ph * pw)
        self._arg = win.argmax(axis=-1)
        self._xp_shape = xp.shape
        return np.take_along_axis(win, self._arg[..., None], axis=-1)[..., 0]

    def backward(self, dy):
        (ph, pw), (sh, sw) = self.spec.kernel, self.spec.stride
        ho, wo, _ = self.out_shape
        dxp = np.zeros(self._xp_shape, dtype=dy.dtype)
        for i in range(ph):
            for j in range(pw):
                hit = self._arg == i * pw + j
                if hit.any():
                    dxp[:, i:i + sh * (ho - 1) + 1:sh, j:j + sw * (wo - 1) + 1:sw, :] += dy * hit
        (pt, pb), (pl, pr) = self._pads[1], self._pads[2]
        return dxp[:, pt:dxp.shape[1] - pb, pl:dxp.shape[2] - pr, :]


class UpSample(Layer):
    def build(self, in_shape, rng, dtype):
        if len(in_shape) != 3:
            raise ValueError(f"upsample expects (H, W, C), got {in_shape}")
        a, b = self.spec.kernel
        return (in_shape[0] * a, in_shape[1] * b, in_shape[2])

    def forward(self, x, training=False):
        a, b = self.spec.kernel
        return np.repeat(np.repeat(x, a, axis=1), b, axis=2)

    def backward(self, dy):
        a, b = self.spec.kernel
        n, H, W, c = dy.shape
        return dy.reshape(n, H // a, a, W // b, b, c).sum(axis=(2, 4))


class Flatten(Layer):
    def build(self, in_shape, rng, dtype):
        return (int(np.prod(in_shape)),)

    def forward(self, x, training=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._shape)


class BatchNorm(Layer):
    """Per-channel (last axis) normalization; running statistics for inference."""

    decay = ()
    eps = 1e-5

    def build(self, in_shape, rng, dtype):
        c = in_shape[-1]
        self.params = {"gamma": np.ones(c, dtype), "beta": np.zeros(c, dtype)}
        self.buffers = {"mean": np.zeros(c, dtype), "var": np.ones(c, dtype)}
        return tuple(in_shape)

    def forward(self, x, training=False):
        axes = tuple(range(x.ndim - 1))
        if training:
            mu = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = self.spec.momentum
            self.buffers["mean"] = (m * self.buffers["mean"] + (1 - m) * mu).astype(x.dtype)
            self.buffers["var"] = (m * self.buffers["var"] + (1 - m) * var).astype(x.dtype)
        else:
            mu, var = self.buffers["mean"], self.buffers["var"]
        self._training = training
        self._inv = 1.0 / np.sqrt(var + self.eps)
        self._xhat = (x - mu) * self._inv
        self._y = activate(self.spec.activation, self._xhat * self.params["gamma"] + self.params["beta"])
        return self._y

    def backward(self, dy):
        dz = self._act_backward(dy)
        axes = tuple(range(dz.ndim - 1))
        xhat, g = self._xhat, self.params["gamma"]
        self.grads = {"gamma": np.sum(dz * xhat, axis=axes), "beta": dz.sum(axis=axes)}
        dxhat = dz * g
        if not self._training:
            return dxhat * self._inv
        m = dz.size // dz.shape[-1]
        return (self._inv / m) * (m * dxhat - dxhat.sum(axis=axes) - xhat * np.sum(dxhat * xhat, axis=axes))


LAYER_TYPES = {
    "dense": Dense,
    "conv2d": Conv2D,
    "conv2d_transpose": Conv2DTranspose,
    "maxpool": MaxPool,
    "upsample": UpSample,
    "flatten": Flatten,
    "batchnorm": BatchNorm,
}


def make_layer(spec: LayerSpec) -> Layer:
    return LAYER_TYPES[spec.kind](spec)
