"""Central finite-difference verification of every layer kind and loss."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import layers as L
from .losses import LOSSES
from .network import Network

EPS = 1e-5
TOLERANCE = 1e-4


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    n_checked: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= TOLERANCE


def rel_error(a: float, b: float, floor: float = 1e-6) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def _objective(net: Network, x: np.ndarray, proj: np.ndarray, training: bool) -> Callable[[], float]:
    return lambda: float(np.sum(net.forward(x, training) * proj))


def check_network(name: str, net: Network, x: np.ndarray, rng: np.random.Generator,
                  n_samples: int = 16, training: bool = False, eps: float = EPS) -> CheckResult:
    """Compare backprop against central differences of ``sum(out * R)`` for random ``R``."""
    proj = rng.standard_normal((len(x),) + net.output_shape)
    f = _objective(net, x, proj, training)
    f()
    dx = net.backward(proj)
    params = net.parameters()
    grads = net.gradients()
    worst, count = 0.0, 0
    for (_, _, p, _), g in zip(params, grads):
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for idx in rng.choice(flat.size, size=min(n_samples, flat.size), replace=False):
            old = flat[idx]
            flat[idx] = old + eps
            up = f()
            flat[idx] = old - eps
            down = f()
            flat[idx] = old
            worst = max(worst, rel_error(gflat[idx], (up - down) / (2 * eps)))
            count += 1
    xf, dxf = x.reshape(-1), dx.reshape(-1)
    for idx in rng.choice(xf.size, size=min(n_samples, xf.size), replace=False):
        old = xf[idx]
        xf[idx] = old + eps
        up = f()
        xf[idx] = old - eps
        down = f()
        xf[idx] = old
        worst = max(worst, rel_error(dxf[idx], (up - down) / (2 * eps)))
        count += 1
    return CheckResult(name, worst, count)


def check_loss(name: str, rng: np.random.Generator, n_samples: int = 16, eps: float = EPS) -> CheckResult:
    shape = (5, 6)
    if name == "mse":
        pred, target = rng.standard_normal(shape), rng.standard_normal(shape)
    elif name == "cce":
        z = rng.standard_normal(shape)
        pred = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
        target = np.eye(shape[1])[rng.integers(0, shape[1], shape[0])]
    else:
        pred = rng.uniform(0.05, 0.95, (shape[0], 1))
        target = rng.integers(0, 2, (shape[0], 1)).astype(float)
    fn = LOSSES[name]
    _, g = fn(pred, target)
    worst, flat = 0.0, pred.reshape(-1)
    picks = rng.choice(flat.size, size=min(n_samples, flat.size), replace=False)
    for idx in picks:
        old = flat[idx]
        flat[idx] = old + eps
        up = fn(pred, target)[0]
        flat[idx] = old - eps
        down = fn(pred, target)[0]
        flat[idx] = old
        worst = max(worst, rel_error(g.reshape(-1)[idx], (up - down) / (2 * eps)))
    return CheckResult(f"loss:{name}", worst, len(picks))


def _cases():
    """(name, input shape, layer specs, training mode)."""
    return [
        ("dense", (7,), [L.dense(5, "sigmoid")], False),
        ("dense_softmax", (7,), [L.dense(4, "softmax")], False),
        ("conv2d", (4, 6, 2), [L.conv2d(3, (3, 3), activation="sigmoid")], False),
        ("conv2d_strided_valid", (5, 7, 2), [L.conv2d(3, (2, 3), stride=(2, 2), padding="valid")], False),
        ("conv2d_relu", (4, 6, 2), [L.conv2d(3, (2, 4), activation="relu")], False),
        ("conv2d_transpose", (2, 5, 3), [L.conv2d_transpose(2, (3, 3), stride=(2, 1))], False),
        ("conv2d_transpose_valid", (2, 3, 2), [L.conv2d_transpose(2, (2, 3), stride=(2, 2), padding="valid",
                                                                  activation="sigmoid")], False),
        ("maxpool", (4, 6, 2), [L.maxpool((2, 2))], False),
        ("maxpool_same", (5, 7, 2), [L.maxpool((3, 3), stride=(2, 2), padding="same")], False),
        ("upsample", (2, 3, 2), [L.upsample((1, 2))], False),
        ("flatten", (2, 3, 2), [L.flatten(), L.dense(3)], False),
        ("batchnorm_train", (3, 4, 2), [L.batchnorm("sigmoid")], True),
        ("batchnorm_infer", (3, 4, 2), [L.batchnorm()], False),
    ]


def run_all(seed: int = 0, n_samples: int = 16) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    for name, shape, specs, training in _cases():
        net = Network(shape, specs, seed=int(rng.integers(2**31)), dtype=np.float64, name=name)
        for layer in net.layers:
            if "b" in layer.params:
                layer.params["b"][:] = rng.standard_normal(layer.params["b"].shape) * 0.1
            if "gamma" in layer.params:
                layer.params["gamma"][:] = rng.uniform(0.5, 1.5, layer.params["gamma"].shape)
                layer.params["beta"][:] = rng.standard_normal(layer.params["beta"].shape) * 0.1
                layer.buffers["mean"][:] = rng.standard_normal(layer.buffers["mean"].shape) * 0.1
                layer.buffers["var"][:] = rng.uniform(0.5, 2.0, layer.buffers["var"].shape)
        x = rng.standard_normal((3,) + shape)
        results.append(check_network(name, net, x, rng, n_samples, training))
    for name in ("mse", "cce", "bce"):
        results.append(check_loss(name, rng, n_samples))
    return results
