"""ADAM training with global-norm clipping and L2 weight decay."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .losses import FUSABLE, LOSSES, fused_grad
from .network import Network

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"loss became {loss} at epoch {epoch}")
        self.epoch = epoch


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float | None = 1.0
    l2: float = 1e-4
    epochs: int = 100
    minibatch: int = 250
    seed: int = 0
    loss: str = "cce"
    target_loss: float | None = None  # stop once an epoch's mean loss reaches this
    shuffle: bool = True

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning rate must be non-negative")
        if self.minibatch < 1:
            raise ValueError("minibatch must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")

    def to_dict(self):
        return asdict(self)


class Adam:
    def __init__(self, params: list[np.ndarray], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        """In-place update of ``params``."""
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)


def global_norm(grads) -> float:
    return float(np.sqrt(sum(float(np.sum(np.square(g, dtype=float))) for g in grads)))


def clip_by_global_norm(grads: list[np.ndarray], clip: float | None) -> list[np.ndarray]:
    if clip is None:
        return grads
    norm = global_norm(grads)
    if norm <= clip or norm == 0:
        return grads
    scale = clip / norm
    return [g * scale for g in grads]


def add_l2(net: Network, grads: list[np.ndarray], l2: float) -> list[np.ndarray]:
    """Gradient of ``l2 * sum(w^2)`` over weight tensors (not biases or norm parameters)."""
    if not l2:
        return grads
    return [g + 2 * l2 * p if decays else g for g, (_, _, p, decays) in zip(grads, net.parameters())]


@dataclass
class LossCurve:
    losses: list[float] = field(default_factory=list)

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "loss"])
            for i, v in enumerate(self.losses, 1):
                w.writerow([i, repr(v)])


class Trainer:
    """Holds optimizer state so callers can run custom step schedules (e.g. GANs)."""

    def __init__(self, net: Network, config: TrainConfig):
        self.net, self.config = net, config
        self.opt = Adam([p for _, _, p, _ in net.parameters()], config.learning_rate,
                        config.beta1, config.beta2, config.adam_eps)

    def apply_gradients(self) -> None:
        grads = add_l2(self.net, self.net.gradients(), self.config.l2)
        grads = clip_by_global_norm(grads, self.config.grad_clip)
        self.opt.step([p for _, _, p, _ in self.net.parameters()], grads)

    def step(self, x: np.ndarray, y: np.ndarray) -> float:
        out = self.net.forward(x, training=True)
        name = self.config.loss
        if FUSABLE.get(name) == self.net.output_activation:
            loss, g = fused_grad(name, out, y)
            self.net.backward(g, fused=True)
        else:
            loss, g = LOSSES[name](out, y)
            self.net.backward(g)
        self.apply_gradients()
        return loss


def train(net: Network, x: np.ndarray, y: np.ndarray, config: TrainConfig) -> LossCurve:
    """Minibatch training; returns the per-epoch mean data loss.

    Shuffling is driven by ``config.seed`` only, so identical seeds give identical weights
    when BLAS runs single-threaded.
    """
    x, y = np.asarray(x), np.asarray(y)
    if len(x) == 0 or len(x) != len(y):
        raise ValueError(f"need a nonempty dataset with matching targets ({len(x)} vs {len(y)})")
    rng = np.random.default_rng(config.seed)
    tr = Trainer(net, config)
    curve = LossCurve()
    n = len(x)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n) if config.shuffle else np.arange(n)
        total = 0.0
        for a in range(0, n, config.minibatch):
            idx = order[a:a + config.minibatch]
            try:
                loss = tr.step(x[idx], y[idx])
            except FloatingPointError:
                raise TrainingDiverged(epoch, float("nan")) from None
            if not np.isfinite(loss):
                raise TrainingDiverged(epoch, loss)
            total += loss * len(idx)
        curve.losses.append(total / n)
        if config.target_loss is not None and curve.losses[-1] <= config.target_loss:
            log.info("target loss reached at epoch %d", epoch)
            break
    return curve


def accuracy(net: Network, x: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(np.argmax(net.predict(x), axis=-1) == np.asarray(labels)))
