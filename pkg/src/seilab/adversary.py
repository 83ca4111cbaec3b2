"""Eve: eavesdropping plus replay, AE recoloring and GAN mimicry attacks."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import features as F
from . import nn
from .iqfile import read_seiq, write_seiq
from .nn.layers import conv2d, conv2d_transpose, dense, flatten, maxpool, upsample
from .pipeline import Preamble, PipelineConfig, energy_normalize, run_pipeline
from .sigmodel import IqFrame, SdrProfile, apply_sdr_receive, frame_seed, sdr_transmit

log = logging.getLogger(__name__)

ATTACK_KINDS = ("replay", "ae", "gan")
TENSOR_LEN = 4 * 320


@dataclass
class AttackArtifact:
    kind: str
    preambles: np.ndarray  # [n, 320] complex, unit energy rows
    source_sdr: SdrProfile
    target_id: str | None = None

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ValueError(f"unknown attack kind {self.kind!r}")
        self.preambles = np.atleast_2d(np.asarray(self.preambles, dtype=complex))
        if self.preambles.shape[1] != 320:
            raise ValueError(f"attack preambles must have 320 samples, got {self.preambles.shape[1]}")
        energy = np.sum(np.abs(self.preambles) ** 2, axis=1)
        if not np.all(np.isfinite(self.preambles)) or np.any(np.abs(energy - 1) > 1e-9):
            raise ValueError("attack preambles must be finite with unit energy")

    def __len__(self):
        return len(self.preambles)

    def save(self, path) -> None:
        write_seiq(path, self.preambles, kind=self.kind, sdr=self.source_sdr.to_dict(), target_id=self.target_id)

    @classmethod
    def load(cls, path) -> "AttackArtifact":
        x, meta = read_seiq(path)
        # float32 storage: restore exact unit energy
        x = x / np.sqrt(np.sum(np.abs(x) ** 2, axis=1, keepdims=True))
        return cls(meta["kind"], x, SdrProfile.from_dict(meta["sdr"]), meta.get("target_id"))


def eavesdrop(frames: Sequence[IqFrame], sdr: SdrProfile, seed: int = 0, limit: int = 1000,
              config: PipelineConfig | None = None) -> list[Preamble]:
    """Capture frames through ``sdr`` and run them through the receive pipeline."""
    out: list[Preamble] = []
    for i, fr in enumerate(frames):
        if len(out) >= limit:
            break
        rec = apply_sdr_receive(sdr, fr.samples, frame_seed(seed, i), emitter_id=fr.emitter_id, snr_db=fr.snr_db)
        for p in run_pipeline(rec, config):
            p.k = len(out)
            out.append(p)
    return out[:limit]


def _transmit(samples: np.ndarray, sdr: SdrProfile) -> np.ndarray:
    return np.array([energy_normalize(sdr_transmit(sdr, energy_normalize(s))) for s in samples])


def replay_attack(captured: Sequence[Preamble], sdr: SdrProfile) -> AttackArtifact:
    if not captured:
        raise ValueError("replay needs at least one captured preamble")
    x = np.array([p.samples for p in captured])
    return AttackArtifact("replay", _transmit(x, sdr), sdr, captured[0].emitter_id)


# AE recoloring ------------------------------------------------------------------

@dataclass
class MimicryAe:
    net: nn.Network
    curve: nn.LossCurve = field(default_factory=nn.LossCurve)
    target_id: str | None = None

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.net.predict(x)


def ae_specs(hidden: int = 128, size: int = TENSOR_LEN):
    return [dense(hidden, "sigmoid"), dense(size, "sigmoid")]


def build_mimicry_ae(hidden: int = 128, seed: int = 0) -> nn.Network:
    return nn.Network((TENSOR_LEN,), ae_specs(hidden), seed=seed, expect_output=(TENSOR_LEN,), name="mimicry-ae")


def ae_train_config(max_epochs: int = 20_000, seed: int = 0, **kw) -> nn.TrainConfig:
    """Stops at MSE 1e-8 or ``max_epochs``; pass 100_000 for the full-length run."""
    base = {"learning_rate": 1e-3, "epochs": max_epochs, "minibatch": 250, "seed": seed, "loss": "mse",
            "l2": 0.0, "target_loss": 1e-8}
    return nn.TrainConfig(**(base | kw))


def train_mimicry_ae(alice: Sequence[Preamble], hidden: int = 128, train_config: nn.TrainConfig | None = None,
                     seed: int = 0, min_preambles: int = 100) -> MimicryAe:
    """Autoencoder with Alice's unit-scaled time tensors as both input and target."""
    if len(alice) < min_preambles:
        raise ValueError(f"AE training needs >= {min_preambles} preambles, got {len(alice)}")
    x = F.tensor_batch(alice)
    net = build_mimicry_ae(hidden, seed)
    curve = nn.train(net, x, x, train_config or ae_train_config(seed=seed))
    return MimicryAe(net, curve, alice[0].emitter_id)


def ae_attack(ae: MimicryAe, eve_preambles: Sequence[Preamble], sdr: SdrProfile) -> AttackArtifact:
    x = F.tensor_batch(eve_preambles)
    out = ae(x)
    if out.shape != x.shape:
        raise ValueError(f"AE output {out.shape} != input {x.shape}")
    return AttackArtifact("ae", _transmit(F.samples_from_batch(out), sdr), sdr, ae.target_id)


# GAN mimicry -------------------------------------------------------------------

def _w(n: int, scale: float) -> int:
    return max(1, int(round(n * scale)))


def generator_specs(width_scale: float = 1.0):
    """C-GEN: (4, 320, 1) -> (4, 320, 1).

    Shape schedule: (4,320,64) (4,320,128) pool (2,160,128) (2,160,64)
    transpose-stride (2,1) (4,160,64) upsample (4,320,64) transpose (4,320,1).
    """
    s = width_scale
    return [
        conv2d(_w(64, s), (3, 3), activation="relu"),
        conv2d(_w(128, s), (2, 4), activation="relu"),
        maxpool((2, 2)),
        conv2d(_w(64, s), (1, 3), activation="relu"),
        conv2d_transpose(_w(64, s), (3, 3), stride=(2, 1), activation="relu"),
        upsample((1, 2)),
        conv2d_transpose(1, (1, 3), activation="relu"),
    ]


def discriminator_specs(width_scale: float = 1.0):
    s = width_scale
    return [
        conv2d(_w(64, s), (3, 3), activation="relu"),
        conv2d(_w(128, s), (2, 3), activation="relu"),
        maxpool((2, 2)),
        conv2d(_w(32, s), (2, 3), activation="relu"),
        conv2d(_w(16, s), (2, 5), activation="relu"),
        flatten(),
        dense(128),
        dense(1, "sigmoid"),
    ]


def build_generator(width_scale: float = 1.0, seed: int = 0, dtype=np.float32) -> nn.Network:
    return nn.Network((4, 320, 1), generator_specs(width_scale), seed=seed, dtype=dtype,
                      expect_output=(4, 320, 1), name="c-gen")


def build_discriminator(width_scale: float = 1.0, seed: int = 0, dtype=np.float32) -> nn.Network:
    return nn.Network((4, 320, 1), discriminator_specs(width_scale), seed=seed, dtype=dtype,
                      expect_output=(1,), name="c-dis")


def gan_input(preambles: Sequence[Preamble]) -> np.ndarray:
    return F.tensor_batch(preambles).reshape(-1, 4, 320, 1)


@dataclass
class GanConfig:
    epochs: int = 10
    minibatch: int = 250
    learning_rate: float = 2e-4
    width_scale: float = 1.0
    warm_start_epochs: int = 0  # identity pretraining of G on Eve's own tensors
    warm_start_lr: float = 1e-3
    seed: int = 0
    grad_clip: float = 1.0
    l2: float = 0.0


@dataclass
class GanModel:
    G: nn.Network
    D: nn.Network
    d_loss: list = field(default_factory=list)
    g_loss: list = field(default_factory=list)
    target_id: str | None = None

    def generate(self, x: np.ndarray) -> np.ndarray:
        return self.G.predict(x)


def d_step(D_tr: nn.Trainer, real: np.ndarray, fake: np.ndarray) -> float:
    """Discriminator update on CE(D(real), 1) + CE(D(fake), 0)."""
    D = D_tr.net
    x = np.concatenate([real, fake])
    t = np.concatenate([np.ones((len(real), 1)), np.zeros((len(fake), 1))]).astype(D.dtype)
    p = D.forward(x, training=True)
    # sum of the two per-set means
    w = np.concatenate([np.full((len(real), 1), 1.0 / len(real)), np.full((len(fake), 1), 1.0 / len(fake))])
    loss, g = nn.losses.fused_grad("bce", p, t, w)
    D.backward(g, fused=True)
    D_tr.apply_gradients()
    return loss


def g_step(G_tr: nn.Trainer, D: nn.Network, eve: np.ndarray) -> float:
    """Generator update on CE(D(G(eve)), 1), backpropagating through a fixed D."""
    G = G_tr.net
    fake = G.forward(eve, training=True)
    p = D.forward(fake, training=False)
    loss, g = nn.losses.fused_grad("bce", p, np.ones_like(p))
    G.backward(D.backward(g, fused=True))
    G_tr.apply_gradients()
    return loss


def pretrain_generator(eve: Sequence[Preamble] | np.ndarray, config: GanConfig | None = None) -> nn.Network:
    """G fitted to the identity on Eve's own tensors, a target-independent starting point."""
    cfg = config or GanConfig()
    xe = eve if isinstance(eve, np.ndarray) else gan_input(eve)
    G = build_generator(cfg.width_scale, cfg.seed)
    nn.train(G, xe, xe, nn.TrainConfig(learning_rate=cfg.warm_start_lr, epochs=cfg.warm_start_epochs,
                                       minibatch=cfg.minibatch, seed=cfg.seed, loss="mse", l2=0.0,
                                       grad_clip=cfg.grad_clip))
    return G


def train_gan(alice: Sequence[Preamble], eve: Sequence[Preamble], config: GanConfig | None = None,
              G: nn.Network | None = None, D: nn.Network | None = None) -> GanModel:
    """Adversarial training; a supplied ``G`` is trained in place and skips the warm start."""
    if not alice or not eve:
        raise ValueError("GAN training needs Alice and Eve preambles")
    model = train_gan_arrays(gan_input(alice), gan_input(eve), config, G, D)
    model.target_id = alice[0].emitter_id
    return model


def train_gan_arrays(xa: np.ndarray, xe: np.ndarray, config: GanConfig | None = None,
                     G: nn.Network | None = None, D: nn.Network | None = None) -> GanModel:
    """Alternating D and G updates on (n, 4, 320, 1) tensors."""
    cfg = config or GanConfig()
    if len(xa) == 0 or len(xe) == 0:
        raise ValueError("GAN training needs Alice and Eve tensors")
    if G is None:
        G = pretrain_generator(xe, cfg) if cfg.warm_start_epochs else build_generator(cfg.width_scale, cfg.seed)
    D = D or build_discriminator(cfg.width_scale, cfg.seed + 1)
    tc = nn.TrainConfig(learning_rate=cfg.learning_rate, beta1=0.5, grad_clip=cfg.grad_clip, l2=cfg.l2, loss="bce")
    G_tr, D_tr = nn.Trainer(G, tc), nn.Trainer(D, tc)
    model = GanModel(G, D)
    rng = np.random.default_rng(cfg.seed)
    n = max(len(xa), len(xe))
    for epoch in range(1, cfg.epochs + 1):
        ia, ie = rng.permutation(len(xa)), rng.permutation(len(xe))
        dl, gl, steps = 0.0, 0.0, 0
        for a in range(0, n, cfg.minibatch):
            ba = xa[ia[np.arange(a, a + cfg.minibatch) % len(xa)]]
            be = xe[ie[np.arange(a, a + cfg.minibatch) % len(xe)]]
            dl += d_step(D_tr, ba, G.forward(be))
            gl += g_step(G_tr, D, be)
            steps += 1
        model.d_loss.append(dl / steps)
        model.g_loss.append(gl / steps)
        if not (np.isfinite(model.d_loss[-1]) and np.isfinite(model.g_loss[-1])):
            raise nn.TrainingDiverged(epoch, float("nan"))
    return model


def discriminator_accuracy(D: nn.Network, real: np.ndarray, fake: np.ndarray) -> float:
    pr, pf = D.predict(real)[:, 0], D.predict(fake)[:, 0]
    return float((np.sum(pr > 0.5) + np.sum(pf <= 0.5)) / (len(pr) + len(pf)))


def iq_from_generator(out: np.ndarray) -> np.ndarray:
    """Complex sequences from rows 1-2 (I, Q) of generator output; magnitude/phase rows are dropped."""
    out = np.asarray(out)
    if out.shape[1:] != (4, 320, 1):
        raise ValueError(f"generator output must be (n, 4, 320, 1), got {out.shape}")
    iq = out[:, :2, :, 0]
    rows = F.unit_unscale(np.concatenate([iq, np.zeros_like(iq)], axis=1))
    return rows[:, 0] + 1j * rows[:, 1]


def gan_attack(gan: GanModel, eve_preambles: Sequence[Preamble], sdr: SdrProfile) -> AttackArtifact:
    out = gan.generate(gan_input(eve_preambles))
    return AttackArtifact("gan", _transmit(iq_from_generator(out), sdr), sdr, gan.target_id)
