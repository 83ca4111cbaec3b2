"""Bob, the defender: SEI classifiers, decoy-aware training, DAE denoising, authentication."""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from . import features as F
from . import nn
from .nn.layers import LayerSpec, batchnorm, conv2d, dense, flatten, maxpool
from .pipeline import Preamble, energy_normalize, residual_preamble

log = logging.getLogger(__name__)

DECOY_ID = "decoy"
CLASSIFIER_KINDS = ("mda_gabor", "mda_freq", "cnn_time", "cnn_freq", "cnn_gabor")


# feature extraction -----------------------------------------------------------

def _prepare(p: Preamble, residual: bool) -> Preamble:
    return residual_preamble(p) if residual else p


def block_mean(img: np.ndarray, factor: int) -> np.ndarray:
    """Downsample an (H, W, C) image by averaging ``factor x factor`` blocks."""
    if factor == 1:
        return img
    H, W, C = img.shape
    if H % factor or W % factor:
        raise ValueError(f"image {H}x{W} not divisible by {factor}")
    return img.reshape(H // factor, factor, W // factor, factor, C).mean(axis=(1, 3))


def extract_features(kind: str, preambles: Sequence[Preamble], residual: bool = False,
                     image_scale: int = 4) -> np.ndarray:
    """Feature matrix (MDA kinds) or NHWC tensor batch (CNN kinds)."""
    if kind not in CLASSIFIER_KINDS:
        raise ValueError(f"unknown classifier kind {kind!r}")
    ps = [_prepare(p, residual) for p in preambles]
    if kind == "mda_gabor":
        return np.array([F.gabor_fingerprint(p) for p in ps]).reshape(len(ps), -1)
    if kind == "mda_freq":
        return np.array([F.freq_tensor(p).rows.reshape(-1) for p in ps]).reshape(len(ps), -1)
    if kind == "cnn_time":
        return np.array([F.time_tensor(p).rows for p in ps]).reshape(len(ps), 4, -1, 1)
    if kind == "cnn_freq":
        return np.array([F.freq_tensor(p).rows for p in ps]).reshape(len(ps), 4, -1, 1)
    imgs = [block_mean(F.gabor_image(F.gabor_surface(p)).pixels, image_scale) for p in ps]
    return np.array(imgs).reshape((len(ps),) + (imgs[0].shape if imgs else (0, 0, 3)))


# MDA / ML ---------------------------------------------------------------------

@dataclass
class MdaModel:
    """Fisher projection plus per-class Gaussians in the projected space.

    ``center``/``scale`` standardize raw features before projection.
    """

    W: np.ndarray
    class_means: np.ndarray  # [C, C-1]
    class_covs: np.ndarray  # [C, C-1, C-1]
    center: np.ndarray
    scale: np.ndarray
    eigenvalues: np.ndarray

    @property
    def C(self) -> int:
        return self.class_means.shape[0]

    @property
    def priors(self) -> np.ndarray:
        return np.full(self.C, 1.0 / self.C)

    @property
    def dim(self) -> int:
        return self.W.shape[0]

    def project(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise ValueError(f"fingerprint dimension {x.shape[-1]} != model dimension {self.dim}")
        return ((x - self.center) / self.scale) @ self.W

    def log_likelihoods(self, x: np.ndarray) -> np.ndarray:
        """Gaussian log densities, shape [n, C] (or [C] for one vector)."""
        z = self.project(x)
        single = z.ndim == 1
        z = np.atleast_2d(z)
        d = z.shape[1]
        out = np.empty((len(z), self.C))
        for c in range(self.C):
            L = np.linalg.cholesky(self.class_covs[c])
            r = sla.solve_triangular(L, (z - self.class_means[c]).T, lower=True)
            out[:, c] = -0.5 * np.sum(r * r, axis=0) - np.sum(np.log(np.diag(L))) - 0.5 * d * np.log(2 * np.pi)
        return out[0] if single else out


def shrink(cov: np.ndarray, alpha: float) -> np.ndarray:
    d = cov.shape[0]
    return (1 - alpha) * cov + alpha * np.trace(cov) / d * np.eye(d)


def mda_fit(x: np.ndarray, labels: np.ndarray, C: int | None = None, reg: float = 1e-3,
            shrinkage: float = 1e-3) -> MdaModel:
    """Multiple discriminant analysis with maximum-likelihood class models.

    Solves ``S_b w = lambda (S_w + reg I) w`` on standardized features, keeps the
    top ``C - 1`` directions, then fits a shrunk Gaussian per class.
    """
    x = np.asarray(x, dtype=float)
    labels = np.asarray(labels)
    C = int(labels.max()) + 1 if C is None else C
    counts = np.bincount(labels, minlength=C)
    if np.any(counts < 2):
        raise ValueError(f"mda_fit needs >= 2 samples per class, got {counts.tolist()}")
    D = x.shape[1]
    if D < C - 1:
        raise ValueError(f"feature dimension {D} < C - 1 = {C - 1}")
    center = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale == 0] = 1.0
    z = (x - center) / scale
    means = np.array([z[labels == c].mean(axis=0) for c in range(C)])
    resid = z - means[labels]
    Sw = resid.T @ resid / len(z)
    dm = means - z.mean(axis=0)
    Sb = (dm * counts[:, None]).T @ dm / len(z)
    try:
        evals, evecs = sla.eigh(Sb, Sw + reg * np.eye(D))
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"within-class scatter singular even with reg={reg}") from exc
    order = np.argsort(evals)[::-1][: C - 1]
    W = evecs[:, order]
    # fix each direction's sign: largest-magnitude loading positive
    W *= np.sign(W[np.argmax(np.abs(W), axis=0), np.arange(W.shape[1])])
    proj = z @ W
    pm = np.array([proj[labels == c].mean(axis=0) for c in range(C)])
    covs = []
    for c in range(C):
        pc = proj[labels == c] - pm[c]
        covs.append(shrink(pc.T @ pc / len(pc), shrinkage))
    return MdaModel(W, pm, np.array(covs), center, scale, evals[order])


def mda_ml_classify(model: MdaModel, fp: np.ndarray):
    """(label, log-likelihoods); ties resolve to the lowest class index."""
    ll = model.log_likelihoods(fp)
    return np.argmax(ll, axis=-1), ll


def save_mda(model: MdaModel, path, **meta) -> None:
    path = Path(path)
    arrays = {"W": model.W, "class_means": model.class_means, "class_covs": model.class_covs,
              "center": model.center, "scale": model.scale, "eigenvalues": model.eigenvalues}
    index, blobs, off = {}, [], 0
    for k, a in arrays.items():
        b = np.ascontiguousarray(a, dtype="<f8").tobytes()
        index[k] = {"shape": list(a.shape), "offset": off}
        off += len(b)
        blobs.append(b)
    path.with_suffix(".bin").write_bytes(b"".join(blobs))
    path.with_suffix(".json").write_text(json.dumps({"kind": "mda_ml", "dtype": "float64",
                                                     "byteorder": "little", "arrays": index} | meta, indent=2))


def load_mda(path) -> MdaModel:
    path = Path(path)
    desc = json.loads(path.with_suffix(".json").read_text())
    data = path.with_suffix(".bin").read_bytes()
    arr = {}
    for k, t in desc["arrays"].items():
        n = int(np.prod(t["shape"]))
        arr[k] = np.frombuffer(data, "<f8", count=n, offset=t["offset"]).reshape(t["shape"]).copy()
    return MdaModel(**arr)


# CNN --------------------------------------------------------------------------

@dataclass
class SeiCnnConfig:
    representation: str = "time"  # time | frequency | gabor_image
    decoy: bool = False
    image_scale: int = 4  # Gabor image downsampling; 1 gives the full 320x320 input
    output_cells: int | None = None

    def __post_init__(self):
        if self.representation not in ("time", "frequency", "gabor_image"):
            raise ValueError(f"unknown representation {self.representation!r}")
        expected = 9 if self.decoy else 8
        if self.output_cells is None:
            self.output_cells = expected
        if self.output_cells != expected:
            raise ValueError(f"output_cells must be {expected} when decoy={self.decoy}")
        if 32 % self.image_scale:
            raise ValueError("image_scale must divide 32")


def cnn_specs(representation: str, cells: int, image_scale: int = 4) -> tuple[tuple, list[LayerSpec]]:
    """(input shape, layers) of the SEI CNN for a representation and output size."""
    if representation in ("time", "frequency"):
        return (4, 320, 1), [
            conv2d(40, (4, 4)), batchnorm("relu"), maxpool((4, 4), stride=(4, 4)),
            conv2d(80, (4, 4)), batchnorm("relu"), maxpool((1, 1), stride=(4, 4)),
            conv2d(160, (4, 4)), batchnorm("relu"),
            flatten(), dense(cells, "softmax"),
        ]
    k = 32 // image_scale
    side = 320 // image_scale
    specs = []
    for filters in (8, 16, 32):
        specs += [conv2d(filters, (k, k)), batchnorm("relu"), maxpool((k, k), stride=(k, k), padding="same")]
    return (side, side, 3), specs + [flatten(), dense(cells, "softmax")]


def sei_cnn_specs(config: SeiCnnConfig) -> tuple[tuple, list[LayerSpec]]:
    return cnn_specs(config.representation, config.output_cells, config.image_scale)


def build_cnn(representation: str, cells: int, image_scale: int = 4, seed: int = 0) -> nn.Network:
    shape, specs = cnn_specs(representation, cells, image_scale)
    return nn.Network(shape, specs, seed=seed, expect_output=(cells,), name=f"sei-cnn-{representation}")


def build_sei_cnn(config: SeiCnnConfig, seed: int = 0) -> nn.Network:
    return build_cnn(config.representation, config.output_cells, config.image_scale, seed)


def default_cnn_train_config(representation: str, seed: int = 0, **kw) -> nn.TrainConfig:
    epochs = 30 if representation == "gabor_image" else 100
    return nn.TrainConfig(**({"epochs": epochs, "seed": seed, "loss": "cce"} | kw))


@dataclass
class Standardizer:
    """Per-channel (last two axes except width) mean/std, fitted on training inputs."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "Standardizer":
        axes = (0, 2) if x.ndim == 4 and x.shape[-1] == 1 else tuple(range(x.ndim - 1))
        mean = x.mean(axis=axes, keepdims=True)[0]
        std = x.std(axis=axes, keepdims=True)[0]
        std[std == 0] = 1.0
        return cls(mean, std)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return ((x - self.mean) / self.std).astype(np.float32)


def fit_cnn(net: nn.Network, x: np.ndarray, labels: np.ndarray, train_config: nn.TrainConfig):
    """Standardize inputs, train with one-hot CCE targets; returns (standardizer, curve)."""
    std = Standardizer.fit(x)
    onehot = np.eye(net.output_shape[0], dtype=np.float32)[labels]
    return std, nn.train(net, std(x), onehot, train_config)


def train_sei_cnn(config: SeiCnnConfig, x: np.ndarray, labels: np.ndarray,
                  train_config: nn.TrainConfig | None = None, seed: int = 0):
    """Returns (network, standardizer, loss curve)."""
    net = build_sei_cnn(config, seed)
    std, curve = fit_cnn(net, x, labels, train_config or default_cnn_train_config(config.representation, seed))
    return net, std, curve


# unified classifier -------------------------------------------------------------

_CNN_REPR = {"cnn_time": "time", "cnn_freq": "frequency", "cnn_gabor": "gabor_image"}


@dataclass
class SeiClassifier:
    """One trained defender model over a fixed label set.

    ``classes`` are the authorized emitter ids, with :data:`DECOY_ID` appended
    when decoy training is enabled.
    """

    kind: str
    classes: list[str]
    residual: bool = False
    image_scale: int = 4
    mda: MdaModel | None = None
    net: nn.Network | None = None
    standardizer: Standardizer | None = None
    curve: nn.LossCurve | None = None

    @property
    def decoy(self) -> bool:
        return DECOY_ID in self.classes

    @property
    def authorized(self) -> list[str]:
        return [c for c in self.classes if c != DECOY_ID]

    @property
    def n_outputs(self) -> int:
        return self.mda.C if self.mda is not None else self.net.output_shape[0]

    def features(self, preambles: Sequence[Preamble]) -> np.ndarray:
        return extract_features(self.kind, preambles, self.residual, self.image_scale)

    def predict_features(self, x: np.ndarray) -> np.ndarray:
        if self.mda is not None:
            return mda_ml_classify(self.mda, x)[0]
        return np.argmax(self.net.predict(self.standardizer(x)), axis=-1)

    def predict(self, preambles: Sequence[Preamble]) -> np.ndarray:
        if not preambles:
            return np.empty(0, dtype=int)
        return self.predict_features(self.features(preambles))

    def predict_ids(self, preambles: Sequence[Preamble]) -> list[str]:
        return [self.classes[i] for i in self.predict(preambles)]


def fit_classifier(kind: str, preambles: Sequence[Preamble], classes: Sequence[str], *,
                   residual: bool = False, image_scale: int = 4, seed: int = 0,
                   train_config: nn.TrainConfig | None = None, mda_reg: float = 1e-3,
                   features: np.ndarray | None = None) -> SeiClassifier:
    """Train a classifier; preamble ``emitter_id`` values must be in ``classes``."""
    classes = list(classes)
    idx = {c: i for i, c in enumerate(classes)}
    try:
        labels = np.array([idx[p.emitter_id] for p in preambles])
    except KeyError as exc:
        raise ValueError(f"training preamble from unlisted emitter {exc}") from None
    clf = SeiClassifier(kind, classes, residual, image_scale)
    x = clf.features(preambles) if features is None else features
    if kind.startswith("mda"):
        clf.mda = mda_fit(x, labels, len(classes), reg=mda_reg)
    else:
        rep = _CNN_REPR[kind]
        clf.net = build_cnn(rep, len(classes), image_scale, seed)
        tc = train_config or default_cnn_train_config(rep, seed)
        clf.standardizer, clf.curve = fit_cnn(clf.net, x, labels, tc)
    return clf


# DAE --------------------------------------------------------------------------

@dataclass
class DaeModel:
    net: nn.Network
    curve: nn.LossCurve = field(default_factory=nn.LossCurve)

    def denoise_batch(self, x: np.ndarray) -> np.ndarray:
        out = self.net.predict(x)
        if out.shape != x.shape:
            raise ValueError(f"DAE output {out.shape} != input {x.shape}")
        return out

    def denoise(self, preambles: Sequence[Preamble]) -> list[Preamble]:
        if not preambles:
            return []
        seqs = F.samples_from_batch(self.denoise_batch(F.tensor_batch(preambles)))
        return [Preamble(energy_normalize(s), p.emitter_id, p.k, p.snr_db, normalized=True,
                         stages=p.stages, cfo_hz=p.cfo_hz, start=p.start) for s, p in zip(seqs, preambles)]


def dae_specs(hidden: int = 256, size: int = 1280) -> list[LayerSpec]:
    return [dense(hidden, "sigmoid"), dense(size, "sigmoid")]


def train_dae(noisy: Sequence[Preamble], clean: Sequence[Preamble], hidden: int = 256,
              train_config: nn.TrainConfig | None = None, seed: int = 0) -> DaeModel:
    """Fit noisy to clean time tensors; pairs must be aligned and share emitters."""
    if len(noisy) != len(clean) or not noisy:
        raise ValueError("DAE needs a nonempty list of aligned (noisy, clean) pairs")
    for a, b in zip(noisy, clean):
        if a.emitter_id != b.emitter_id:
            raise ValueError(f"unaligned DAE pair: {a.emitter_id} vs {b.emitter_id}")
    xin, xout = F.tensor_batch(noisy), F.tensor_batch(clean)
    net = nn.Network((xin.shape[1],), dae_specs(hidden, xin.shape[1]), seed=seed,
                     expect_output=(xin.shape[1],), name="dae")
    tc = train_config or nn.TrainConfig(learning_rate=1e-3, epochs=200, minibatch=250, seed=seed,
                                        loss="mse", l2=0.0)
    curve = nn.train(net, xin, xout, tc)
    return DaeModel(net, curve)


# authentication -----------------------------------------------------------------

class Outcome(str, enum.Enum):
    TRUE_ACCEPT = "true_accept"
    FALSE_REJECT = "false_reject"
    FALSE_ACCEPT = "false_accept"
    TRUE_REJECT = "true_reject"
    OTHER_REJECT = "other_reject"  # Eve classified as a different authorized emitter


@dataclass(frozen=True)
class AuthDecision:
    claimed_id: str
    predicted_id: str
    source_id: str | None
    outcome: Outcome


def decide(claimed_id: str, predicted_id: str, from_adversary: bool) -> Outcome:
    """Outcome table; an accept is a prediction equal to the claim."""
    if not from_adversary:
        return Outcome.TRUE_ACCEPT if predicted_id == claimed_id else Outcome.FALSE_REJECT
    if predicted_id == claimed_id:
        return Outcome.FALSE_ACCEPT
    if predicted_id == DECOY_ID:
        return Outcome.TRUE_REJECT
    return Outcome.OTHER_REJECT


def authenticate_many(claimed_ids: Sequence[str], signals: Sequence[Preamble], model: SeiClassifier,
                      defense: str = "none", dae: DaeModel | None = None) -> list[AuthDecision]:
    """Authenticate transmissions; a signal is adversarial when its source is not authorized."""
    if len(claimed_ids) != len(signals):
        raise ValueError("one claimed identity per signal")
    authorized = set(model.authorized)
    for c in set(claimed_ids):
        if c not in authorized:
            raise ValueError(f"unknown claimed identity {c!r}")
    if defense == "dae":
        if dae is None:
            raise ValueError("defense 'dae' requires a trained DaeModel")
        signals = dae.denoise(signals)
    elif defense != "none":
        raise ValueError(f"unknown defense {defense!r}")
    predicted = model.predict_ids(signals)
    return [AuthDecision(c, pid, s.emitter_id, decide(c, pid, s.emitter_id not in authorized))
            for c, pid, s in zip(claimed_ids, predicted, signals)]


def authenticate(claimed_id: str, signal: Preamble, model: SeiClassifier, defense: str = "none",
                 dae: DaeModel | None = None) -> AuthDecision:
    return authenticate_many([claimed_id], [signal], model, defense, dae)[0]
