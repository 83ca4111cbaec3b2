"""Experiment orchestration: scenario cells, FAR/TRR tallies, the matrix and the coffee-shop study.

A :class:`Lab` owns every cached artifact (datasets, classifiers, captures,
attacks) derived from one :class:`LabConfig`, so the cells of a matrix share
work.  Every random draw comes from a seed derived from the config seed and a
tag path, which keeps cells reproducible in any evaluation order.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import os
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import adversary as A
from . import features as F
from . import nn
from . import sei
from .pipeline import Preamble, PipelineConfig, run_pipeline
from .sigmodel import (B210, HACKRF, IDEAL_SDR, SDR_PROFILES, EmitterProfile, FrameLayout, SdrProfile,
                       default_profiles, sdr_family_profile, synthesize_frame)

log = logging.getLogger(__name__)

SNRS = (30.0, 9.0)
EVE_ID = "eve"
GUESS_FAR = 1 / 8
GREEN_TRR = 0.9


def derive_seed(base: int, *tags) -> int:
    """Stable 63-bit seed from a base seed and a tag path."""
    h = hashlib.sha256(repr((int(base),) + tuple(tags)).encode()).digest()
    return int.from_bytes(h[:8], "little") >> 1


def thread_limit() -> int:
    """Parallelism cap from ``SEI_LAB_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("SEI_LAB_THREADS", "1")))
    except ValueError:
        raise ValueError("SEI_LAB_THREADS must be a positive integer") from None


# scenario description ------------------------------------------------------------

@dataclass(frozen=True)
class ScenarioSpec:
    snr_db: float = 30.0
    decoy: bool = False
    residual: bool = False
    sdr: SdrProfile = B210
    attack: str = "replay"
    classifier: str = "mda_gabor"
    defense: str = "none"
    seed: int = 0

    def __post_init__(self):
        if self.snr_db not in SNRS:
            raise ValueError(f"snr_db must be one of {SNRS}, got {self.snr_db}")
        if self.attack not in A.ATTACK_KINDS + ("none",):
            raise ValueError(f"unknown attack {self.attack!r}")
        if self.classifier not in sei.CLASSIFIER_KINDS:
            raise ValueError(f"unknown classifier {self.classifier!r}")
        if self.defense not in ("none", "dae"):
            raise ValueError(f"unknown defense {self.defense!r}")

    def sort_key(self):
        return (-self.snr_db, self.decoy, self.residual, self.sdr.name, A.ATTACK_KINDS.index(self.attack)
                if self.attack in A.ATTACK_KINDS else -1, sei.CLASSIFIER_KINDS.index(self.classifier),
                self.defense, self.seed)

    def to_dict(self) -> dict:
        return {"snr_db": self.snr_db, "decoy": self.decoy, "residual": self.residual, "sdr": self.sdr.name,
                "attack": self.attack, "classifier": self.classifier, "defense": self.defense, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        d = dict(d)
        if isinstance(d.get("sdr"), str):
            d["sdr"] = SDR_PROFILES[d["sdr"]]
        elif isinstance(d.get("sdr"), dict):
            d["sdr"] = SdrProfile.from_dict(d["sdr"])
        return cls(**d)


def full_matrix(seed: int = 0, sdrs: Sequence[SdrProfile] = (B210, HACKRF)) -> list[ScenarioSpec]:
    """Every (SNR, decoy, residual, SDR, attack, classifier) cell: 2*2*2*2*3*5 = 240."""
    specs = [ScenarioSpec(snr, decoy, residual, sdr, attack, clf, "none", seed)
             for snr in SNRS for decoy in (False, True) for residual in (False, True)
             for sdr in sdrs for attack in A.ATTACK_KINDS for clf in sei.CLASSIFIER_KINDS]
    return sorted(specs, key=ScenarioSpec.sort_key)


@dataclass
class EvalReport:
    scenario: ScenarioSpec
    counts: dict
    authorized_transmissions: int
    eve_transmissions: int
    confusion: list  # authorized test set, rows true class, columns predicted
    eve_predictions: dict  # predicted label -> count over Eve transmissions
    classes: list
    undetected: int = 0  # Eve transmissions Bob's pipeline never extracted

    @property
    def far(self) -> float:
        return self.counts["false_accept"] / self.eve_transmissions if self.eve_transmissions else 0.0

    @property
    def trr(self) -> float:
        return self.counts["true_reject"] / self.eve_transmissions if self.eve_transmissions else 0.0

    @property
    def accuracy(self) -> float:
        n = self.authorized_transmissions
        return self.counts["true_accept"] / n if n else 0.0

    @property
    def far_flag(self) -> bool:
        return self.far > GUESS_FAR

    @property
    def trr_flag(self) -> bool:
        return self.trr > GREEN_TRR

    def cell(self) -> str:
        return f"{100 * self.far:.1f}%/{100 * self.trr:.1f}%"

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario.to_dict(),
            "counts": dict(self.counts),
            "authorized_transmissions": self.authorized_transmissions,
            "eve_transmissions": self.eve_transmissions,
            "far": self.far,
            "trr": self.trr,
            "accuracy": self.accuracy,
            "cell": self.cell(),
            "far_flag": self.far_flag,
            "trr_flag": self.trr_flag,
            "classes": list(self.classes),
            "confusion": self.confusion,
            "eve_predictions": dict(self.eve_predictions),
            "undetected": self.undetected,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def tally(auth: Sequence[sei.AuthDecision], eve: Sequence[sei.AuthDecision], classes: Sequence[str],
          spec: ScenarioSpec, undetected: int = 0) -> EvalReport:
    counts = Counter({o.value: 0 for o in sei.Outcome})
    counts.update(d.outcome.value for d in auth)
    counts.update(d.outcome.value for d in eve)
    idx = {c: i for i, c in enumerate(classes)}
    conf = np.zeros((len(classes), len(classes)), dtype=int)
    for d in auth:
        conf[idx[d.source_id], idx[d.predicted_id]] += 1
    eve_pred = Counter({c: 0 for c in classes})
    eve_pred.update(d.predicted_id for d in eve)
    return EvalReport(spec, dict(counts), len(auth), len(eve), conf.tolist(), dict(eve_pred), list(classes),
                      undetected)


# lab configuration -------------------------------------------------------------------

@dataclass
class LabConfig:
    """Scale and model settings for one family of experiments.

    Defaults are desk scale; ``full_scale()`` restores the large dataset,
    epoch and capture counts.
    """

    seed: int = 0
    n_emitters: int = 8
    profile_seed: int = 2023
    n_train: int = 250  # per emitter
    n_test: int = 100  # per emitter
    capture_snr_db: float = 30.0
    n_capture: int = 100  # Eve's captures per target (and self-observations)
    targets: list | None = None  # emitter indices Eve mimics; None = all
    image_scale: int = 4
    mda_reg: float = 1e-3
    cnn_epochs: dict = field(default_factory=lambda: {"time": 15, "frequency": 15, "gabor_image": 10})
    cnn_minibatch: int = 250
    cnn_lr: float = 0.01
    ae_hidden: int = 128
    ae_max_epochs: int = 2000
    ae_lr: float = 1e-3
    gan: dict = field(default_factory=lambda: {"width_scale": 0.25, "warm_start_epochs": 100, "warm_start_lr": 2e-3,
                                               "epochs": 10})
    dae_hidden: int = 256
    dae_epochs: int = 200
    pipeline: dict = field(default_factory=dict)
    # explicit profile overrides (EmitterProfile dicts); None keeps the shipped defaults
    profiles: list | None = None
    eve_profile: dict | None = None
    decoy_profile: dict | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "LabConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown lab config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def full_scale(cls, **kw) -> "LabConfig":
        base = dict(n_train=800, n_test=200, n_capture=1000, ae_max_epochs=100_000,
                    cnn_epochs={"time": 100, "frequency": 100, "gabor_image": 30}, cnn_minibatch=8000,
                    image_scale=1, gan={"width_scale": 1.0, "warm_start_epochs": 0, "epochs": 10})
        return cls(**(base | kw))


_CNN_REPR = {"cnn_time": "time", "cnn_freq": "frequency", "cnn_gabor": "gabor_image"}


class Lab:
    """Cache of everything one config can derive.  Not thread safe."""

    def __init__(self, config: LabConfig | None = None):
        self.config = config or LabConfig()
        c = self.config
        if c.profiles is not None:
            self.profiles = [EmitterProfile.from_dict(d) for d in c.profiles]
            if len(self.profiles) != c.n_emitters:
                raise ValueError(f"{len(self.profiles)} profiles given but n_emitters={c.n_emitters}")
        else:
            self.profiles = default_profiles(c.n_emitters, c.profile_seed)
        ids = [p.emitter_id for p in self.profiles]
        if len(set(ids)) != len(ids) or {EVE_ID, sei.DECOY_ID} & set(ids):
            raise ValueError(f"emitter ids must be unique and not reserved: {ids}")
        self.eve_profile = (EmitterProfile.from_dict(c.eve_profile) if c.eve_profile
                            else sdr_family_profile(EVE_ID, 0))
        self.decoy_profile = (EmitterProfile.from_dict(c.decoy_profile) if c.decoy_profile
                              else sdr_family_profile(sei.DECOY_ID, 1))
        self.pipeline_config = PipelineConfig.from_dict(c.pipeline)
        self.authorized = [p.emitter_id for p in self.profiles]
        idx = range(c.n_emitters) if c.targets is None else c.targets
        self.targets = [self.authorized[i] for i in idx]
        self._cache: dict = {}

    def _cached(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]

    def seed(self, *tags) -> int:
        return derive_seed(self.config.seed, *tags)

    # transmissions to Bob ---------------------------------------------------------

    def receive(self, profile: EmitterProfile, snr: float, seed: int, preamble=None) -> Preamble | None:
        fr = synthesize_frame(profile, snr, seed, FrameLayout(), preamble)
        got = run_pipeline(fr, self.pipeline_config)
        if len(got) != 1:
            return None
        p = got[0]
        p.emitter_id = profile.emitter_id
        return p

    def bob_set(self, role: str, snr: float) -> list[Preamble]:
        """Authorized preambles as Bob receives them; ``role`` is train or test."""
        n = self.config.n_train if role == "train" else self.config.n_test

        def build():
            out = []
            for prof in self.profiles:
                for k in range(n):
                    p = self.receive(prof, snr, self.seed("bob", role, prof.emitter_id, k))
                    if p is not None:
                        out.append(p)
            return out
        return self._cached(("bob", role, snr), build)

    def decoy_set(self, snr: float) -> list[Preamble]:
        def build():
            out = []
            for k in range(self.config.n_train):
                p = self.receive(self.decoy_profile, snr, self.seed("decoy", k))
                if p is not None:
                    out.append(p)
            return out
        return self._cached(("decoy", snr), build)

    def dae_pairs(self, lo: float = 9.0, hi: float = 30.0):
        """Matched (noisy, clean) preambles: the same frame seed received at two SNRs."""
        def build():
            noisy, clean = [], []
            for prof in self.profiles:
                for k in range(self.config.n_train):
                    s = self.seed("bob", "train", prof.emitter_id, k)
                    a, b = self.receive(prof, lo, s), self.receive(prof, hi, s)
                    if a is not None and b is not None:
                        noisy.append(a)
                        clean.append(b)
            return noisy, clean
        return self._cached(("dae_pairs", lo, hi), build)

    def dae(self, snr_in: float = 9.0) -> sei.DaeModel:
        def build():
            noisy, clean = self.dae_pairs(snr_in, 30.0)
            tc = nn.TrainConfig(learning_rate=1e-3, epochs=self.config.dae_epochs, minibatch=250,
                                seed=self.seed("dae"), loss="mse", l2=0.0)
            return sei.train_dae(noisy, clean, self.config.dae_hidden, tc, seed=self.seed("dae-init") % 2**31)
        return self._cached(("dae", snr_in), build)

    # defender -----------------------------------------------------------------------

    def classes(self, decoy: bool) -> list[str]:
        return self.authorized + ([sei.DECOY_ID] if decoy else [])

    def _defended(self, preambles, defense: str, snr: float):
        if defense == "dae":
            return self.dae(9.0).denoise(preambles)
        return preambles

    def classifier(self, kind: str, snr: float, decoy: bool, residual: bool, defense: str = "none",
                   shuffle_labels: bool = False) -> sei.SeiClassifier:
        def build():
            train = list(self.bob_set("train", snr))
            if decoy:
                train += self.decoy_set(snr)
            train = self._defended(train, defense, snr)
            if shuffle_labels:
                rng = np.random.default_rng(self.seed("shuffle", kind, snr))
                ids = [p.emitter_id for p in train]
                perm = rng.permutation(len(ids))
                train = [dataclasses.replace(p, emitter_id=ids[j]) for p, j in zip(train, perm)]
            tc = None
            if kind in _CNN_REPR:
                tc = nn.TrainConfig(learning_rate=self.config.cnn_lr, epochs=self.config.cnn_epochs[_CNN_REPR[kind]],
                                    minibatch=self.config.cnn_minibatch, seed=self.seed("cnn", kind, snr, decoy),
                                    loss="cce")
            return sei.fit_classifier(kind, train, self.classes(decoy), residual=residual,
                                      image_scale=self.config.image_scale, seed=self.seed("init", kind) % 2**31,
                                      train_config=tc, mda_reg=self.config.mda_reg)
        return self._cached(("clf", kind, snr, decoy, residual, defense, shuffle_labels), build)

    # adversary -------------------------------------------------------------------------

    def _target_profile(self, target: str) -> EmitterProfile:
        return self.profiles[self.authorized.index(target)]

    def captures(self, sdr: SdrProfile, target: str) -> list[Preamble]:
        """Eve's eavesdropped copies of ``target``'s preambles."""
        def build():
            prof = self._target_profile(target)
            frames = [synthesize_frame(prof, self.config.capture_snr_db, self.seed("capture", target, k))
                      for k in range(self.config.n_capture)]
            return A.eavesdrop(frames, sdr, self.seed("eavesdrop", sdr.name, target), limit=self.config.n_capture,
                               config=self.pipeline_config)
        return self._cached(("capture", sdr, target), build)

    def eve_self(self, sdr: SdrProfile) -> list[Preamble]:
        """Eve's self-monitored preambles (her own transmissions through her receiver)."""
        def build():
            frames = [synthesize_frame(self.eve_profile, self.config.capture_snr_db, self.seed("self", k))
                      for k in range(self.config.n_capture)]
            return A.eavesdrop(frames, sdr, self.seed("self-rx", sdr.name), limit=self.config.n_capture,
                               config=self.pipeline_config)
        return self._cached(("self", sdr), build)

    def ae(self, sdr: SdrProfile, target: str) -> A.MimicryAe:
        def build():
            tc = A.ae_train_config(self.config.ae_max_epochs, seed=self.seed("ae", target) % 2**31,
                                   learning_rate=self.config.ae_lr)
            return A.train_mimicry_ae(self.captures(sdr, target), self.config.ae_hidden, tc,
                                      seed=self.seed("ae-init", sdr.name, target) % 2**31,
                                      min_preambles=min(100, self.config.n_capture))
        return self._cached(("ae", sdr, target), build)

    def generator_base(self, sdr: SdrProfile) -> nn.Network:
        """Identity-pretrained generator shared by every target's GAN."""
        def build():
            cfg = A.GanConfig(**(self.config.gan | {"seed": self.seed("gan-base", sdr.name) % 2**31}))
            return A.pretrain_generator(self.eve_self(sdr), cfg)
        return self._cached(("gan_base", sdr), build)

    def gan(self, sdr: SdrProfile, target: str) -> A.GanModel:
        def build():
            cfg = A.GanConfig(**(self.config.gan | {"seed": self.seed("gan", sdr.name, target) % 2**31}))
            G = self.generator_base(sdr).copy() if cfg.warm_start_epochs else None
            return A.train_gan(self.captures(sdr, target), self.eve_self(sdr), cfg, G=G)
        return self._cached(("gan", sdr, target), build)

    def attack(self, kind: str, sdr: SdrProfile, target: str) -> A.AttackArtifact:
        def build():
            if kind == "replay":
                return A.replay_attack(self.captures(sdr, target), sdr)
            if kind == "ae":
                return A.ae_attack(self.ae(sdr, target), self.eve_self(sdr), sdr)
            if kind == "gan":
                return A.gan_attack(self.gan(sdr, target), self.eve_self(sdr), sdr)
            raise ValueError(f"unknown attack {kind!r}")
        return self._cached(("attack", kind, sdr, target), build)

    def eve_transmissions(self, kind: str, sdr: SdrProfile, snr: float) -> list[tuple[str, Preamble]]:
        """(claimed id, preamble as Bob receives it) for every Eve transmission.

        ``kind='none'`` is unmodified Eve: ideal preambles sent through her radio.
        Transmissions Bob fails to extract are counted in :meth:`undetected`.
        """
        def build():
            out, missed = [], 0
            for target in self.targets:
                if kind == "none":
                    rows = [None] * self.config.n_capture
                else:
                    rows = list(self.attack(kind, sdr, target).preambles)
                for k, row in enumerate(rows):
                    pre = None if row is None else row
                    p = self.receive(self.eve_profile, snr, self.seed("eve-tx", kind, sdr.name, target, snr, k), pre)
                    if p is None:
                        missed += 1
                    else:
                        out.append((target, p))
            return out, missed
        return self._cached(("eve_tx", kind, sdr, snr), build)[0]

    def undetected(self, kind: str, sdr: SdrProfile, snr: float) -> int:
        self.eve_transmissions(kind, sdr, snr)
        return self._cache[("eve_tx", kind, sdr, snr)][1]

    # evaluation --------------------------------------------------------------------------

    def run(self, spec: ScenarioSpec, shuffle_labels: bool = False) -> EvalReport:
        stage = "classifier"
        try:
            clf = self.classifier(spec.classifier, spec.snr_db, spec.decoy, spec.residual, spec.defense,
                                  shuffle_labels)
            stage = "authorized"
            test = self.bob_set("test", spec.snr_db)
            dae = self.dae(9.0) if spec.defense == "dae" else None
            auth = sei.authenticate_many([p.emitter_id for p in test], test, clf, spec.defense, dae)
            stage = "attack"
            tx = self.eve_transmissions(spec.attack, spec.sdr, spec.snr_db)
            stage = "authenticate"
            eve = sei.authenticate_many([c for c, _ in tx], [p for _, p in tx], clf, spec.defense, dae)
        except Exception as exc:
            raise RuntimeError(f"scenario {spec.to_dict()} failed at stage {stage!r}: {exc}") from exc
        return tally(auth, eve, clf.classes, spec, self.undetected(spec.attack, spec.sdr, spec.snr_db))


def run_scenario(spec: ScenarioSpec, lab: Lab | None = None) -> EvalReport:
    lab = lab or Lab(LabConfig(seed=spec.seed))
    return lab.run(spec)


# matrix ---------------------------------------------------------------------------------

MATRIX_COLUMNS = ["snr_db", "decoy", "residual", "sdr", "attack", "classifier", "defense", "seed",
                  "far", "trr", "cell", "far_flag", "trr_flag", "accuracy", "eve_transmissions"]


@dataclass
class MatrixTable:
    reports: list

    def rows(self) -> list[dict]:
        out = []
        for r in self.reports:
            d = r.to_dict()
            row = dict(d["scenario"])
            row.update({k: d[k] for k in ("far", "trr", "cell", "far_flag", "trr_flag", "accuracy",
                                          "eve_transmissions")})
            out.append(row)
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=MATRIX_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in self.rows():
            w.writerow(row)
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"columns": MATRIX_COLUMNS, "rows": self.rows()}, indent=2)

    def write(self, out_dir) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        pc, pj = out / "matrix.csv", out / "matrix.json"
        pc.write_text(self.to_csv())
        pj.write_text(self.to_json())
        return pc, pj


def run_matrix(specs: Sequence[ScenarioSpec], lab: Lab | None = None) -> MatrixTable:
    if not specs:
        raise ValueError("run_matrix needs at least one scenario")
    seeds = {s.seed for s in specs}
    if lab is None:
        if len(seeds) != 1:
            raise ValueError("scenarios with different seeds need separate labs")
        lab = Lab(LabConfig(seed=seeds.pop()))
    ordered = sorted(specs, key=ScenarioSpec.sort_key)
    reports = []
    for i, s in enumerate(ordered):
        log.info("cell %d/%d %s", i + 1, len(ordered), s.to_dict())
        reports.append(lab.run(s))
    return MatrixTable(reports)


# derived experiments -------------------------------------------------------------------------

def guess_baseline(lab: Lab, n_trials: int = 10_000, classifier: str = "mda_gabor", snr: float = 30.0) -> float:
    """FAR of a label-shuffled classifier over unmodified-Eve trials with rotating claims."""
    clf = lab.classifier(classifier, snr, False, False, shuffle_labels=True)
    claims, sigs = [], []
    for i in range(n_trials):
        p = lab.receive(lab.eve_profile, snr, lab.seed("guess", i))
        if p is None:
            continue
        claims.append(lab.authorized[i % len(lab.authorized)])
        sigs.append(p)
    dec = sei.authenticate_many(claims, sigs, clf)
    return sum(d.outcome is sei.Outcome.FALSE_ACCEPT for d in dec) / len(dec)


def fingerprint_scaler(lab: Lab, snr: float = 30.0):
    """Standardization fitted on Bob's training fingerprints, used for distances."""
    x = sei.extract_features("mda_gabor", lab.bob_set("train", snr))
    mu, sd = x.mean(axis=0), x.std(axis=0)
    sd[sd == 0] = 1.0
    return lambda v: (np.asarray(v) - mu) / sd


def fingerprint_distances(lab: Lab, kind: str, sdr: SdrProfile, snr: float = 30.0) -> dict:
    """Mean standardized fingerprint distance to the claimed emitter's centroid.

    Returns distances for the attack output and for unmodified Eve; NaN when
    none of the transmissions reached Bob.
    """
    scale = fingerprint_scaler(lab, snr)
    train = lab.bob_set("train", snr)
    fp_train = scale(sei.extract_features("mda_gabor", train))
    ids = np.array([p.emitter_id for p in train])
    centroids = {t: fp_train[ids == t].mean(axis=0) for t in lab.targets}
    out = {}
    for label, k in (("attack", kind), ("unmodified", "none")):
        tx = lab.eve_transmissions(k, sdr, snr)
        if not tx:
            out[label] = math.nan
            continue
        fp = scale(sei.extract_features("mda_gabor", [p for _, p in tx]))
        out[label] = float(np.mean([np.linalg.norm(v - centroids[c]) for v, (c, _) in zip(fp, tx)]))
    return out


# coffee shop -----------------------------------------------------------------------------------

@dataclass
class CoffeeShopConfig:
    n_per_entity: int = 2_000
    n_train: int = 1_000
    snr_range: tuple = (10.0, 12.0)
    user_dc_step: float = 0.02
    classifier: str = "mda_freq"
    epochs: int = 100
    minibatch: int = 250
    learning_rate: float = 0.01
    attack: str = "none"  # none | replay | ae | gan
    image_scale: int = 4

    @classmethod
    def from_dict(cls, d: dict) -> "CoffeeShopConfig":
        return cls(**d)


def coffee_shop_entities(seed: int = 7, dc_step: float = 0.02) -> tuple[EmitterProfile, list[EmitterProfile]]:
    """Eve plus three users whose DC terms sit 120 degrees apart around hers.

    The users share Eve's model and oscillator; only the LO-leakage term moves,
    so Eve is the symmetric point of the three.
    """
    eve = sdr_family_profile(EVE_ID, 0, seed)
    users = [dataclasses.replace(eve, emitter_id=f"user{k + 1}",
                                 dc_offset=eve.dc_offset + dc_step * complex(np.exp(2j * np.pi * k / 3)))
             for k in range(3)]
    return eve, users


@dataclass
class CoffeeShopReport:
    case: int
    sdr: str
    seed: int
    classes: list
    tables: dict  # location -> {predicted label: percent}
    user_accuracy: dict

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def run_coffee_shop(case: int, sdr: SdrProfile = B210, seed: int = 0,
                    config: CoffeeShopConfig | None = None) -> CoffeeShopReport:
    """Three users plus Eve at 10-12 dB; Case 1 trains on Eve's class, Case 2 does not.

    Eve transmits from two locations (D, E), each a distinct channel seed stream.
    Reports the percentage of Eve's transmissions assigned to each identity.
    """
    if case not in (1, 2):
        raise ValueError("case must be 1 or 2")
    cfg = config or CoffeeShopConfig()
    if cfg.n_train >= cfg.n_per_entity:
        raise ValueError("n_train must leave held-out preambles")
    eve, users = coffee_shop_entities(dc_step=cfg.user_dc_step)
    entities = users + ([eve] if case == 1 else [])
    classes = [e.emitter_id for e in entities]
    pcfg = PipelineConfig()

    def collect(prof, location, n):
        rng = np.random.default_rng(derive_seed(seed, "coffee", location, "snr"))
        out = []
        for k in range(n):
            snr = float(rng.uniform(*cfg.snr_range))
            got = run_pipeline(synthesize_frame(prof, snr, derive_seed(seed, "coffee", location, k)), pcfg)
            if len(got) == 1:
                got[0].emitter_id = prof.emitter_id
                out.append(got[0])
        return out

    data = {e.emitter_id: collect(e, e.emitter_id, cfg.n_per_entity) for e in entities}
    train = [p for e in entities for p in data[e.emitter_id][: cfg.n_train]]
    held = {e.emitter_id: data[e.emitter_id][cfg.n_train:] for e in entities}
    tc = nn.TrainConfig(learning_rate=cfg.learning_rate, epochs=cfg.epochs, minibatch=cfg.minibatch,
                        seed=derive_seed(seed, "coffee-train") % 2**31, loss="cce")
    clf = sei.fit_classifier(cfg.classifier, train, classes, image_scale=cfg.image_scale,
                             seed=derive_seed(seed, "coffee-init") % 2**31, train_config=tc)
    user_acc = {}
    for u in users:
        pred = clf.predict_ids(held[u.emitter_id])
        user_acc[u.emitter_id] = float(np.mean([q == u.emitter_id for q in pred])) if pred else 0.0
    n_eve_test = cfg.n_per_entity - cfg.n_train
    tables = {}
    for loc in ("D", "E"):
        if case == 1 and loc == "D":
            eve_pre = held[EVE_ID]
        else:
            eve_pre = collect(eve, f"eve-{loc}", n_eve_test)
        if cfg.attack != "none":
            eve_pre = _coffee_attack(cfg, sdr, seed, loc, users, eve, eve_pre, collect)
        pred = Counter(clf.predict_ids(eve_pre))
        total = max(sum(pred.values()), 1)
        tables[loc] = {c: 100.0 * pred.get(c, 0) / total for c in classes}
    return CoffeeShopReport(case, sdr.name, seed, classes, tables, user_acc)


def _coffee_attack(cfg, sdr, seed, loc, users, eve, eve_pre, collect):
    """Eve mimics each user in turn; returns what the defender receives."""
    out = []
    pcfg = PipelineConfig()
    n_each = max(1, len(eve_pre) // len(users))
    for u in users:
        frames = [synthesize_frame(u, 30.0, derive_seed(seed, "coffee-cap", u.emitter_id, k)) for k in range(n_each)]
        cap = A.eavesdrop(frames, sdr, derive_seed(seed, "coffee-rx", u.emitter_id), limit=n_each)
        own = eve_pre[:n_each]
        if cfg.attack == "replay":
            art = A.replay_attack(cap, sdr)
        elif cfg.attack == "ae":
            art = A.ae_attack(A.train_mimicry_ae(cap, train_config=A.ae_train_config(2000),
                                                 min_preambles=min(100, len(cap))), own, sdr)
        else:
            art = A.gan_attack(A.train_gan(cap, own, A.GanConfig(width_scale=0.25, warm_start_epochs=30)), own, sdr)
        rng = np.random.default_rng(derive_seed(seed, "coffee-attack-snr", loc, u.emitter_id))
        for k, row in enumerate(art.preambles):
            snr = float(rng.uniform(*cfg.snr_range))
            got = run_pipeline(synthesize_frame(eve, snr, derive_seed(seed, "coffee-atk", loc, u.emitter_id, k),
                                                preamble=row), pcfg)
            if len(got) == 1:
                out.append(got[0])
    return out
