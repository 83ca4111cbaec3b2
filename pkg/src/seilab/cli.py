"""Command-line entry point: ``seilab <subcommand> [options]``.

Exit status: 0 success, 1 validation error (bad flags, bad config, bad input
files), 2 runtime failure.
"""

from __future__ import annotations

import os

# BLAS pools are sized at import time, so honor the cap before numpy loads
if "SEI_LAB_THREADS" in os.environ:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, os.environ["SEI_LAB_THREADS"])

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import adversary as A
from . import features as F
from . import harness as H
from . import nn
from . import sei
from .config import ConfigError, RunConfig, load_config
from .iqfile import read_seiq, write_seiq
from .pipeline import PipelineConfig, Preamble, run_pipeline
from .sigmodel import SDR_PROFILES, IqFrame, BASE_RATE, synthesize_frame

log = logging.getLogger("seilab")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _existing(text: str) -> Path:
    path = Path(text)
    if not path.is_file():
        raise argparse.ArgumentTypeError(f"no such file: {text}")
    return path


def _snr(text: str) -> float:
    v = float(text)
    if v not in H.SNRS:
        raise argparse.ArgumentTypeError(f"SNR must be one of {H.SNRS}")
    return v


def _sdr(text: str):
    if text not in SDR_PROFILES:
        raise argparse.ArgumentTypeError(f"unknown SDR {text!r}; choose from {sorted(SDR_PROFILES)}")
    return SDR_PROFILES[text]


def build_parser() -> argparse.ArgumentParser:
    # suppressed defaults so flags given before the subcommand survive the subparser
    common = _Parser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("--seed", type=_u64, help="override the configured seed")
    common.add_argument("--out", type=Path, help="output directory (default seilab-out)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="seilab", description="SEI mimicry attack and defense lab", parents=[common])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", parents=[common], help="synthesize framed records as SEIQ files")
    s.add_argument("--count", type=int, default=10, help="frames per emitter")
    s.add_argument("--snr", type=float, default=30.0)
    s.add_argument("--emitter", action="append", help="emitter id (repeatable; default all)")

    s = sub.add_parser("pipeline", parents=[common], help="extract preambles from SEIQ records")
    s.add_argument("inputs", nargs="+", type=_existing)

    s = sub.add_parser("fingerprint", parents=[common], help="features from a preamble SEIQ file")
    s.add_argument("input", type=_existing)
    s.add_argument("--kind", choices=list(sei.CLASSIFIER_KINDS), default="mda_gabor")
    s.add_argument("--residual", action="store_true")

    def scenario_flags(s, multi=False):
        kw = {"action": "append"} if multi else {}
        s.add_argument("--snr", type=_snr, **({"action": "append"} if multi else {"default": 30.0}))
        s.add_argument("--classifier", choices=list(sei.CLASSIFIER_KINDS), **(kw or {"default": "mda_gabor"}))
        s.add_argument("--sdr", type=_sdr, **(kw or {"default": SDR_PROFILES["b210"]}))
        s.add_argument("--attack", choices=list(A.ATTACK_KINDS), **(kw or {"default": "replay"}))

    s = sub.add_parser("train-sei", parents=[common], help="train and save one defender classifier")
    s.add_argument("--snr", type=_snr, default=30.0)
    s.add_argument("--classifier", choices=list(sei.CLASSIFIER_KINDS), default="mda_gabor")
    s.add_argument("--decoy", action="store_true")
    s.add_argument("--residual", action="store_true")

    s = sub.add_parser("train-attack", parents=[common], help="mount one attack and save its artifact")
    s.add_argument("--attack", choices=list(A.ATTACK_KINDS), default="replay")
    s.add_argument("--sdr", type=_sdr, default=SDR_PROFILES["b210"])
    s.add_argument("--target", default="E0")

    s = sub.add_parser("evaluate", parents=[common], help="run one scenario cell")
    scenario_flags(s)
    s.add_argument("--decoy", action="store_true")
    s.add_argument("--residual", action="store_true")
    s.add_argument("--defense", choices=["none", "dae"], default="none")

    s = sub.add_parser("matrix", parents=[common], help="run a grid of scenario cells")
    s.add_argument("--all", action="store_true", help="the full 240-cell grid")
    scenario_flags(s, multi=True)

    s = sub.add_parser("coffee-shop", parents=[common], help="three users plus Eve")
    s.add_argument("--case", type=int, choices=[1, 2], required=True)
    s.add_argument("--sdr", type=_sdr, default=SDR_PROFILES["b210"])
    s.add_argument("--attack", choices=["none"] + list(A.ATTACK_KINDS))

    s = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of every layer kind")
    return p


# subcommands -------------------------------------------------------------------

def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def cmd_synth(args, cfg: RunConfig) -> int:
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    lab = H.Lab(cfg.lab_config())
    wanted = args.emitter or lab.authorized
    unknown = set(wanted) - set(lab.authorized)
    if unknown:
        raise UsageError(f"unknown emitters: {sorted(unknown)}")
    args.out.mkdir(parents=True, exist_ok=True)
    for prof in lab.profiles:
        if prof.emitter_id not in wanted:
            continue
        frames = [synthesize_frame(prof, args.snr, lab.seed("synth", prof.emitter_id, k)) for k in range(args.count)]
        starts = np.cumsum([0] + [f.samples.size for f in frames[:-1]]).tolist()
        path = args.out / f"{prof.emitter_id}.seiq"
        write_seiq(path, np.concatenate([f.samples for f in frames]), sample_rate=BASE_RATE,
                   emitter_id=prof.emitter_id, snr_db=args.snr, seed=cfg.seed, count=len(frames),
                   frame_starts=starts, preamble_starts=[f.meta["preamble_start"] for f in frames])
        print(path)
    return 0


def _load(path: Path):
    try:
        return read_seiq(path)
    except (ValueError, KeyError) as exc:
        raise UsageError(f"bad SEIQ input: {exc}") from None


def _read_records(path: Path) -> list[IqFrame]:
    x, meta = _load(path)
    x = x.reshape(-1)
    fs = float(meta.get("sample_rate", BASE_RATE))
    starts = meta.get("frame_starts", [0])
    bounds = list(starts) + [x.size]
    return [IqFrame(x[a:b], fs, meta.get("emitter_id"), meta.get("snr_db"), meta.get("seed"))
            for a, b in zip(bounds[:-1], bounds[1:])]


def cmd_pipeline(args, cfg: RunConfig) -> int:
    pcfg = PipelineConfig.from_dict(cfg.lab.pipeline)
    args.out.mkdir(parents=True, exist_ok=True)
    for path in args.inputs:
        records = _read_records(path)
        pre = [p for r in records for p in run_pipeline(r, pcfg)]
        if not pre:
            raise RuntimeError(f"{path}: no preambles extracted")
        dst = args.out / f"{path.stem}.preambles.seiq"
        write_seiq(dst, np.array([p.samples for p in pre]), sample_rate=BASE_RATE,
                   emitter_id=records[0].emitter_id, count=len(pre), frames=len(records))
        print(f"{dst}\t{len(pre)} of {len(records)} frames")
    return 0


def _read_preambles(path: Path) -> list[Preamble]:
    x, meta = _load(path)
    x = np.atleast_2d(x)
    if x.shape[1] != 320:
        raise UsageError(f"{path}: expected rows of 320 samples, got {x.shape}")
    rows = x / np.sqrt(np.sum(np.abs(x) ** 2, axis=1, keepdims=True))
    return [Preamble(r, meta.get("emitter_id"), k, normalized=True) for k, r in enumerate(rows)]


def cmd_fingerprint(args, cfg: RunConfig) -> int:
    pre = _read_preambles(args.input)
    feats = sei.extract_features(args.kind, pre, args.residual)
    dst = args.out / f"{args.input.stem}.{args.kind}.bin"
    args.out.mkdir(parents=True, exist_ok=True)
    F.save_features(dst, feats, kind=args.kind, residual=args.residual, source=str(args.input))
    print(f"{dst}\t{feats.shape}")
    return 0


def cmd_train_sei(args, cfg: RunConfig) -> int:
    lab = H.Lab(cfg.lab_config())
    clf = lab.classifier(args.classifier, args.snr, args.decoy, args.residual)
    test = lab.bob_set("test", args.snr)
    pred = clf.predict_ids(test)
    acc = float(np.mean([a == p.emitter_id for a, p in zip(pred, test)]))
    args.out.mkdir(parents=True, exist_ok=True)
    stem = args.out / f"{args.classifier}_{int(args.snr)}dB{'_decoy' if args.decoy else ''}"
    if clf.mda is not None:
        sei.save_mda(clf.mda, stem.with_suffix(".mda"), classes=clf.classes)
    else:
        nn.save_checkpoint(clf.net, stem.with_suffix(".ckpt"))
        clf.curve.write_csv(stem.with_suffix(".loss.csv"))
    _write_json(stem.with_suffix(".report.json"), {"classifier": args.classifier, "snr_db": args.snr, "decoy": args.decoy,
                                            "residual": args.residual, "classes": clf.classes,
                                            "test_accuracy": acc, "n_test": len(test)})
    print(json.dumps({"test_accuracy": acc}))
    return 0


def cmd_train_attack(args, cfg: RunConfig) -> int:
    lab = H.Lab(cfg.lab_config())
    if args.target not in lab.authorized:
        raise UsageError(f"unknown target {args.target!r}")
    art = lab.attack(args.attack, args.sdr, args.target)
    dst = args.out / f"{args.attack}_{args.sdr.name}_{args.target}.seiq"
    args.out.mkdir(parents=True, exist_ok=True)
    art.save(dst)
    print(f"{dst}\t{len(art)} preambles")
    return 0


def cmd_evaluate(args, cfg: RunConfig) -> int:
    spec = H.ScenarioSpec(args.snr, args.decoy, args.residual, args.sdr, args.attack, args.classifier,
                          args.defense, cfg.seed)
    report = H.Lab(cfg.lab_config()).run(spec)
    _write_json(args.out / "report.json", report.to_dict())
    print(report.to_json())
    return 0


def cmd_matrix(args, cfg: RunConfig) -> int:
    sdrs = [SDR_PROFILES[n] for n in cfg.matrix_sdrs]
    specs = H.full_matrix(cfg.seed, sdrs)
    if not args.all:
        pick = lambda vals, attr: specs if not vals else [s for s in specs if getattr(s, attr) in vals]
        for vals, attr in ((args.snr, "snr_db"), (args.classifier, "classifier"), (args.sdr, "sdr"),
                           (args.attack, "attack")):
            specs = pick(vals, attr) if vals else specs
        if not any((args.snr, args.classifier, args.sdr, args.attack)):
            raise UsageError("matrix needs --all or at least one selection flag")
    table = H.run_matrix(specs, H.Lab(cfg.lab_config()))
    csv_path, json_path = table.write(args.out)
    sys.stdout.write(table.to_csv())
    log.info("wrote %s and %s", csv_path, json_path)
    return 0


def cmd_coffee_shop(args, cfg: RunConfig) -> int:
    cs = cfg.coffee_shop
    if args.attack is not None:
        cs = dataclasses.replace(cs, attack=args.attack)
    report = H.run_coffee_shop(args.case, args.sdr, cfg.seed, cs)
    _write_json(args.out / f"coffee_shop_case{args.case}.json", report.to_dict())
    print(report.to_json())
    return 0


def cmd_gradcheck(args, cfg: RunConfig) -> int:
    from .nn.gradcheck import TOLERANCE, run_all
    results = run_all(cfg.seed % 2**32)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}\t{r.name}\t{r.max_rel_error:.3e}\t({r.n_checked} entries)")
    ok = all(r.passed for r in results)
    print(f"{'all checks pass' if ok else 'gradient check failed'} at tolerance {TOLERANCE:g}")
    return 0 if ok else 2


COMMANDS = {
    "synth": cmd_synth, "pipeline": cmd_pipeline, "fingerprint": cmd_fingerprint, "train-sei": cmd_train_sei,
    "train-attack": cmd_train_attack, "evaluate": cmd_evaluate, "matrix": cmd_matrix,
    "coffee-shop": cmd_coffee_shop, "gradcheck": cmd_gradcheck,
}


GLOBAL_DEFAULTS = {"config": None, "seed": None, "out": Path("seilab-out"), "verbose": False}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        for name, value in GLOBAL_DEFAULTS.items():
            if not hasattr(args, name):
                setattr(args, name, value)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = load_config(args.config) if args.config else RunConfig()
        if args.seed is not None:
            cfg.seed = args.seed
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"seilab: config error: {exc}", file=sys.stderr)
        return 1
    except (KeyboardInterrupt, SystemExit):
        raise
    except Exception as exc:
        print(f"seilab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
