"""Command-line surface: simulate -> denoise -> featurize -> train -> eval,
plus `ablation` for the five-variant comparison and `infer` for batch threat
decisions on a trace file.

Exit codes: 0 success, 2 bad configuration, 3 missing input, 4 format error,
1 anything else. Errors print one machine-parsable line on stderr.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from enum import Enum
from pathlib import Path

import numpy as np

from . import trace_io
from .config import RunConfig, UnknownConfigKeyError, echo_config, load_config
from .features import (
    FeatureVariant,
    denoise_record,
    featurize_records,
    make_features,
    write_feature_file,
)
from .metrics import evaluate, format_report, format_table, machine_line
from .nn.model import ThreatNet, load_checkpoint, save_checkpoint
from .simulate import synth_dataset
from .trace_io import ThreatClass, TraceFormatError
from .training import ablation_run, history_csv, train

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_BAD_CONFIG = 2
EXIT_MISSING_INPUT = 3
EXIT_FORMAT = 4


class ThreatAction(str, Enum):
    NONE = "None"
    CONTINUE_TRACKING = "ContinueTracking"
    DISPATCH_VERIFICATION = "DispatchVerification"


ACTION_FOR_CLASS = {
    ThreatClass.NO_THREAT: ThreatAction.NONE,
    ThreatClass.TRACKING: ThreatAction.CONTINUE_TRACKING,
    ThreatClass.ALARM: ThreatAction.DISPATCH_VERIFICATION,
}


class CliError(Exception):
    def __init__(self, message, code=EXIT_ERROR):
        super().__init__(message)
        self.code = code


def _build_config(args) -> RunConfig:
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        for item in args.set or []:
            if "=" not in item:
                raise ValueError(f"--set expects key=value, got {item!r}")
            key, _, raw = item.partition("=")
            cfg.set(key.strip(), raw.strip())
        if args.seed is not None:
            cfg.set("run_seed", args.seed)
        return cfg
    except (UnknownConfigKeyError, ValueError) as exc:
        raise CliError(str(exc), EXIT_BAD_CONFIG) from exc
    except FileNotFoundError as exc:
        raise CliError(f"config file not found: {args.config}", EXIT_MISSING_INPUT) from exc


def _load_records(path):
    p = Path(path)
    if not p.exists():
        raise CliError(f"input not found: {p}", EXIT_MISSING_INPUT)
    try:
        if p.suffix == ".txt" or p.name == "manifest.txt":
            manifest = trace_io.read_manifest(p)
            return trace_io.load_records(manifest.records, base_dir=str(p.parent))
        return trace_io.read_trace_file(p)
    except TraceFormatError as exc:
        raise CliError(str(exc), EXIT_FORMAT) from exc


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args) -> int:
    cfg = _build_config(args)
    out = _out_dir(args)
    echo_config(cfg, out)
    manifest = synth_dataset(
        n_per_class=cfg.get("n_per_class"),
        class_map=cfg.class_map(),
        seed=cfg.get("run_seed"),
        out_dir=out,
        noise_floor=cfg.get("noise_floor"),
    )
    print(f"wrote {len(manifest.records)} records under {out}")
    return EXIT_OK


def cmd_denoise(args) -> int:
    cfg = _build_config(args)
    out = _out_dir(args)
    echo_config(cfg, out)
    records = _load_records(args.traces)
    cleaned = [denoise_record(r, cfg.vmd_config()) for r in records]
    target = out / "denoised.dast"
    trace_io.write_trace_file(cleaned, target)
    print(f"denoised {len(cleaned)} records -> {target}")
    return EXIT_OK


def cmd_featurize(args) -> int:
    cfg = _build_config(args)
    out = _out_dir(args)
    echo_config(cfg, out)
    records = _load_records(args.traces)
    variant = FeatureVariant.parse(args.variant or cfg.get("features.variant"))
    fc = cfg.feature_config()
    lines = []
    for i, rec in enumerate(records):
        grid = make_features(rec, variant, fc)
        name = f"feature_{i:05d}.dasf"
        write_feature_file(grid.astype(np.float32)[:, :, None], out / name)
        lines.append(f"{name}:{i}:{rec.label.label}:{rec.radial_distance_m:.6g}:{variant.value}")
    (out / "features.txt").write_text("\n".join(lines) + "\n")
    print(f"featurized {len(records)} records ({variant.value}) -> {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _build_config(args)
    out = _out_dir(args)
    echo_config(cfg, out)
    records = _load_records(args.traces)
    variant = FeatureVariant.parse(args.variant or cfg.get("features.variant"))
    fc = cfg.feature_config()
    tc = cfg.train_config()
    feats, labels = featurize_records(records, variant, fc)
    model = ThreatNet(input_res=fc.out_h, n_classes=3, seed=tc.seed)
    history = train(model, feats, labels, tc, epochs=cfg.get("train.epochs"))
    ckpt = out / "model.dasm"
    save_checkpoint(
        model,
        ckpt,
        feature_meta={
            "variant": variant.value,
            "window": fc.window,
            "hop": fc.hop,
            "out_h": fc.out_h,
            "out_w": fc.out_w,
        },
    )
    (out / "loss_curve.csv").write_text(history_csv(history))
    print(f"trained {len(records)} records ({variant.value}) -> {ckpt}")
    return EXIT_OK


def _checkpoint_feature_config(cfg: RunConfig, meta: dict):
    fc = cfg.feature_config()
    return replace(
        fc,
        window=meta.get("window", fc.window),
        hop=meta.get("hop", fc.hop),
        out_h=meta.get("out_h", fc.out_h),
        out_w=meta.get("out_w", fc.out_w),
    )


def _load_model(path):
    p = Path(path)
    if not p.exists():
        raise CliError(f"checkpoint not found: {p}", EXIT_MISSING_INPUT)
    try:
        return load_checkpoint(p)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_FORMAT) from exc


def cmd_eval(args) -> int:
    cfg = _build_config(args)
    out = _out_dir(args)
    echo_config(cfg, out)
    model, desc = _load_model(args.checkpoint)
    records = _load_records(args.traces)
    meta = desc.get("feature", {})
    variant = FeatureVariant.parse(meta.get("variant", cfg.get("features.variant")))
    fc = _checkpoint_feature_config(cfg, meta)
    feats, labels = featurize_records(records, variant, fc)
    report = evaluate(model, feats, labels)
    print(format_report(variant.value, report))
    print(machine_line(variant.value, report))
    (out / "metrics.csv").write_text(machine_line(variant.value, report) + "\n")
    return EXIT_OK


def cmd_ablation(args) -> int:
    cfg = _build_config(args)
    out = _out_dir(args)
    echo_config(cfg, out)
    train_records = _load_records(args.train)
    test_records = _load_records(args.test)
    variants = [FeatureVariant.parse(v.strip()) for v in args.variants.split(",") if v.strip()]
    if not variants:
        raise CliError("no variants given", EXIT_BAD_CONFIG)
    repeats = max(1, args.repeats)
    fc = cfg.feature_config()
    base_tc = cfg.train_config()
    all_rows = {v: [] for v in variants}
    for rep in range(repeats):
        tc = replace(base_tc, seed=base_tc.seed + rep)
        result = ablation_run(
            train_records, test_records, variants, fc, tc,
            epochs=cfg.get("train.epochs"), aug_copies=cfg.get("train.aug_copies"),
        )
        for arm in result.arms:
            all_rows[arm.variant].append(arm.report)
    rows = [(v.value, all_rows[v][0]) for v in variants]
    print(format_table(rows))
    lines = []
    for v in variants:
        reports = all_rows[v]
        for rep, report in enumerate(reports):
            lines.append(machine_line(f"{v.value}[{rep}]" if repeats > 1 else v.value, report))
        if repeats > 1:
            f1s = [r.f1_ave for r in reports]
            mean = float(np.mean(f1s))
            half_range = (max(f1s) - min(f1s)) / 2
            print(f"{v.value}: F1_ave {mean * 100:.2f}% +/- {half_range * 100:.2f}% over {repeats} runs")
    (out / "ablation.csv").write_text("\n".join(lines) + "\n")
    return EXIT_OK


def cmd_infer(args) -> int:
    cfg = _build_config(args)
    model, desc = _load_model(args.checkpoint)
    records = _load_records(args.traces)
    meta = desc.get("feature", {})
    if "variant" not in meta:
        raise CliError("checkpoint does not record its feature variant", EXIT_FORMAT)
    variant = FeatureVariant.parse(meta["variant"])
    fc = _checkpoint_feature_config(cfg, meta)
    if fc.out_h != desc["input_resolution"]:
        raise CliError(
            f"feature resolution {fc.out_h} does not match checkpoint "
            f"input resolution {desc['input_resolution']}",
            EXIT_FORMAT,
        )
    feats, _ = featurize_records(records, variant, fc)
    probs = model.predict_proba(feats)
    counts = {action: 0 for action in ThreatAction}
    for i, p in enumerate(probs):
        predicted = ThreatClass(int(p.argmax()))
        action = ACTION_FOR_CLASS[predicted]
        counts[action] += 1
        print(
            f"record={i} class={predicted.label} "
            f"p={p[0]:.8f},{p[1]:.8f},{p[2]:.8f} action={action.value}"
        )
    summary = " ".join(f"{a.value}={counts[a]}" for a in ThreatAction)
    print(f"summary: {summary}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dasguard",
        description="Radial threat estimation pipeline for fiber-sensed pipelines",
    )
    parser.add_argument("--config", help="key=value configuration file")
    parser.add_argument("--seed", type=int, help="override run_seed")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--repeats", type=int, default=1, help="repeat runs (ablation)")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config key")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic labeled dataset")
    p.add_argument("--n-per-class", type=int, dest="n_per_class")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("denoise", help="VMD-denoise a trace file")
    p.add_argument("traces")
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("featurize", help="render feature tensors for a trace file")
    p.add_argument("traces")
    p.add_argument("--variant", help="raw|tf|tff|stff|stff_aug")
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", help="train a classifier on a trace file/manifest")
    p.add_argument("traces")
    p.add_argument("--variant")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a trace file/manifest")
    p.add_argument("checkpoint")
    p.add_argument("traces")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablation", help="train and compare feature variants")
    p.add_argument("--train", required=True, help="training trace file or manifest")
    p.add_argument("--test", required=True, help="test trace file or manifest")
    p.add_argument("--variants", default="raw,tf,tff,stff,stff_aug")
    p.set_defaults(func=cmd_ablation)

    p = sub.add_parser("infer", help="classify a trace file and emit threat decisions")
    p.add_argument("checkpoint")
    p.add_argument("traces")
    p.set_defaults(func=cmd_infer)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        n_per_class = getattr(args, "n_per_class", None)
        if n_per_class is not None:
            args.set = (args.set or []) + [f"n_per_class={n_per_class}"]
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (TraceFormatError,) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    except Exception as exc:  # keep the one-line contract for operators
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
