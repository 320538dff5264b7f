"""One executable for the whole pipeline.

Subcommands: synth-data, train, evaluate, metrics, profile, sweep,
augment-preview, config. Exit codes: 0 success, 1 runtime failure,
2 usage or configuration error. Flags override the config file, which
overrides built-in defaults. Commands only write under their declared
output locations.
"""

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from . import config as config_mod
from . import data, profiler
from .augment import AugmentSpec, apply_augment
from .audio import load_wav, save_wav
from .errors import ConfigError, PsanetError, UsageError
from .metrics import join_scores_with_keys, read_score_file, report
from .model import build_model
from .train import evaluate, train


def _add_config_flag(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="FILE", help="run config file (key = value sections)")


_MODEL_FLAGS = (
    ("--cardinality", ("model", "cardinality")),
    ("--bottleneck-width", ("model", "bottleneck_width")),
    ("--depth", ("model", "depth")),
    ("--width-scale", ("model", "width_scale")),
    ("--se", ("model", "se")),
    ("--skip", ("model", "skip")),
    ("--dropout", ("model", "dropout")),
    ("--aggregation", ("model", "aggregation")),
    ("--stem-activation", ("model", "stem_activation")),
    ("--input-len", ("model", "input_len")),
)

_TRAIN_FLAGS = (
    ("--epochs", ("train", "epochs")),
    ("--batch-size", ("train", "batch_size")),
    ("--lr", ("train", "lr")),
    ("--weight-decay", ("train", "weight_decay")),
    ("--warmup-steps", ("train", "warmup_steps")),
    ("--seed", ("train", "seed")),
    ("--unified", ("train", "unified")),
    ("--attack-filter", ("train", "attack_filter")),
    ("--augment", ("augment", "enabled")),
    ("--augment-probability", ("augment", "probability")),
    ("--sample-rate", ("data", "sample_rate")),
)


def _add_override_flags(p: argparse.ArgumentParser, table: tuple) -> None:
    for flag, (section, key) in table:
        p.add_argument(flag, metavar="V", default=None,
                       help=f"override [{section}] {key}")


def _collect_overrides(args: argparse.Namespace, tables: tuple) -> dict:
    overrides = {}
    for table in tables:
        for flag, target in table:
            value = getattr(args, flag.lstrip("-").replace("-", "_"))
            if value is not None:
                overrides[target] = value
    return overrides


def _load_cfg(args: argparse.Namespace, tables: tuple = ()) -> dict:
    cfg = config_mod.load_config(getattr(args, "config", None))
    if tables:
        config_mod.apply_overrides(cfg, _collect_overrides(args, tables))
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="psanet",
        description="Raw-waveform voice anti-spoofing: data, training, scoring, profiling.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("synth-data", help="generate a synthetic corpus in the standard layout")
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--n-per-class", type=int, default=10, metavar="N")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--splits", default="train,dev,eval", metavar="NAMES")
    p.add_argument("--sample-rate", type=int, default=16000)
    p.add_argument("--duration-s", type=float, default=4.0)

    p = sub.add_parser("train", help="train on a corpus directory")
    _add_config_flag(p)
    p.add_argument("--data", metavar="DIR", help="corpus root (overrides [data] root)")
    p.add_argument("--out", metavar="DIR", help="run output directory (overrides [train] out_dir)")
    _add_override_flags(p, _MODEL_FLAGS)
    _add_override_flags(p, _TRAIN_FLAGS)

    p = sub.add_parser("evaluate", help="score one split with a trained checkpoint")
    _add_config_flag(p)
    p.add_argument("--checkpoint", required=True, metavar="FILE")
    p.add_argument("--data", metavar="DIR")
    p.add_argument("--split", default="eval")
    p.add_argument("--out", required=True, metavar="FILE", help="score file to write")
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--sample-rate", dest="sample_rate", default=None, metavar="V")

    p = sub.add_parser("metrics", help="EER / min t-DCF / AUC from a score file plus protocol keys")
    _add_config_flag(p)
    p.add_argument("--scores", required=True, metavar="FILE")
    p.add_argument("--keys", required=True, metavar="FILE", help="protocol file with labels")

    p = sub.add_parser("profile", help="cost report for one model configuration")
    _add_config_flag(p)
    _add_override_flags(p, _MODEL_FLAGS)
    p.add_argument("--runs", type=int, default=25, metavar="N")
    p.add_argument("--no-latency", action="store_true")
    p.add_argument("--no-elementwise", action="store_true",
                   help="count conv+linear FLOPs only")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("sweep", help="cost reports over a cardinality-x-width grid")
    _add_config_flag(p)
    p.add_argument("--grid", required=True, metavar="CxD,...",
                   help="comma list like 4x32,4x64,8x32,8x64")
    p.add_argument("--profile-only", action="store_true",
                   help="params/FLOPs/size only, skip latency")
    p.add_argument("--runs", type=int, default=25, metavar="N")
    p.add_argument("--out", metavar="FILE", help="also write the table here")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("augment-preview", help="write one WAV per augmentation kind")
    _add_config_flag(p)
    p.add_argument("--out", required=True, metavar="DIR")
    p.add_argument("--wav", metavar="FILE", help="source clip (default: synthetic)")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("config", help="configuration helpers")
    p.add_argument("--dump-defaults", action="store_true")

    return parser


def _cmd_synth_data(args) -> int:
    splits = [s.strip() for s in args.splits.split(",") if s.strip()]
    if not splits:
        raise ConfigError("--splits must name at least one split")
    for split in splits:
        m = data.synth_dataset(args.n_per_class, args.seed, args.out, split=split,
                               sample_rate=args.sample_rate, duration_s=args.duration_s)
        counts = m.class_counts(split)
        print(f"{split}: {counts['bonafide']} bonafide + {counts['spoof']} spoof -> "
              f"{os.path.join(args.out, 'audio', split)}")
    return 0


def _cmd_train(args) -> int:
    cfg = _load_cfg(args, (_MODEL_FLAGS, _TRAIN_FLAGS))
    root = args.data or cfg["data"]["root"]
    if not root:
        raise ConfigError("no corpus: pass --data or set [data] root")
    run_cfg = config_mod.train_run_config(cfg)
    if args.out:
        run_cfg = replace(run_cfg, out_dir=args.out)
    manifest = data.load_manifest(root, sample_rate=cfg["data"]["sample_rate"])
    result, history = train(run_cfg, manifest)
    print(f"best epoch {result.best_epoch} dev_loss {result.best_dev_loss:.6f}")
    print(f"checkpoint {result.best_path}")
    print(f"history {os.path.join(run_cfg.out_dir, 'history.txt')} ({len(history)} epochs)")
    return 0


def _cmd_evaluate(args) -> int:
    cfg = _load_cfg(args)
    if args.sample_rate is not None:
        config_mod.apply_overrides(cfg, {("data", "sample_rate"): args.sample_rate})
    root = args.data or cfg["data"]["root"]
    if not root:
        raise ConfigError("no corpus: pass --data or set [data] root")
    manifest = data.load_manifest(root, sample_rate=cfg["data"]["sample_rate"],
                                  splits=(args.split,))
    records = evaluate(args.checkpoint, manifest, args.split,
                       out_path=args.out, batch_size=args.batch_size)
    print(f"wrote {args.out} ({len(records)} records)")
    return 0


def _cmd_metrics(args) -> int:
    cfg = _load_cfg(args)
    scores = read_score_file(args.scores)
    entries = data.parse_protocol(args.keys)
    records = join_scores_with_keys(scores, entries)
    sys.stdout.write(report(records, config_mod.tdcf_params(cfg)))
    return 0


def _cmd_profile(args) -> int:
    cfg = _load_cfg(args, (_MODEL_FLAGS,))
    model = build_model(config_mod.model_config(cfg), np.random.default_rng(args.seed))
    rep = profiler.profile_model(model, n_clips=args.runs,
                                 include_latency=not args.no_latency,
                                 include_elementwise=not args.no_elementwise)
    sys.stdout.write(profiler.format_report(rep))
    return 0


def _parse_grid(grid: str) -> list:
    cells = []
    for cell in (c.strip() for c in grid.split(",") if c.strip()):
        parts = cell.lower().split("x")
        if len(parts) != 2:
            raise ConfigError(f"bad grid cell {cell!r}, want CxD like 4x32")
        try:
            cells.append((int(parts[0]), int(parts[1])))
        except ValueError as e:
            raise ConfigError(f"bad grid cell {cell!r}: {e}") from e
    if not cells:
        raise ConfigError("--grid named no cells")
    return cells


def _cmd_sweep(args) -> int:
    cfg = _load_cfg(args)
    base = config_mod.model_config(cfg)
    reports = []
    for c, d in _parse_grid(args.grid):
        mc = replace(base, cardinality=c, bottleneck_width=d)
        model = build_model(mc, np.random.default_rng(args.seed))
        reports.append(profiler.profile_model(
            model, label=f"{c}x{d}", n_clips=args.runs,
            include_latency=not args.profile_only))
        del model
    table = profiler.format_sweep_table(reports)
    sys.stdout.write(table)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(table)
    return 0


def _cmd_augment_preview(args) -> int:
    cfg = _load_cfg(args)
    clip = load_wav(args.wav) if args.wav else data.synth_clip(args.seed)
    specs = config_mod.augment_specs(cfg)
    if not specs:
        raise ConfigError("[augment] is disabled; nothing to preview")
    os.makedirs(args.out, exist_ok=True)
    save_wav(clip, os.path.join(args.out, "original.wav"), fmt="pcm16")
    for i, spec in enumerate(specs):
        forced = AugmentSpec(spec.kind, 1.0, spec.cutoff_hz, spec.decay_s, spec.threshold_db,
                             spec.frame_ms, spec.bit_depth, spec.downrate_factor)
        out = apply_augment(clip, forced, np.random.default_rng([args.seed, i]))
        save_wav(out, os.path.join(args.out, f"{spec.kind}.wav"), fmt="pcm16")
        print(f"{spec.kind}: {len(out)} samples @ {out.sample_rate} Hz")
    return 0


def _cmd_config(args) -> int:
    if not args.dump_defaults:
        raise UsageError("config: nothing to do (try --dump-defaults)")
    sys.stdout.write(config_mod.dump_defaults())
    return 0


_HANDLERS = {
    "synth-data": _cmd_synth_data,
    "train": _cmd_train,
    "evaluate": _cmd_evaluate,
    "metrics": _cmd_metrics,
    "profile": _cmd_profile,
    "sweep": _cmd_sweep,
    "augment-preview": _cmd_augment_preview,
    "config": _cmd_config,
}


def dispatch(argv: list) -> int:
    args = build_parser().parse_args(argv)
    return _HANDLERS[args.command](args)


def main(argv: list | None = None) -> int:
    try:
        return dispatch(sys.argv[1:] if argv is None else argv)
    except (ConfigError, UsageError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except PsanetError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
