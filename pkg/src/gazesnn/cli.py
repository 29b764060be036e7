"""Command-line interface: gen-data, train, eval, profile, ablate.

Every subcommand accepts ``--config <path>`` (a JSON document mirroring
``TrainConfig``; see docs/config.md) plus per-field override flags, and
``--json`` for machine-readable output. Exit codes: 0 success, 2 for
configuration/usage errors, 1 for runtime failures.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .checkpoint import load_checkpoint
from .data import DatasetConfig, generate_dataset, load_dataset, save_dataset
from .energy import EnergyConstants, profile_model, report_to_json
from .errors import ConfigError, GazeSnnError
from .gaze import export_mask_pgm, heatmap_from_fixations
from .train import TrainConfig, ablation_grid, evaluate_model, train


def _add_common_overrides(parser: argparse.ArgumentParser):
    parser.add_argument("--config", type=str, default=None,
                        help="JSON config file (see docs/config.md)")
    parser.add_argument("--timesteps", type=int, default=None)
    parser.add_argument("--alpha", type=float, default=None)
    parser.add_argument("--lambda-loss", dest="lambda_loss", type=float, default=None)
    parser.add_argument("--gm", dest="enable_gm", action="store_true", default=None,
                        help="enable gaze-mask input enhancement")
    parser.add_argument("--no-gm", dest="enable_gm", action="store_false", default=None)
    parser.add_argument("--alh", dest="enable_alh", action="store_true", default=None,
                        help="enable the attention alignment loss")
    parser.add_argument("--no-alh", dest="enable_alh", action="store_false", default=None)
    parser.add_argument("--gm-at-eval", dest="gm_at_eval", action="store_true", default=None)
    parser.add_argument("--no-gm-at-eval", dest="gm_at_eval", action="store_false", default=None)
    parser.add_argument("--learning-rate", "--lr", dest="learning_rate", type=float, default=None)
    parser.add_argument("--momentum", type=float, default=None)
    parser.add_argument("--epochs", type=int, default=None)
    parser.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--heatmap-sigma", dest="heatmap_sigma", type=float, default=None)
    parser.add_argument("--data-dir", dest="data_dir", type=str, default=None)
    parser.add_argument("--out-dir", dest="out_dir", type=str, default=None)
    parser.add_argument("--data-param", action="append", default=[], metavar="KEY=VALUE",
                        help="override a dataset parameter (repeatable)")
    parser.add_argument("--model-param", action="append", default=[], metavar="KEY=VALUE",
                        help="override a model architecture parameter (repeatable)")
    parser.add_argument("--json", action="store_true", help="machine-readable output")


def _parse_kv(pairs, what):
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"{what} override {pair!r} is not KEY=VALUE")
        key, value = pair.split("=", 1)
        out[key.strip()] = json.loads(value) if value.strip() != "" else None
    return out


def build_config(args) -> TrainConfig:
    """Config file first, then explicit flags on top."""
    if args.config is not None:
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {args.config}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {args.config} is not valid JSON: {exc}") from exc
        config = TrainConfig.from_dict(doc)
    else:
        config = TrainConfig()

    overrides = {}
    for field_name in ("timesteps", "alpha", "lambda_loss", "enable_gm", "enable_alh",
                       "gm_at_eval", "learning_rate", "momentum", "epochs",
                       "batch_size", "seed", "heatmap_sigma", "data_dir", "out_dir"):
        value = getattr(args, field_name, None)
        if value is not None:
            overrides[field_name] = value
    try:
        if overrides:
            config = replace(config, **overrides)
        data_overrides = _parse_kv(args.data_param, "dataset")
        if data_overrides:
            config = replace(config, dataset=DatasetConfig.from_dict(
                {**config.dataset.to_dict(), **data_overrides}))
        model_overrides = _parse_kv(args.model_param, "model")
        if model_overrides:
            from .blocks import ModelConfig

            config = replace(config, model=ModelConfig.from_dict(
                {**config.model.to_dict(), **model_overrides}))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc
    return config


def _emit(args, payload: dict, human: str):
    print(json.dumps(payload, sort_keys=True) if args.json else human)


def cmd_gen_data(args) -> int:
    config = build_config(args)
    out = Path(args.out if args.out is not None else (config.data_dir or "dataset"))
    train_split, test_split = generate_dataset(config.dataset, config.seed)
    save_dataset(out, train_split, test_split, config.dataset, config.seed)
    if args.export_masks:
        mask_dir = out / "masks"
        mask_dir.mkdir(exist_ok=True)
        size = config.dataset.image_size
        for s in list(train_split) + list(test_split):
            mask = heatmap_from_fixations(s.gaze, config.sigma, size, size)
            export_mask_pgm(mask, mask_dir / f"{s.image_id}.pgm")
    _emit(args, {"out": str(out), "train": len(train_split), "test": len(test_split),
                 "seed": config.seed},
          f"wrote {len(train_split)} train / {len(test_split)} test samples to {out}")
    return 0


def cmd_train(args) -> int:
    config = build_config(args)
    if config.out_dir is None:
        config = replace(config, out_dir="run")
    result = train(config, log=None if args.json else print)
    final = result.rows[-1]
    _emit(args, {
        "checkpoint": str(result.checkpoint_path),
        "metrics": str(result.metrics_path),
        "final": json.loads(final.to_json_line()),
    }, f"done: accuracy {final.accuracy:.4f}, checkpoint at {result.checkpoint_path}")
    return 0


def _load_split(config: TrainConfig, split: str):
    if config.data_dir is None:
        train_split, test_split = generate_dataset(config.dataset, config.seed)
    else:
        train_split, test_split, _ = load_dataset(config.data_dir)
    return train_split if split == "train" else test_split


def cmd_eval(args) -> int:
    config = build_config(args)
    model = load_checkpoint(args.checkpoint)
    samples = _load_split(config, args.split)
    row = evaluate_model(model, samples, config)
    doc = json.loads(row.to_json_line())
    doc["split"] = args.split
    doc["n"] = len(samples)
    auc = "n/a" if row.auc is None else f"{row.auc:.4f}"
    _emit(args, doc,
          f"{args.split}: acc {row.accuracy:.4f} auc {auc} f1 {row.f1:.4f} ssim {row.ssim:.4f}")
    return 0


def cmd_profile(args) -> int:
    config = build_config(args)
    model = load_checkpoint(args.checkpoint)
    samples = _load_split(config, args.split)[: args.calibration_samples]
    timesteps = config.timesteps if args.timesteps is None else args.timesteps
    constants = EnergyConstants(e_mac_pj=args.e_mac, e_ac_pj=args.e_ac)
    images = [s.image for s in samples]
    report = profile_model(model, images, timesteps, constants)
    if args.emit_csv:
        report.write_csv(args.emit_csv)
    print(report_to_json(report) if args.json else report.format_table())
    return 0


def cmd_ablate(args) -> int:
    config = build_config(args)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [config.seed]
    timesteps_grid = tuple(int(t) for t in args.timesteps_grid.split(","))
    rows = ablation_grid(config, seeds, timesteps_grid=timesteps_grid,
                         log=None if args.json else print)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            for row in rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
    if args.json:
        print(json.dumps(rows, sort_keys=True))
    else:
        print(f"{'gm':>3} {'alh':>4} {'T':>3} {'seed':>5} {'acc':>7} {'auc':>7} {'f1':>7} {'ssim':>7}")
        for r in rows:
            auc = "  n/a" if r["auc"] is None else f"{r['auc']:.4f}"
            print(f"{int(r['gm']):>3} {int(r['alh']):>4} {r['timesteps']:>3} {r['seed']:>5} "
                  f"{r['accuracy']:>7.4f} {auc:>7} {r['f1']:>7.4f} {r['ssim']:>7.4f}")
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gazesnn",
        description="Gaze-guided spiking classifier: data generation, training, "
                    "evaluation, energy profiling, and the ablation grid.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic gaze-annotated dataset")
    _add_common_overrides(p)
    p.add_argument("--out", type=str, default=None, help="output dataset directory")
    p.add_argument("--export-masks", action="store_true",
                   help="also write rendered gaze masks as PGM files")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model and write checkpoint + metrics log")
    _add_common_overrides(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    _add_common_overrides(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("profile", help="estimate MAC/AC energy for a checkpoint")
    _add_common_overrides(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--calibration-samples", type=int, default=64)
    p.add_argument("--e-mac", type=float, default=4.6, help="pJ per multiply-accumulate")
    p.add_argument("--e-ac", type=float, default=0.9, help="pJ per accumulate")
    p.add_argument("--emit-csv", type=str, default=None, help="write per-layer rows to CSV")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("ablate", help="run the {GM} x {ALH} x {timesteps} grid over seeds")
    _add_common_overrides(p)
    p.add_argument("--seeds", type=str, default=None, help="comma-separated seed list")
    p.add_argument("--timesteps-grid", type=str, default="2,4")
    p.add_argument("--out", type=str, default=None, help="write one JSON row per cell")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors and 0 on --help; pass both through
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except GazeSnnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def run() -> None:
    raise SystemExit(main())
