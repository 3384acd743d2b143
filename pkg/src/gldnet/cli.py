"""Command-line entry points: train, enhance, evaluate, gradcheck.

Configuration comes from a preset, optionally a flat key=value config file
(sectioned keys: model.*, train.*, stft.*), explicit flags, and trailing
key=value overrides, in increasing priority. Unknown keys are rejected.

Exit codes: 0 ok, 2 usage/config error, 3 training abort, 4 checkpoint
error, 5 verification failure.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, restore_model
from .data import (
    generate_toy_corpus,
    make_pair,
    read_manifest,
    validate_splits,
)
from .gld import GldOptions
from .metrics import MetricReport, format_table, seg_snr, si_sdr, stoi
from .network import ModelConfig, build_model, enhance
from .signal import FormatError, StftConfig, read_wav, write_wav
from .tensor import ContractError, DimensionError
from .trainer import TrainConfig, TrainingAbort, fit
from .verification import run_full_suite


class ConfigError(ValueError):
    pass


def _parse_bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "on", "yes"):
        return True
    if v in ("0", "false", "off", "no"):
        return False
    raise ConfigError(f"expected a boolean, got {s!r}")


def _parse_int_list(s):
    return tuple(int(p) for p in s.split(",") if p.strip())


CONFIG_KEYS = {
    "model.enc_channels": _parse_int_list,
    "model.dec_channels": _parse_int_list,
    "model.lstm_layers": int,
    "model.lstm_hidden": int,
    "model.f_bins": int,
    "model.intermediate_blocks": int,
    "model.enable_sb": _parse_bool,
    "model.enable_ib": _parse_bool,
    "model.ri_head": _parse_bool,
    "model.literal_eq2": _parse_bool,
    "model.literal_eq5": _parse_bool,
    "model.attention_scale": _parse_bool,
    "train.lr": float,
    "train.batch": int,
    "train.max_steps": int,
    "train.eval_every": int,
    "train.seed": int,
    "train.precision": int,
    "train.grad_clip": float,
    "train.crop_len": int,
    "stft.win_len": int,
    "stft.hop": int,
    "stft.fft_size": int,
}


def parse_config_file(path):
    values = {}
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
                key, val = (s.strip() for s in line.split("=", 1))
                values[key] = val
    except OSError as e:
        raise ConfigError(f"cannot read config file: {e}") from e
    return values


def _apply_kv(settings, values, origin):
    for key, val in values.items():
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{origin}: unknown configuration key {key!r}")
        try:
            settings[key] = CONFIG_KEYS[key](val)
        except (ValueError, ConfigError) as e:
            raise ConfigError(f"{origin}: bad value for {key}: {e}") from e


def _preset_settings(preset):
    if preset == "tiny":
        model = ModelConfig.tiny()
    elif preset == "full":
        model = ModelConfig.full()
    else:
        raise ConfigError(f"unknown preset {preset!r}")
    return {
        "model.enc_channels": model.enc_channels,
        "model.dec_channels": model.dec_channels,
        "model.lstm_layers": model.lstm_layers,
        "model.lstm_hidden": model.lstm_hidden,
        "model.f_bins": model.f_bins,
        "model.intermediate_blocks": model.intermediate_blocks,
        "model.enable_sb": True,
        "model.enable_ib": True,
        "model.ri_head": False,
        "model.literal_eq2": False,
        "model.literal_eq5": True,
        "model.attention_scale": True,
        "train.lr": 2e-4,
        "train.batch": 16,
        "train.max_steps": 1000,
        "train.eval_every": 100,
        "train.seed": 0,
        "train.precision": 32,
        "train.grad_clip": None,
        "train.crop_len": 16000,
        "stft.win_len": model.stft.win_len,
        "stft.hop": model.stft.hop,
        "stft.fft_size": model.stft.fft_size,
    }


def build_configs(args):
    """Resolve preset -> config file -> flags -> trailing overrides."""
    settings = _preset_settings(args.preset)
    if args.config:
        _apply_kv(settings, parse_config_file(args.config), args.config)
    if args.seed is not None:
        settings["train.seed"] = args.seed
    if args.precision is not None:
        settings["train.precision"] = args.precision
    if getattr(args, "max_steps", None) is not None:
        settings["train.max_steps"] = args.max_steps
    if getattr(args, "disable_sb", False):
        settings["model.enable_sb"] = False
    if getattr(args, "disable_ib", False):
        settings["model.enable_ib"] = False
    if getattr(args, "literal_eq2", None) is not None:
        settings["model.literal_eq2"] = args.literal_eq2
    if getattr(args, "literal_eq5", None) is not None:
        settings["model.literal_eq5"] = args.literal_eq5
    if getattr(args, "attention_scale", None) is not None:
        settings["model.attention_scale"] = args.attention_scale == "on"
    overrides = {}
    for item in getattr(args, "overrides", []) or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, val = item.split("=", 1)
        overrides[key.strip()] = val.strip()
    _apply_kv(settings, overrides, "override")
    try:
        stft = StftConfig(
            win_len=settings["stft.win_len"],
            hop=settings["stft.hop"],
            fft_size=settings["stft.fft_size"],
        )
        model_cfg = ModelConfig(
            enc_channels=tuple(settings["model.enc_channels"]),
            dec_channels=tuple(settings["model.dec_channels"]),
            lstm_layers=settings["model.lstm_layers"],
            lstm_hidden=settings["model.lstm_hidden"],
            f_bins=settings["model.f_bins"],
            intermediate_blocks=settings["model.intermediate_blocks"],
            enable_sb=settings["model.enable_sb"],
            enable_ib=settings["model.enable_ib"],
            ri_head=settings["model.ri_head"],
            gld=GldOptions(
                scale_logits=settings["model.attention_scale"],
                collapsed_aggregation=settings["model.literal_eq2"],
                gate_on_projection=settings["model.literal_eq5"],
            ),
            stft=stft,
        )
        train_cfg = TrainConfig(
            lr=settings["train.lr"],
            batch=settings["train.batch"],
            max_steps=settings["train.max_steps"],
            eval_every=settings["train.eval_every"],
            seed=settings["train.seed"],
            precision=settings["train.precision"],
            grad_clip=settings["train.grad_clip"],
            crop_len=settings["train.crop_len"],
        )
    except ContractError as e:
        raise ConfigError(str(e)) from e
    return model_cfg, train_cfg


def _add_common(sub):
    sub.add_argument("--config", help="flat key=value config file")
    sub.add_argument("--preset", choices=("tiny", "full"), default="tiny")
    sub.add_argument("--seed", type=int, default=None)
    sub.add_argument("--precision", type=int, choices=(32, 64), default=None)
    sub.add_argument("--out-dir", default="runs")


def build_parser():
    parser = argparse.ArgumentParser(prog="gldnet", description=__doc__.split("\n")[0])
    subs = parser.add_subparsers(dest="command", required=True)

    tr = subs.add_parser("train", help="train a model")
    _add_common(tr)
    tr.add_argument("--toy-data", action="store_true",
                    help="generate a seeded synthetic corpus instead of reading manifests")
    tr.add_argument("--train-manifest", help="training manifest (tsv)")
    tr.add_argument("--val-manifest", help="validation manifest (tsv)")
    tr.add_argument("--max-steps", type=int, default=None)
    tr.add_argument("--disable-sb", action="store_true", help="ablate the speech branch")
    tr.add_argument("--disable-ib", action="store_true", help="ablate the interference branch")
    tr.add_argument("--literal-eq2", action=argparse.BooleanOptionalAction, default=None,
                    help="collapsed attention aggregation variant")
    tr.add_argument("--literal-eq5", action=argparse.BooleanOptionalAction, default=None,
                    help="speech gate on the joint projection (default on)")
    tr.add_argument("--attention-scale", choices=("on", "off"), default=None)
    tr.add_argument("overrides", nargs="*", help="key=value settings, highest priority")

    en = subs.add_parser("enhance", help="enhance a wav file with a trained checkpoint")
    en.add_argument("checkpoint")
    en.add_argument("input_wav")
    en.add_argument("output_wav")

    ev = subs.add_parser("evaluate", help="score a checkpoint against a manifest")
    ev.add_argument("checkpoint")
    ev.add_argument("manifest")
    ev.add_argument("--out-dir", default="runs")

    gc = subs.add_parser("gradcheck", help="finite-difference gradient verification")
    _add_common(gc)
    gc.add_argument("--tolerance", type=float, default=1e-4)
    return parser


def cmd_train(args):
    model_cfg, train_cfg = build_configs(args)
    out_dir = args.out_dir
    os.makedirs(out_dir, exist_ok=True)
    if args.toy_data:
        duration = max(train_cfg.crop_len / 16000.0, 1.0)
        manifests = generate_toy_corpus(os.path.join(out_dir, "toy"), seed=train_cfg.seed,
                                        duration=duration)
        train_m, val_m = manifests["train"], manifests["val"]
    else:
        if not args.train_manifest or not args.val_manifest:
            raise ConfigError("either --toy-data or both --train-manifest and --val-manifest "
                              "are required")
        train_m = read_manifest(args.train_manifest, split="train")
        val_m = read_manifest(args.val_manifest, split="val")
        validate_splits([train_m, val_m])
        if not train_m.entries or not val_m.entries:
            raise ConfigError("manifest is empty")
    model = build_model(model_cfg, seed=train_cfg.seed, dtype=train_cfg.dtype)
    log = fit(model, model_cfg, train_cfg, train_m, val_m, out_dir)
    print(f"trained {train_cfg.max_steps} steps; best val loss {log.best_val:.6e} "
          f"at step {log.best_step}; checkpoints in {out_dir}")
    return 0


def _load_model_from_checkpoint(path):
    header, arrays = load_checkpoint(path)
    model_cfg = ModelConfig.from_dict(header["model_config"])
    precision = (header.get("train_config") or {}).get("precision", 32)
    dtype = np.float32 if precision == 32 else np.float64
    model = build_model(model_cfg, seed=0, dtype=dtype)
    restore_model(model, arrays)
    return model, model_cfg


def cmd_enhance(args):
    model, model_cfg = _load_model_from_checkpoint(args.checkpoint)
    noisy = read_wav(args.input_wav)
    out = enhance(noisy, model, model_cfg)
    write_wav(args.output_wav, out)
    print(f"wrote {args.output_wav} ({len(out.samples)} samples)")
    return 0


def cmd_evaluate(args):
    model, model_cfg = _load_model_from_checkpoint(args.checkpoint)
    manifest = read_manifest(args.manifest, split="test")
    if not manifest.entries:
        raise ConfigError(f"manifest {args.manifest} is empty")
    report = MetricReport()
    for i, spec in enumerate(manifest.entries):
        clean = read_wav(spec.clean_path)
        noise = read_wav(spec.noise_path)
        noisy, target = make_pair(clean, noise, spec.snr_db, spec.seed)
        enhanced = enhance(noisy, model, model_cfg)
        utt = f"{os.path.basename(spec.clean_path)}#{i}"
        for system, est in (("Unprocessed", noisy), ("Enhanced", enhanced)):
            report.add(utt, system, spec.snr_db, "si_sdr", si_sdr(target, est))
            report.add(utt, system, spec.snr_db, "seg_snr", seg_snr(target, est))
            report.add(utt, system, spec.snr_db, "stoi", stoi(target, est))
    table = format_table(report)
    print(table)
    os.makedirs(args.out_dir, exist_ok=True)
    report_path = os.path.join(args.out_dir, "metrics_report.tsv")
    report.write(report_path)
    print(f"per-utterance records written to {report_path}")
    return 0


def cmd_gradcheck(args):
    if args.precision == 32:
        raise ConfigError("gradcheck requires 64-bit mode")
    args.precision = 64
    model_cfg, train_cfg = build_configs(args)
    # the full preset runs ~2s per 64-bit forward; sample sparsely there
    an = dict(coords_per_tensor=1, tensors_per_group=1) if args.preset == "full" else {}
    report, worst = run_full_suite(seed=train_cfg.seed, block_sample=16, cfg=model_cfg, **an)
    width = max(len(k) for k in report)
    for name in sorted(report):
        status = "ok" if report[name] <= args.tolerance else "FAIL"
        print(f"{name.ljust(width)}  {report[name]:.3e}  {status}")
    print(f"worst relative error: {worst:.3e} (tolerance {args.tolerance:g})")
    if worst > args.tolerance:
        return 5
    return 0


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    handlers = {
        "train": cmd_train,
        "enhance": cmd_enhance,
        "evaluate": cmd_evaluate,
        "gradcheck": cmd_gradcheck,
    }
    try:
        return handlers[args.command](args)
    except (ConfigError, ContractError, DimensionError, FormatError, IOError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except TrainingAbort as e:
        print(f"training aborted: {e}", file=sys.stderr)
        return 3
    except CheckpointError as e:
        print(f"checkpoint error: {e}", file=sys.stderr)
        return 4


def entry():
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())
