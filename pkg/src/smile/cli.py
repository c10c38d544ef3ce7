"""Batch command-line surface.

Commands: ``phantom-gen``, ``train``, ``evaluate``, ``augment-study``,
``report``.  Every command resolves its parameters with the precedence
flag > config file > built-in default, persists the resolved snapshot next
to its artifacts, and is deterministic given that snapshot.  Unknown keys in
a config file are hard errors.

Exit codes: 0 success, 2 configuration, 3 data/container format,
4 training diverged, 5 evaluation segmentor unusable, 1 unexpected.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import augment, data, metrics, models, reporting, training
from .errors import (
    ConfigError,
    ContainerFormatError,
    DatasetFormatError,
    EvalSegmentorDegenerateError,
    EvalSegmentorUndertrainedError,
    InsufficientDataError,
    NonFiniteError,
    SmileError,
)
from .seeding import derive_seed

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_FORMAT = 3
EXIT_DIVERGED = 4
EXIT_EVAL_SEGMENTOR = 5


def _exit_code_for(err: SmileError) -> int:
    if isinstance(err, (EvalSegmentorDegenerateError, EvalSegmentorUndertrainedError)):
        return EXIT_EVAL_SEGMENTOR
    if isinstance(err, NonFiniteError):
        return EXIT_DIVERGED
    if isinstance(err, (DatasetFormatError, ContainerFormatError)):
        return EXIT_FORMAT
    if isinstance(err, (ConfigError, InsufficientDataError)):
        return EXIT_CONFIG
    return EXIT_UNEXPECTED


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    if not isinstance(cfg, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return cfg


def _resolve(args: argparse.Namespace, file_cfg: dict, defaults: dict) -> dict:
    """flag > config file > default; unknown file keys are hard errors."""
    unknown = set(file_cfg) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown config file keys: {sorted(unknown)}")
    resolved = {}
    for key, default in defaults.items():
        flag_val = getattr(args, key, None)
        if flag_val is not None:
            resolved[key] = flag_val
        elif key in file_cfg:
            resolved[key] = file_cfg[key]
        else:
            resolved[key] = default
    return resolved


def _write_snapshot(resolved: dict, out_dir: Path, name: str = "resolved_config.json") -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / name).write_text(json.dumps(resolved, indent=2, sort_keys=True) + "\n")


def _run_dir(root: str, seed: int, explicit: str | None) -> Path:
    if explicit:
        return Path(explicit)
    stamp = time.strftime("%Y%m%dT%H%M%SZ", time.gmtime())
    return Path(root) / f"{stamp}-seed{seed}"


# ---------------------------------------------------------------------------
# phantom-gen
# ---------------------------------------------------------------------------

PHANTOM_DEFAULTS = {
    "n": 2400,
    "seed": 0,
    "image_size": 64,
    "abnormal_fraction": 0.7,
    "lesion_count_min": 1,
    "lesion_count_max": 3,
    "lesion_radius_min": 3.0,
    "lesion_radius_max": 7.0,
    "lesion_boost": 0.5,
    "texture_smoothness": 3.0,
    "train_ratio": 5.0 / 6.0,
    "val_ratio": 1.0 / 12.0,
    "clip_scope": "image",
}


def cmd_phantom_gen(args) -> int:
    file_cfg = _load_config_file(args.config)
    r = _resolve(args, file_cfg, PHANTOM_DEFAULTS)
    out = Path(args.out)
    cfg = data.PhantomConfig(
        image_size=r["image_size"],
        n_samples=r["n"],
        abnormal_fraction=r["abnormal_fraction"],
        lesion_count_range=(r["lesion_count_min"], r["lesion_count_max"]),
        lesion_radius_range=(r["lesion_radius_min"], r["lesion_radius_max"]),
        lesion_intensity_boost=r["lesion_boost"],
        texture_smoothness=r["texture_smoothness"],
        seed=r["seed"],
    )
    samples = data.generate_phantom(cfg, clip_scope=r["clip_scope"])
    ratios = (r["train_ratio"], r["val_ratio"], 1.0 - r["train_ratio"] - r["val_ratio"])
    split = data.split_dataset(samples, ratios, seed=derive_seed(r["seed"], "split"))
    data.save_dataset(split, out)
    _write_snapshot({**r, "out": str(out)}, out)

    print(f"dataset written to {out}")
    for part, part_samples in split.parts().items():
        n_abn = sum(1 for s in part_samples if s.is_abnormal)
        print(f"  {part}: {len(part_samples)} samples, {n_abn} abnormal")
    areas = [int(s.mask.sum()) for s in samples if s.is_abnormal]
    if areas:
        hist, edges = np.histogram(areas, bins=8)
        print("  lesion-area histogram (pixels):")
        for count, lo, hi in zip(hist, edges[:-1], edges[1:]):
            print(f"    [{lo:6.0f}, {hi:6.0f}): {count}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

TRAIN_DEFAULTS = {
    "seed": 0,
    "labeled_fraction": 1.0,
    "epochs_per_phase": 10,
    "batch_size": 8,
    "lr": 1e-4,
    "epsilon": 0.9,
    "epsilon_dynamic": True,
    "semi": True,
    "val_metrics": "epoch",
    "g_base_channels": 8,
    "g_depth": 4,
    "s_base_channels": 8,
    "s_depth": 3,
    "r_base_channels": 8,
    "r_depth": 3,
}


def _train_config_from(r: dict) -> training.TrainConfig:
    return training.TrainConfig(
        learning_rate=r["lr"],
        batch_size=r["batch_size"],
        epochs_per_phase=r["epochs_per_phase"],
        epsilon_init=r["epsilon"],
        epsilon_dynamic=r["epsilon_dynamic"],
        labeled_fraction=r["labeled_fraction"],
        seed=r["seed"],
        semi_enabled=r["semi"],
        val_metrics=r["val_metrics"],
        g_base_channels=r["g_base_channels"], g_depth=r["g_depth"],
        s_base_channels=r["s_base_channels"], s_depth=r["s_depth"],
        r_base_channels=r["r_base_channels"], r_depth=r["r_depth"],
    )


def cmd_train(args) -> int:
    file_cfg = _load_config_file(args.config)
    r = _resolve(args, file_cfg, TRAIN_DEFAULTS)
    split = data.load_dataset(args.data)
    if r["labeled_fraction"] < 1.0:
        split = data.strip_labels(split, r["labeled_fraction"],
                                  seed=derive_seed(r["seed"], "strip"))
    config = _train_config_from(r)
    run_dir = _run_dir(args.out, r["seed"], args.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    _write_snapshot({**r, "data": str(args.data)}, run_dir)

    resume_from = None
    if args.resume:
        candidates = sorted(run_dir.glob("checkpoint_P*.smileckpt"))
        if not candidates:
            raise ConfigError(f"--resume given but no phase checkpoint found in {run_dir}")
        by_phase = {p.name: p for p in candidates}
        for phase in reversed(training.PHASES):
            name = f"checkpoint_{phase}.smileckpt"
            if name in by_phase:
                resume_from = by_phase[name]
                break
        print(f"resuming from {resume_from}")

    bundle, manifest = training.run_training(config, split, out_dir=run_dir,
                                             resume_from=resume_from)
    print(f"run complete; manifest at {run_dir / 'manifest.json'}")
    last = manifest["history"][-1] if manifest["history"] else {}
    if last.get("val_identity") is not None:
        print(f"final val identity: {last['val_identity']:.4f}")
    if last.get("val_normal_mae") is not None:
        print(f"final val normal passthrough MAE: {last['val_normal_mae']:.5f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

EVAL_DEFAULTS = {
    "seed": 0,
    "spred_max_epochs": 15,
    "spred_target_dice": 0.85,
}


def _checkpoint_path(args) -> Path:
    if args.checkpoint:
        return Path(args.checkpoint)
    if args.run:
        return Path(args.run) / "checkpoint_final.smileckpt"
    raise ConfigError("provide --checkpoint or --run")


def _ensure_spred(split: data.DatasetSplit, r: dict, spred_path: str | None,
                  out_dir: Path):
    if spred_path:
        net = models.load_network(spred_path)
        net.eval()
        for p in net.parameters():
            p.requires_grad_(False)
        return net, {"checkpoint_id": models.param_hash(net)[:12], "val_dice": None}
    cfg = metrics.EvalSegmentorConfig(
        max_epochs=r["spred_max_epochs"],
        target_dice=r["spred_target_dice"],
        seed=r["seed"],
    )
    labeled_train = [s for s in split.train if s.labeled]
    net, info = metrics.train_eval_segmentor(labeled_train, split.validation, cfg)
    saved = out_dir / "spred.smilenet"
    models.save_network(net, saved)
    print(f"trained evaluation segmentor: val dice {info['val_dice']:.3f} "
          f"({info['epochs']} epochs), saved to {saved}")
    return net, info


def cmd_evaluate(args) -> int:
    file_cfg = _load_config_file(args.config)
    r = _resolve(args, file_cfg, EVAL_DEFAULTS)
    split = data.load_dataset(args.data)
    out_dir = Path(args.out) if args.out else _checkpoint_path(args).parent
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.identity_g:
        generator = models.IdentityGenerator()
        ckpt_id = "identity"
    else:
        ckpt = _checkpoint_path(args)
        bundle = training.load_bundle_from_checkpoint(ckpt)
        generator = bundle.generator
        ckpt_id = models.param_hash(generator)[:12]

    spred, info = _ensure_spred(split, r, args.spred, out_dir)
    report = metrics.evaluate_generator(
        generator, spred, split.test,
        s_pred_id=info["checkpoint_id"], s_pred_val_dice=info["val_dice"])
    report.notes["generator_checkpoint_id"] = ckpt_id

    (out_dir / "report.json").write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    (out_dir / "report.tsv").write_text(report.to_table())
    _write_snapshot({**r, "data": str(args.data), "identity_g": bool(args.identity_g)},
                    out_dir, "resolved_eval_config.json")
    print(f"healthiness: {report.healthiness:.4f}")
    print(f"identity:    {report.identity:.4f}")
    print(f"(n={report.n_samples} abnormal test samples, "
          f"eval segmentor {report.s_pred_checkpoint_id})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# augment-study
# ---------------------------------------------------------------------------

AUGMENT_DEFAULTS = {
    "seeds": "1,2,3",
    "epochs": 3,
}


def cmd_augment_study(args) -> int:
    file_cfg = _load_config_file(args.config)
    r = _resolve(args, file_cfg, AUGMENT_DEFAULTS)
    split = data.load_dataset(args.data)
    ckpt = _checkpoint_path(args)
    bundle = training.load_bundle_from_checkpoint(ckpt)
    out_dir = Path(args.out) if args.out else ckpt.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    seeds = [int(s) for s in str(r["seeds"]).split(",") if s != ""]
    cfg = augment.DownstreamConfig(epochs=r["epochs"])
    rows = augment.regime_sweep(bundle, split, seeds, cfg, progress=print)
    augment.save_regime_table(rows, out_dir / "regimes.tsv")
    _write_snapshot({**r, "data": str(args.data)}, out_dir, "resolved_augment_config.json")

    summary = augment.summarize_regimes(rows)
    for regime, stats in summary.items():
        print(f"{regime}: dice {stats['mean']:.4f} +/- {stats['std']:.4f} (n={stats['n']})")
    both, none = summary.get(augment.REGIME_BOTH), summary.get(augment.REGIME_NONE)
    if both and none:
        gap = both["mean"] - none["mean"]
        spread = max(both["std"], none["std"])
        verdict = "PASS" if gap > 0 and gap > 2 * spread else "FAIL"
        print(f"direction check: dice(both) - dice(none) = {gap:.4f} "
              f"(2x std = {2 * spread:.4f}) -> {verdict}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

REPORT_DEFAULTS = {
    "n_panels": 6,
    "seed": 0,
}


def cmd_report(args) -> int:
    file_cfg = _load_config_file(args.config)
    r = _resolve(args, file_cfg, REPORT_DEFAULTS)
    split = data.load_dataset(args.data)
    ckpt = _checkpoint_path(args)
    bundle = training.load_bundle_from_checkpoint(ckpt)
    out_dir = Path(args.out) if args.out else ckpt.parent / "report"
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_id = models.param_hash(bundle.generator)[:12]
    panels = reporting.render_panels(bundle, split.test, out_dir, r["n_panels"],
                                     r["seed"], ckpt_id)
    print(f"wrote {len(panels)} panels to {out_dir}")
    manifest_path = ckpt.parent / "manifest.json"
    if manifest_path.exists():
        curves = reporting.render_curves(training.load_manifest(manifest_path), out_dir)
        print(f"wrote {len(curves)} curve plots")
    else:
        print("no manifest.json next to the checkpoint; skipping curves")
    _write_snapshot({**r, "data": str(args.data)}, out_dir, "resolved_report_config.json")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="smile",
                                description="pseudo-normality synthesis pipeline")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("phantom-gen", help="generate a phantom dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--config")
    g.add_argument("--n", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--image-size", dest="image_size", type=int)
    g.add_argument("--abnormal-fraction", dest="abnormal_fraction", type=float)
    g.add_argument("--lesion-count-min", dest="lesion_count_min", type=int)
    g.add_argument("--lesion-count-max", dest="lesion_count_max", type=int)
    g.add_argument("--lesion-radius-min", dest="lesion_radius_min", type=float)
    g.add_argument("--lesion-radius-max", dest="lesion_radius_max", type=float)
    g.add_argument("--lesion-boost", dest="lesion_boost", type=float)
    g.add_argument("--texture-smoothness", dest="texture_smoothness", type=float)
    g.add_argument("--train-ratio", dest="train_ratio", type=float)
    g.add_argument("--val-ratio", dest="val_ratio", type=float)
    g.add_argument("--clip-scope", dest="clip_scope", choices=("image", "volume"))
    g.set_defaults(func=cmd_phantom_gen)

    t = sub.add_parser("train", help="run the four-phase training schedule")
    t.add_argument("--data", required=True)
    t.add_argument("--out", default="runs")
    t.add_argument("--run-dir", dest="run_dir")
    t.add_argument("--config")
    t.add_argument("--resume", action="store_true")
    t.add_argument("--seed", type=int)
    t.add_argument("--labeled-fraction", dest="labeled_fraction", type=float)
    t.add_argument("--epochs-per-phase", dest="epochs_per_phase", type=int)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--epsilon", type=float)
    t.add_argument("--epsilon-dynamic", dest="epsilon_dynamic", action="store_const", const=True)
    t.add_argument("--no-epsilon-dynamic", dest="epsilon_dynamic", action="store_const", const=False)
    t.add_argument("--semi", dest="semi", action="store_const", const=True)
    t.add_argument("--no-semi", dest="semi", action="store_const", const=False)
    t.add_argument("--val-metrics", dest="val_metrics", choices=("epoch", "phase", "off"))
    for net in "gsr":
        t.add_argument(f"--{net}-base-channels", dest=f"{net}_base_channels", type=int)
        t.add_argument(f"--{net}-depth", dest=f"{net}_depth", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="healthiness/identity metrics on the test set")
    e.add_argument("--data", required=True)
    e.add_argument("--checkpoint")
    e.add_argument("--run")
    e.add_argument("--out")
    e.add_argument("--config")
    e.add_argument("--spred", help="existing evaluation segmentor container")
    e.add_argument("--identity-g", dest="identity_g", action="store_true",
                   help="debug: evaluate an identity generator instead of a checkpoint")
    e.add_argument("--seed", type=int)
    e.add_argument("--spred-max-epochs", dest="spred_max_epochs", type=int)
    e.add_argument("--spred-target-dice", dest="spred_target_dice", type=float)
    e.set_defaults(func=cmd_evaluate)

    a = sub.add_parser("augment-study", help="downstream augmentation study")
    a.add_argument("--data", required=True)
    a.add_argument("--checkpoint")
    a.add_argument("--run")
    a.add_argument("--out")
    a.add_argument("--config")
    a.add_argument("--seeds")
    a.add_argument("--epochs", type=int)
    a.set_defaults(func=cmd_augment_study)

    rp = sub.add_parser("report", help="image panels and training curves")
    rp.add_argument("--data", required=True)
    rp.add_argument("--checkpoint")
    rp.add_argument("--run")
    rp.add_argument("--out")
    rp.add_argument("--config")
    rp.add_argument("--n-panels", dest="n_panels", type=int)
    rp.add_argument("--seed", type=int)
    rp.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SmileError as err:
        print(f"error: {err}", file=sys.stderr)
        return _exit_code_for(err)


if __name__ == "__main__":
    sys.exit(main())
