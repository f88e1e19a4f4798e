"""Command line interface.

Subcommands: synth, extract, train, eval, crossval, fusion-bench,
grad-check, export-embeddings.

Every option can come from three places, later ones winning: built-in
defaults (including the chosen --preset), a JSON file passed with
--config, and explicit flags. The fully resolved option set is echoed to
stdout on every run and written as config.json next to directory outputs,
so a run can always be reproduced from its own artifacts. When no seed is
given anywhere, the SMILEFUSION_SEED environment variable fills in.

Exit codes: 0 success, 1 for bad input (arguments, config, data files,
impossible requests), 2 for failures of computation or verification.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict

import numpy as np

from .data import (
    SyntheticConfig,
    build_dataset,
    load_corpus,
    synth_generate,
)
from .dmarker import N_FEATURES, extract_dmarker, write_dmarker_csv
from .errors import (
    DegenerateGeometryError,
    EmptyClassError,
    InvalidConfigError,
    KeypointIndexError,
    LandmarkParseError,
    NoPhaseStructureError,
    NonFiniteValueError,
    NotScalarLossError,
    ShapeMismatchError,
    SmileFusionError,
    TooFewSubjectsError,
    UnknownFusionError,
    UnsupportedInferenceModeError,
)
from .fusion import FUSION_KINDS, check_kind, extra_parameter_count
from .gradsuite import TOLERANCE, run_grad_suite, suite_passed
from .model import (
    BackboneConfig,
    SmileModel,
    load_checkpoint,
    save_checkpoint,
)
from .tensor import Tensor
from .training import (
    PRESET_SEQ_LEN,
    TRAIN_PRESETS,
    TrainConfig,
    build_fold_plan,
    crossval,
    evaluate,
    fold_plan_hash,
    train,
)

SEED_ENV_VAR = "SMILEFUSION_SEED"

_USAGE_ERRORS = (
    InvalidConfigError,
    UnknownFusionError,
    LandmarkParseError,
    TooFewSubjectsError,
    EmptyClassError,
    KeypointIndexError,
    UnsupportedInferenceModeError,
    FileNotFoundError,
    IsADirectoryError,
    NotADirectoryError,
    PermissionError,
    ValueError,
)

_COMPUTE_ERRORS = (
    NonFiniteValueError,
    DegenerateGeometryError,
    NoPhaseStructureError,
    ShapeMismatchError,
    NotScalarLossError,
)


# -- option plumbing -----------------------------------------------------------


def _resolve_options(args, defaults: dict, preset_overrides=None) -> dict:
    """defaults <- preset <- --config file <- explicit flags, plus the seed
    environment fallback. Unknown config-file keys are rejected."""
    given = {k: v for k, v in vars(args).items() if k not in ("func", "config")}
    file_opts = {}
    config_path = getattr(args, "config", None)
    if config_path is not None:
        with open(config_path) as fh:
            try:
                file_opts = json.load(fh)
            except json.JSONDecodeError as exc:
                raise InvalidConfigError(f"{config_path}: not valid JSON ({exc})")
        if not isinstance(file_opts, dict):
            raise InvalidConfigError(f"{config_path}: config must be a JSON object")
        unknown = sorted(set(file_opts) - set(defaults))
        if unknown:
            raise InvalidConfigError(
                f"{config_path}: unknown config keys {unknown}; "
                f"valid keys: {sorted(defaults)}"
            )

    options = dict(defaults)
    if preset_overrides is not None and "preset" in defaults:
        preset = given.get("preset", file_opts.get("preset", defaults["preset"]))
        if preset not in TRAIN_PRESETS:
            raise InvalidConfigError(
                f"unknown preset {preset!r}; valid presets: "
                f"{', '.join(sorted(TRAIN_PRESETS))}"
            )
        options.update(preset_overrides(preset))
        options["preset"] = preset
    options.update(file_opts)
    options.update(given)

    if "seed" in defaults and "seed" not in given and "seed" not in file_opts:
        env = os.environ.get(SEED_ENV_VAR)
        if env is not None:
            try:
                options["seed"] = int(env)
            except ValueError:
                raise InvalidConfigError(
                    f"{SEED_ENV_VAR} must be an integer, got {env!r}"
                )
    return options


def _require(options: dict, *names: str) -> None:
    for name in names:
        if options.get(name) is None:
            flag = "--" + name.replace("_", "-")
            raise InvalidConfigError(f"{flag} is required (flag or config file)")


def _echo_config(options: dict, out_dir=None) -> None:
    line = json.dumps(options, sort_keys=True)
    print(f"config {line}")
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "config.json"), "w") as fh:
            json.dump(options, fh, sort_keys=True, indent=2)
            fh.write("\n")


def _train_preset_overrides(preset: str) -> dict:
    merged = dict(TRAIN_PRESETS[preset])
    merged["seq_len"] = PRESET_SEQ_LEN[preset]
    return merged


def _backbone_from(options: dict) -> BackboneConfig:
    return BackboneConfig(
        input_points=11,
        spatial_dim=options["spatial_dim"],
        embed_dim=options["embed_dim"],
        temporal_blocks=options["blocks"],
        heads=options["heads"],
        dropout=options["dropout"],
        seq_len=options["seq_len"],
        ff_multiple=options["ff_multiple"],
        positional=options["positional"],
    )


def _train_config_from(options: dict) -> TrainConfig:
    return TrainConfig(
        optimizer=options["optimizer"],
        lr=options["lr"],
        lr_min=options["lr_min"],
        weight_decay=options["weight_decay"],
        epochs=options["epochs"],
        batch_size=options["batch_size"],
        seed=options["seed"],
    ).validate()


_TRAIN_DEFAULTS = {
    "manifest": None,
    "out": None,
    "fusion": "hadamard",
    "preset": "default",
    "optimizer": "adamw",
    "lr": 5e-4,
    "lr_min": 0.0,
    "weight_decay": 1e-2,
    "epochs": 300,
    "batch_size": 16,
    "seed": 0,
    "seq_len": 16,
    "spatial_dim": 128,
    "embed_dim": 256,
    "blocks": 3,
    "heads": 4,
    "dropout": 0.1,
    "ff_multiple": 4,
    "positional": False,
    "width": 128,
    "inference_mode": "constant-gate",
    "smooth": False,
}


def _batched_probs(model: SmileModel, clips: np.ndarray, markers=None, size=64):
    chunks = []
    for start in range(0, len(clips), size):
        block = Tensor(clips[start : start + size])
        if markers is None:
            out = model.forward_inference(block)
        else:
            out = model.forward(block, Tensor(markers[start : start + size]))
        chunks.append(np.atleast_1d(out.data))
    return np.concatenate(chunks)


def _numpy_bce(probs: np.ndarray, labels: np.ndarray) -> float:
    p = np.clip(probs, 1e-12, 1.0 - 1e-12)
    y = np.asarray(labels, dtype=np.float64)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


# -- subcommands ------------------------------------------------------------------


def _cmd_synth(args) -> int:
    defaults = {
        "out": None,
        "subjects": 10,
        "clips_per_subject": 20,
        "fps": 30.0,
        "seed": 0,
        "noise_std": 0.0,
        "pose_jitter": True,
        "rotation_deg": 20.0,
        "scale_min": 0.7,
        "scale_max": 1.3,
        "translation": 0.5,
    }
    options = _resolve_options(args, defaults)
    _require(options, "out")
    _echo_config(options, out_dir=options["out"])
    cfg = SyntheticConfig(
        n_subjects=options["subjects"],
        clips_per_subject=options["clips_per_subject"],
        fps=options["fps"],
        seed=options["seed"],
        noise_std=options["noise_std"],
        pose_jitter=options["pose_jitter"],
        rotation_deg=options["rotation_deg"],
        scale_range=(options["scale_min"], options["scale_max"]),
        translation=options["translation"],
    )
    manifest = synth_generate(cfg, options["out"])
    print(f"manifest {manifest}")
    print(f"videos {cfg.n_subjects * cfg.clips_per_subject}")
    return 0


def _cmd_extract(args) -> int:
    options = _resolve_options(args, {"manifest": None, "out": None, "smooth": False})
    _require(options, "manifest", "out")
    _echo_config(options)
    samples = load_corpus(options["manifest"])
    rows = []
    for sample in samples:
        seq = sample.sequence
        rows.append((seq.subject_id, seq.label, extract_dmarker(seq, smooth=options["smooth"])))
    write_dmarker_csv(rows, options["out"])
    print(f"descriptors {len(rows)} -> {options['out']}")
    return 0


def _cmd_train(args) -> int:
    options = _resolve_options(args, _TRAIN_DEFAULTS, _train_preset_overrides)
    _require(options, "manifest", "out")
    check_kind(options["fusion"], allow_baseline=True)
    _echo_config(options, out_dir=options["out"])

    backbone = _backbone_from(options)
    train_cfg = _train_config_from(options)
    dataset = build_dataset(options["manifest"], backbone.seq_len, options["smooth"])
    model = SmileModel(
        backbone_config=backbone,
        fusion_kind=options["fusion"],
        marker_dim=N_FEATURES,
        fused_width=options["width"],
        inference_mode=options["inference_mode"],
        seed=options["seed"],
    )
    log_path = os.path.join(options["out"], "train_log.csv")
    train(model, dataset, train_cfg, log_path=log_path)
    ckpt_path = os.path.join(options["out"], "checkpoint.json")
    save_checkpoint(model, ckpt_path)
    metrics = evaluate(model, dataset)
    summary = {
        "train_accuracy": metrics["accuracy"],
        "train_loss": metrics["loss"],
        "videos": metrics["count"],
        "parameters": model.count_parameters(),
        "checkpoint": ckpt_path,
    }
    with open(os.path.join(options["out"], "summary.json"), "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print("summary " + json.dumps(summary, sort_keys=True))
    return 0


def _cmd_eval(args) -> int:
    defaults = {
        "manifest": None,
        "checkpoint": None,
        "out": None,
        "video_only": False,
        "smooth": False,
    }
    options = _resolve_options(args, defaults)
    _require(options, "manifest", "checkpoint")
    _echo_config(options)
    model = load_checkpoint(options["checkpoint"])
    dataset = build_dataset(
        options["manifest"], model.backbone_config.seq_len, options["smooth"]
    )
    if options["video_only"]:
        probs = _batched_probs(model, dataset.clips)
    else:
        probs = _batched_probs(model, dataset.clips, model.standardize_markers(dataset.markers))
    labels = dataset.labels
    metrics = {
        "accuracy": float(np.mean((probs >= 0.5) == (labels > 0))),
        "loss": _numpy_bce(probs, labels),
        "count": int(len(labels)),
        "video_only": bool(options["video_only"]),
    }
    print("metrics " + json.dumps(metrics, sort_keys=True))
    if options["out"]:
        with open(options["out"], "w") as fh:
            json.dump(metrics, fh, sort_keys=True, indent=2)
            fh.write("\n")
    return 0


def _cmd_crossval(args) -> int:
    defaults = dict(_TRAIN_DEFAULTS)
    defaults["folds"] = 5
    options = _resolve_options(args, defaults, _train_preset_overrides)
    _require(options, "manifest", "out")
    check_kind(options["fusion"], allow_baseline=True)
    _echo_config(options, out_dir=options["out"])

    backbone = _backbone_from(options)
    train_cfg = _train_config_from(options)
    dataset = build_dataset(options["manifest"], backbone.seq_len, options["smooth"])

    def factory(fold_seed: int) -> SmileModel:
        return SmileModel(
            backbone_config=backbone,
            fusion_kind=options["fusion"],
            marker_dim=N_FEATURES,
            fused_width=options["width"],
            inference_mode=options["inference_mode"],
            seed=fold_seed,
        )

    report = crossval(
        dataset,
        factory,
        train_cfg,
        n_folds=options["folds"],
        seed=options["seed"],
        model_info={"fusion": options["fusion"], "backbone": asdict(backbone),
                    "width": options["width"]},
        log_dir=options["out"],
    )
    with open(os.path.join(options["out"], "crossval.json"), "w") as fh:
        json.dump(report, fh, sort_keys=True, indent=2)
        fh.write("\n")
    for fold in report["folds"]:
        print(
            f"fold {fold['fold']} accuracy {fold['accuracy']:.4f} "
            f"(train {fold['train_accuracy']:.4f})"
        )
    print(f"mean_accuracy {report['mean_accuracy']:.6f}")
    return 0


def _cmd_fusion_bench(args) -> int:
    defaults = dict(_TRAIN_DEFAULTS)
    defaults.pop("fusion")
    defaults["folds"] = 5
    options = _resolve_options(args, defaults, _train_preset_overrides)
    _require(options, "manifest", "out")
    _echo_config(options, out_dir=options["out"])

    backbone = _backbone_from(options)
    train_cfg = _train_config_from(options)
    dataset = build_dataset(options["manifest"], backbone.seq_len, options["smooth"])
    expected_hash = fold_plan_hash(
        build_fold_plan(dataset.subjects, options["folds"], options["seed"])
    )

    rows = []
    for kind in FUSION_KINDS:
        def factory(fold_seed: int, kind=kind) -> SmileModel:
            return SmileModel(
                backbone_config=backbone,
                fusion_kind=kind,
                marker_dim=N_FEATURES,
                fused_width=options["width"],
                inference_mode=options["inference_mode"],
                seed=fold_seed,
            )

        report = crossval(
            dataset, factory, train_cfg,
            n_folds=options["folds"], seed=options["seed"],
            model_info={"fusion": kind},
        )
        plan = [
            {"fold": f["fold"], "train_subjects": f["train_subjects"],
             "test_subjects": f["test_subjects"]}
            for f in report["folds"]
        ]
        if fold_plan_hash(plan) != expected_hash:
            raise SmileFusionError(
                f"fold plan diverged while benchmarking {kind}; results not comparable"
            )
        rows.append(
            {
                "kind": kind,
                "mean_accuracy": report["mean_accuracy"],
                "extra_parameters": extra_parameter_count(
                    kind, options["width"], options["heads"]
                ),
            }
        )
        print(
            f"{kind:28s} mean_accuracy {report['mean_accuracy']:.4f} "
            f"extra_parameters {rows[-1]['extra_parameters']}"
        )

    payload = {"fold_plan_hash": expected_hash, "results": rows}
    with open(os.path.join(options["out"], "fusion_bench.json"), "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return 0


def _cmd_grad_check(args) -> int:
    defaults = {"seeds": 5, "groups": "ops,fusion,model", "tolerance": TOLERANCE}
    options = _resolve_options(args, defaults)
    groups = tuple(g.strip() for g in options["groups"].split(",") if g.strip())
    bad = sorted(set(groups) - {"ops", "fusion", "model"})
    if bad:
        raise InvalidConfigError(f"unknown grad-check groups {bad}")
    if options["seeds"] < 1:
        raise InvalidConfigError("--seeds must be >= 1")
    _echo_config(options)
    results = run_grad_suite(seeds=tuple(range(options["seeds"])), groups=groups)
    tol = options["tolerance"]
    for name in sorted(results):
        status = "pass" if results[name] < tol else "FAIL"
        print(f"{name:32s} {results[name]:.3e} {status}")
    worst = max(results.values())
    print(f"worst {worst:.3e} tolerance {tol:.1e}")
    return 0 if suite_passed(results, tol) else 2


def _cmd_export_embeddings(args) -> int:
    defaults = {"manifest": None, "checkpoint": None, "out": None, "baseline": False}
    options = _resolve_options(args, defaults)
    _require(options, "manifest", "checkpoint", "out")
    _echo_config(options)
    model = load_checkpoint(options["checkpoint"])
    dataset = build_dataset(options["manifest"], model.backbone_config.seq_len)

    vectors = []
    for start in range(0, len(dataset), 64):
        stop = min(start + 64, len(dataset))
        rep = model.video_representation(Tensor(dataset.clips[start:stop]))
        if options["baseline"]:
            out = model.fusion.project_learned(rep)
        else:
            if model.fusion.kind == "none":
                out = model.fusion.fuse(rep)
            else:
                markers = model.standardize_markers(dataset.markers[start:stop])
                out = model.fusion.fuse(rep, Tensor(markers))
        vectors.append(out.data)
    matrix = np.concatenate(vectors)

    import csv as _csv

    width = matrix.shape[1]
    with open(options["out"], "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["subject_id", "label", *(f"e{i:03d}" for i in range(width))])
        for i in range(len(dataset)):
            writer.writerow(
                [dataset.subjects[i], int(dataset.labels[i]),
                 *(repr(v) for v in matrix[i].tolist())]
            )
    print(f"embeddings {matrix.shape[0]}x{width} -> {options['out']}")
    return 0


# -- parser ----------------------------------------------------------------------


def _add_common(sub, *names_types) -> None:
    for name, kind in names_types:
        flag = "--" + name.replace("_", "-")
        if kind is bool:
            sub.add_argument(flag, dest=name, action="store_true",
                             default=argparse.SUPPRESS)
        else:
            sub.add_argument(flag, dest=name, type=kind, default=argparse.SUPPRESS)


def _add_train_family(sub, with_fusion: bool = True) -> None:
    if with_fusion:
        _add_common(sub, ("fusion", str))
    _add_common(
        sub,
        ("manifest", str), ("out", str), ("preset", str), ("optimizer", str),
        ("lr", float), ("lr_min", float), ("weight_decay", float),
        ("epochs", int), ("batch_size", int), ("seed", int), ("seq_len", int),
        ("spatial_dim", int), ("embed_dim", int), ("blocks", int),
        ("heads", int), ("dropout", float), ("ff_multiple", int),
        ("width", int), ("inference_mode", str),
        ("positional", bool), ("smooth", bool),
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="smilefusion",
        description="Smile authenticity pipeline: synthesize landmark corpora, "
        "extract facial-dynamics descriptors, and train/evaluate fusion models.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    def new(name, func, help_text):
        sub = subs.add_parser(name, help=help_text)
        sub.add_argument("--config", type=str, default=None,
                         help="JSON file of options (flags override it)")
        sub.set_defaults(func=func)
        return sub

    sub = new("synth", _cmd_synth, "generate a synthetic landmark corpus")
    _add_common(
        sub,
        ("out", str), ("subjects", int), ("clips_per_subject", int),
        ("fps", float), ("seed", int), ("noise_std", float),
        ("rotation_deg", float), ("scale_min", float), ("scale_max", float),
        ("translation", float),
    )
    sub.add_argument("--no-pose-jitter", dest="pose_jitter",
                     action="store_false", default=argparse.SUPPRESS)

    sub = new("extract", _cmd_extract, "write descriptor vectors for a corpus")
    _add_common(sub, ("manifest", str), ("out", str), ("smooth", bool))

    sub = new("train", _cmd_train, "train one model on a corpus")
    _add_train_family(sub)

    sub = new("eval", _cmd_eval, "evaluate a checkpoint on a corpus")
    _add_common(
        sub,
        ("manifest", str), ("checkpoint", str), ("out", str),
        ("video_only", bool), ("smooth", bool),
    )

    sub = new("crossval", _cmd_crossval, "subject-independent k-fold evaluation")
    _add_train_family(sub)
    _add_common(sub, ("folds", int))

    sub = new("fusion-bench", _cmd_fusion_bench,
              "cross-validate every fusion strategy on shared folds")
    _add_train_family(sub, with_fusion=False)
    _add_common(sub, ("folds", int))

    sub = new("grad-check", _cmd_grad_check, "verify gradients against finite differences")
    _add_common(sub, ("seeds", int), ("groups", str), ("tolerance", float))

    sub = new("export-embeddings", _cmd_export_embeddings,
              "write per-video representations as CSV")
    _add_common(sub, ("manifest", str), ("checkpoint", str), ("out", str),
                ("baseline", bool))

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors and 0 on --help; fold usage into 1
        return 0 if exc.code == 0 else 1
    try:
        return args.func(args)
    except _COMPUTE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except _USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SmileFusionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())
