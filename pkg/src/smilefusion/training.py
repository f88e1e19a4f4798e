"""Training, evaluation, and subject-independent cross-validation.

The training loop is deliberately small: binary cross entropy on sigmoid
outputs, Adam or decoupled-weight-decay Adam on all trainable parameters,
a cosine learning-rate schedule stepped once per epoch, and per-epoch
reshuffling. There is no early stopping and no restart logic; runs are
reproducible to the bit given (seed, config, data).

Randomness is split into named streams of the run seed so the pieces can
never steal draws from each other: stream 0 initializes parameters (in the
model), stream 1 shuffles batches, stream 2 drives dropout masks.

Marker vectors are standardized with training-fold statistics only; the
mean/std and the mean standardized vector (the constant-gate fallback) are
stored on the model and travel with its checkpoints.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, replace
from types import SimpleNamespace

import numpy as np

from . import kernels
from .errors import (
    EmptyClassError,
    InvalidConfigError,
    TooFewSubjectsError,
)
from .model import SmileModel
from .tensor import Tensor, zero_grads

_SHUFFLE_STREAM = 1
_DROPOUT_STREAM = 2

_STD_FLOOR = 1e-8  # constant marker features pass through unscaled


@dataclass
class TrainConfig:
    optimizer: str = "adamw"
    lr: float = 5e-4
    lr_min: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-2
    epochs: int = 300
    batch_size: int = 16
    seed: int = 0

    def validate(self) -> "TrainConfig":
        if self.optimizer not in ("adam", "adamw"):
            raise InvalidConfigError(
                f"optimizer must be 'adam' or 'adamw', got {self.optimizer!r}"
            )
        if self.lr <= 0:
            raise InvalidConfigError("lr must be positive")
        if not 0.0 <= self.lr_min <= self.lr:
            raise InvalidConfigError("lr_min must lie in [0, lr]")
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidConfigError("epochs and batch_size must be >= 1")
        if not 0.0 <= self.beta1 < 1.0 or not 0.0 <= self.beta2 < 1.0:
            raise InvalidConfigError("betas must lie in [0, 1)")
        return self


# Named hyperparameter bundles. `paper-body` is the conservative long-clip
# recipe: plain Adam at 1e-4 with no decay and seq_len 64 (the caller applies
# the seq_len to the backbone config). `default` is the AdamW setup the rest
# of this package is tuned around.
TRAIN_PRESETS: dict[str, dict] = {
    "default": {},
    "paper-body": {"optimizer": "adam", "lr": 1e-4, "weight_decay": 0.0},
}

PRESET_SEQ_LEN = {"default": 16, "paper-body": 64}


def preset_config(name: str, **overrides) -> TrainConfig:
    if name not in TRAIN_PRESETS:
        raise InvalidConfigError(
            f"unknown preset {name!r}; valid presets: {', '.join(sorted(TRAIN_PRESETS))}"
        )
    merged = dict(TRAIN_PRESETS[name])
    merged.update(overrides)
    return TrainConfig(**merged).validate()


# -- loss and metrics ------------------------------------------------------------


def bce_loss(probs: Tensor, labels) -> Tensor:
    """Mean binary cross entropy. Probabilities are clamped to
    [1e-12, 1 - 1e-12] before the logs so saturated sigmoids cannot
    produce infinities."""
    y = Tensor(np.asarray(labels, dtype=np.float64))
    if y.shape != probs.shape:
        y = y.reshape(probs.shape)
    p = probs.clip(1e-12, 1.0 - 1e-12)
    per_sample = y * p.log() + (1.0 - y) * (1.0 - p).log()
    return per_sample.mean().scale(-1.0)


def accuracy(probs: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of correct 0.5-threshold decisions (ties predict 1)."""
    predicted = np.asarray(probs) >= 0.5
    return float(np.mean(predicted == (np.asarray(labels) > 0)))


def cosine_lr(epoch: int, total_epochs: int, lr_max: float, lr_min: float = 0.0) -> float:
    """Cosine annealing from lr_max at epoch 0 toward lr_min at the end.

    Stepped per epoch; lr_min itself is only reached at epoch == total."""
    frac = min(max(epoch / max(total_epochs, 1), 0.0), 1.0)
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + np.cos(np.pi * frac))


# -- optimizers --------------------------------------------------------------------


class OptimizerState:
    """First/second moment buffers per parameter plus a shared step count."""

    def __init__(self, params):
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        for p in params:
            if p.name in self.m:
                raise InvalidConfigError(f"duplicate parameter name {p.name!r}")
            if not p.data.flags["C_CONTIGUOUS"]:
                p.data = np.ascontiguousarray(p.data)
            self.m[p.name] = np.zeros(p.data.size)
            self.v[p.name] = np.zeros(p.data.size)


def adamw_step(
    params,
    state: OptimizerState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 1e-2,
) -> None:
    """Bias-corrected Adam step with decoupled weight decay, in place.

    Parameters without gradients (unused in the current graph) keep their
    moments untouched."""
    state.t += 1
    for p in params:
        if not p.trainable or p.grad is None:
            continue
        flat_w = p.data.reshape(-1)
        flat_g = np.ascontiguousarray(p.grad, dtype=np.float64).reshape(-1)
        kernels.adam_update(
            flat_w, flat_g, state.m[p.name], state.v[p.name],
            state.t, lr, beta1, beta2, eps, weight_decay,
        )


def adam_step(
    params,
    state: OptimizerState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Plain bias-corrected Adam (no weight decay)."""
    adamw_step(params, state, lr, beta1, beta2, eps, weight_decay=0.0)


# -- training ----------------------------------------------------------------------


def _check_two_classes(labels: np.ndarray, where: str) -> None:
    present = np.unique(np.asarray(labels))
    if not (0 in present and 1 in present):
        raise EmptyClassError(
            f"{where} must contain both classes, found labels {present.tolist()}"
        )


def fit_marker_stats(model: SmileModel, markers: np.ndarray) -> np.ndarray:
    """Standardize markers with their own statistics, store everything on
    the model, and return the standardized matrix."""
    markers = np.asarray(markers, dtype=np.float64)
    mean = markers.mean(axis=0)
    std = markers.std(axis=0)
    std = np.where(std < _STD_FLOOR, 1.0, std)
    model.set_marker_stats(mean, std)
    standardized = (markers - mean) / std
    model.marker_constant = standardized.mean(axis=0)
    return standardized


def train(model: SmileModel, dataset, config: TrainConfig, log_path=None) -> list[dict]:
    """Fit the model on `dataset` (clips, markers, labels attributes).

    Returns per-epoch history rows {epoch, lr, train_loss, train_acc}
    computed on the fly during the training pass. Marker statistics are
    fitted here, on this data only."""
    config.validate()
    clips = np.asarray(dataset.clips, dtype=np.float64)
    labels = np.asarray(dataset.labels)
    n = len(labels)
    if n == 0:
        raise EmptyClassError("training set is empty")
    _check_two_classes(labels, "training labels")

    standardized = fit_marker_stats(model, dataset.markers)
    params = model.parameters()
    state = OptimizerState(params)
    shuffle_rng = np.random.default_rng(
        np.random.SeedSequence((config.seed, _SHUFFLE_STREAM))
    )
    dropout_rng = np.random.default_rng(
        np.random.SeedSequence((config.seed, _DROPOUT_STREAM))
    )

    history = []
    for epoch in range(config.epochs):
        lr = cosine_lr(epoch, config.epochs, config.lr, config.lr_min)
        order = shuffle_rng.permutation(n)
        loss_sum = 0.0
        correct = 0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            zero_grads(params)
            probs = model.forward(
                Tensor(clips[idx]),
                Tensor(standardized[idx]),
                train=True,
                rng=dropout_rng,
            )
            loss = bce_loss(probs, labels[idx])
            loss.backward()
            if config.optimizer == "adamw":
                adamw_step(
                    params, state, lr, config.beta1, config.beta2,
                    config.eps, config.weight_decay,
                )
            else:
                adam_step(params, state, lr, config.beta1, config.beta2, config.eps)
            loss_sum += loss.item() * len(idx)
            correct += int(np.sum((probs.data >= 0.5) == (labels[idx] > 0)))
        history.append(
            {
                "epoch": epoch,
                "lr": float(lr),
                "train_loss": loss_sum / n,
                "train_acc": correct / n,
            }
        )

    if log_path is not None:
        with open(log_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "lr", "train_loss", "train_acc"])
            for row in history:
                writer.writerow(
                    [row["epoch"], repr(row["lr"]), repr(row["train_loss"]),
                     repr(row["train_acc"])]
                )
    return history


def evaluate(model: SmileModel, dataset, batch_size: int = 64) -> dict:
    """Eval-mode loss and accuracy using the model's stored marker stats."""
    clips = np.asarray(dataset.clips, dtype=np.float64)
    labels = np.asarray(dataset.labels)
    standardized = model.standardize_markers(dataset.markers)
    n = len(labels)
    loss_sum = 0.0
    all_probs = np.empty(n)
    for start in range(0, n, batch_size):
        stop = min(start + batch_size, n)
        probs = model.forward(Tensor(clips[start:stop]), Tensor(standardized[start:stop]))
        loss_sum += bce_loss(probs, labels[start:stop]).item() * (stop - start)
        all_probs[start:stop] = probs.data
    return {
        "accuracy": accuracy(all_probs, labels),
        "loss": loss_sum / n,
        "count": int(n),
    }


# -- cross-validation ---------------------------------------------------------------


def _subject_key(subject: str, seed: int) -> str:
    return hashlib.blake2b(f"{seed}:{subject}".encode(), digest_size=16).hexdigest()


def build_fold_plan(subjects, n_folds: int, seed: int = 0) -> list[dict]:
    """Deterministic subject-level folds.

    Unique subject ids are ordered by a seeded stable hash and dealt
    round-robin into n_folds test groups; each fold trains on everything
    outside its group. No subject ever appears on both sides of a fold."""
    unique = sorted({str(s) for s in subjects})
    if n_folds < 2:
        raise TooFewSubjectsError(f"n_folds must be >= 2, got {n_folds}")
    if len(unique) < n_folds:
        raise TooFewSubjectsError(
            f"need at least {n_folds} distinct subjects for {n_folds} folds, "
            f"found {len(unique)}"
        )
    ordered = sorted(unique, key=lambda s: (_subject_key(s, seed), s))
    plan = []
    for fold in range(n_folds):
        test = sorted(ordered[fold::n_folds])
        train_subjects = sorted(s for s in unique if s not in test)
        assert not set(train_subjects) & set(test)
        plan.append({"fold": fold, "train_subjects": train_subjects, "test_subjects": test})
    return plan


def fold_plan_hash(plan) -> str:
    """Stable digest of a fold plan, for asserting two runs share folds."""
    payload = json.dumps(plan, sort_keys=True).encode()
    return hashlib.sha256(payload).hexdigest()


def _subset(dataset, mask: np.ndarray) -> SimpleNamespace:
    return SimpleNamespace(
        clips=np.asarray(dataset.clips)[mask],
        markers=np.asarray(dataset.markers)[mask],
        labels=np.asarray(dataset.labels)[mask],
        subjects=np.asarray(dataset.subjects)[mask],
    )


def fold_seed_for(seed: int, fold: int) -> int:
    return int(np.random.SeedSequence((seed, fold)).generate_state(1)[0])


def crossval(
    dataset,
    model_factory,
    config: TrainConfig,
    n_folds: int = 5,
    seed: int = 0,
    model_info: dict | None = None,
    log_dir=None,
) -> dict:
    """Subject-independent k-fold evaluation.

    model_factory(fold_seed) must return a fresh untrained model. Each fold
    trains with the fold-specific seed (folds are independent experiments)
    and reports eval-mode accuracy on its held-out subjects."""
    config.validate()
    subjects = np.asarray([str(s) for s in dataset.subjects])
    plan = build_fold_plan(subjects, n_folds, seed)
    folds = []
    for entry in plan:
        fold = entry["fold"]
        train_subjects, test_subjects = entry["train_subjects"], entry["test_subjects"]
        fseed = fold_seed_for(seed, fold)
        train_mask = np.isin(subjects, train_subjects)
        test_mask = np.isin(subjects, test_subjects)
        assert not np.any(train_mask & test_mask)
        assert set(subjects[test_mask]).isdisjoint(train_subjects)

        model = model_factory(fseed)
        log_path = None
        if log_dir is not None:
            log_path = f"{log_dir}/fold{fold}_train.csv"
        train(model, _subset(dataset, train_mask), replace(config, seed=fseed), log_path)
        train_metrics = evaluate(model, _subset(dataset, train_mask))
        test_metrics = evaluate(model, _subset(dataset, test_mask))
        folds.append(
            {
                "fold": fold,
                "seed": fseed,
                "train_subjects": train_subjects,
                "test_subjects": test_subjects,
                "train_accuracy": train_metrics["accuracy"],
                "accuracy": test_metrics["accuracy"],
            }
        )
    report = {
        "config": {
            "n_folds": n_folds,
            "seed": seed,
            "train": asdict(config),
            **(model_info or {}),
        },
        "folds": folds,
        "mean_accuracy": float(np.mean([f["accuracy"] for f in folds])),
    }
    return report
