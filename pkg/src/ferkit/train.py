"""SGD-with-momentum training: class-weighted cross-entropy, per-epoch
plateau learning-rate halving, best-checkpoint tracking, and a
line-delimited JSON history sidecar.

Seed discipline: all epoch randomness derives from SeedSequence tuples
(seed, epoch, tag[, index]) with distinct tags for shuffling (1), per-
sample augmentation (2), and per-batch dropout (3). Batch-assembly order
therefore cannot change numerical results.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .augment import AugmentPolicy, apply_policy
from .data import class_weights as compute_class_weights
from .errors import DataError, NumericError

log = logging.getLogger(__name__)

_TAG_SHUFFLE = 1
_TAG_AUGMENT = 2
_TAG_DROPOUT = 3


@dataclass
class TrainConfig:
    lr0: float = 0.1
    batch_size: int = 128
    momentum: float = 0.9
    weight_decay: float = 0.0001
    max_epochs: int = 300
    plateau_patience: int = 10
    lr_factor: float = 0.5
    use_class_weights: bool = False
    augment_policy: AugmentPolicy = field(default_factory=AugmentPolicy)
    seed: int = 0

    def __post_init__(self):
        if self.lr0 <= 0:
            raise DataError(f"lr0 must be > 0, got {self.lr0}")
        if not 0 <= self.momentum < 1:
            raise DataError(f"momentum must be in [0, 1), got {self.momentum}")
        if not 0 < self.lr_factor < 1:
            raise DataError(f"lr_factor must be in (0, 1), got {self.lr_factor}")
        if self.plateau_patience < 1:
            raise DataError(f"plateau_patience must be >= 1, got {self.plateau_patience}")
        if self.batch_size < 1:
            raise DataError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 1:
            raise DataError(f"max_epochs must be >= 1, got {self.max_epochs}")


@dataclass
class TrainState:
    epoch: int = 0
    current_lr: float = 0.0
    velocity: dict = field(default_factory=dict)
    best_val_accuracy: float = -1.0
    epochs_since_improvement: int = 0
    history: list = field(default_factory=list)


def init_state(model, config):
    state = TrainState(current_lr=config.lr0)
    for name, arr, _ in model.param_items():
        state.velocity[name] = np.zeros_like(arr)
    return state


def sgd_step(model, grads, state, config):
    """v <- momentum*v - lr*(g + wd*w); w <- w + v. Weight decay skips
    biases and batchnorm scale/shift (their decay flag is False)."""
    lr = state.current_lr
    for name, w, decay in model.param_items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in {name}")
        if decay and config.weight_decay:
            g = g + config.weight_decay * w
        v = state.velocity[name]
        v *= config.momentum
        v -= lr * g
        w += v


def lr_schedule_step(state, val_accuracy, config):
    """Strict improvement resets patience; a full patience window without
    improvement multiplies the learning rate by lr_factor once."""
    if val_accuracy > state.best_val_accuracy:
        state.best_val_accuracy = val_accuracy
        state.epochs_since_improvement = 0
    else:
        state.epochs_since_improvement += 1
        if state.epochs_since_improvement >= config.plateau_patience:
            state.current_lr *= config.lr_factor
            state.epochs_since_improvement = 0
    return state.current_lr


def _forward_accuracy(model, dataset, batch_size):
    """Infer-mode argmax accuracy, batched to bound memory."""
    if not len(dataset):
        raise DataError("empty dataset")
    correct = 0
    for start in range(0, len(dataset), batch_size):
        chunk = dataset.samples[start : start + batch_size]
        x = np.stack([s.pixels for s in chunk])[:, None, :, :]
        y = np.array([s.label for s in chunk])
        probs = model.forward_probs(x, mode="infer")
        correct += int(np.sum(np.argmax(probs, axis=1) == y))
    return correct / len(dataset)


def fit(model, train, val, config, checkpoint_path=None, history_path=None,
        stop_at_val_accuracy=None):
    """Trains in place; returns (model restored to its best checkpoint,
    TrainState). History records {epoch, train_loss, val_accuracy, lr}
    where lr is the rate the epoch ran at. stop_at_val_accuracy ends the
    run early once validation reaches the threshold."""
    if not len(train) or not len(val):
        raise DataError("train and val datasets must be non-empty")
    weights = None
    if config.use_class_weights:
        weights = compute_class_weights(train.class_counts)
    state = init_state(model, config)
    identity_policy = config.augment_policy.is_identity()
    best_snapshot = None
    history_fh = open(history_path, "w", encoding="utf-8") if history_path else None

    try:
        for epoch in range(1, config.max_epochs + 1):
            state.epoch = epoch
            epoch_lr = state.current_lr
            shuffle_rng = np.random.default_rng(
                np.random.SeedSequence([config.seed, epoch, _TAG_SHUFFLE]))
            order = shuffle_rng.permutation(len(train))

            loss_sum = 0.0
            for batch_idx, start in enumerate(range(0, len(order), config.batch_size)):
                idx = order[start : start + config.batch_size]
                batch = []
                for pos, i in enumerate(idx, start=start):
                    sample = train.samples[i]
                    if not identity_policy:
                        sample = apply_policy(
                            sample, config.augment_policy,
                            np.random.SeedSequence(
                                [config.seed, epoch, _TAG_AUGMENT, pos]))
                    batch.append(sample)
                x = np.stack([s.pixels for s in batch])[:, None, :, :]
                y = np.array([s.label for s in batch])

                dropout_rng = np.random.default_rng(
                    np.random.SeedSequence([config.seed, epoch, _TAG_DROPOUT, batch_idx]))
                logits, caches = model.forward_logits(x, mode="train", rng=dropout_rng)
                loss, _, dlogits = ops.softmax_cross_entropy(logits, y, weights)
                if not np.isfinite(loss):
                    raise NumericError(
                        f"non-finite loss at epoch {epoch} batch {batch_idx}")
                try:
                    _, grads = model.backward(dlogits, caches)
                    sgd_step(model, grads, state, config)
                except NumericError as exc:
                    raise NumericError(
                        f"epoch {epoch} batch {batch_idx}: {exc}") from None
                loss_sum += loss * len(idx)

            train_loss = loss_sum / len(order)
            val_accuracy = _forward_accuracy(model, val, config.batch_size)
            improved = val_accuracy > state.best_val_accuracy
            lr_schedule_step(state, val_accuracy, config)

            record = {"epoch": epoch, "train_loss": float(train_loss),
                      "val_accuracy": float(val_accuracy), "lr": float(epoch_lr)}
            state.history.append(record)
            if history_fh:
                history_fh.write(json.dumps(record) + "\n")
                history_fh.flush()
            log.info("epoch %d: loss %.4f val %.4f lr %.5f",
                     epoch, train_loss, val_accuracy, epoch_lr)

            if improved:
                best_snapshot = [(name, arr.copy())
                                 for name, arr in model.named_tensors()]
                model.meta = {"epochs": epoch, "val_accuracy": float(val_accuracy)}
                if checkpoint_path:
                    from .model import save_weights
                    save_weights(model, checkpoint_path)
            if (stop_at_val_accuracy is not None
                    and val_accuracy >= stop_at_val_accuracy):
                break
    finally:
        if history_fh:
            history_fh.close()

    if best_snapshot is not None:
        for (name, arr), (snap_name, snap) in zip(model.named_tensors(), best_snapshot):
            assert name == snap_name
            arr[...] = snap
    return model, state


CONFIG_KEYS = {
    "lr0": float,
    "batch_size": int,
    "momentum": float,
    "weight_decay": float,
    "max_epochs": int,
    "plateau_patience": int,
    "lr_factor": float,
    "use_class_weights": None,  # boolean, parsed below
    "seed": int,
    "flip_prob": float,
    "rotation_deg": float,
    "zoom_frac": float,
    "shift_frac": float,
    "arch": str,
}

_BOOL_VALUES = {"true": True, "1": True, "yes": True,
                "false": False, "0": False, "no": False}


def parse_config_file(path):
    """Flat `key = value` lines; '#' starts a comment. Returns
    (TrainConfig, arch_id)."""
    raw = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DataError(f"{path}:{line_no}: expected key = value")
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if key not in CONFIG_KEYS:
                raise DataError(
                    f"{path}:{line_no}: unknown key {key!r}; valid keys: "
                    + ", ".join(sorted(CONFIG_KEYS)))
            raw[key] = (value, line_no)
    return build_config(raw, path)


def build_config(raw, origin="config"):
    kwargs = {}
    policy_kwargs = {}
    arch = "five-layer"
    for key, (value, line_no) in raw.items():
        caster = CONFIG_KEYS[key]
        try:
            if key == "use_class_weights":
                parsed = _BOOL_VALUES[value.lower()]
            else:
                parsed = caster(value)
        except (ValueError, KeyError):
            raise DataError(
                f"{origin}:{line_no}: bad value {value!r} for {key}") from None
        if key == "arch":
            arch = parsed
        elif key in ("flip_prob", "rotation_deg", "zoom_frac", "shift_frac"):
            policy_kwargs[key] = parsed
        else:
            kwargs[key] = parsed
    if policy_kwargs:
        kwargs["augment_policy"] = AugmentPolicy(**policy_kwargs)
    return TrainConfig(**kwargs), arch


def load_history(path):
    """Reads a line-delimited JSON history sidecar back into a list."""
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records
