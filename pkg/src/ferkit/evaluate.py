"""Accuracy, confusion matrices, soft-voting ensembles, TTA prediction,
and misclassification reports.

Soft voting canonicalizes the addend order (columnwise sort) before
averaging, so the result is bit-identical under any permutation of the
inputs, and short-circuits when all rows are equal, making an ensemble of
N identical members exactly equal to a single member.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .augment import AugmentPolicy, tta_set
from .data import EMOTION_NAMES, NUM_CLASSES, emotion_name
from .errors import DataError

_EVAL_BATCH = 256


def _probs_for(model_or_probs, dataset):
    if isinstance(model_or_probs, np.ndarray):
        probs = model_or_probs
        if probs.shape != (len(dataset), NUM_CLASSES):
            raise DataError(
                f"probability matrix shape {probs.shape} does not match "
                f"dataset of {len(dataset)} samples")
        return probs
    out = np.empty((len(dataset), NUM_CLASSES), dtype=np.float64)
    for start in range(0, len(dataset), _EVAL_BATCH):
        chunk = dataset.samples[start : start + _EVAL_BATCH]
        x = np.stack([s.pixels for s in chunk])[:, None, :, :]
        out[start : start + len(chunk)] = model_or_probs.forward_probs(x, mode="infer")
    return out


def confusion_matrix(model_or_probs, dataset):
    """7x7 counts, rows true, columns predicted; argmax ties go to the
    lowest class index."""
    if not len(dataset):
        raise DataError("empty dataset")
    probs = _probs_for(model_or_probs, dataset)
    pred = np.argmax(probs, axis=1)
    true = dataset.labels()
    counts = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64)
    np.add.at(counts, (true, pred), 1)
    return counts


def accuracy(model_or_probs, dataset):
    counts = confusion_matrix(model_or_probs, dataset)
    return float(np.trace(counts) / len(dataset))


def per_class_misclassification(counts):
    """1 - recall per class; classes absent from the data report nan."""
    row_sums = counts.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        rate = 1.0 - np.diag(counts) / row_sums
    return np.where(row_sums > 0, rate, np.nan)


def soft_vote(prob_rows):
    """Componentwise mean of probability rows, permutation-invariant at the
    bit level and exactly idempotent on identical rows."""
    rows = np.asarray(prob_rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] == 0:
        raise DataError("soft_vote needs at least one probability row")
    if np.all(rows == rows[0]):
        return rows[0].copy()
    return np.sort(rows, axis=0).mean(axis=0)


def predict_tta(model, image, policy=None, seed=0):
    """Soft vote over the 9-image TTA set; deterministic under seed."""
    policy = policy if policy is not None else AugmentPolicy()
    images = tta_set(image, policy, seed)
    x = np.stack(images)[:, None, :, :]
    probs = model.forward_probs(x, mode="infer")
    return soft_vote(probs)


@dataclass
class EnsembleSpec:
    members: list  # of (weights_path, tta: bool)

    @classmethod
    def from_json_file(cls, path):
        try:
            with open(path, "r", encoding="utf-8") as fh:
                entries = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"{path}: unreadable ensemble spec: {exc}") from None
        if not isinstance(entries, list) or not entries:
            raise DataError(f"{path}: ensemble spec must be a non-empty JSON list")
        members = []
        for i, entry in enumerate(entries):
            if "weights_path" not in entry:
                raise DataError(f"{path}: member {i} missing weights_path")
            members.append((entry["weights_path"], bool(entry.get("tta", False))))
        return cls(members)


def load_ensemble(spec):
    """Loads every member model; failures name the offending member."""
    from .model import load_weights

    models = []
    for path, tta in spec.members:
        try:
            models.append((load_weights(path), tta))
        except (OSError, DataError) as exc:
            raise DataError(f"ensemble member {path}: {exc}") from None
    return models


def ensemble_predict(spec_or_models, image, policy=None, seed=0):
    """Soft vote across members; TTA-flagged members are TTA-averaged
    first."""
    if isinstance(spec_or_models, EnsembleSpec):
        models = load_ensemble(spec_or_models)
    else:
        models = spec_or_models
    rows = []
    for model, tta in models:
        if tta:
            rows.append(predict_tta(model, image, policy, seed))
        else:
            rows.append(model.forward_probs(image[None, None, :, :], mode="infer")[0])
    return soft_vote(rows)


def error_report(model, dataset, top_k=5):
    """Misclassified samples grouped by (true, predicted) cell: source_id,
    labels, and the top-3 classes with probabilities, keeping the top_k
    most confident per cell."""
    if top_k < 1:
        raise DataError(f"top_k must be >= 1, got {top_k}")
    probs = _probs_for(model, dataset)
    pred = np.argmax(probs, axis=1)
    cells = {}
    for i, sample in enumerate(dataset.samples):
        if pred[i] == sample.label:
            continue
        top3 = np.argsort(-probs[i], kind="stable")[:3]
        row = {
            "source_id": sample.source_id,
            "true": emotion_name(sample.label),
            "predicted": emotion_name(pred[i]),
            "confidence": float(probs[i, pred[i]]),
            "top3": [{"label": emotion_name(c), "p": float(probs[i, c])} for c in top3],
        }
        cells.setdefault((sample.label, int(pred[i])), []).append(row)
    report = []
    for key in sorted(cells):
        rows = sorted(cells[key], key=lambda r: -r["confidence"])[:top_k]
        report.extend(rows)
    return report


def metrics_dict(counts):
    """JSON-ready accuracy + confusion + per-class rates."""
    total = int(counts.sum())
    mis = per_class_misclassification(counts)
    return {
        "total": total,
        "accuracy": float(np.trace(counts) / total) if total else 0.0,
        "confusion": counts.tolist(),
        "class_names": list(EMOTION_NAMES),
        "per_class_misclassification": [
            None if np.isnan(v) else float(v) for v in mis],
    }


def format_confusion(counts):
    """Aligned text table of the confusion matrix."""
    width = max(len(n) for n in EMOTION_NAMES) + 1
    cell = max(6, int(np.max(counts)) and len(str(int(np.max(counts)))) + 1)
    lines = [" " * width + "".join(n[:cell - 1].rjust(cell) for n in EMOTION_NAMES)]
    for i, name in enumerate(EMOTION_NAMES):
        lines.append(name.ljust(width)
                     + "".join(str(int(v)).rjust(cell) for v in counts[i]))
    return "\n".join(lines)
