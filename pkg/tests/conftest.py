"""Shared fixtures.

The full corpus tests run against a synthetic CSV that reproduces the
published per-class totals (35,887 rows) with class-discriminable
sinusoid-plus-noise images, so learning-signal tests have something to
learn. Point FER2013_CSV at a real download to run against actual data
instead.
"""

import os
import pathlib

import numpy as np
import pytest

# Published per-class totals in canonical order:
# Angry, Disgust, Fear, Happy, Sad, Surprise, Neutral
CLASS_TOTALS = (4953, 547, 5121, 8989, 6077, 4002, 6198)
_SYNTH_VERSION = 1

# One spatial frequency pair per class; distinct orientation or period
# makes the classes separable by a small CNN.
_CLASS_FREQS = ((3, 0), (0, 3), (3, 3), (6, 0), (0, 6), (6, 3), (3, 6))


def _class_images(label, count, rng):
    """(count, 48, 48) uint8: a per-class grating plus per-image noise."""
    fx, fy = _CLASS_FREQS[label]
    grid = np.arange(48, dtype=np.float64) / 48.0
    y = grid[:, None]
    x = grid[None, :]
    base = 0.5 + 0.35 * np.sin(2.0 * np.pi * (fx * x + fy * y) + 0.7 * label)
    noise = rng.uniform(-0.15, 0.15, size=(count, 48, 48))
    brightness = rng.uniform(-0.10, 0.10, size=(count, 1, 1))
    imgs = np.clip(base[None, :, :] + noise + brightness, 0.0, 1.0)
    return np.round(imgs * 255.0).astype(np.uint8)


def _write_synthetic_csv(path):
    rng = np.random.default_rng(20130815)
    tmp = str(path) + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write("emotion,pixels,Usage\n")
        for label, total in enumerate(CLASS_TOTALS):
            imgs = _class_images(label, total, rng).reshape(total, 48 * 48)
            train_n = int(np.floor(0.8 * total + 0.5))
            val_n = int(np.floor(0.1 * total + 0.5))
            text = imgs.astype("U3")
            for i in range(total):
                if i < train_n:
                    usage = "Training"
                elif i < train_n + val_n:
                    usage = "PublicTest"
                else:
                    usage = "PrivateTest"
                fh.write(f"{label},{' '.join(text[i])},{usage}\n")
    os.replace(tmp, path)


@pytest.fixture(scope="session")
def fer_csv_path():
    env = os.environ.get("FER2013_CSV")
    if env:
        return env
    cache = pathlib.Path(__file__).resolve().parent.parent / ".cache"
    cache.mkdir(exist_ok=True)
    path = cache / f"fer_synth_v{_SYNTH_VERSION}.csv"
    if not path.exists():
        _write_synthetic_csv(path)
    return str(path)


@pytest.fixture(scope="session")
def fer_splits(fer_csv_path):
    from ferkit.data import load_fer_csv

    return load_fer_csv(fer_csv_path)


@pytest.fixture()
def small_dataset():
    """60 synthetic samples (class-separable), handy for fast unit tests."""
    from ferkit.data import Dataset, Sample

    rng = np.random.default_rng(7)
    samples = []
    for label in range(7):
        n = 12 if label == 0 else 8
        for img in _class_images(label, n, rng):
            samples.append(Sample(img.astype(np.float32) / 255.0, label,
                                  f"synth:{label}:{len(samples)}"))
    return Dataset(samples, "train")
