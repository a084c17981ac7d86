"""Dataset loading: FER-style CSV, 7-class image directories, merging,
stratified splitting, and inverse-frequency class weights.

Canonical label order is fixed and shared by every module:
0 Angry, 1 Disgust, 2 Fear, 3 Happy, 4 Sad, 5 Surprise, 6 Neutral.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DataError

log = logging.getLogger(__name__)

EMOTION_NAMES = ("Angry", "Disgust", "Fear", "Happy", "Sad", "Surprise", "Neutral")
NUM_CLASSES = len(EMOTION_NAMES)
IMAGE_SIZE = 48

_NAME_TO_INDEX = {name.lower(): i for i, name in enumerate(EMOTION_NAMES)}

CSV_HEADER = "emotion,pixels,Usage"
_USAGE_TO_SPLIT = {"Training": "train", "PublicTest": "val", "PrivateTest": "test"}
IMAGE_EXTENSIONS = (".png", ".pgm", ".jpg", ".jpeg")


def emotion_index(name):
    """Case-insensitive name -> canonical index."""
    try:
        return _NAME_TO_INDEX[str(name).lower()]
    except KeyError:
        raise DataError(
            f"unknown emotion {name!r}; expected one of {', '.join(EMOTION_NAMES)}"
        ) from None


def emotion_name(index):
    if not 0 <= int(index) < NUM_CLASSES:
        raise DataError(f"emotion index {index} outside 0..{NUM_CLASSES - 1}")
    return EMOTION_NAMES[int(index)]


@dataclass
class Sample:
    pixels: np.ndarray  # (48, 48) float32 in [0, 1]
    label: int
    source_id: str = ""


@dataclass
class Dataset:
    samples: list
    split: str = ""
    class_counts: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.class_counts is None:
            self.class_counts = recount(self.samples)

    def __len__(self):
        return len(self.samples)

    def images(self):
        """(N, 1, 48, 48) float32 batch of every sample."""
        if not self.samples:
            return np.zeros((0, 1, IMAGE_SIZE, IMAGE_SIZE), dtype=np.float32)
        return np.stack([s.pixels for s in self.samples])[:, None, :, :]

    def labels(self):
        return np.array([s.label for s in self.samples], dtype=np.int64)


def recount(samples):
    counts = np.zeros(NUM_CLASSES, dtype=np.int64)
    for s in samples:
        counts[s.label] += 1
    return counts


def _parse_pixel_field(text, line_no):
    parts = text.split()
    if len(parts) != IMAGE_SIZE * IMAGE_SIZE:
        raise DataError(f"row {line_no}: expected 2304 pixels, got {len(parts)}")
    try:
        values = np.array(parts, dtype=np.int64)
    except ValueError:
        raise DataError(f"row {line_no}: non-integer pixel value") from None
    if values.min() < 0 or values.max() > 255:
        raise DataError(f"row {line_no}: pixel outside 0..255")
    pixels = values.astype(np.float32).reshape(IMAGE_SIZE, IMAGE_SIZE)
    pixels /= 255.0
    return pixels


def load_fer_csv(path, strict=True):
    """Reads an `emotion,pixels,Usage` CSV into (train, val, test) Datasets.

    Malformed rows raise DataError naming the row when strict, otherwise
    they are skipped and reported through logging.
    """
    buckets = {"train": [], "val": [], "test": []}
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise DataError(f"{path}: expected header {CSV_HEADER!r}, got {header!r}")
        skipped = 0
        for line_no, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            try:
                fields = line.split(",")
                if len(fields) != 3:
                    raise DataError(f"row {line_no}: expected 3 fields, got {len(fields)}")
                emotion_str, pixel_text, usage = fields
                try:
                    label = int(emotion_str)
                except ValueError:
                    raise DataError(f"row {line_no}: non-integer emotion") from None
                if not 0 <= label < NUM_CLASSES:
                    raise DataError(f"row {line_no}: emotion {label} outside 0..6")
                if usage not in _USAGE_TO_SPLIT:
                    raise DataError(f"row {line_no}: unknown Usage {usage!r}")
                pixels = _parse_pixel_field(pixel_text, line_no)
            except DataError as exc:
                if strict:
                    raise
                skipped += 1
                log.warning("skipping %s", exc)
                continue
            buckets[_USAGE_TO_SPLIT[usage]].append(
                Sample(pixels, label, source_id=f"csv:{line_no}"))
    if skipped:
        log.warning("%s: skipped %d malformed rows", path, skipped)
    return (Dataset(buckets["train"], "train"),
            Dataset(buckets["val"], "val"),
            Dataset(buckets["test"], "test"))


def _decode_image(path):
    """PNG/PGM/JPEG -> (48, 48) float32 in [0, 1]. Grayscale conversion is
    BT.601 luminance; resize is bilinear."""
    with Image.open(path) as img:
        if img.mode != "L":
            img = img.convert("L")  # Pillow's L uses the BT.601 weights
        if img.size != (IMAGE_SIZE, IMAGE_SIZE):
            img = img.resize((IMAGE_SIZE, IMAGE_SIZE), Image.BILINEAR)
        arr = np.asarray(img, dtype=np.float32) / 255.0
    return arr


def load_class_directories(root):
    """Loads `<root>/<emotion name>/*` image trees; label from directory."""
    import pathlib

    root = pathlib.Path(root)
    if not root.is_dir():
        raise DataError(f"{root}: not a directory")
    samples = []
    for sub in sorted(root.iterdir()):
        if not sub.is_dir():
            continue
        if sub.name not in _NAME_TO_INDEX:
            log.warning("%s: unknown class directory, skipping", sub)
            continue
        label = _NAME_TO_INDEX[sub.name]
        for file in sorted(sub.iterdir()):
            if file.suffix.lower() not in IMAGE_EXTENSIONS or not file.is_file():
                continue
            try:
                pixels = _decode_image(file)
            except (OSError, UnidentifiedImageError) as exc:
                log.warning("%s: undecodable image (%s), skipping", file, exc)
                continue
            samples.append(Sample(pixels, label, source_id=str(file.relative_to(root))))
    return Dataset(samples, "directory")


def merge(datasets):
    """Concatenates datasets, recomputing class counts. The split tag is
    kept when every input agrees, otherwise set to "merged"."""
    samples = []
    splits = set()
    for ds in datasets:
        samples.extend(ds.samples)
        if len(ds):
            splits.add(ds.split)
    split = splits.pop() if len(splits) == 1 else "merged"
    return Dataset(samples, split)


def stratified_split(dataset, fraction, seed):
    """Per-class split: round(fraction * n_c) samples (half-up) go to the
    first output. Deterministic under seed; together the outputs restore
    the input multiset."""
    if not 0 < fraction < 1:
        raise DataError(f"fraction must be in (0, 1), got {fraction}")
    rng = np.random.default_rng(int(seed))
    labels = np.array([s.label for s in dataset.samples])
    first_idx = []
    second_idx = []
    for c in range(NUM_CLASSES):
        idx = np.flatnonzero(labels == c)
        take = int(math.floor(fraction * len(idx) + 0.5))
        perm = rng.permutation(len(idx))
        first_idx.extend(idx[perm[:take]])
        second_idx.extend(idx[perm[take:]])
    first_idx.sort()
    second_idx.sort()
    first = [dataset.samples[i] for i in first_idx]
    second = [dataset.samples[i] for i in second_idx]
    return Dataset(first, dataset.split), Dataset(second, dataset.split)


def class_weights(class_counts):
    """w_c = N / (K * n_c): inverse frequency, normalized so uniform counts
    give all-ones weights."""
    counts = np.asarray(class_counts, dtype=np.float64)
    if counts.shape != (NUM_CLASSES,):
        raise DataError(f"expected {NUM_CLASSES} class counts, got shape {counts.shape}")
    zero = np.flatnonzero(counts == 0)
    if zero.size:
        names = ", ".join(EMOTION_NAMES[i] for i in zero)
        raise DataError(
            f"class(es) with zero samples: {names}; merge auxiliary data for "
            f"them or drop the class before weighting")
    total = counts.sum()
    return total / (NUM_CLASSES * counts)
