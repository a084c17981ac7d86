"""Model assembly, forward/backward orchestration, and weight serialization.

Two fixed stacks are buildable by id:

* ``five-layer``: three conv+pool stages (32/32/64 filters, 5/4/5 kernels,
  3x3 stride-2 ceil-mode pooling), dense 1024, dropout 0.3, dense 7.
  Spatial chain 48 -> 24 -> 12 -> 6, flatten width 2304.
* ``baseline``: four 3x3x32 same-padding convs with two 2x2/2 pools,
  dense 8192, dropout 0.5, dense 7. Flatten width 4608.

Every conv/dense is followed by batchnorm then ReLU. ``forward_probs``
appends softmax; training reads logits directly for a stable loss.

Weights file layout: magic ``FERW1``, little-endian uint32 metadata
length, UTF-8 JSON metadata (arch id, tensor manifest, training info),
then raw little-endian float32 tensor payloads in manifest order.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from . import ops
from .errors import (BadMagicError, ShapeMismatchError, TruncatedWeightsError,
                     WeightsFormatError)
from .layers import (BatchNorm, Conv2d, Dense, Dropout, Flatten, MaxPool2d,
                     ReLU)

MAGIC = b"FERW1"
ARCH_IDS = ("five-layer", "baseline")

# Closed-form parameter totals, computed by hand per layer before the
# stacks were coded; construction must reproduce them exactly.
#   five-layer: 832 + 64 + 16,416 + 64 + 51,264 + 128
#               + 2,360,320 + 2,048 + 7,175 = 2,438,311
#   baseline:   320 + 64 + (9,248 + 64)*3 + 37,756,928 + 16,384
#               + 57,351 = 37,858,983
PARAM_TOTALS = {"five-layer": 2_438_311, "baseline": 37_858_983}


class Model:
    """Ordered layer stack with explicit caches.

    Infer-mode forward never mutates the model, so one instance can be
    shared across threads. Training (train-mode forward + backward +
    optimizer steps) requires exclusive access.
    """

    def __init__(self, arch_id, layers, input_shape=None):
        self.arch_id = arch_id
        self.layers = list(layers)
        self.input_shape = input_shape  # per-sample (c, h, w), None = any
        self.meta = {}

    def forward_logits(self, x, mode="infer", rng=None):
        if x.ndim != 4:
            raise ValueError(f"expected 4-d batch input, got shape {x.shape}")
        if self.input_shape is not None and tuple(x.shape[1:]) != self.input_shape:
            raise ValueError(
                f"expected per-sample shape {self.input_shape}, got {tuple(x.shape[1:])}")
        gen = ops.ensure_rng(rng if rng is not None else 0)
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(x, mode, gen)
            caches.append(cache)
        return x, caches

    def forward_probs(self, x, mode="infer", rng=None):
        logits, _ = self.forward_logits(x, mode, rng)
        return ops.softmax(logits)

    def backward(self, dlogits, caches):
        """Returns (dx, grads) with grads keyed by parameter name."""
        grads = {}
        dy = dlogits
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            dy, pgrads = layer.backward(cache, dy)
            if pgrads:
                names = [name for name, _, _ in layer.param_items()]
                for name, g in zip(names, pgrads):
                    grads[name] = g
        return dy, grads

    def param_items(self):
        out = []
        for layer in self.layers:
            out.extend(layer.param_items())
        return out

    def param_count(self):
        return sum(int(arr.size) for _, arr, _ in self.param_items())

    def named_tensors(self):
        """Params then running state per layer, layers in stack order.
        Serialization manifest order and the load-time shape check both
        key off this."""
        out = []
        for layer in self.layers:
            out.extend((name, arr) for name, arr, _ in layer.param_items())
            out.extend(layer.state_items())
        return out


def build_model(arch_id, seed=0, dtype=np.float32):
    if arch_id == "five-layer":
        rng = ops.ensure_rng(seed)
        layers = [
            Conv2d("conv1", 1, 32, 5, "same", 1, rng, dtype),
            BatchNorm("bn1", 32, dtype=dtype),
            ReLU("relu1"),
            MaxPool2d("pool1", 3, 2, ceil_mode=True),
            Conv2d("conv2", 32, 32, 4, "same", 1, rng, dtype),
            BatchNorm("bn2", 32, dtype=dtype),
            ReLU("relu2"),
            MaxPool2d("pool2", 3, 2, ceil_mode=True),
            Conv2d("conv3", 32, 64, 5, "same", 1, rng, dtype),
            BatchNorm("bn3", 64, dtype=dtype),
            ReLU("relu3"),
            MaxPool2d("pool3", 3, 2, ceil_mode=True),
            Flatten("flatten"),
            Dense("fc1", 2304, 1024, rng, dtype),
            BatchNorm("bn4", 1024, dtype=dtype),
            ReLU("relu4"),
            Dropout("drop1", 0.3),
            Dense("fc2", 1024, 7, rng, dtype),
        ]
    elif arch_id == "baseline":
        rng = ops.ensure_rng(seed)
        layers = [
            Conv2d("conv1", 1, 32, 3, "same", 1, rng, dtype),
            BatchNorm("bn1", 32, dtype=dtype),
            ReLU("relu1"),
            Conv2d("conv2", 32, 32, 3, "same", 1, rng, dtype),
            BatchNorm("bn2", 32, dtype=dtype),
            ReLU("relu2"),
            MaxPool2d("pool1", 2, 2),
            Conv2d("conv3", 32, 32, 3, "same", 1, rng, dtype),
            BatchNorm("bn3", 32, dtype=dtype),
            ReLU("relu3"),
            Conv2d("conv4", 32, 32, 3, "same", 1, rng, dtype),
            BatchNorm("bn4", 32, dtype=dtype),
            ReLU("relu4"),
            MaxPool2d("pool2", 2, 2),
            Flatten("flatten"),
            Dense("fc1", 4608, 8192, rng, dtype),
            BatchNorm("bn5", 8192, dtype=dtype),
            ReLU("relu5"),
            Dropout("drop1", 0.5),
            Dense("fc2", 8192, 7, rng, dtype),
        ]
    else:
        raise ValueError(f"unknown arch_id {arch_id!r}; expected one of {ARCH_IDS}")
    model = Model(arch_id, layers, input_shape=(1, 48, 48))
    built = model.param_count()
    if built != PARAM_TOTALS[arch_id]:  # guards against accidental edits to the stacks
        raise AssertionError(
            f"{arch_id} parameter count {built} != closed-form {PARAM_TOTALS[arch_id]}")
    return model


def save_weights(model, path):
    """Writes the FERW1 container. Tensors are stored as float32; the
    bit-exact round-trip contract therefore applies to float32 models."""
    tensors = model.named_tensors()
    manifest = [{"name": name, "shape": list(arr.shape)} for name, arr in tensors]
    meta = {
        "arch_id": model.arch_id,
        "manifest": manifest,
        "training": dict(model.meta),
    }
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, arr in tensors:
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_weights(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(MAGIC) or raw[: len(MAGIC)] != MAGIC:
        raise BadMagicError(f"{path}: not a FERW1 weights file")
    off = len(MAGIC)
    if len(raw) < off + 4:
        raise TruncatedWeightsError(f"{path}: missing metadata length")
    (meta_len,) = struct.unpack_from("<I", raw, off)
    off += 4
    if len(raw) < off + meta_len:
        raise TruncatedWeightsError(f"{path}: metadata cut short")
    try:
        meta = json.loads(raw[off : off + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WeightsFormatError(f"{path}: bad metadata block: {exc}") from None
    off += meta_len

    arch_id = meta.get("arch_id")
    model = build_model(arch_id)
    expected = [(name, tuple(arr.shape)) for name, arr in model.named_tensors()]
    manifest = [(entry["name"], tuple(entry["shape"])) for entry in meta["manifest"]]
    if manifest != expected:
        raise ShapeMismatchError(
            f"{path}: tensor manifest does not match architecture {arch_id!r}")

    for (name, arr) in model.named_tensors():
        nbytes = arr.size * 4
        if len(raw) < off + nbytes:
            raise TruncatedWeightsError(f"{path}: payload for {name} cut short")
        flat = np.frombuffer(raw, dtype="<f4", count=arr.size, offset=off)
        arr[...] = flat.reshape(arr.shape)
        off += nbytes
    if off != len(raw):
        raise WeightsFormatError(f"{path}: {len(raw) - off} trailing bytes")
    model.meta = dict(meta.get("training", {}))
    return model
