"""Stochastic training augmentation and the deterministic TTA image set.

One policy draw yields (flip, angle, zoom, shift_x, shift_y), always in
that order so seed streams stay aligned however the values are used.
Rotation, zoom, and shift are applied as a single composed affine with
bilinear sampling; out-of-range samples replicate the nearest edge, so
output values never leave the input's [0, 1] range.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .data import Sample
from .errors import DataError


@dataclass
class AugmentPolicy:
    flip_prob: float = 0.5
    rotation_deg: float = 10.0
    zoom_frac: float = 0.10
    shift_frac: float = 0.10

    def __post_init__(self):
        if not 0.0 <= self.flip_prob <= 1.0:
            raise DataError(f"flip_prob must be in [0, 1], got {self.flip_prob}")
        for name in ("rotation_deg", "zoom_frac", "shift_frac"):
            if getattr(self, name) < 0:
                raise DataError(f"{name} must be >= 0, got {getattr(self, name)}")

    @classmethod
    def identity(cls):
        return cls(flip_prob=0.0, rotation_deg=0.0, zoom_frac=0.0, shift_frac=0.0)

    def is_identity(self):
        return (self.flip_prob == 0.0 and self.rotation_deg == 0.0
                and self.zoom_frac == 0.0 and self.shift_frac == 0.0)


def draw_params(rng, policy):
    """Samples one transform. Draw order is pinned: flip, angle, zoom,
    shift_x, shift_y. Every field is drawn even at zero magnitude so the
    generator position is policy-independent."""
    flip = bool(rng.random() < policy.flip_prob)
    angle = float(rng.uniform(-policy.rotation_deg, policy.rotation_deg))
    zoom = float(1.0 + rng.uniform(-policy.zoom_frac, policy.zoom_frac))
    shift_x = float(rng.uniform(-policy.shift_frac, policy.shift_frac))
    shift_y = float(rng.uniform(-policy.shift_frac, policy.shift_frac))
    return flip, angle, zoom, shift_x, shift_y


def hflip(image):
    """Bit-exact column reversal; an involution."""
    return np.ascontiguousarray(image[:, ::-1])


def affine_sample(image, angle_deg, zoom, shift_x, shift_y):
    """Rotate about center, zoom about center, then shift (fractions of
    width/height), realized as one inverse-mapped bilinear resampling."""
    h, w = image.shape
    cy = (h - 1) / 2.0
    cx = (w - 1) / 2.0
    theta = np.deg2rad(angle_deg)
    cos_t = np.cos(theta)
    sin_t = np.sin(theta)
    rows, cols = np.meshgrid(np.arange(h, dtype=np.float64),
                             np.arange(w, dtype=np.float64), indexing="ij")
    # invert: undo shift, then undo rotation+zoom about the center
    yq = rows - shift_y * h - cy
    xq = cols - shift_x * w - cx
    ys = (cos_t * yq + sin_t * xq) / zoom + cy
    xs = (-sin_t * yq + cos_t * xq) / zoom + cx

    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    wy = ys - y0
    wx = xs - x0
    y0c = np.clip(y0, 0, h - 1)
    y1c = np.clip(y0 + 1, 0, h - 1)
    x0c = np.clip(x0, 0, w - 1)
    x1c = np.clip(x0 + 1, 0, w - 1)
    out = (image[y0c, x0c] * (1 - wy) * (1 - wx)
           + image[y0c, x1c] * (1 - wy) * wx
           + image[y1c, x0c] * wy * (1 - wx)
           + image[y1c, x1c] * wy * wx)
    return np.clip(out, 0.0, 1.0).astype(image.dtype, copy=False)


def augment_image(image, flip, angle, zoom, shift_x, shift_y):
    if flip:
        image = hflip(image)
    if angle != 0.0 or zoom != 1.0 or shift_x != 0.0 or shift_y != 0.0:
        image = affine_sample(image, angle, zoom, shift_x, shift_y)
    return image


def apply_policy(sample, policy, rng_seed):
    """One random augmentation of a Sample; label and source survive."""
    rng = ops.ensure_rng(rng_seed)
    flip, angle, zoom, sx, sy = draw_params(rng, policy)
    pixels = augment_image(sample.pixels, flip, angle, zoom, sx, sy)
    if pixels is sample.pixels:
        pixels = sample.pixels.copy()
    return Sample(pixels, sample.label, sample.source_id)


def tta_set(image, policy, seed):
    """[original, horizontal flip, 7 policy samples] — 9 images, bit
    deterministic for a given seed."""
    rng = ops.ensure_rng(seed)
    out = [image.copy(), hflip(image)]
    for _ in range(7):
        flip, angle, zoom, sx, sy = draw_params(rng, policy)
        aug = augment_image(image, flip, angle, zoom, sx, sy)
        out.append(aug.copy() if aug is image else aug)
    return out
