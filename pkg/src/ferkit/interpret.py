"""Occlusion-sensitivity and vanilla-gradient saliency heatmaps, plus a
PNG overlay renderer.

Occlusion: slide a fill-valued square over the image, re-predict, and
record how much the model's chosen-class probability drops; overlapping
patch positions are averaged per pixel by coverage count. Saliency: the
absolute gradient of one class logit with respect to each input pixel,
using inference-mode statistics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import DataError


@dataclass
class Heatmap:
    values: np.ndarray  # (H, W) float64, aligned to input pixels
    target_class: int
    method: str

    def to_json_dict(self):
        return {
            "method": self.method,
            "target_class": int(self.target_class),
            "values": self.values.tolist(),
        }


def _positions(extent, patch, stride):
    """Top-left offsets stepping by stride, with a final border-clipped
    position so every pixel is covered by at least one patch."""
    starts = list(range(0, extent - patch + 1, stride))
    last = extent - patch
    if starts[-1] != last:
        starts.append(last)
    return starts

_OCCLUSION_CHUNK = 32


def occlusion_map(model, image, patch=8, stride=4, fill=0.5, target_class=None):
    """Probability-drop heatmap for the model's predicted class (or an
    explicit target). Positive values mark regions supporting the
    prediction."""
    if patch < 1 or stride < 1:
        raise DataError(f"patch and stride must be positive, got {patch}/{stride}")
    if stride > patch:
        # gaps between patches would leave pixels with zero coverage
        raise DataError(f"stride {stride} must not exceed patch {patch}")
    h, w = image.shape
    if patch > h or patch > w:
        raise DataError(f"patch {patch} exceeds image extent {h}x{w}")

    base = model.forward_probs(image[None, None, :, :], mode="infer")[0]
    target = int(np.argmax(base)) if target_class is None else int(target_class)
    p0 = base[target]

    spots = [(i, j) for i in _positions(h, patch, stride)
             for j in _positions(w, patch, stride)]
    deltas = np.empty(len(spots), dtype=np.float64)
    for start in range(0, len(spots), _OCCLUSION_CHUNK):
        chunk = spots[start : start + _OCCLUSION_CHUNK]
        batch = np.repeat(image[None, :, :], len(chunk), axis=0).astype(
            image.dtype, copy=False)
        for k, (i, j) in enumerate(chunk):
            batch[k, i : i + patch, j : j + patch] = fill
        probs = model.forward_probs(batch[:, None, :, :], mode="infer")
        deltas[start : start + len(chunk)] = p0 - probs[:, target]

    heat = np.zeros((h, w), dtype=np.float64)
    coverage = np.zeros((h, w), dtype=np.int64)
    for (i, j), delta in zip(spots, deltas):
        heat[i : i + patch, j : j + patch] += delta
        coverage[i : i + patch, j : j + patch] += 1
    heat /= coverage  # every pixel is covered at least once
    return Heatmap(heat, target, "occlusion")


def saliency_map(model, image, target_class):
    """|d logit[target] / d pixel| with inference-mode statistics."""
    target = int(target_class)
    x = image[None, None, :, :]
    logits, caches = model.forward_logits(x, mode="infer")
    if not 0 <= target < logits.shape[1]:
        raise DataError(f"target class {target} outside 0..{logits.shape[1] - 1}")
    dlogits = np.zeros_like(logits)
    dlogits[0, target] = 1.0
    dx, _ = model.backward(dlogits, caches)
    return Heatmap(np.abs(dx[0, 0]).astype(np.float64), target, "saliency")


# Diverging ramp endpoints: cold blue -> near-white -> warm red.
_COLD = np.array([59.0, 76.0, 192.0])
_MID = np.array([247.0, 247.0, 247.0])
_WARM = np.array([180.0, 4.0, 38.0])


def _ramp(values):
    """Min-max-normalized diverging colormap. Flat maps sit at the neutral
    mid color."""
    lo = values.min()
    hi = values.max()
    if hi > lo:
        v = (values - lo) / (hi - lo)
    else:
        v = np.full_like(values, 0.5)
    v3 = v[..., None]
    low_mix = _COLD + (_MID - _COLD) * (v3 * 2.0)
    high_mix = _MID + (_WARM - _MID) * (v3 * 2.0 - 1.0)
    return np.where(v3 <= 0.5, low_mix, high_mix)


def render_heatmap(heatmap, image, out_path, alpha=0.5):
    """Writes a PNG of the grayscale image blended with the color ramp."""
    colors = _ramp(heatmap.values)
    gray = np.clip(image, 0.0, 1.0)[..., None] * 255.0
    blended = (1.0 - alpha) * gray + alpha * colors
    rgb = np.clip(np.round(blended), 0, 255).astype(np.uint8)
    Image.fromarray(rgb, mode="RGB").save(out_path, format="PNG")
