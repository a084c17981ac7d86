"""Layer primitives with exact backward passes, on plain numpy arrays.

Arrays are the tensor type here: C-order float32 in production, float64
when checking gradients. Image batches are NCHW. Every forward returns
``(output, cache)`` and the matching ``*_backward`` consumes
``(upstream_grad, cache)``, so inference never mutates shared state and a
loaded model can serve concurrent requests.

Conventions pinned for reproducibility:
  - conv2d is cross-correlation (no kernel flip); "same" padding puts the
    extra pixel of an odd total pad on the bottom/right.
  - ReLU subgradient at exactly 0 is 0.
  - max-pool ties route the gradient to the first (row-major) maximum.
  - dropout is inverted (survivors scaled by 1/(1-rate) at train time).
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import as_strided


def ensure_rng(rng) -> np.random.Generator:
    """Accept a seed or a Generator; PCG64 is the pinned bit generator."""
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.Generator(np.random.PCG64(rng))


# ---------------------------------------------------------------------------
# conv2d


def _conv_out_and_pad(size: int, kernel: int, stride: int, padding: str):
    """Output extent and (before, after) pad for one spatial dimension."""
    if padding == "same":
        out = -(-size // stride)  # ceil(size / stride)
        total = max((out - 1) * stride + kernel - size, 0)
        before = total // 2
        return out, (before, total - before)
    if padding == "valid":
        if kernel > size:
            raise ValueError(
                f"kernel {kernel} larger than input extent {size} with valid padding"
            )
        return (size - kernel) // stride + 1, (0, 0)
    raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")


def conv2d_forward(x, w, b, padding="same", stride=1):
    """Cross-correlate an NCHW batch with OIHW filters.

    Returns (y, cache) with y of shape (N, out_ch, OH, OW). Implemented as
    im2col plus one batched matmul; the naive quadruple-loop definition is
    the contract it must match.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError(f"conv2d expects 4-D input and weights, got {x.shape} and {w.shape}")
    if int(stride) < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    stride = int(stride)
    n, c, h, wd = x.shape
    oc, ic, kh, kw = w.shape
    if c != ic:
        raise ValueError(f"input has {c} channels but weights expect {ic}")
    if b.shape != (oc,):
        raise ValueError(f"bias must have shape ({oc},), got {b.shape}")

    oh, (pt, pb) = _conv_out_and_pad(h, kh, stride, padding)
    ow, (pl, pr) = _conv_out_and_pad(wd, kw, stride, padding)
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr))) if pt or pb or pl or pr else x

    sn, sc, sh, sw = xp.strides
    patches = as_strided(
        xp,
        shape=(n, c, kh, kw, oh, ow),
        strides=(sn, sc, sh, sw, sh * stride, sw * stride),
        writeable=False,
    )
    cols = patches.reshape(n, c * kh * kw, oh * ow)  # copies into contiguous memory
    y = np.matmul(w.reshape(oc, -1), cols).reshape(n, oc, oh, ow)
    y = y + b.reshape(1, -1, 1, 1)
    cache = (cols, w, x.shape, xp.shape, (pt, pl), stride)
    return y, cache


def conv2d_backward(dy, cache):
    """Gradients of conv2d_forward: returns (dx, dw, db)."""
    cols, w, x_shape, xp_shape, (pt, pl), stride = cache
    oc, c, kh, kw = w.shape
    n, _, h, wd = x_shape
    _, _, oh, ow = dy.shape

    dyf = dy.reshape(n, oc, oh * ow)
    db = dy.sum(axis=(0, 2, 3))
    dw = np.matmul(dyf, cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)

    dcols = np.matmul(w.reshape(oc, -1).T, dyf).reshape(n, c, kh, kw, oh, ow)
    dxp = np.zeros(xp_shape, dtype=dy.dtype)
    for ki in range(kh):
        for kj in range(kw):
            dxp[:, :, ki : ki + stride * oh : stride, kj : kj + stride * ow : stride] += dcols[
                :, :, ki, kj
            ]
    dx = dxp[:, :, pt : pt + h, pl : pl + wd]
    return dx, dw, db


# ---------------------------------------------------------------------------
# maxpool2d


def maxpool2d_forward(x, kernel, stride, ceil_mode=False):
    """Per-window maximum over an NCHW batch.

    ceil_mode includes partial windows at the bottom/right border (clipped
    to the input); windows never start outside the input.
    """
    if int(kernel) < 1 or int(stride) < 1:
        raise ValueError(f"kernel and stride must be positive, got {kernel}, {stride}")
    kernel, stride = int(kernel), int(stride)
    n, c, h, w = x.shape
    if kernel > h or kernel > w:
        raise ValueError(f"kernel {kernel} larger than input {h}x{w}")

    def out_extent(size):
        if ceil_mode:
            out = -(-(size - kernel) // stride) + 1
            if (out - 1) * stride >= size:
                out -= 1
            return out
        return (size - kernel) // stride + 1

    oh, ow = out_extent(h), out_extent(w)
    hp = (oh - 1) * stride + kernel
    wp = (ow - 1) * stride + kernel
    if hp > h or wp > w:
        xp = np.pad(x, ((0, 0), (0, 0), (0, hp - h), (0, wp - w)), constant_values=-np.inf)
    else:
        xp = x

    sn, sc, sh, sw = xp.strides
    windows = as_strided(
        xp,
        shape=(n, c, oh, ow, kernel, kernel),
        strides=(sn, sc, sh * stride, sw * stride, sh, sw),
        writeable=False,
    )
    flat = windows.reshape(n, c, oh, ow, kernel * kernel)
    arg = flat.argmax(axis=-1)  # first occurrence wins ties (row-major in window)
    y = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    cache = (arg, x.shape, kernel, stride)
    return y, cache


def maxpool2d_backward(dy, cache):
    """Route each upstream gradient to its window's argmax pixel."""
    arg, x_shape, kernel, stride = cache
    n, c, h, w = x_shape
    _, _, oh, ow = dy.shape

    ki, kj = arg // kernel, arg % kernel
    rows = np.arange(oh).reshape(1, 1, oh, 1) * stride + ki
    colx = np.arange(ow).reshape(1, 1, 1, ow) * stride + kj
    bidx = np.arange(n).reshape(n, 1, 1, 1)
    cidx = np.arange(c).reshape(1, c, 1, 1)
    flat_idx = (((bidx * c + cidx) * h + rows) * w + colx).ravel()

    dx = np.zeros(n * c * h * w, dtype=dy.dtype)
    np.add.at(dx, flat_idx, dy.ravel())
    return dx.reshape(x_shape)


# ---------------------------------------------------------------------------
# dense


def dense_forward(x, w, b):
    """Affine map x @ w + b over a batch of row vectors."""
    if x.ndim != 2 or w.ndim != 2:
        raise ValueError(f"dense expects 2-D input and weights, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[0]:
        raise ValueError(f"inner dimensions disagree: {x.shape} @ {w.shape}")
    if b.shape != (w.shape[1],):
        raise ValueError(f"bias must have shape ({w.shape[1]},), got {b.shape}")
    y = x @ w + b
    return y, (x, w)


def dense_backward(dy, cache):
    x, w = cache
    return dy @ w.T, x.T @ dy, dy.sum(axis=0)


# ---------------------------------------------------------------------------
# batchnorm


def _bn_axes(x, channels):
    if x.ndim == 4:
        if x.shape[1] != channels:
            raise ValueError(f"input has {x.shape[1]} channels, expected {channels}")
        return (0, 2, 3), (1, channels, 1, 1)
    if x.ndim == 2:
        if x.shape[1] != channels:
            raise ValueError(f"input has {x.shape[1]} features, expected {channels}")
        return (0,), (1, channels)
    raise ValueError(f"batchnorm supports 2-D or 4-D input, got shape {x.shape}")


def batchnorm_forward(x, gamma, beta, mode, running_mean, running_var,
                      momentum=0.9, eps=1e-5):
    """Normalize per channel, scale by gamma, shift by beta.

    Train mode uses batch statistics (biased variance) and returns running
    statistics updated as new = momentum * old + (1 - momentum) * batch.
    Infer mode normalizes with the running statistics unchanged.
    """
    axes, pshape = _bn_axes(x, gamma.shape[0])
    g = gamma.reshape(pshape)
    bt = beta.reshape(pshape)

    if mode == "train":
        mu = x.mean(axis=axes)
        var = x.var(axis=axes)
        inv_std = 1.0 / np.sqrt(var.reshape(pshape) + eps)
        xhat = (x - mu.reshape(pshape)) * inv_std
        y = g * xhat + bt
        new_rm = momentum * running_mean + (1.0 - momentum) * mu
        new_rv = momentum * running_var + (1.0 - momentum) * var
        m = x.size // gamma.shape[0]
        cache = ("train", xhat, gamma, inv_std, axes, pshape, m)
        return y, cache, (new_rm, new_rv)
    if mode == "infer":
        inv_std = 1.0 / np.sqrt(running_var.reshape(pshape) + eps)
        xhat = (x - running_mean.reshape(pshape)) * inv_std
        y = g * xhat + bt
        cache = ("infer", xhat, gamma, inv_std, axes, pshape, None)
        return y, cache, (running_mean, running_var)
    raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")


def batchnorm_backward(dy, cache):
    """Gradients of batchnorm_forward: returns (dx, dgamma, dbeta)."""
    mode, xhat, gamma, inv_std, axes, pshape, m = cache
    dgamma = (dy * xhat).sum(axis=axes)
    dbeta = dy.sum(axis=axes)
    g = gamma.reshape(pshape)
    if mode == "infer":
        dx = dy * g * inv_std
        return dx, dgamma, dbeta
    dx = (g * inv_std / m) * (
        m * dy - dbeta.reshape(pshape) - xhat * dgamma.reshape(pshape)
    )
    return dx, dgamma, dbeta


# ---------------------------------------------------------------------------
# relu / dropout


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dy, mask):
    return dy * mask


def dropout_forward(x, rate, mode, rng=0):
    """Inverted dropout: train zeroes units w.p. rate and scales survivors
    by 1/(1-rate); infer is the identity."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if mode == "infer" or rate == 0.0:
        return x, None
    if mode != "train":
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    keep = ensure_rng(rng).random(x.shape) >= rate
    scale = 1.0 / (1.0 - rate)
    return x * keep * scale, (keep, scale)


def dropout_backward(dy, cache):
    if cache is None:
        return dy
    keep, scale = cache
    return dy * keep * scale


# ---------------------------------------------------------------------------
# softmax / cross-entropy


def softmax(logits):
    """Row-wise max-subtracted softmax."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, labels, class_weights=None):
    """Class-weighted cross-entropy over a batch of logits.

    loss = mean_i w[y_i] * (-log softmax(logits)_i[y_i]); returns
    (loss, probs, logits_grad) with the exact gradient of that loss.
    """
    n, k = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ValueError(f"labels must have shape ({n},), got {labels.shape}")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
        raise ValueError(f"labels must lie in [0, {k}), got range "
                         f"[{labels.min()}, {labels.max()}]")
    if class_weights is None:
        class_weights = np.ones(k, dtype=logits.dtype)
    else:
        class_weights = np.asarray(class_weights, dtype=logits.dtype)
        if class_weights.shape != (k,):
            raise ValueError(f"class_weights must have shape ({k},)")
        if (class_weights <= 0).any():
            raise ValueError("class_weights must be positive")

    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    logp_y = z[np.arange(n), labels] - lse
    wy = class_weights[labels]
    loss = float(np.mean(-wy * logp_y))

    probs = softmax(logits)
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1.0
    grad *= (wy / n)[:, None]
    return loss, probs, grad
