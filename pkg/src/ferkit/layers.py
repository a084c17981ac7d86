"""Parameter-owning layers built on the functional primitives in ops.

Layers hold weights and expose a uniform interface:

    y, cache = layer.forward(x, mode, rng)
    dx, param_grads = layer.backward(cache, dy)

Caches live outside the layer so an infer-mode model can be shared across
threads. ``param_items()`` yields (name, array, decay) triples; decay=False
marks biases and batchnorm scale/shift, which weight decay skips.
"""

from __future__ import annotations

import numpy as np

from . import ops


def he_normal(rng, shape, fan_in, dtype):
    """Scaled normal init: std = sqrt(2 / fan_in). Fits ReLU stacks."""
    std = np.sqrt(2.0 / fan_in)
    return (rng.standard_normal(shape) * std).astype(dtype)


class Layer:
    name = "layer"

    def param_items(self):
        return []

    def state_items(self):
        """Non-learnable tensors that still serialize (BN running stats)."""
        return []

    def forward(self, x, mode="infer", rng=None):
        raise NotImplementedError

    def backward(self, cache, dy):
        raise NotImplementedError


class Conv2d(Layer):
    def __init__(self, name, in_ch, out_ch, kernel, padding="same", stride=1,
                 rng=None, dtype=np.float32):
        self.name = name
        self.padding = padding
        self.stride = stride
        kh, kw = (kernel, kernel) if isinstance(kernel, int) else kernel
        rng = ops.ensure_rng(rng if rng is not None else 0)
        self.w = he_normal(rng, (out_ch, in_ch, kh, kw), in_ch * kh * kw, dtype)
        self.b = np.zeros(out_ch, dtype=dtype)

    def param_items(self):
        return [(f"{self.name}.weight", self.w, True), (f"{self.name}.bias", self.b, False)]

    def forward(self, x, mode="infer", rng=None):
        return ops.conv2d_forward(x, self.w, self.b, self.padding, self.stride)

    def backward(self, cache, dy):
        dx, dw, db = ops.conv2d_backward(dy, cache)
        return dx, [dw, db]


class Dense(Layer):
    def __init__(self, name, in_dim, out_dim, rng=None, dtype=np.float32):
        self.name = name
        rng = ops.ensure_rng(rng if rng is not None else 0)
        self.w = he_normal(rng, (in_dim, out_dim), in_dim, dtype)
        self.b = np.zeros(out_dim, dtype=dtype)

    def param_items(self):
        return [(f"{self.name}.weight", self.w, True), (f"{self.name}.bias", self.b, False)]

    def forward(self, x, mode="infer", rng=None):
        return ops.dense_forward(x, self.w, self.b)

    def backward(self, cache, dy):
        dx, dw, db = ops.dense_backward(dy, cache)
        return dx, [dw, db]


class BatchNorm(Layer):
    def __init__(self, name, channels, momentum=0.9, eps=1e-5, dtype=np.float32):
        self.name = name
        self.momentum = momentum
        self.eps = eps
        self.gamma = np.ones(channels, dtype=dtype)
        self.beta = np.zeros(channels, dtype=dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def param_items(self):
        return [(f"{self.name}.gamma", self.gamma, False),
                (f"{self.name}.beta", self.beta, False)]

    def state_items(self):
        return [(f"{self.name}.running_mean", self.running_mean),
                (f"{self.name}.running_var", self.running_var)]

    def forward(self, x, mode="infer", rng=None):
        y, cache, (rm, rv) = ops.batchnorm_forward(
            x, self.gamma, self.beta, mode, self.running_mean, self.running_var,
            self.momentum, self.eps)
        if mode == "train":  # training has exclusive access; infer never mutates
            self.running_mean = rm.astype(self.running_mean.dtype, copy=False)
            self.running_var = rv.astype(self.running_var.dtype, copy=False)
        return y, cache

    def backward(self, cache, dy):
        dx, dgamma, dbeta = ops.batchnorm_backward(dy, cache)
        return dx, [dgamma, dbeta]


class ReLU(Layer):
    def __init__(self, name):
        self.name = name

    def forward(self, x, mode="infer", rng=None):
        return ops.relu_forward(x)

    def backward(self, cache, dy):
        return ops.relu_backward(dy, cache), []


class MaxPool2d(Layer):
    def __init__(self, name, kernel, stride, ceil_mode=False):
        self.name = name
        self.kernel = kernel
        self.stride = stride
        self.ceil_mode = ceil_mode

    def forward(self, x, mode="infer", rng=None):
        return ops.maxpool2d_forward(x, self.kernel, self.stride, self.ceil_mode)

    def backward(self, cache, dy):
        return ops.maxpool2d_backward(dy, cache), []


class Dropout(Layer):
    def __init__(self, name, rate):
        self.name = name
        self.rate = rate

    def forward(self, x, mode="infer", rng=None):
        return ops.dropout_forward(x, self.rate, mode, rng if rng is not None else 0)

    def backward(self, cache, dy):
        return ops.dropout_backward(dy, cache), []


class Flatten(Layer):
    def __init__(self, name):
        self.name = name

    def forward(self, x, mode="infer", rng=None):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, cache, dy):
        return dy.reshape(cache), []
