"""Minimal NHWC layer library with reverse-mode gradients.

Tensors are plain numpy arrays laid out (batch, height, width, channel).
Every layer's ``forward`` optionally records a backward closure on a
:class:`Tape`; ``Tape.backward`` replays them in reverse order, filling each
layer's ``grads`` dict and returning the gradient w.r.t. the tape's input.
"""

import copy
import math

import numpy as np

from . import _kernels

__all__ = [
    "ShapeError",
    "Tape",
    "Layer",
    "Conv2D",
    "SeparableConv2D",
    "BatchNorm",
    "MaxPool2D",
    "Flatten",
    "Dense",
    "ReLU",
    "Dropout",
    "Sequential",
    "SoftmaxCrossEntropy",
    "conv2d",
    "conv2d_backward",
    "depthwise_conv2d",
    "depthwise_conv2d_backward",
    "pointwise_conv2d",
    "separable_conv2d",
    "batchnorm",
    "maxpool2d",
    "dense",
    "relu",
    "dropout",
    "softmax",
    "sparse_ce_loss",
    "dsc_param_count",
    "format_reduction",
    "glorot_uniform",
    "gradient_check",
]


class ShapeError(ValueError):
    pass


class Tape:
    """Ordered record of backward closures for one forward pass.

    Closures take ``(dy, need_dx)``; only the first recorded op may be told
    its input gradient is unwanted.
    """

    def __init__(self):
        self._ops = []

    def __len__(self):
        return len(self._ops)

    def record(self, backward):
        self._ops.append(backward)

    def backward(self, grad, input_grad=True):
        for i in range(len(self._ops) - 1, -1, -1):
            grad = self._ops[i](grad, input_grad or i > 0)
        return grad


# --------------------------------------------------------------------------
# functional primitives
# --------------------------------------------------------------------------


def _same_pad(x, k, l):
    ph, pw = (k - 1) // 2, (l - 1) // 2
    return np.pad(x, ((0, 0), (ph, k - 1 - ph), (pw, l - 1 - pw), (0, 0)))


def _check_channels(x, expected, what):
    if x.ndim != 4 or x.shape[3] != expected:
        raise ShapeError(
            f"{what}: input shape {x.shape} does not match kernel expecting {expected} channels"
        )


def conv2d(x, kernel, bias):
    """Stride-1, same-padded convolution. ``kernel`` is (K, L, M, N)."""
    _check_channels(x, kernel.shape[2], f"conv2d kernel {kernel.shape}")
    k, l = kernel.shape[:2]
    return _kernels.conv_forward(_same_pad(x, k, l), kernel, bias.astype(x.dtype))


def conv2d_backward(x, kernel, dy, need_dx=True):
    """Return ``(dx, dkernel, dbias)``; ``dx`` is None unless ``need_dx``."""
    k, l = kernel.shape[:2]
    dkernel = _kernels.conv_grad_weights(_same_pad(x, k, l), dy, k, l)
    dbias = dy.sum(axis=(0, 1, 2))
    if not need_dx:
        return None, dkernel, dbias
    # full correlation of dy with the flipped, channel-transposed kernel
    flipped = np.ascontiguousarray(kernel[::-1, ::-1].transpose(0, 1, 3, 2))
    zero = np.zeros(kernel.shape[2], dtype=dy.dtype)
    dx = _kernels.conv_forward(_same_pad(dy, k, l), flipped, zero)
    return dx, dkernel, dbias


def depthwise_conv2d(x, kernel):
    """One same-padded spatial filter per channel. ``kernel`` is (K, L, M)."""
    _check_channels(x, kernel.shape[2], f"depthwise kernel {kernel.shape}")
    k, l = kernel.shape[:2]
    return _kernels.depthwise_forward(_same_pad(x, k, l), kernel)


def depthwise_conv2d_backward(x, kernel, dy):
    k, l = kernel.shape[:2]
    dkernel = _kernels.depthwise_grad_weights(_same_pad(x, k, l), dy, k, l)
    flipped = np.ascontiguousarray(kernel[::-1, ::-1])
    dx = _kernels.depthwise_forward(_same_pad(dy, k, l), flipped)
    return dx, dkernel


def pointwise_conv2d(x, kernel, bias):
    """1x1 convolution; ``kernel`` is (M, N)."""
    _check_channels(x, kernel.shape[0], f"pointwise kernel {kernel.shape}")
    b, h, w, m = x.shape
    out = _kernels.ordered_matmul(x.reshape(-1, m), kernel, bias.astype(x.dtype))
    return out.reshape(b, h, w, kernel.shape[1])


def separable_conv2d(x, depthwise, pointwise, bias):
    """Depthwise pass followed by a biased pointwise pass."""
    return pointwise_conv2d(depthwise_conv2d(x, depthwise), pointwise, bias)


def batchnorm(x, gamma, beta, mean, var, eps):
    """Normalize the last axis with the given statistics."""
    inv_std = 1.0 / np.sqrt(var + eps)
    return ((x - mean) * inv_std * gamma + beta).astype(x.dtype)


def maxpool2d(x):
    """2x2/2 max pool, odd trailing rows/cols dropped.

    Returns ``(y, argmax)`` where ``argmax`` indexes the window in row-major
    order and picks the first maximum on ties.
    """
    if x.ndim != 4 or x.shape[1] < 2 or x.shape[2] < 2:
        raise ShapeError(f"maxpool2d needs spatial dims >= 2, got {x.shape}")
    return _kernels.maxpool_forward(np.ascontiguousarray(x))


def _maxpool2d_backward(dy, arg, in_shape):
    return _kernels.maxpool_backward(np.ascontiguousarray(dy), arg, in_shape[1], in_shape[2])


def dense(x, weights, bias):
    if x.shape[-1] != weights.shape[0]:
        raise ShapeError(f"dense: input shape {x.shape} vs weights {weights.shape}")
    return x @ weights + bias.astype(x.dtype)


def relu(x):
    return np.maximum(x, 0).astype(x.dtype, copy=False)


def dropout(x, rate, training, rng):
    """Inverted dropout. Returns ``(y, mask)``; mask is None when inactive."""
    if not training or rate == 0:
        return x, None
    keep = rng.random(x.shape) >= rate
    mask = keep.astype(x.dtype) / x.dtype.type(1.0 - rate)
    return x * mask, mask


def softmax(x):
    """Softmax over the last axis, shifted by the row max."""
    x = np.asarray(x)
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


PROB_FLOOR = 1e-7


def sparse_ce_loss(probs, labels):
    """Mean negative log-probability of the true class.

    Returns ``(loss, dlogits)`` where ``dlogits`` is the gradient of the loss
    w.r.t. the logits that produced ``probs`` (softmax fused in).
    """
    probs = np.atleast_2d(probs)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    n, k = probs.shape
    if labels.shape[0] != n:
        raise ShapeError(f"{n} probability rows but {labels.shape[0]} labels")
    bad = np.flatnonzero((labels < 0) | (labels >= k))
    if bad.size:
        i = int(bad[0])
        raise ValueError(f"label at index {i} is {labels[i]}, outside [0, {k})")
    picked = probs[np.arange(n), labels]
    loss = float(-np.mean(np.log(np.maximum(picked, PROB_FLOOR))))
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1
    return loss, grad / n


def dsc_param_count(m, n, dk):
    """Bias-free parameter counts of a regular vs depthwise separable conv.

    Returns ``(regular, separable, reduction_percent)``.
    """
    if min(m, n, dk) < 1:
        raise ValueError("channel counts and kernel size must be >= 1")
    regular = dk * dk * m * n
    separable = m * dk * dk + m * n
    return regular, separable, 100.0 * (1.0 - separable / regular)


def format_reduction(percent):
    """Two-decimal percentage, truncated toward zero (87.847... -> "87.84%")."""
    return f"{math.trunc(percent * 100) / 100:.2f}%"


def glorot_uniform(rng, shape, fan_in, fan_out, dtype=np.float32):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


# --------------------------------------------------------------------------
# layers
# --------------------------------------------------------------------------


class Layer:
    """Base layer: ``params`` are trained, ``buffers`` are not."""

    kind = "layer"

    def __init__(self, name=None):
        self.name = name or self.kind
        self.params = {}
        self.grads = {}
        self.buffers = {}

    def forward(self, x, tape=None, training=False):
        raise NotImplementedError

    def output_shape(self, input_shape):
        return tuple(input_shape)

    def zero_grad(self):
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def num_params(self):
        return sum(v.size for v in self.params.values()) + sum(
            v.size for v in self.buffers.values()
        )

    def num_trainable(self):
        return sum(v.size for v in self.params.values())

    def _accumulate(self, key, g):
        if key in self.grads:
            self.grads[key] = self.grads[key] + g
        else:
            self.grads[key] = g

    def __repr__(self):
        return f"{type(self).__name__}({self.name!r})"


class Conv2D(Layer):
    kind = "conv2d"

    def __init__(self, in_channels, filters, kernel_size=3, name=None, rng=None):
        super().__init__(name)
        rng = rng if rng is not None else np.random.default_rng(0)
        k = kernel_size
        self.params["kernel"] = glorot_uniform(
            rng, (k, k, in_channels, filters), k * k * in_channels, k * k * filters
        )
        self.params["bias"] = np.zeros(filters, np.float32)

    def output_shape(self, input_shape):
        return (*input_shape[:-1], self.params["kernel"].shape[3])

    def forward(self, x, tape=None, training=False):
        kernel, bias = self.params["kernel"], self.params["bias"]
        y = conv2d(x, kernel.astype(x.dtype, copy=False), bias)
        if tape is not None:

            def backward(dy, need_dx=True):
                dx, dk, db = conv2d_backward(
                    x, kernel.astype(dy.dtype, copy=False), dy, need_dx
                )
                self._accumulate("kernel", dk)
                self._accumulate("bias", db)
                return dx

            tape.record(backward)
        return y


class SeparableConv2D(Layer):
    kind = "separable_conv2d"

    def __init__(self, in_channels, filters, kernel_size=3, name=None, rng=None):
        super().__init__(name)
        rng = rng if rng is not None else np.random.default_rng(0)
        k = kernel_size
        self.params["depthwise"] = glorot_uniform(
            rng, (k, k, in_channels), k * k * in_channels, k * k
        )
        self.params["pointwise"] = glorot_uniform(
            rng, (in_channels, filters), in_channels, filters
        )
        self.params["bias"] = np.zeros(filters, np.float32)

    def output_shape(self, input_shape):
        return (*input_shape[:-1], self.params["pointwise"].shape[1])

    def forward(self, x, tape=None, training=False):
        dw = self.params["depthwise"].astype(x.dtype, copy=False)
        pw = self.params["pointwise"].astype(x.dtype, copy=False)
        mid = depthwise_conv2d(x, dw)
        y = pointwise_conv2d(mid, pw, self.params["bias"])
        if tape is not None:

            def backward(dy, need_dx=True):
                m, n = pw.shape
                dy2 = dy.reshape(-1, n)
                self._accumulate("pointwise", mid.reshape(-1, m).T @ dy2)
                self._accumulate("bias", dy2.sum(axis=0))
                dmid = (dy2 @ pw.T).reshape(mid.shape)
                dx, ddw = depthwise_conv2d_backward(x, dw, dmid)
                self._accumulate("depthwise", ddw)
                return dx

            tape.record(backward)
        return y


class BatchNorm(Layer):
    kind = "batch_norm"

    def __init__(self, channels, momentum=0.99, epsilon=1e-3, name=None):
        super().__init__(name)
        self.momentum = momentum
        self.epsilon = epsilon
        self.params["gamma"] = np.ones(channels, np.float32)
        self.params["beta"] = np.zeros(channels, np.float32)
        self.buffers["moving_mean"] = np.zeros(channels, np.float32)
        self.buffers["moving_var"] = np.ones(channels, np.float32)

    def forward(self, x, tape=None, training=False):
        if x.shape[0] == 0:
            raise ShapeError("batchnorm received an empty batch")
        if x.shape[-1] != self.params["gamma"].shape[0]:
            raise ShapeError(
                f"batchnorm: input shape {x.shape} vs {self.params['gamma'].shape[0]} channels"
            )
        gamma = self.params["gamma"].astype(x.dtype, copy=False)
        beta = self.params["beta"].astype(x.dtype, copy=False)
        axes = tuple(range(x.ndim - 1))
        if training:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            mom = self.momentum
            for key, stat in (("moving_mean", mean), ("moving_var", var)):
                buf = self.buffers[key]
                self.buffers[key] = (buf * mom + stat * (1 - mom)).astype(buf.dtype)
        else:
            mean = self.buffers["moving_mean"].astype(x.dtype, copy=False)
            var = self.buffers["moving_var"].astype(x.dtype, copy=False)
        inv_std = (1.0 / np.sqrt(var + self.epsilon)).astype(x.dtype)
        xhat = (x - mean) * inv_std
        y = xhat * gamma + beta
        if tape is not None:

            def backward(dy, need_dx=True):
                self._accumulate("gamma", (dy * xhat).sum(axis=axes))
                self._accumulate("beta", dy.sum(axis=axes))
                dxhat = dy * gamma
                if not training:
                    return dxhat * inv_std
                n = x.size // x.shape[-1]
                s1 = dxhat.sum(axis=axes)
                s2 = (dxhat * xhat).sum(axis=axes)
                return (dxhat - s1 / n - xhat * (s2 / n)) * inv_std

            tape.record(backward)
        return y


class MaxPool2D(Layer):
    kind = "max_pool2d"

    def output_shape(self, input_shape):
        h, w, c = input_shape[-3:]
        return (*input_shape[:-3], h // 2, w // 2, c)

    def forward(self, x, tape=None, training=False):
        y, arg = maxpool2d(x)
        if tape is not None:
            shape = x.shape
            tape.record(lambda dy, need_dx=True: _maxpool2d_backward(dy, arg, shape))
        return y


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, input_shape):
        return (int(np.prod(input_shape)),)

    def forward(self, x, tape=None, training=False):
        shape = x.shape
        if tape is not None:
            tape.record(lambda dy, need_dx=True: dy.reshape(shape))
        return x.reshape(shape[0], -1)


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_features, units, name=None, rng=None):
        super().__init__(name)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["kernel"] = glorot_uniform(rng, (in_features, units), in_features, units)
        self.params["bias"] = np.zeros(units, np.float32)

    def output_shape(self, input_shape):
        return (self.params["kernel"].shape[1],)

    def forward(self, x, tape=None, training=False):
        w = self.params["kernel"].astype(x.dtype, copy=False)
        y = dense(x, w, self.params["bias"])
        if tape is not None:

            def backward(dy, need_dx=True):
                self._accumulate("kernel", x.T @ dy)
                self._accumulate("bias", dy.sum(axis=0))
                return dy @ w.T

            tape.record(backward)
        return y


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, tape=None, training=False):
        if tape is not None:
            mask = x > 0
            tape.record(lambda dy, need_dx=True: dy * mask)
        return relu(x)


class Dropout(Layer):
    kind = "dropout"

    def __init__(self, rate, name=None, rng=None):
        super().__init__(name)
        if not 0 <= rate < 1:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.rng = rng if rng is not None else np.random.default_rng(0)

    def forward(self, x, tape=None, training=False):
        y, mask = dropout(x, self.rate, training, self.rng)
        if tape is not None:
            tape.record(lambda dy, need_dx=True: dy if mask is None else dy * mask)
        return y


class SoftmaxCrossEntropy(Layer):
    """Fused softmax + sparse cross-entropy head with fixed labels.

    Maps (B, K) logits to a length-1 loss vector, so it can go through
    :func:`gradient_check` like any other layer.
    """

    kind = "softmax_ce"

    def __init__(self, labels, name=None):
        super().__init__(name)
        self.labels = np.asarray(labels)

    def forward(self, x, tape=None, training=False):
        loss, grad = sparse_ce_loss(softmax(x), self.labels)
        if tape is not None:
            tape.record(lambda dy, need_dx=True: grad * dy[0])
        return np.array([loss], dtype=x.dtype)


class Sequential:
    """An ordered stack of layers."""

    def __init__(self, layers):
        self.layers = list(layers)
        names = [layer.name for layer in self.layers]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate layer names in {names}")

    def __iter__(self):
        return iter(self.layers)

    def __len__(self):
        return len(self.layers)

    def index(self, name):
        for i, layer in enumerate(self.layers):
            if layer.name == name:
                return i
        raise KeyError(name)

    def forward(self, x, tape=None, training=False, start=0, stop=None):
        for layer in self.layers[start:stop]:
            x = layer.forward(x, tape=tape, training=training)
        return x

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def parameters(self):
        """``{"layer/param": array}`` for every trainable tensor."""
        return {
            f"{layer.name}/{key}": value
            for layer in self.layers
            for key, value in layer.params.items()
        }

    def gradients(self):
        return {
            f"{layer.name}/{key}": layer.grads[key]
            for layer in self.layers
            for key in layer.params
        }

    def buffers(self):
        return {
            f"{layer.name}/{key}": value
            for layer in self.layers
            for key, value in layer.buffers.items()
        }

    def state_dict(self):
        return {**self.parameters(), **self.buffers()}

    def load_state_dict(self, state):
        for layer in self.layers:
            for store in (layer.params, layer.buffers):
                for key in store:
                    full = f"{layer.name}/{key}"
                    if full not in state:
                        raise KeyError(f"missing tensor {full}")
                    if state[full].shape != store[key].shape:
                        raise ShapeError(
                            f"{full}: stored shape {state[full].shape} vs expected {store[key].shape}"
                        )
                    store[key] = np.array(state[full], dtype=store[key].dtype)

    def set_params(self, params):
        for name, value in params.items():
            layer_name, key = name.rsplit("/", 1)
            self.layers[self.index(layer_name)].params[key] = value


# --------------------------------------------------------------------------
# finite-difference verification
# --------------------------------------------------------------------------


def gradient_check(layer, x, *, training=True, step=1e-4, seed=0, floor=1e-6):
    """Largest relative error between analytic and central-difference gradients.

    Runs on a float64 copy of ``layer`` and ``x``. The scalar objective is
    ``sum(r * layer(x))`` for a fixed random ``r``. Relative error per element
    is ``|a - n| / max(|a|, |n|, floor)``; the maximum over the input and every
    parameter is returned.
    """
    layer = copy.deepcopy(layer)
    stack = layer if isinstance(layer, Sequential) else Sequential([layer])
    for lyr in stack:
        lyr.params = {k: v.astype(np.float64) for k, v in lyr.params.items()}
        lyr.buffers = {k: v.astype(np.float64) for k, v in lyr.buffers.items()}
    x = np.array(x, dtype=np.float64)
    r = np.random.default_rng(seed).standard_normal(stack.forward(x, training=training).shape)

    def objective():
        return float(np.sum(r * stack.forward(x, training=training)))

    tape = Tape()
    stack.zero_grad()
    stack.forward(x, tape=tape, training=training)
    analytic = {"input": tape.backward(r)}
    analytic.update(stack.gradients())

    targets = {"input": x}
    targets.update(stack.parameters())

    worst = 0.0
    for name, arr in targets.items():
        grad = analytic[name]
        flat = arr.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = objective()
            flat[i] = orig - step
            down = objective()
            flat[i] = orig
            numeric = (up - down) / (2 * step)
            a = grad.reshape(-1)[i]
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
    return worst
