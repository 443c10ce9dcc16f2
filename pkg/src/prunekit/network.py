"""Minimal residual CNN engine: 3x3 convolutions, forward/backward, SGD, PSNR.

Tensors are plain numpy arrays laid out ``(n, c, h, w)``.  A single feature
map is a 4-D array with ``n == 1``.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ShapeError, TrainingDivergenceError

KERNEL_SIZE = 3
PAD = 1
PSNR_CAP = 99.0
DTYPE = np.float32

ACTIVATIONS = ("identity", "relu")


def as_tensor4(x, dtype=None):
    """Return ``x`` as a 4-D array; 3-D feature maps get a leading unit axis."""
    arr = np.asarray(x, dtype=dtype)
    if arr.ndim == 3:
        arr = arr[np.newaxis]
    if arr.ndim != 4:
        raise ShapeError(f"expected a rank-4 tensor (n, c, h, w), got shape {arr.shape}")
    return arr


@dataclass
class ConvLayer:
    kernels: np.ndarray
    bias: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        self.kernels = as_tensor4(self.kernels)
        self.bias = np.asarray(self.bias)
        n, _, h, w = self.kernels.shape
        if (h, w) != (KERNEL_SIZE, KERNEL_SIZE):
            raise ShapeError(f"kernels must be 3x3, got {h}x{w}")
        if self.bias.shape != (n,):
            raise ShapeError(f"bias shape {self.bias.shape} does not match {n} kernels")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def n_kernels(self):
        return self.kernels.shape[0]

    @property
    def in_channels(self):
        return self.kernels.shape[1]


@dataclass
class Network:
    """Sequential stack of :class:`ConvLayer`, optionally with a global skip."""

    layers: list = field(default_factory=list)
    residual: bool = True

    def __post_init__(self):
        if not self.layers:
            raise ShapeError("a network needs at least one layer")
        for i in range(len(self.layers) - 1):
            produced = self.layers[i].n_kernels
            consumed = self.layers[i + 1].in_channels
            if produced != consumed:
                raise ShapeError(
                    f"layer {i + 1} expects {consumed} input channels "
                    f"but layer {i} produces {produced}"
                )
        if self.residual and self.layers[-1].n_kernels != self.layers[0].in_channels:
            raise ShapeError(
                "residual network must output as many channels as it takes in "
                f"({self.layers[-1].n_kernels} != {self.layers[0].in_channels})"
            )

    def __len__(self):
        return len(self.layers)

    @property
    def dims(self):
        return [tuple(layer.kernels.shape) for layer in self.layers]

    @property
    def n_kernel_weights(self):
        return sum(layer.kernels.size for layer in self.layers)

    def copy(self):
        return copy.deepcopy(self)

    def astype(self, dtype):
        layers = [
            ConvLayer(l.kernels.astype(dtype), l.bias.astype(dtype), l.activation)
            for l in self.layers
        ]
        return Network(layers, self.residual)

    def parameters(self):
        """Flat list of the live parameter arrays (kernels then bias per layer)."""
        params = []
        for layer in self.layers:
            params.extend([layer.kernels, layer.bias])
        return params


def _padded(x):
    return np.pad(x, ((0, 0), (0, 0), (PAD, PAD), (PAD, PAD)))


def _correlate(x, kernels):
    n, _, h, w = x.shape
    xp = _padded(x)
    out = np.zeros((n, kernels.shape[0], h, w), dtype=np.result_type(x, kernels))
    for dy in range(KERNEL_SIZE):
        for dx in range(KERNEL_SIZE):
            window = xp[:, :, dy:dy + h, dx:dx + w]
            out += np.einsum("nchw,kc->nkhw", window, kernels[:, :, dy, dx])
    return out


def conv_forward(x, layer):
    """Apply one conv layer (zero pad 1, stride 1) then its activation."""
    x = as_tensor4(x)
    if x.shape[1] != layer.in_channels:
        raise ShapeError(
            f"input shape {x.shape} does not match kernel shape {layer.kernels.shape}"
        )
    out = _correlate(x, layer.kernels) + layer.bias[None, :, None, None]
    if layer.activation == "relu":
        out = np.maximum(out, 0)
    return out.astype(np.result_type(x, layer.kernels), copy=False)


def network_forward(net, x):
    x = as_tensor4(x)
    if x.shape[1] != net.layers[0].in_channels:
        raise ShapeError(
            f"input shape {x.shape} does not match first layer {net.layers[0].kernels.shape}"
        )
    h = x
    for layer in net.layers:
        h = conv_forward(h, layer)
    return x + h if net.residual else h


def _forward_cached(net, x):
    acts = [x]
    pre = []
    h = x
    for layer in net.layers:
        z = _correlate(h, layer.kernels) + layer.bias[None, :, None, None]
        pre.append(z)
        h = np.maximum(z, 0) if layer.activation == "relu" else z
        acts.append(h)
    out = x + h if net.residual else h
    return out, acts, pre


def _stack_batch(batch):
    if isinstance(batch, tuple) and len(batch) == 2 and np.ndim(batch[0]) == 4:
        inputs, targets = batch
    else:
        batch = list(batch)
        if not batch:
            raise ValueError("batch is empty")
        inputs = np.concatenate([as_tensor4(a) for a, _ in batch])
        targets = np.concatenate([as_tensor4(b) for _, b in batch])
    inputs, targets = as_tensor4(inputs), as_tensor4(targets)
    if len(inputs) == 0:
        raise ValueError("batch is empty")
    return inputs, targets


def loss_and_gradients(net, batch):
    """Mean-squared error over ``batch`` and its gradient for every parameter.

    ``batch`` is either an ``(inputs, targets)`` pair of stacked 4-D arrays or
    an iterable of per-sample ``(input, target)`` pairs.  Gradients are
    returned in the order of :meth:`Network.parameters`.
    """
    inputs, targets = _stack_batch(batch)
    dtype = net.layers[0].kernels.dtype
    inputs = inputs.astype(dtype, copy=False)
    targets = targets.astype(dtype, copy=False)
    out, acts, pre = _forward_cached(net, inputs)
    if out.shape != targets.shape:
        raise ShapeError(f"output shape {out.shape} does not match target shape {targets.shape}")
    diff = out - targets
    loss = float(np.mean(np.square(diff, dtype=np.float64)))

    grad = (2.0 / diff.size) * diff
    grads = [None] * (2 * len(net.layers))
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        if layer.activation == "relu":
            grad = grad * (pre[i] > 0)
        grads[2 * i + 1] = grad.sum(axis=(0, 2, 3)).astype(dtype)
        h_in = acts[i]
        hp = _padded(h_in)
        n, _, hh, ww = h_in.shape
        need_input_grad = i > 0
        dk = np.zeros_like(layer.kernels)
        dxp = np.zeros_like(hp) if need_input_grad else None
        for dy in range(KERNEL_SIZE):
            for dx in range(KERNEL_SIZE):
                window = hp[:, :, dy:dy + hh, dx:dx + ww]
                dk[:, :, dy, dx] = np.einsum("nkhw,nchw->kc", grad, window)
                if need_input_grad:
                    dxp[:, :, dy:dy + hh, dx:dx + ww] += np.einsum(
                        "nkhw,kc->nchw", grad, layer.kernels[:, :, dy, dx]
                    )
        grads[2 * i] = dk
        if need_input_grad:
            grad = dxp[:, :, PAD:PAD + hh, PAD:PAD + ww]
    return loss, grads


def backward_and_step(net, batch, learning_rate):
    """One plain SGD step on the MSE loss; returns the loss before the step."""
    if not learning_rate > 0:
        raise ValueError(f"learning_rate must be positive, got {learning_rate}")
    loss, grads = loss_and_gradients(net, batch)
    if not np.isfinite(loss):
        raise TrainingDivergenceError(f"non-finite training loss {loss}")
    for param, g in zip(net.parameters(), grads):
        param -= np.asarray(learning_rate, dtype=param.dtype) * g
    return loss


def mse(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"image shapes differ: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def psnr(a, b, peak=1.0):
    """Peak signal-to-noise ratio in dB, capped at ``PSNR_CAP`` for identical images."""
    if not peak > 0:
        raise ValueError("peak must be positive")
    err = mse(a, b)
    if err == 0:
        return PSNR_CAP
    return float(10.0 * np.log10(peak * peak / err))
