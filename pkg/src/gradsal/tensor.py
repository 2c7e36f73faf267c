"""Minimal dense-tensor layer zoo with reverse-mode differentiation.

Everything is 64-bit and deterministic. Layers cache their forward input
so a single backward pass can be chained all the way to the image, which
is what the saliency extraction needs: gradients are taken with respect
to the input pixels, not just the parameters.

Spatial layers run channels-last, (N, H, W, C) row-major: kernel windows
are then contiguous rows, so convolution reduces to one window gather
plus one GEMM per pass without pathological memory traffic. Kernel
tensors keep the conventional (out, in, kH, kW) shape.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np


class ShapeError(ValueError):
    """Input shape incompatible with a layer's hyperparameters."""


class BackwardBeforeForwardError(RuntimeError):
    """backward() called on a layer with no cached forward pass."""


class Tensor:
    """Dense float64 array plus an optional same-shape gradient buffer."""

    __slots__ = ("data", "grad")

    def __init__(self, data, grad: Optional[np.ndarray] = None):
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        if grad is not None:
            grad = np.ascontiguousarray(grad, dtype=np.float64)
            if grad.shape != self.data.shape:
                raise ShapeError(
                    f"grad shape {grad.shape} != data shape {self.data.shape}"
                )
        self.grad = grad

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def ensure_grad(self) -> np.ndarray:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        return self.grad

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape})"


class Layer:
    """Base class: forward caches what backward needs; backward returns
    the gradient w.r.t. the layer input and accumulates parameter grads."""

    kind = "layer"

    def params(self) -> Sequence[Tensor]:
        return ()

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, upstream: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward_params_only(self, upstream: np.ndarray) -> None:
        """Accumulate parameter grads without forming the input gradient.

        Worth overriding only where the input gradient is the expensive
        part; used for the first layer during training.
        """
        self.backward(upstream)

    def clear_cache(self) -> None:
        pass

    def _require_cache(self, cache, upstream_shape, expected_shape):
        if cache is None:
            raise BackwardBeforeForwardError(
                f"{self.kind}: backward called before forward"
            )
        if tuple(upstream_shape) != tuple(expected_shape):
            raise ShapeError(
                f"{self.kind}: upstream grad shape {tuple(upstream_shape)} != "
                f"forward output shape {tuple(expected_shape)}"
            )


def he_uniform(shape, fan_in: int, rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


class Conv2d(Layer):
    """2-D convolution (cross-correlation) on channels-last input.

    Activations flow as (N, H, W, C) so the im2col gather reads
    contiguous rows; the kernel tensor itself is stored as
    (out_channels, in_channels, kH, kW). Optional symmetric zero
    padding, positive integer stride.
    """

    kind = "conv2d"

    def __init__(self, in_channels, out_channels, kernel_size, stride=1,
                 padding=0, rng: Optional[np.random.Generator] = None):
        self.in_channels = int(in_channels)
        self.out_channels = int(out_channels)
        self.kernel_size = int(kernel_size)
        self.stride = int(stride)
        self.padding = int(padding)
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        k = self.kernel_size
        fan_in = self.in_channels * k * k
        if rng is None:
            rng = np.random.default_rng(0)
        w = he_uniform((self.out_channels, self.in_channels, k, k), fan_in, rng)
        # zero-sum filters: images here are unnormalized ([0, 1] with a large
        # DC component), and a DC-blind start conditions early SGD steps far better
        w -= w.mean(axis=(1, 2, 3), keepdims=True)
        self.weight = Tensor(w)
        self.bias = Tensor(np.zeros(self.out_channels))
        self._cols = None
        self._in_shape = None
        self._out_shape = None

    def params(self):
        return (self.weight, self.bias)

    def output_hw(self, h: int, w: int) -> tuple:
        k, s, p = self.kernel_size, self.stride, self.padding
        ho = (h + 2 * p - k) // s + 1
        wo = (w + 2 * p - k) // s + 1
        return ho, wo

    def _weight_mat(self) -> np.ndarray:
        """(kH*kW*C, O) matrix matching the channels-last window layout."""
        return self.weight.data.transpose(2, 3, 1, 0).reshape(-1, self.out_channels)

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 4 or x.shape[3] != self.in_channels:
            raise ShapeError(
                f"conv2d: expected (N, H, W, {self.in_channels}), got {x.shape}"
            )
        n, h, w, _ = x.shape
        k, s, p = self.kernel_size, self.stride, self.padding
        ho, wo = self.output_hw(h, w)
        if ho < 1 or wo < 1:
            raise ShapeError(
                f"conv2d: kernel {k}x{k} (pad {p}) does not fit input {x.shape}"
            )
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0))) if p else x
        sn, sh, sw, sc = xp.strides
        windows = np.lib.stride_tricks.as_strided(
            xp, shape=(n, ho, wo, k, k, self.in_channels),
            strides=(sn, sh * s, sw * s, sh, sw, sc), writeable=False)
        cols = np.ascontiguousarray(windows).reshape(n * ho * wo, -1)
        out = cols @ self._weight_mat() + self.bias.data
        self._cols = cols
        self._in_shape = x.shape
        self._out_shape = (n, ho, wo, self.out_channels)
        return out.reshape(self._out_shape)

    def backward_params_only(self, upstream: np.ndarray) -> None:
        self._require_cache(self._cols, upstream.shape, self._out_shape)
        k = self.kernel_size
        gmat = upstream.reshape(-1, self.out_channels)
        self.weight.ensure_grad()
        self.bias.ensure_grad()
        dw = (self._cols.T @ gmat).reshape(k, k, self.in_channels,
                                           self.out_channels)
        self.weight.grad += dw.transpose(3, 2, 0, 1)
        self.bias.grad += gmat.sum(axis=0)

    def backward(self, upstream: np.ndarray) -> np.ndarray:
        self.backward_params_only(upstream)
        n, h, w, _ = self._in_shape
        k, s, p = self.kernel_size, self.stride, self.padding
        ho, wo = upstream.shape[1], upstream.shape[2]
        gmat = upstream.reshape(n * ho * wo, self.out_channels)
        dcols = (gmat @ self._weight_mat().T).reshape(n, ho, wo, k, k,
                                                      self.in_channels)
        dxp = np.zeros((n, h + 2 * p, w + 2 * p, self.in_channels))
        for dy in range(k):
            for dx in range(k):
                dxp[:, dy:dy + s * ho:s, dx:dx + s * wo:s, :] += \
                    dcols[:, :, :, dy, dx, :]
        if p:
            return np.ascontiguousarray(dxp[:, p:p + h, p:p + w, :])
        return dxp

    def clear_cache(self):
        self._cols = None
        self._in_shape = None
        self._out_shape = None


class MaxPool2d(Layer):
    """Non-overlapping max pooling (stride equals the window size).

    Ties inside a window are routed to the first maximum in row-major
    order, which fixes where the gradient goes on plateaus.
    """

    kind = "maxpool2d"

    def __init__(self, kernel_size: int):
        self.kernel_size = int(kernel_size)
        if self.kernel_size < 1:
            raise ValueError("kernel_size must be >= 1")
        self._x = None
        self._out = None
        self._out_shape = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        k = self.kernel_size
        if x.ndim != 4 or x.shape[1] % k or x.shape[2] % k:
            raise ShapeError(
                f"maxpool2d: window {k}x{k} must tile input exactly, got {x.shape}"
            )
        out = x[:, 0::k, 0::k, :]
        for dy in range(k):
            for dx in range(k):
                if dy == 0 and dx == 0:
                    continue
                out = np.maximum(out, x[:, dy::k, dx::k, :])
        self._x = x
        self._out = out
        self._out_shape = out.shape
        return out

    def backward(self, upstream: np.ndarray) -> np.ndarray:
        self._require_cache(self._x, upstream.shape, self._out_shape)
        k = self.kernel_size
        x, out = self._x, self._out
        dx = np.zeros(x.shape)
        taken = np.zeros(out.shape, dtype=bool)
        for dy in range(k):  # row-major window order: first max wins
            for dx_ in range(k):
                sel = (x[:, dy::k, dx_::k, :] == out) & ~taken
                dx[:, dy::k, dx_::k, :] = np.where(sel, upstream, 0.0)
                taken |= sel
        return dx

    def clear_cache(self):
        self._x = None
        self._out = None
        self._out_shape = None


class ReLU(Layer):
    kind = "relu"

    def __init__(self):
        self._mask = None
        self._shape = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._mask = x > 0
        self._shape = x.shape
        return np.where(self._mask, x, 0.0)

    def backward(self, upstream: np.ndarray) -> np.ndarray:
        self._require_cache(self._mask, upstream.shape, self._shape)
        return np.where(self._mask, upstream, 0.0)

    def clear_cache(self):
        self._mask = None
        self._shape = None


class Flatten(Layer):
    kind = "flatten"

    def __init__(self):
        self._in_shape = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._in_shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, upstream: np.ndarray) -> np.ndarray:
        expected = (self._in_shape[0], int(np.prod(self._in_shape[1:]))) \
            if self._in_shape else None
        self._require_cache(self._in_shape, upstream.shape, expected)
        return upstream.reshape(self._in_shape)

    def clear_cache(self):
        self._in_shape = None


class Affine(Layer):
    """Fully connected layer: y = x W^T + b with weight shape (out, in)."""

    kind = "affine"

    def __init__(self, in_features, out_features,
                 rng: Optional[np.random.Generator] = None):
        self.in_features = int(in_features)
        self.out_features = int(out_features)
        if rng is None:
            rng = np.random.default_rng(0)
        self.weight = Tensor(he_uniform((self.out_features, self.in_features),
                                        self.in_features, rng))
        self.bias = Tensor(np.zeros(self.out_features))
        self._x = None

    def params(self):
        return (self.weight, self.bias)

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(
                f"affine: expected (N, {self.in_features}), got {x.shape}"
            )
        self._x = x
        return x @ self.weight.data.T + self.bias.data

    def backward(self, upstream: np.ndarray) -> np.ndarray:
        expected = None if self._x is None else (self._x.shape[0], self.out_features)
        self._require_cache(self._x, upstream.shape, expected)
        self.weight.ensure_grad()
        self.bias.ensure_grad()
        self.weight.grad += upstream.T @ self._x
        self.bias.grad += upstream.sum(axis=0)
        return upstream @ self.weight.data

    def clear_cache(self):
        self._x = None


class Softmax(Layer):
    """Row-wise softmax with max-subtraction for numerical stability."""

    kind = "softmax"

    def __init__(self):
        self._y = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] == 0:
            raise ShapeError(f"softmax: expected non-empty (N, K) logits, got {x.shape}")
        z = x - x.max(axis=1, keepdims=True)
        e = np.exp(z)
        self._y = e / e.sum(axis=1, keepdims=True)
        return self._y

    def backward(self, upstream: np.ndarray) -> np.ndarray:
        expected = None if self._y is None else self._y.shape
        self._require_cache(self._y, upstream.shape, expected)
        y = self._y
        dot = (upstream * y).sum(axis=1, keepdims=True)
        return y * (upstream - dot)

    def clear_cache(self):
        self._y = None


def softmax(logits: np.ndarray) -> np.ndarray:
    """Softmax over a single logit vector."""
    v = np.asarray(logits, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ShapeError(f"softmax: expected a non-empty vector, got shape {v.shape}")
    z = v - v.max()
    e = np.exp(z)
    return e / e.sum()


def forward_stack(layers: Sequence[Layer], x: np.ndarray) -> np.ndarray:
    """Run x through a layer stack, leaving each layer's cache populated."""
    out = x
    for layer in layers:
        out = layer.forward(out)
    return out


def inject_output_error(layers: Sequence[Layer], error_signal: np.ndarray,
                        input_grad: bool = True) -> Optional[np.ndarray]:
    """Back-propagate a closed-form output-layer error down to the input.

    The error signal is defined at the logits (the input of the final
    softmax): for the log-probability costs used here the cost gradient
    with respect to the logits has a closed form, so the final softmax
    layer is bypassed and the remaining layers are chained in reverse.
    Returns d(cost)/d(input); parameter grads accumulate along the way.

    With input_grad=False the first layer only accumulates its parameter
    grads (training doesn't consume the pixel gradient) and None returns.
    """
    if not layers or layers[-1].kind != "softmax":
        raise ValueError("inject_output_error: layer stack must end in softmax")
    soft = layers[-1]
    if soft._y is None:
        raise BackwardBeforeForwardError(
            "inject_output_error: no cached forward pass through the network"
        )
    e = np.asarray(error_signal, dtype=np.float64)
    if e.ndim == 1:
        e = e[None, :]
    if e.shape != soft._y.shape:
        raise ShapeError(
            f"inject_output_error: error signal shape {e.shape} != "
            f"output shape {soft._y.shape}"
        )
    if len(layers) == 1:  # bare softmax: the logits are the input
        return e if input_grad else None
    g = e
    for layer in reversed(layers[1:-1]):
        g = layer.backward(g)
    if input_grad:
        return layers[0].backward(g)
    layers[0].backward_params_only(g)
    return None


def zero_param_grads(layers: Sequence[Layer]) -> None:
    for layer in layers:
        for p in layer.params():
            p.zero_grad()


def clear_caches(layers: Sequence[Layer]) -> None:
    for layer in layers:
        layer.clear_cache()
