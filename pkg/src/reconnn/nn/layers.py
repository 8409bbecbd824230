"""Reverse-mode layers on NCHW float64 arrays.

Every layer is built against a per-sample input shape, then used through
``forward(x, train) -> (y, cache)`` and ``backward(cache, dy) -> (dx, grads)``
where ``grads`` maps parameter names to arrays shaped like the parameters.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .. import kernels
from ..errors import DomainError, ShapeError, StateError

LAYER_TYPES: dict[str, type] = {}


def register(cls):
    LAYER_TYPES[cls.kind] = cls
    return cls


def _gauss(rng, shape, fan_in):
    return rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.in_shape: tuple | None = None
        self.out_shape: tuple | None = None

    def build(self, in_shape, rng) -> tuple:
        self.in_shape = tuple(in_shape)
        self.out_shape = self._build(self.in_shape, rng)
        return self.out_shape

    def _build(self, in_shape, rng):
        return in_shape

    def hyper(self) -> dict:
        return {}

    def spec(self) -> dict:
        return {"kind": self.kind, **self.hyper()}

    def forward(self, x, train=True):
        raise NotImplementedError

    def backward(self, cache, dy):
        raise NotImplementedError

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.hyper().items())
        return f"{type(self).__name__}({args})"


def layer_from_spec(spec: dict) -> Layer:
    spec = dict(spec)
    kind = spec.pop("kind")
    try:
        cls = LAYER_TYPES[kind]
    except KeyError:
        raise DomainError(f"unknown layer kind {kind!r}") from None
    return cls(**spec)


def _pad_amount(pad, k):
    if pad == "same":
        if k % 2 == 0:
            raise DomainError("'same' padding needs an odd kernel")
        return k // 2
    return int(pad)


def im2col(x, k, stride, pad):
    """(B, C, H, W) -> columns (B, C, k, k, Ho, Wo)."""
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    return np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3))


@register
class Conv2D(Layer):
    """Convolution; with ``groups > 1`` each channel group gets its own filters."""

    kind = "conv"

    def __init__(self, out_channels, kernel=3, stride=1, pad="same", groups=1):
        super().__init__()
        if kernel < 1 or stride < 1 or groups < 1:
            raise DomainError("kernel, stride and groups must be positive")
        self.out_channels, self.kernel, self.stride = int(out_channels), int(kernel), int(stride)
        self.pad, self.groups = pad, int(groups)

    def hyper(self):
        return {"out_channels": self.out_channels, "kernel": self.kernel, "stride": self.stride,
                "pad": self.pad, "groups": self.groups}

    def _build(self, in_shape, rng):
        c, h, w = in_shape
        g, k = self.groups, self.kernel
        if c % g or self.out_channels % g:
            raise ShapeError(f"conv: channels {c}->{self.out_channels} not divisible by groups {g}")
        p = _pad_amount(self.pad, k)
        ho = (h + 2 * p - k) // self.stride + 1
        wo = (w + 2 * p - k) // self.stride + 1
        if ho < 1 or wo < 1:
            raise ShapeError(f"conv: input {in_shape} too small for kernel {k}")
        fan_in = (c // g) * k * k
        self.params["W"] = _gauss(rng, (self.out_channels, c // g, k, k), fan_in)
        self.params["b"] = np.zeros(self.out_channels)
        return (self.out_channels, ho, wo)

    def forward(self, x, train=True):
        B, C, H, Wd = x.shape
        g, k, s = self.groups, self.kernel, self.stride
        p = _pad_amount(self.pad, k)
        ho, wo = self.out_shape[1:]
        K = (C // g) * k * k
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s]  # (B, C, ho, wo, k, k)
        # batch folded into the matmul: columns laid out as (g, K, B*ho*wo)
        win = win.reshape(B, g, C // g, ho, wo, k, k).transpose(1, 2, 5, 6, 0, 3, 4)
        cols_g = np.ascontiguousarray(win).reshape(g, K, B * ho * wo)
        Wg = self.params["W"].reshape(g, self.out_channels // g, K)
        y = np.matmul(Wg, cols_g).reshape(g, -1, B, ho * wo).transpose(2, 0, 1, 3)
        y = y.reshape(B, self.out_channels, ho, wo) + self.params["b"][None, :, None, None]
        return y, (cols_g, x.shape)

    def backward(self, cache, dy):
        cols_g, xshape = cache
        B, C, H, Wd = xshape
        g, k, s = self.groups, self.kernel, self.stride
        p = _pad_amount(self.pad, k)
        ho, wo = dy.shape[2:]
        og = self.out_channels // g
        dyg = np.ascontiguousarray(
            dy.reshape(B, g, og, ho * wo).transpose(1, 2, 0, 3)).reshape(g, og, B * ho * wo)
        dW = np.matmul(dyg, cols_g.transpose(0, 2, 1))
        Wg = self.params["W"].reshape(g, og, -1)
        dcols = np.matmul(Wg.transpose(0, 2, 1), dyg)  # (g, K, B*ho*wo)
        dcols = dcols.reshape(g, C // g, k, k, B, ho, wo).transpose(4, 0, 1, 2, 3, 5, 6)
        dcols = np.ascontiguousarray(dcols).reshape(B, C, k, k, ho, wo)
        hp, wp = H + 2 * p, Wd + 2 * p
        dxp = kernels.col2im(dcols, hp, wp, s)
        dx = dxp[:, :, p:p + H, p:p + Wd] if p else dxp[:, :, :H, :Wd]
        grads = {"W": dW.reshape(self.params["W"].shape), "b": dy.sum(axis=(0, 2, 3))}
        return np.ascontiguousarray(dx), grads


@register
class Deconv2D(Layer):
    """Transposed convolution: output size (H - 1) * stride - 2 * pad + kernel."""

    kind = "deconv"

    def __init__(self, out_channels, kernel=4, stride=2, pad=1):
        super().__init__()
        if kernel < 1 or stride < 1:
            raise DomainError("kernel and stride must be positive")
        self.out_channels, self.kernel, self.stride, self.pad = (
            int(out_channels), int(kernel), int(stride), int(pad))

    def hyper(self):
        return {"out_channels": self.out_channels, "kernel": self.kernel, "stride": self.stride,
                "pad": self.pad}

    def _build(self, in_shape, rng):
        c, h, w = in_shape
        k, s, p = self.kernel, self.stride, self.pad
        ho, wo = (h - 1) * s - 2 * p + k, (w - 1) * s - 2 * p + k
        if ho < 1 or wo < 1:
            raise ShapeError(f"deconv: non-positive output from {in_shape}")
        self.params["W"] = _gauss(rng, (c, self.out_channels, k, k), c * k * k / (s * s))
        self.params["b"] = np.zeros(self.out_channels)
        return (self.out_channels, ho, wo)

    def forward(self, x, train=True):
        B, C, H, Wd = x.shape
        k, s, p = self.kernel, self.stride, self.pad
        Wm = self.params["W"].reshape(C, -1).T  # (out*k*k, in)
        cols = np.matmul(Wm[None], x.reshape(B, C, H * Wd)).reshape(B, self.out_channels, k, k, H, Wd)
        hp, wp = (H - 1) * s + k, (Wd - 1) * s + k
        full = kernels.col2im(cols, hp, wp, s)
        y = full[:, :, p:hp - p, p:wp - p] + self.params["b"][None, :, None, None]
        return np.ascontiguousarray(y), x

    def backward(self, cache, dy):
        x = cache
        B, C, H, Wd = x.shape
        k, s, p = self.kernel, self.stride, self.pad
        hp, wp = (H - 1) * s + k, (Wd - 1) * s + k
        dfull = np.zeros((B, self.out_channels, hp, wp))
        dfull[:, :, p:hp - p, p:wp - p] = dy
        dcols = im2col(dfull, k, s, 0).reshape(B, self.out_channels * k * k, H * Wd)
        Wm = self.params["W"].reshape(C, -1)  # (in, out*k*k)
        dx = np.matmul(Wm[None], dcols).reshape(B, C, H, Wd)
        dWm = np.matmul(x.reshape(B, C, H * Wd), dcols.transpose(0, 2, 1)).sum(axis=0)
        grads = {"W": dWm.reshape(self.params["W"].shape), "b": dy.sum(axis=(0, 2, 3))}
        return dx, grads


@register
class Dense(Layer):
    kind = "dense"

    def __init__(self, units):
        super().__init__()
        self.units = int(units)

    def hyper(self):
        return {"units": self.units}

    def _build(self, in_shape, rng):
        if len(in_shape) != 1:
            raise ShapeError(f"dense expects flat input, got {in_shape}")
        self.params["W"] = _gauss(rng, (in_shape[0], self.units), in_shape[0])
        self.params["b"] = np.zeros(self.units)
        return (self.units,)

    def forward(self, x, train=True):
        return x @ self.params["W"] + self.params["b"], x

    def backward(self, cache, dy):
        x = cache
        return dy @ self.params["W"].T, {"W": x.T @ dy, "b": dy.sum(axis=0)}


def _pool_windows(x, p):
    # trailing rows/cols that do not fill a window are dropped
    B, C, H, W = x.shape
    ho, wo = H // p, W // p
    if ho < 1 or wo < 1:
        raise ShapeError(f"pool window {p} larger than spatial size {(H, W)}")
    x = x[:, :, :ho * p, :wo * p]
    return x.reshape(B, C, ho, p, wo, p).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, ho, wo, p * p)


def _unpool(d, shape, p):
    B, C, H, W = shape
    ho, wo = H // p, W // p
    inner = d.reshape(B, C, ho, wo, p, p).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, ho * p, wo * p)
    if ho * p == H and wo * p == W:
        return inner
    out = np.zeros(shape)
    out[:, :, :ho * p, :wo * p] = inner
    return out


class _Pool(Layer):
    def __init__(self, window=2):
        super().__init__()
        self.window = int(window)
        if self.window < 1:
            raise DomainError("pool window must be positive")

    def hyper(self):
        return {"window": self.window}

    def _build(self, in_shape, rng):
        c, h, w = in_shape
        if h < self.window or w < self.window:
            raise ShapeError(f"{self.kind}: window {self.window} larger than {(h, w)}")
        return (c, h // self.window, w // self.window)


def _max_parts(win):
    arg = np.argmax(win, axis=-1)  # first maximum wins ties
    onehot = np.zeros_like(win)
    np.put_along_axis(onehot, arg[..., None], 1.0, axis=-1)
    return np.take_along_axis(win, arg[..., None], axis=-1)[..., 0], onehot


@register
class MaxPool2D(_Pool):
    kind = "max_pool"

    def forward(self, x, train=True):
        mx, onehot = _max_parts(_pool_windows(x, self.window))
        return mx, (onehot, x.shape)

    def backward(self, cache, dy):
        onehot, shape = cache
        return _unpool(onehot * dy[..., None], shape, self.window), {}


@register
class AvgPool2D(_Pool):
    kind = "avg_pool"

    def forward(self, x, train=True):
        win = _pool_windows(x, self.window)
        return win.sum(axis=-1) / (self.window * self.window), x.shape

    def backward(self, cache, dy):
        pp = self.window * self.window
        return _unpool(np.repeat((dy / pp)[..., None], pp, axis=-1), cache, self.window), {}


@register
class MixedPool2D(_Pool):
    """``alpha * maxpool + (1 - alpha) * avgpool`` over non-overlapping windows."""

    kind = "mixed_pool"

    def __init__(self, window=2, alpha=0.5):
        super().__init__(window)
        if not 0.0 <= alpha <= 1.0:
            raise DomainError("mixed pool alpha must lie in [0, 1]")
        self.alpha = float(alpha)

    def hyper(self):
        return {"window": self.window, "alpha": self.alpha}

    def forward(self, x, train=True):
        win = _pool_windows(x, self.window)
        mx, onehot = _max_parts(win)
        av = win.sum(axis=-1) / (self.window * self.window)
        return self.alpha * mx + (1.0 - self.alpha) * av, (onehot, x.shape)

    def backward(self, cache, dy):
        onehot, shape = cache
        pp = self.window * self.window
        d = self.alpha * onehot * dy[..., None] + ((1.0 - self.alpha) / pp) * dy[..., None]
        return _unpool(d, shape, self.window), {}


@register
class BatchNorm(Layer):
    """Per-feature batch normalisation (per channel for image inputs)."""

    kind = "batch_norm"

    def __init__(self, eps=1e-8, momentum=0.9):
        super().__init__()
        self.eps, self.momentum = float(eps), float(momentum)

    def hyper(self):
        return {"eps": self.eps, "momentum": self.momentum}

    def _build(self, in_shape, rng):
        f = in_shape[0]
        self.params["gamma"] = np.ones(f)
        self.params["beta"] = np.zeros(f)
        self.buffers["running_mean"] = np.zeros(f)
        self.buffers["running_var"] = np.ones(f)
        return in_shape

    def _axes(self, x):
        return (0,) if x.ndim == 2 else (0, 2, 3)

    def _bshape(self, x):
        return (1, -1) if x.ndim == 2 else (1, -1, 1, 1)

    def forward(self, x, train=True):
        axes, bs = self._axes(x), self._bshape(x)
        if train:
            mu = x.mean(axis=axes)
            var = ((x - mu.reshape(bs)) ** 2).mean(axis=axes)
            m = self.momentum
            self.buffers["running_mean"] = m * self.buffers["running_mean"] + (1 - m) * mu
            self.buffers["running_var"] = m * self.buffers["running_var"] + (1 - m) * var
        else:
            mu, var = self.buffers["running_mean"], self.buffers["running_var"]
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mu.reshape(bs)) * inv.reshape(bs)
        y = self.params["gamma"].reshape(bs) * xhat + self.params["beta"].reshape(bs)
        return y, (xhat, inv, train)

    def backward(self, cache, dy):
        xhat, inv, train = cache
        axes, bs = self._axes(dy), self._bshape(dy)
        grads = {"gamma": (dy * xhat).sum(axis=axes), "beta": dy.sum(axis=axes)}
        dxhat = dy * self.params["gamma"].reshape(bs)
        if not train:
            return dxhat * inv.reshape(bs), grads
        n = dy.size // dy.shape[1]
        s1 = dxhat.sum(axis=axes).reshape(bs)
        s2 = (dxhat * xhat).sum(axis=axes).reshape(bs)
        dx = inv.reshape(bs) / n * (n * dxhat - s1 - xhat * s2)
        return dx, grads


@register
class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train=True):
        return np.maximum(x, 0.0), x > 0

    def backward(self, cache, dy):
        return dy * cache, {}


@register
class LeakyReLU(Layer):
    """``max(x, mu * x)`` with a fixed slope."""

    kind = "lrelu"

    def __init__(self, mu=0.2):
        super().__init__()
        if not 0.0 < mu < 1.0:
            raise DomainError("LReLU slope must lie in (0, 1)")
        self.mu = float(mu)

    def hyper(self):
        return {"mu": self.mu}

    def forward(self, x, train=True):
        return np.maximum(x, self.mu * x), x > 0

    def backward(self, cache, dy):
        return np.where(cache, dy, self.mu * dy), {}


@register
class Sigmoid(Layer):
    kind = "sigmoid"

    def forward(self, x, train=True):
        e = np.exp(-np.abs(x))
        y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
        return y, y

    def backward(self, cache, dy):
        return dy * cache * (1.0 - cache), {}


@register
class Flatten(Layer):
    kind = "flatten"

    def _build(self, in_shape, rng):
        return (int(np.prod(in_shape)),)

    def forward(self, x, train=True):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, cache, dy):
        return dy.reshape(cache), {}


@register
class Reshape(Layer):
    kind = "reshape"

    def __init__(self, shape):
        super().__init__()
        self.shape = tuple(int(s) for s in shape)

    def hyper(self):
        return {"shape": list(self.shape)}

    def _build(self, in_shape, rng):
        if int(np.prod(in_shape)) != int(np.prod(self.shape)):
            raise ShapeError(f"cannot reshape {in_shape} to {self.shape}")
        return self.shape

    def forward(self, x, train=True):
        return x.reshape((x.shape[0],) + self.shape), x.shape

    def backward(self, cache, dy):
        return dy.reshape(cache), {}


class Sequential:
    """Ordered stack of layers built for a fixed per-sample input shape."""

    def __init__(self, layers, in_shape, rng=None, seed=0):
        rng = rng if rng is not None else np.random.default_rng(seed)
        self.layers = list(layers)
        self.in_shape = tuple(in_shape)
        shape = self.in_shape
        for i, layer in enumerate(self.layers):
            try:
                shape = layer.build(shape, rng)
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({layer.kind}): {exc}") from None
        self.out_shape = shape

    @classmethod
    def from_specs(cls, specs, in_shape, seed=0):
        return cls([layer_from_spec(s) for s in specs], in_shape, seed=seed)

    def specs(self):
        return [layer.spec() for layer in self.layers]

    def named_parameters(self):
        return [(f"{i}.{layer.kind}.{name}", arr)
                for i, layer in enumerate(self.layers) for name, arr in layer.params.items()]

    def parameters(self):
        return [arr for _, arr in self.named_parameters()]

    def named_buffers(self):
        return [(f"{i}.{layer.kind}.{name}", arr)
                for i, layer in enumerate(self.layers) for name, arr in layer.buffers.items()]

    def load_arrays(self, params: dict, buffers: dict | None = None):
        for i, layer in enumerate(self.layers):
            for name in layer.params:
                layer.params[name][...] = params[f"{i}.{layer.kind}.{name}"]
            for name in layer.buffers:
                if buffers is not None:
                    layer.buffers[name] = np.array(buffers[f"{i}.{layer.kind}.{name}"], dtype=np.float64)

    def num_parameters(self):
        return sum(a.size for a in self.parameters())

    def forward(self, x, train=True):
        x = np.asarray(x, dtype=np.float64)
        caches = []
        for i, layer in enumerate(self.layers):
            if x.shape[1:] != layer.in_shape:
                raise ShapeError(
                    f"layer {i} ({layer.kind}) expects per-sample shape {layer.in_shape}, got {x.shape[1:]}")
            x, c = layer.forward(x, train)
            caches.append(c)
        return x, ("sequential", id(self), train, caches)

    def __call__(self, x, train=False):
        return self.forward(x, train)[0]

    def backward(self, cache, dy):
        """Returns (dx, grads) with ``grads`` aligned to :meth:`parameters`."""
        if not (isinstance(cache, tuple) and len(cache) == 4 and cache[0] == "sequential"
                and cache[1] == id(self) and len(cache[3]) == len(self.layers)):
            raise StateError("cache was not produced by this network's forward pass")
        if not cache[2]:
            raise StateError("backward needs a train-mode forward cache")
        dy = np.asarray(dy, dtype=np.float64)
        per_layer = [None] * len(self.layers)
        for i in range(len(self.layers) - 1, -1, -1):
            dy, g = self.layers[i].backward(cache[3][i], dy)
            per_layer[i] = g
        grads = [per_layer[i][name] for i, layer in enumerate(self.layers) for name in layer.params]
        return dy, grads
