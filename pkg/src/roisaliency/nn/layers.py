"""CNN building blocks with explicit backward passes.

Layers are stateless between calls: forward returns (output, ctx) and
backward consumes that ctx, so the same network can serve predictions from
several threads at once. Activations are (batch, channels, *spatial) float64.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..data import DataError


def _glorot_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


class Layer:
    kind: str = "?"

    def build(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        """Validate composition with the preceding layer and allocate parameters."""
        raise NotImplementedError

    def init_params(self, rng: np.random.Generator) -> None:
        pass

    def forward(self, x: np.ndarray, train_mode: bool = False, rng=None):
        raise NotImplementedError

    def backward(self, dy: np.ndarray, ctx):
        """Return (dx, [param gradients])."""
        raise NotImplementedError

    @property
    def params(self) -> list[np.ndarray]:
        return []

    def spec(self) -> dict:
        return {"kind": self.kind}


class _ConvND(Layer):
    """Cross-correlation with stride 1 and optional symmetric zero padding."""

    ndim: int

    def __init__(self, filters: int, kernel: int | tuple[int, ...], padding: int = 0):
        self.filters = int(filters)
        if isinstance(kernel, int):
            kernel = (kernel,) * self.ndim
        self.kernel = tuple(int(k) for k in kernel)
        if len(self.kernel) != self.ndim or any(k < 1 for k in self.kernel):
            raise DataError(f"bad kernel {kernel} for {self.kind}")
        if self.filters < 1:
            raise DataError("filter count must be positive")
        self.padding = int(padding)
        self.weight: np.ndarray | None = None
        self.bias: np.ndarray | None = None
        self.in_channels = 0

    def build(self, in_shape):
        if len(in_shape) != self.ndim + 1:
            raise DataError(f"{self.kind} expects (channels, {self.ndim} spatial dims), got {in_shape}")
        self.in_channels = in_shape[0]
        spatial = in_shape[1:]
        out_spatial = tuple(s + 2 * self.padding - k + 1 for s, k in zip(spatial, self.kernel))
        if any(o < 1 for o in out_spatial):
            raise DataError(f"{self.kind} kernel {self.kernel} too large for input {in_shape}")
        self.weight = np.zeros((self.filters, self.in_channels) + self.kernel)
        self.bias = np.zeros(self.filters)
        return (self.filters,) + out_spatial

    def init_params(self, rng):
        k = int(np.prod(self.kernel))
        self.weight[...] = _glorot_uniform(
            rng, self.weight.shape, fan_in=self.in_channels * k, fan_out=self.filters * k
        )
        self.bias[...] = 0.0

    def _pad(self, x):
        if self.padding == 0:
            return x
        pad = [(0, 0), (0, 0)] + [(self.padding, self.padding)] * self.ndim
        return np.pad(x, pad)

    def forward(self, x, train_mode=False, rng=None):
        xp = self._pad(x)
        spatial_axes = tuple(range(2, 2 + self.ndim))
        # (N, C, *out, *kernel) strided view; contractions run straight off it
        windows = sliding_window_view(xp, self.kernel, axis=spatial_axes)
        window_kernel_axes = tuple(range(2 + self.ndim, 2 + 2 * self.ndim))
        weight_kernel_axes = tuple(range(2, 2 + self.ndim))
        y = np.tensordot(
            windows, self.weight, axes=((1,) + window_kernel_axes, (1,) + weight_kernel_axes)
        )
        y = np.moveaxis(y + self.bias, -1, 1)
        ctx = (x.shape, xp)
        return y, ctx

    def backward(self, dy, ctx):
        x_shape, xp = ctx
        spatial_axes = tuple(range(2, 2 + self.ndim))
        windows = sliding_window_view(xp, self.kernel, axis=spatial_axes)
        out_spatial = windows.shape[2 : 2 + self.ndim]
        batch_axes = (0,) + spatial_axes
        dw = np.tensordot(dy, windows, axes=(batch_axes, batch_axes))
        db = dy.sum(axis=batch_axes)
        dy_last = np.moveaxis(dy, 1, -1)  # (N, *out, F)
        dcols = np.tensordot(dy_last, self.weight, axes=([-1], [0]))  # (N, *out, C, *kernel)
        dxp = np.zeros((x_shape[0], self.in_channels) + xp.shape[2:])
        for offsets in np.ndindex(*self.kernel):
            piece = dcols[(slice(None),) * (1 + self.ndim) + (slice(None),) + offsets]
            piece = np.moveaxis(piece, -1, 1)  # (N, C, *out)
            region = tuple(slice(o, o + s) for o, s in zip(offsets, out_spatial))
            dxp[(slice(None), slice(None)) + region] += piece
        if self.padding:
            crop = tuple(slice(self.padding, self.padding + s) for s in x_shape[2:])
            dx = dxp[(slice(None), slice(None)) + crop]
        else:
            dx = dxp
        return dx, [dw, db]

    @property
    def params(self):
        return [self.weight, self.bias]

    def spec(self):
        return {
            "kind": self.kind,
            "filters": self.filters,
            "kernel": list(self.kernel),
            "padding": self.padding,
        }


class Conv2D(_ConvND):
    kind = "conv2d"
    ndim = 2


class Conv3D(_ConvND):
    kind = "conv3d"
    ndim = 3


class MaxPool(Layer):
    """Non-overlapping max pooling; trailing remainders are dropped.

    Gradient flows to the first maximal element of each window, so tied
    windows still have a deterministic backward pass.
    """

    kind = "maxpool"

    def __init__(self, pool: int | tuple[int, ...]):
        self.pool = pool if isinstance(pool, tuple) else None
        self._pool_arg = pool
        self.ndim = 0

    def build(self, in_shape):
        self.ndim = len(in_shape) - 1
        if self.ndim not in (2, 3):
            raise DataError(f"maxpool expects a 2D or 3D spatial grid, got {in_shape}")
        pool = self._pool_arg
        if isinstance(pool, int):
            pool = (pool,) * self.ndim
        self.pool = tuple(int(p) for p in pool)
        if len(self.pool) != self.ndim or any(p < 1 for p in self.pool):
            raise DataError(f"bad pool extents {self._pool_arg}")
        out_spatial = tuple(s // p for s, p in zip(in_shape[1:], self.pool))
        if any(o < 1 for o in out_spatial):
            raise DataError(f"pool {self.pool} larger than input {in_shape}")
        return (in_shape[0],) + out_spatial

    def forward(self, x, train_mode=False, rng=None):
        n, c = x.shape[:2]
        spatial = x.shape[2:]
        out_spatial = tuple(s // p for s, p in zip(spatial, self.pool))
        crop = tuple(slice(0, o * p) for o, p in zip(out_spatial, self.pool))
        xc = x[(slice(None), slice(None)) + crop]
        # interleave (out_i, pool_i) axes, then gather pooled positions last
        inter = []
        for o, p in zip(out_spatial, self.pool):
            inter.extend([o, p])
        xr = xc.reshape((n, c) + tuple(inter))
        out_axes = tuple(2 + 2 * i for i in range(self.ndim))
        pool_axes = tuple(3 + 2 * i for i in range(self.ndim))
        xt = np.ascontiguousarray(xr.transpose((0, 1) + out_axes + pool_axes))
        flat = xt.reshape((n, c) + out_spatial + (int(np.prod(self.pool)),))
        idx = flat.argmax(axis=-1)
        y = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
        ctx = (x.shape, idx)
        return y, ctx

    def backward(self, dy, ctx):
        x_shape, idx = ctx
        n, c = x_shape[:2]
        spatial = x_shape[2:]
        out_spatial = tuple(s // p for s, p in zip(spatial, self.pool))
        flat = np.zeros((n, c) + out_spatial + (int(np.prod(self.pool)),))
        np.put_along_axis(flat, idx[..., None], dy[..., None], axis=-1)
        xt = flat.reshape((n, c) + out_spatial + self.pool)
        # invert the forward transpose
        perm = [0, 1]
        for i in range(self.ndim):
            perm.extend([2 + i, 2 + self.ndim + i])
        xr = xt.transpose(perm)
        dx = np.zeros(x_shape)
        crop = tuple(slice(0, o * p) for o, p in zip(out_spatial, self.pool))
        dx[(slice(None), slice(None)) + crop] = xr.reshape(
            (n, c) + tuple(o * p for o, p in zip(out_spatial, self.pool))
        )
        return dx, []

    def spec(self):
        return {"kind": self.kind, "pool": list(self.pool)}


class ReLU(Layer):
    kind = "relu"

    def build(self, in_shape):
        return in_shape

    def forward(self, x, train_mode=False, rng=None):
        mask = x > 0
        return x * mask, mask

    def backward(self, dy, ctx):
        return dy * ctx, []


class Flatten(Layer):
    kind = "flatten"

    def build(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, train_mode=False, rng=None):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dy, ctx):
        return dy.reshape(ctx), []


class Dense(Layer):
    kind = "dense"

    def __init__(self, width: int):
        if width < 1:
            raise DataError(f"dense width must be positive, got {width}")
        self.width = int(width)
        self.in_features = 0
        self.weight: np.ndarray | None = None
        self.bias: np.ndarray | None = None

    def build(self, in_shape):
        if len(in_shape) != 1:
            raise DataError(f"dense expects a flat input, got shape {in_shape} (add a flatten layer)")
        self.in_features = in_shape[0]
        self.weight = np.zeros((self.width, self.in_features))
        self.bias = np.zeros(self.width)
        return (self.width,)

    def init_params(self, rng):
        self.weight[...] = _glorot_uniform(
            rng, self.weight.shape, fan_in=self.in_features, fan_out=self.width
        )
        self.bias[...] = 0.0

    def forward(self, x, train_mode=False, rng=None):
        return x @ self.weight.T + self.bias, x

    def backward(self, dy, ctx):
        dw = dy.T @ ctx
        db = dy.sum(axis=0)
        dx = dy @ self.weight
        return dx, [dw, db]

    @property
    def params(self):
        return [self.weight, self.bias]

    def spec(self):
        return {"kind": self.kind, "width": self.width}


class Dropout(Layer):
    """Inverted dropout; identity unless train_mode is on and an rng is supplied."""

    kind = "dropout"

    def __init__(self, rate: float = 0.5):
        if not 0.0 <= rate < 1.0:
            raise DataError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = float(rate)

    def build(self, in_shape):
        return in_shape

    def forward(self, x, train_mode=False, rng=None):
        if not train_mode or self.rate == 0.0:
            return x, None
        if rng is None:
            raise DataError("dropout in train mode needs an rng")
        scale = (rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        return x * scale, scale

    def backward(self, dy, ctx):
        if ctx is None:
            return dy, []
        return dy * ctx, []

    def spec(self):
        return {"kind": self.kind, "rate": self.rate}


class Sigmoid(Layer):
    kind = "sigmoid"

    def build(self, in_shape):
        return in_shape

    def forward(self, x, train_mode=False, rng=None):
        y = np.empty_like(x)
        pos = x >= 0
        y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        y[~pos] = ex / (1.0 + ex)
        return y, y

    def backward(self, dy, ctx):
        return dy * ctx * (1.0 - ctx), []


_LAYER_KINDS = {
    "conv2d": Conv2D,
    "conv3d": Conv3D,
    "maxpool": MaxPool,
    "relu": ReLU,
    "flatten": Flatten,
    "dense": Dense,
    "dropout": Dropout,
    "sigmoid": Sigmoid,
}


def layer_from_spec(spec: dict) -> Layer:
    kind = spec.get("kind")
    if kind not in _LAYER_KINDS:
        raise DataError(f"unknown layer kind {kind!r}")
    if kind in ("conv2d", "conv3d"):
        return _LAYER_KINDS[kind](
            filters=spec["filters"], kernel=tuple(spec["kernel"]), padding=spec.get("padding", 0)
        )
    if kind == "maxpool":
        return MaxPool(tuple(spec["pool"]))
    if kind == "dense":
        return Dense(spec["width"])
    if kind == "dropout":
        return Dropout(spec.get("rate", 0.5))
    return _LAYER_KINDS[kind]()
