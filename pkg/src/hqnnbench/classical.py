"""Classical neural layers with explicit reverse-mode gradients.

Everything here is plain numpy. Each layer stores its parameters as
``Param`` objects (value + accumulated gradient) and implements

* ``forward(x, training)``  -> output, caching whatever backward needs,
* ``backward(grad_out)``    -> grad wrt input, accumulating into ``p.grad``,
* ``params()``              -> list of trainable ``Param``s,
* ``out_shape(in_shape)``   -> static shape inference (no batch axis).

Convolutions are dimension-agnostic (1-D/2-D/3-D) and are computed by
summing kernel-offset slices with einsum channel contractions -- no im2col
buffer. Arrays use shape (batch, channels, *spatial).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


@dataclass
class Param:
    """A trainable array paired with its accumulated gradient."""

    value: np.ndarray
    grad: np.ndarray = field(init=False)

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)

    def zero_grad(self) -> None:
        self.grad[...] = 0.0


def _uniform_fan_in(rng: np.random.Generator, fan_in: int, shape: tuple[int, ...]) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Layer:
    """Base class; subclasses override forward/backward/params/out_shape."""

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def params(self) -> list[Param]:
        return []

    def out_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        return in_shape


class FullyConnected(Layer):
    """Affine map on flattened-feature inputs: y = x W^T + b."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.weight = Param(_uniform_fan_in(rng, in_dim, (out_dim, in_dim)))
        self.bias = Param(_uniform_fan_in(rng, in_dim, (out_dim,)))
        self._x: np.ndarray | None = None

    def forward(self, x, training=False):
        self._x = x
        return x @ self.weight.value.T + self.bias.value

    def backward(self, grad_out):
        self.weight.grad += grad_out.T @ self._x
        self.bias.grad += grad_out.sum(axis=0)
        return grad_out @ self.weight.value

    def params(self):
        return [self.weight, self.bias]

    def out_shape(self, in_shape):
        if len(in_shape) != 1 or in_shape[0] != self.in_dim:
            raise ValueError(f"expected ({self.in_dim},), got {in_shape}")
        return (self.out_dim,)


def _pad_spatial(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    width = [(0, 0), (0, 0)] + [(pad, pad)] * (x.ndim - 2)
    return np.pad(x, width)


class Conv(Layer):
    """N-dimensional convolution (cross-correlation), stride 1 support only
    beyond what the grid needs: arbitrary stride along every spatial axis.
    Weight shape is (out_channels, in_channels, k, k, ...)."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        ndim: int,
        rng: np.random.Generator,
        stride: int = 1,
        padding: int = 0,
    ):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.ndim = ndim
        self.stride = stride
        self.padding = padding
        fan_in = in_channels * kernel_size**ndim
        self.weight = Param(
            _uniform_fan_in(rng, fan_in, (out_channels, in_channels) + (kernel_size,) * ndim)
        )
        self.bias = Param(_uniform_fan_in(rng, fan_in, (out_channels,)))
        self._xp: np.ndarray | None = None
        self._in_spatial: tuple[int, ...] | None = None

    def _out_spatial(self, spatial: tuple[int, ...]) -> tuple[int, ...]:
        k, s, p = self.kernel_size, self.stride, self.padding
        out = tuple((d + 2 * p - k) // s + 1 for d in spatial)
        if any(d < 1 for d in out):
            raise ValueError(f"spatial shape {spatial} too small for kernel {k}")
        return out

    def forward(self, x, training=False):
        if x.ndim != self.ndim + 2 or x.shape[1] != self.in_channels:
            raise ValueError(f"expected (B, {self.in_channels}, {'x'.join('*' * self.ndim)}), got {x.shape}")
        self._in_spatial = x.shape[2:]
        xp = _pad_spatial(x, self.padding)
        self._xp = xp
        out_sp = self._out_spatial(x.shape[2:])
        s = self.stride
        y = np.zeros((x.shape[0], self.out_channels) + out_sp)
        for offset in np.ndindex(*(self.kernel_size,) * self.ndim):
            sl = tuple(
                slice(o, o + s * d, s) for o, d in zip(offset, out_sp)
            )
            patch = xp[(slice(None), slice(None)) + sl]
            y += np.einsum("bi...,oi->bo...", patch, self.weight.value[(slice(None), slice(None)) + offset])
        return y + self.bias.value.reshape((1, -1) + (1,) * self.ndim)

    def backward(self, grad_out):
        s = self.stride
        out_sp = grad_out.shape[2:]
        grad_xp = np.zeros_like(self._xp)
        for offset in np.ndindex(*(self.kernel_size,) * self.ndim):
            sl = tuple(slice(o, o + s * d, s) for o, d in zip(offset, out_sp))
            idx = (slice(None), slice(None)) + sl
            patch = self._xp[idx]
            w_off = self.weight.value[(slice(None), slice(None)) + offset]
            # contract batch + all spatial axes, leaving (out_ch, in_ch)
            ax = (0,) + tuple(range(2, grad_out.ndim))
            self.weight.grad[(slice(None), slice(None)) + offset] += np.tensordot(
                grad_out, patch, axes=(ax, ax)
            )
            grad_xp[idx] += np.einsum("bo...,oi->bi...", grad_out, w_off)
        self.bias.grad += grad_out.sum(axis=tuple(i for i in range(grad_out.ndim) if i != 1))
        if self.padding:
            core = tuple(slice(self.padding, self.padding + d) for d in self._in_spatial)
            return grad_xp[(slice(None), slice(None)) + core]
        return grad_xp

    def params(self):
        return [self.weight, self.bias]

    def out_shape(self, in_shape):
        if len(in_shape) != self.ndim + 1 or in_shape[0] != self.in_channels:
            raise ValueError(f"expected ({self.in_channels}, ...x{self.ndim}), got {in_shape}")
        return (self.out_channels,) + self._out_spatial(in_shape[1:])


class BatchNorm(Layer):
    """Per-channel batch normalization with running statistics.

    Training uses biased batch variance; running stats are updated with
    momentum 0.1 and used verbatim in eval mode. eps = 1e-5.
    """

    EPS = 1e-5
    MOMENTUM = 0.1

    def __init__(self, n_channels: int):
        self.n_channels = n_channels
        self.gamma = Param(np.ones(n_channels))
        self.beta = Param(np.zeros(n_channels))
        self.running_mean = np.zeros(n_channels)
        self.running_var = np.ones(n_channels)
        self._cache = None

    def _stat_axes(self, x: np.ndarray) -> tuple[int, ...]:
        return (0,) + tuple(range(2, x.ndim))

    def forward(self, x, training=False):
        axes = self._stat_axes(x)
        shape = (1, -1) + (1,) * (x.ndim - 2)
        if training:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            self.running_mean += self.MOMENTUM * (mean - self.running_mean)
            self.running_var += self.MOMENTUM * (var - self.running_var)
        else:
            mean, var = self.running_mean, self.running_var
        inv_std = 1.0 / np.sqrt(var + self.EPS)
        xhat = (x - mean.reshape(shape)) * inv_std.reshape(shape)
        self._cache = (xhat, inv_std, axes, shape, training, x.shape)
        return self.gamma.value.reshape(shape) * xhat + self.beta.value.reshape(shape)

    def backward(self, grad_out):
        xhat, inv_std, axes, shape, training, x_shape = self._cache
        self.gamma.grad += (grad_out * xhat).sum(axis=axes)
        self.beta.grad += grad_out.sum(axis=axes)
        g = grad_out * self.gamma.value.reshape(shape)
        if not training:
            return g * inv_std.reshape(shape)
        m = np.prod([x_shape[a] for a in axes])
        gs = g.sum(axis=axes, keepdims=True)
        gxs = (g * xhat).sum(axis=axes, keepdims=True)
        return inv_std.reshape(shape) * (g - gs / m - xhat * gxs / m)

    def params(self):
        return [self.gamma, self.beta]


class ReLU(Layer):
    def __init__(self):
        self._mask: np.ndarray | None = None

    def forward(self, x, training=False):
        self._mask = x > 0
        return x * self._mask

    def backward(self, grad_out):
        return grad_out * self._mask


class TanhPi(Layer):
    """pi * tanh(x): squashes preprocessor outputs into (-pi, pi)."""

    def __init__(self):
        self._t: np.ndarray | None = None

    def forward(self, x, training=False):
        self._t = np.tanh(x)
        return math.pi * self._t

    def backward(self, grad_out):
        return grad_out * math.pi * (1.0 - self._t**2)


class MaxPool(Layer):
    """Non-overlapping max pooling (kernel=stride); trailing remainders that
    do not fill a window are dropped, so output dims are floor(d/k)."""

    def __init__(self, kernel_size: int, ndim: int):
        self.kernel_size = kernel_size
        self.ndim = ndim
        self._cache = None

    def forward(self, x, training=False):
        k, nd = self.kernel_size, self.ndim
        spatial = x.shape[2:]
        if any(d < k for d in spatial):
            raise ValueError(f"spatial shape {spatial} too small to pool by {k}")
        win = sliding_window_view(x, (k,) * nd, axis=tuple(range(2, x.ndim)))
        strided = win[(slice(None), slice(None)) + tuple(slice(None, None, k) for _ in range(nd))]
        flat = strided.reshape(strided.shape[: 2 + nd] + (k**nd,))
        arg = flat.argmax(axis=-1)
        y = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
        self._cache = (x.shape, arg)
        return y

    def backward(self, grad_out):
        x_shape, arg = self._cache
        k, nd = self.kernel_size, self.ndim
        out_sp = grad_out.shape[2:]
        grad_x = np.zeros(x_shape)
        # Recover per-window offsets from the flat argmax, then scatter-add.
        offs = np.unravel_index(arg, (k,) * nd)
        grids = np.meshgrid(*[np.arange(d) for d in grad_out.shape], indexing="ij", sparse=True)
        idx = tuple(grids[:2]) + tuple(
            grids[2 + a] * k + offs[a] for a in range(nd)
        )
        np.add.at(grad_x, idx, grad_out)
        return grad_x

    def out_shape(self, in_shape):
        k = self.kernel_size
        if any(d < k for d in in_shape[1:]):
            raise ValueError(f"spatial shape {in_shape[1:]} too small to pool by {k}")
        return (in_shape[0],) + tuple(d // k for d in in_shape[1:])


class Flatten(Layer):
    def __init__(self):
        self._shape: tuple[int, ...] | None = None

    def forward(self, x, training=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad_out):
        return grad_out.reshape(self._shape)

    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)


class Reshape(Layer):
    """Static per-sample reshape, e.g. a flat vector to (1, length)."""

    def __init__(self, target: tuple[int, ...]):
        self.target = tuple(target)
        self._shape: tuple[int, ...] | None = None

    def forward(self, x, training=False):
        self._shape = x.shape
        return x.reshape((x.shape[0],) + self.target)

    def backward(self, grad_out):
        return grad_out.reshape(self._shape)

    def out_shape(self, in_shape):
        if int(np.prod(in_shape)) != int(np.prod(self.target)):
            raise ValueError(f"cannot reshape {in_shape} to {self.target}")
        return self.target


@dataclass
class LayerStack:
    """A plain sequence of layers run in order."""

    layers: list[Layer]
    in_shape: tuple[int, ...]

    @property
    def out_shape(self) -> tuple[int, ...]:
        shape = self.in_shape
        for layer in self.layers:
            shape = layer.out_shape(shape)
        return shape


def stack_forward(stack: LayerStack, x: np.ndarray, training: bool = False) -> np.ndarray:
    for layer in stack.layers:
        x = layer.forward(x, training=training)
    return x


def stack_backward(stack: LayerStack, grad_out: np.ndarray) -> np.ndarray:
    for layer in reversed(stack.layers):
        grad_out = layer.backward(grad_out)
    return grad_out


def stack_params(stack: LayerStack) -> list[Param]:
    out: list[Param] = []
    for layer in stack.layers:
        out.extend(layer.params())
    return out


# ---------------------------------------------------------------------------
# Model builders used by the experiment grid.
# ---------------------------------------------------------------------------

_CONV3_CHANNELS = (8, 16, 32)


def _conv_block(in_ch: int, out_ch: int, ndim: int, rng: np.random.Generator) -> list[Layer]:
    return [
        Conv(in_ch, out_ch, kernel_size=3, ndim=ndim, rng=rng, stride=1, padding=1),
        BatchNorm(out_ch),
        ReLU(),
        MaxPool(2, ndim),
    ]


def build_preprocessor(
    variant: str,
    input_shape: tuple[int, ...],
    latent_dim: int,
    tanh_pi: bool,
    rng: np.random.Generator | None = None,
) -> LayerStack:
    """Feature-extractor builder.

    ``variant`` is ``"conv3"`` (three conv/BN/ReLU/pool blocks, channels
    8/16/32), ``"conv1"`` (one such block at 8 channels) or ``"conv0"``
    (no convolutions). All variants end in Flatten plus a fully-connected
    projection to ``latent_dim``, then pi*tanh when requested. Unchanneled
    1-D inputs of shape (length,) are treated as one channel.
    """
    if rng is None:
        rng = np.random.default_rng()
    input_shape = tuple(int(d) for d in input_shape)
    if latent_dim <= 0:
        raise ValueError("latent_dim must be positive")
    layers: list[Layer] = []
    shape = input_shape
    if variant in ("conv3", "conv1"):
        if len(shape) == 1:
            layers.append(Reshape((1,) + shape))
            shape = (1,) + shape
        ndim = len(shape) - 1
        n_blocks = 3 if variant == "conv3" else 1
        in_ch = shape[0]
        for out_ch in _CONV3_CHANNELS[:n_blocks]:
            layers.extend(_conv_block(in_ch, out_ch, ndim, rng))
            in_ch = out_ch
        layers.append(Flatten())
    elif variant == "conv0":
        layers.append(Flatten())
    else:
        raise ValueError(f"unknown preprocessor variant {variant!r}")
    # Walking out_shape here also rejects inputs too small to pool.
    probe = LayerStack(layers=list(layers), in_shape=input_shape)
    layers.append(FullyConnected(probe.out_shape[0], latent_dim, rng))
    if tanh_pi:
        layers.append(TanhPi())
    return LayerStack(layers=layers, in_shape=input_shape)


def build_head(
    variant: str,
    in_dim: int,
    hidden_dim: int | None = None,
    rng: np.random.Generator | None = None,
) -> LayerStack:
    """Classifier-head builder mapping a feature vector to a single logit.

    ``"none"`` and ``"linear_out"`` are one affine layer (no hidden layers;
    ``linear_out`` is the hybrid model's post-circuit map); ``"fcnone"`` is
    two stacked affine layers; ``"fcrelu"`` adds ReLU between them; ``"mlp"``
    has three hidden affine+ReLU layers. Hidden width defaults to ``in_dim``.
    """
    if rng is None:
        rng = np.random.default_rng()
    if in_dim < 1:
        raise ValueError("in_dim must be >= 1")
    if hidden_dim is None:
        hidden_dim = in_dim
    h = hidden_dim
    layers: list[Layer]
    if variant in ("none", "linear_out"):
        layers = [FullyConnected(in_dim, 1, rng)]
    elif variant == "fcnone":
        layers = [FullyConnected(in_dim, h, rng), FullyConnected(h, 1, rng)]
    elif variant == "fcrelu":
        layers = [FullyConnected(in_dim, h, rng), ReLU(), FullyConnected(h, 1, rng)]
    elif variant == "mlp":
        layers = [FullyConnected(in_dim, h, rng), ReLU()]
        for _ in range(2):
            layers += [FullyConnected(h, h, rng), ReLU()]
        layers.append(FullyConnected(h, 1, rng))
    else:
        raise ValueError(f"unknown head variant {variant!r}")
    return LayerStack(layers=layers, in_shape=(in_dim,))


# ---------------------------------------------------------------------------
# Loss and optimizer.
# ---------------------------------------------------------------------------


def bce_with_logits(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy on raw logits; returns (loss, dloss/dlogits).

    Uses the overflow-safe form max(z,0) - z*y + log1p(exp(-|z|)) so large
    positive or negative logits never exponentiate upward.
    """
    z = np.asarray(logits, dtype=np.float64).reshape(-1)
    y = np.asarray(targets, dtype=np.float64).reshape(-1)
    if z.shape != y.shape:
        raise ValueError(f"shape mismatch: logits {z.shape} vs targets {y.shape}")
    n = z.size
    if n == 0:
        raise ValueError("empty batch")
    loss = float(np.mean(np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))))
    # sigmoid without overflow: split on sign.
    sig = np.empty_like(z)
    pos = z >= 0
    sig[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    sig[~pos] = ez / (1.0 + ez)
    grad = (sig - y) / n
    return loss, grad.reshape(np.asarray(logits).shape)


@dataclass
class AdamState:
    """First/second moment buffers and step counter for one parameter set."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params: list[Param], lr: float = 0.001) -> AdamState:
    return AdamState(
        m=[np.zeros_like(p.value) for p in params],
        v=[np.zeros_like(p.value) for p in params],
        lr=lr,
    )


def adam_step(params: list[Param], state: AdamState) -> None:
    """One Adam update from each param's accumulated grad; grads are cleared."""
    if len(params) != len(state.m) or any(
        p.value.shape != m.shape for p, m in zip(params, state.m)
    ):
        raise ValueError("param list does not match optimizer state")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.t
    bc2 = 1.0 - b2**state.t
    for p, m, v in zip(params, state.m, state.v):
        m += (1.0 - b1) * (p.grad - m)
        v += (1.0 - b2) * (p.grad**2 - v)
        p.value -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        p.zero_grad()
