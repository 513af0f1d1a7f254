"""Minimal dense-array neural network core: exactly the layers the surrogate
architecture needs (conv2d, batch norm, leaky ReLU, linear, residual blocks)
with explicit forward/backward passes and an Adam optimizer.

Everything is float64 and NHWC: activations are (batch, height, width,
channels), so im2col produces a contiguous GEMM operand directly and the
matmul output reshapes back without a transpose. Convolution weights are
(kh, kw, in_ch, out_ch). Layers cache their im2col buffers between forward
and backward, so each layer handles one step at a time.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
from numba import njit

LEAKY_SLOPE = 0.01


@njit(cache=True)
def _nb_im2col(xp, patches, s):
    b, _, _, c = xp.shape
    _, oh, ow, k, _, _ = patches.shape
    for bi in range(b):
        for oi in range(oh):
            for i in range(k):
                for oj in range(ow):
                    for j in range(k):
                        for ci in range(c):
                            patches[bi, oi, oj, i, j, ci] = xp[bi, oi * s + i, oj * s + j, ci]


@njit(cache=True)
def _nb_col2im(dpatches, dxp, s):
    b, _, _, c = dxp.shape
    _, oh, ow, k, _, _ = dpatches.shape
    dxp[...] = 0.0
    for bi in range(b):
        for oi in range(oh):
            for i in range(k):
                for oj in range(ow):
                    for j in range(k):
                        for ci in range(c):
                            dxp[bi, oi * s + i, oj * s + j, ci] += dpatches[bi, oi, oj, i, j, ci]


@njit(cache=True)
def _nb_leaky_fwd(x, out, slope):
    for i in range(x.size):
        v = x[i]
        out[i] = v if v > 0 else slope * v


@njit(cache=True)
def _nb_leaky_bwd(x, dy, out, slope):
    for i in range(x.size):
        out[i] = dy[i] if x[i] > 0 else slope * dy[i]


@dataclass
class Param:
    name: str
    value: np.ndarray
    grad: np.ndarray = field(init=False)

    def __post_init__(self):
        self.grad = np.zeros_like(self.value)


class Layer:
    """Base layer: parameters, persistent buffers, forward/backward."""

    def __init__(self, name: str):
        self.name = name

    def params(self) -> List[Param]:
        return []

    def buffers(self) -> Dict[str, np.ndarray]:
        return {}

    def forward(self, x: np.ndarray, training: bool, track: bool) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError


def _fan_in_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, shape)


class Conv2d(Layer):
    """2D convolution with symmetric zero padding ("same" for the shapes used
    here: 3x3/1x1 stride 1 and 4x4 stride 2 halving 16->8->4).

    im2col and output buffers persist between calls (re-sized only when the
    batch shape changes) because repeatedly faulting fresh tens-of-MB
    allocations costs more than the GEMMs themselves. Consequently a layer's
    output and returned gradient are only valid until its next call.
    """

    def __init__(self, name, in_ch, out_ch, kernel, stride=1, pad=None,
                 rng: Optional[np.random.Generator] = None, zero_init=False,
                 bias_init=0.0, dtype=np.float64):
        super().__init__(name)
        self.in_ch, self.out_ch, self.k, self.stride = in_ch, out_ch, kernel, stride
        self.pad = pad if pad is not None else (kernel - 1) // 2
        self.dtype = dtype
        fan_in = in_ch * kernel * kernel
        if zero_init:
            w = np.zeros((kernel, kernel, in_ch, out_ch), dtype=dtype)
        else:
            w = _fan_in_uniform(rng, (kernel, kernel, in_ch, out_ch), fan_in).astype(dtype)
        self.w = Param(f"{name}.w", w)
        self.b = Param(f"{name}.b", np.full(out_ch, bias_init, dtype=dtype))
        self._mat = None
        self._ws_key = None

    def params(self):
        return [self.w, self.b]

    def out_size(self, size: int) -> int:
        return (size + 2 * self.pad - self.k) // self.stride + 1

    def _workspace(self, b, h, w, c, oh, ow):
        key = (b, h, w, c)
        if self._ws_key != key:
            k, p = self.k, self.pad
            self._xp = np.zeros((b, h + 2 * p, w + 2 * p, c), dtype=self.dtype)
            self._patches = np.empty((b, oh, ow, k, k, c), dtype=self.dtype)
            self._y = np.empty((b * oh * ow, self.out_ch), dtype=self.dtype)
            self._dmat = np.empty((b * oh * ow, k * k * c), dtype=self.dtype)
            self._dxp = np.empty((b, h + 2 * p, w + 2 * p, c), dtype=self.dtype)
            self._ws_key = key

    def forward(self, x, training, track):
        b, h, w, c = x.shape
        k, s, p = self.k, self.stride, self.pad
        oh, ow = self.out_size(h), self.out_size(w)
        if k == 1 and s == 1 and p == 0:
            mat = x.reshape(b * h * w, c)
            self._mat = mat
            y = mat @ self.w.value.reshape(-1, self.out_ch) + self.b.value
            return y.reshape(b, oh, ow, self.out_ch)
        self._workspace(b, h, w, c, oh, ow)
        if p:
            self._xp[:, p:-p, p:-p, :] = x
            xp = self._xp
        else:
            xp = np.ascontiguousarray(x)
        patches = self._patches
        _nb_im2col(xp, patches, s)
        mat = patches.reshape(b * oh * ow, k * k * c)
        self._mat = mat
        np.matmul(mat, self.w.value.reshape(-1, self.out_ch), out=self._y)
        self._y += self.b.value
        return self._y.reshape(b, oh, ow, self.out_ch)

    def backward(self, dy):
        b, oh, ow, _ = dy.shape
        k, s, p, c = self.k, self.stride, self.pad, self.in_ch
        h = (oh - 1) * s + k - 2 * p
        w = (ow - 1) * s + k - 2 * p
        dy_mat = dy.reshape(b * oh * ow, self.out_ch)
        mat = self._mat
        self._mat = None
        self.w.grad += (mat.T @ dy_mat).reshape(self.w.value.shape)
        self.b.grad += dy_mat.sum(axis=0)
        if k == 1 and s == 1 and p == 0:
            dmat = dy_mat @ self.w.value.reshape(-1, self.out_ch).T
            return dmat.reshape(b, h, w, c)
        np.matmul(dy_mat, self.w.value.reshape(-1, self.out_ch).T, out=self._dmat)
        dpatches = self._dmat.reshape(b, oh, ow, k, k, c)
        dxp = self._dxp
        _nb_col2im(dpatches, dxp, s)
        return dxp[:, p : p + h, p : p + w, :] if p else dxp


class BatchNorm2d(Layer):
    """Per-channel batch normalization over (batch, height, width).

    `training` selects batch statistics; `track` controls whether running
    statistics are updated, so gradient checking can use batch statistics
    without mutating state.
    """

    def __init__(self, name, channels, momentum=0.1, eps=1e-5, dtype=np.float64):
        super().__init__(name)
        self.channels, self.momentum, self.eps = channels, momentum, eps
        self.gamma = Param(f"{name}.gamma", np.ones(channels, dtype=dtype))
        self.beta = Param(f"{name}.beta", np.zeros(channels, dtype=dtype))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self._cache = None

    def params(self):
        return [self.gamma, self.beta]

    def buffers(self):
        return {f"{self.name}.running_mean": self.running_mean,
                f"{self.name}.running_var": self.running_var}

    def forward(self, x, training, track):
        if training:
            mean = x.mean(axis=(0, 1, 2))
            var = x.var(axis=(0, 1, 2))
            if track:
                n = x.shape[0] * x.shape[1] * x.shape[2]
                unbiased = var * n / max(n - 1, 1)
                self.running_mean += self.momentum * (mean - self.running_mean)
                self.running_var += self.momentum * (unbiased - self.running_var)
        else:
            mean, var = self.running_mean, self.running_var
        ivar = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * ivar
        self._cache = (xhat, ivar, training)
        return self.gamma.value * xhat + self.beta.value

    def backward(self, dy):
        xhat, ivar, training = self._cache
        self._cache = None
        self.beta.grad += dy.sum(axis=(0, 1, 2))
        self.gamma.grad += (dy * xhat).sum(axis=(0, 1, 2))
        dxhat = dy * self.gamma.value
        if not training:
            return dxhat * ivar
        n = dy.shape[0] * dy.shape[1] * dy.shape[2]
        sum_dxhat = dxhat.sum(axis=(0, 1, 2))
        sum_dxhat_xhat = (dxhat * xhat).sum(axis=(0, 1, 2))
        return (ivar / n) * (n * dxhat - sum_dxhat - xhat * sum_dxhat_xhat)


class LeakyReLU(Layer):
    def __init__(self, name, slope=LEAKY_SLOPE):
        super().__init__(name)
        self.slope = slope
        self._x = None
        self._out = None
        self._dx = None
        self.last_input: Optional[np.ndarray] = None  # kept for kink detection

    def forward(self, x, training, track):
        x = np.ascontiguousarray(x)
        self._x = x
        self.last_input = x
        if self._out is None or self._out.shape != x.shape or self._out.dtype != x.dtype:
            self._out = np.empty_like(x)
            self._dx = np.empty_like(x)
        _nb_leaky_fwd(x.reshape(-1), self._out.reshape(-1), x.dtype.type(self.slope))
        return self._out

    def backward(self, dy):
        dy = np.ascontiguousarray(dy)
        _nb_leaky_bwd(self._x.reshape(-1), dy.reshape(-1), self._dx.reshape(-1),
                      dy.dtype.type(self.slope))
        self._x = None
        return self._dx


class Linear(Layer):
    def __init__(self, name, in_features, out_features,
                 rng: Optional[np.random.Generator] = None, zero_init=False,
                 bias_init=0.0, dtype=np.float64):
        super().__init__(name)
        if zero_init:
            w = np.zeros((in_features, out_features), dtype=dtype)
        else:
            w = _fan_in_uniform(rng, (in_features, out_features), in_features).astype(dtype)
        self.w = Param(f"{name}.w", w)
        self.b = Param(f"{name}.b", np.full(out_features, bias_init, dtype=dtype))
        self._x = None

    def params(self):
        return [self.w, self.b]

    def forward(self, x, training, track):
        self._x = x
        return x @ self.w.value + self.b.value

    def backward(self, dy):
        self.w.grad += self._x.T @ dy
        self.b.grad += dy.sum(axis=0)
        dx = dy @ self.w.value.T
        self._x = None
        return dx


class Flatten(Layer):
    def __init__(self, name):
        super().__init__(name)
        self._shape = None

    def forward(self, x, training, track):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._shape)


class ResidualBlock(Layer):
    """conv3x3 -> LeakyReLU -> conv3x3 -> skip add -> LeakyReLU."""

    def __init__(self, name, channels, rng, dtype=np.float64):
        super().__init__(name)
        self.conv1 = Conv2d(f"{name}.conv1", channels, channels, 3, rng=rng, dtype=dtype)
        self.act1 = LeakyReLU(f"{name}.act1")
        self.conv2 = Conv2d(f"{name}.conv2", channels, channels, 3, rng=rng, dtype=dtype)
        self.act2 = LeakyReLU(f"{name}.act2")

    def params(self):
        return self.conv1.params() + self.conv2.params()

    def forward(self, x, training, track):
        h = self.act1.forward(self.conv1.forward(x, training, track), training, track)
        h = self.conv2.forward(h, training, track)
        return self.act2.forward(h + x, training, track)

    def backward(self, dy):
        ds = self.act2.backward(dy)
        dh = self.conv2.backward(ds)
        dh = self.act1.backward(dh)
        return self.conv1.backward(dh) + ds

    def sublayers(self):
        return [self.conv1, self.act1, self.conv2, self.act2]


class Sequential(Layer):
    def __init__(self, name, layers: List[Layer]):
        super().__init__(name)
        self.layers = layers

    def params(self):
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        return out

    def buffers(self):
        out = {}
        for layer in self.layers:
            out.update(layer.buffers())
        return out

    def forward(self, x, training, track):
        for layer in self.layers:
            x = layer.forward(x, training, track)
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def leaky_layers(self) -> List[LeakyReLU]:
        out = []
        for layer in self.layers:
            if isinstance(layer, LeakyReLU):
                out.append(layer)
            elif isinstance(layer, ResidualBlock):
                out.extend(l for l in layer.sublayers() if isinstance(l, LeakyReLU))
        return out


class Adam:
    """Standard Adam with bias correction over a fixed parameter list."""

    def __init__(self, params: List[Param], lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr, self.betas, self.eps = lr, betas, eps
        self.step_count = 0
        self.m = {p.name: np.zeros_like(p.value) for p in params}
        self.v = {p.name: np.zeros_like(p.value) for p in params}

    def zero_grad(self):
        for p in self.params:
            p.grad[...] = 0.0

    def step(self):
        self.step_count += 1
        b1, b2 = self.betas
        bc1 = 1 - b1**self.step_count
        bc2 = 1 - b2**self.step_count
        for p in self.params:
            m = self.m[p.name]
            v = self.v[p.name]
            m += (1 - b1) * (p.grad - m)
            v += (1 - b2) * (p.grad**2 - v)
            p.value -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def state(self) -> Dict[str, np.ndarray]:
        out = {"step_count": np.array(self.step_count)}
        for name in self.m:
            out[f"m.{name}"] = self.m[name]
            out[f"v.{name}"] = self.v[name]
        return out

    def load_state(self, state: Dict[str, np.ndarray]):
        self.step_count = int(state["step_count"])
        for name in self.m:
            self.m[name][...] = state[f"m.{name}"]
            self.v[name][...] = state[f"v.{name}"]
