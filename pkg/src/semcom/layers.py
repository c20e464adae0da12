"""Small neural-network layers with hand-written forward and backward passes.

All math is float64 numpy. Each layer owns its parameter arrays and a
matching list of gradient accumulators; ``backward`` adds into the
accumulators and returns the gradient with respect to the layer input.
Caches written by ``forward(..., train=True)`` are consumed by the next
``backward`` call, so a layer instance must not be shared between
concurrent training passes. Inference (``train=False``) caches nothing.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidArgumentError


class Layer:
    """Base class: parameter-free identity."""

    def __init__(self):
        self.params: list[np.ndarray] = []
        self.grads: list[np.ndarray] = []

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def zero_grads(self):
        for g in self.grads:
            g[...] = 0.0


class Dense(Layer):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        w = rng.standard_normal((n_out, n_in)) * np.sqrt(2.0 / n_in)
        self.params = [w]
        if bias:
            self.params.append(np.zeros(n_out))
        self.grads = [np.zeros_like(p) for p in self.params]
        self._x = None

    def forward(self, x, train=False):
        y = x @ self.params[0].T
        if len(self.params) > 1:
            y = y + self.params[1]
        if train:
            self._x = x
        return y

    def backward(self, dy):
        self.grads[0] += dy.T @ self._x
        if len(self.params) > 1:
            self.grads[1] += dy.sum(axis=0)
        return dy @ self.params[0]


class Conv2d(Layer):
    """3x3 (or kxk) convolution on (B, C, H, W) input, zero padding."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator,
                 ksize: int = 3, stride: int = 1, pad: int = 1, bias: bool = True):
        super().__init__()
        self.c_in, self.c_out = c_in, c_out
        self.k, self.stride, self.pad = ksize, stride, pad
        fan_in = c_in * ksize * ksize
        w = rng.standard_normal((c_out, fan_in)) * np.sqrt(2.0 / fan_in)
        self.params = [w]
        if bias:
            self.params.append(np.zeros(c_out))
        self.grads = [np.zeros_like(p) for p in self.params]
        self._cols = None
        self._xshape = None

    def _out_hw(self, h, w):
        ho = (h + 2 * self.pad - self.k) // self.stride + 1
        wo = (w + 2 * self.pad - self.k) // self.stride + 1
        return ho, wo

    def _im2col(self, xp, ho, wo):
        b, c = xp.shape[0], xp.shape[1]
        cols = np.empty((b, c, self.k, self.k, ho, wo), dtype=xp.dtype)
        s = self.stride
        for ki in range(self.k):
            for kj in range(self.k):
                cols[:, :, ki, kj] = xp[:, :, ki:ki + s * ho:s, kj:kj + s * wo:s]
        return cols.reshape(b, c * self.k * self.k, ho * wo)

    def forward(self, x, train=False):
        b, c, h, w = x.shape
        if c != self.c_in:
            raise InvalidArgumentError(f"expected {self.c_in} input channels, got {c}")
        ho, wo = self._out_hw(h, w)
        xp = np.pad(x, ((0, 0), (0, 0), (self.pad, self.pad), (self.pad, self.pad)))
        cols = self._im2col(xp, ho, wo)
        y = np.matmul(self.params[0], cols)
        if len(self.params) > 1:
            y = y + self.params[1][None, :, None]
        if train:
            self._cols = cols
            self._xshape = (b, c, h, w)
        return y.reshape(b, self.c_out, ho, wo)

    def backward(self, dy):
        b, _, ho, wo = dy.shape
        dyf = dy.reshape(b, self.c_out, ho * wo)
        self.grads[0] += np.matmul(dyf, self._cols.transpose(0, 2, 1)).sum(axis=0)
        if len(self.params) > 1:
            self.grads[1] += dyf.sum(axis=(0, 2))
        dcols = np.matmul(self.params[0].T, dyf)
        _, c, h, w = self._xshape
        dxp = np.zeros((b, c, h + 2 * self.pad, w + 2 * self.pad))
        dc = dcols.reshape(b, c, self.k, self.k, ho, wo)
        s = self.stride
        for ki in range(self.k):
            for kj in range(self.k):
                dxp[:, :, ki:ki + s * ho:s, kj:kj + s * wo:s] += dc[:, :, ki, kj]
        if self.pad:
            return dxp[:, :, self.pad:-self.pad, self.pad:-self.pad]
        return dxp


class PReLU(Layer):
    """Parametric rectifier with a single learned negative-side slope."""

    def __init__(self, init_slope: float = 0.25):
        super().__init__()
        self.params = [np.array([init_slope])]
        self.grads = [np.zeros(1)]
        self._x = None

    def forward(self, x, train=False):
        if train:
            self._x = x
        a = self.params[0][0]
        return np.where(x > 0.0, x, a * x)

    def backward(self, dy):
        x = self._x
        neg = x <= 0.0
        self.grads[0][0] += float((dy * x * neg).sum())
        return dy * np.where(neg, self.params[0][0], 1.0)


class Upsample2x(Layer):
    """Nearest-neighbor 2x spatial upsampling, no parameters."""

    def forward(self, x, train=False):
        return x.repeat(2, axis=2).repeat(2, axis=3)

    def backward(self, dy):
        b, c, h, w = dy.shape
        return dy.reshape(b, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))


class Flatten(Layer):
    def __init__(self):
        super().__init__()
        self._shape = None

    def forward(self, x, train=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._shape)


class Reshape(Layer):
    def __init__(self, target: tuple[int, ...]):
        super().__init__()
        self.target = target

    def forward(self, x, train=False):
        return x.reshape((x.shape[0],) + self.target)

    def backward(self, dy):
        return dy.reshape(dy.shape[0], -1)


class PowerNormPairs(Layer):
    """Scale each sample of 2k reals so its k implied complex symbols have
    unit mean power: sum(v^2) = k after scaling.

    A tiny epsilon keeps untrained (near-zero) activations finite; its
    bias on the power contract is far below the 1e-6 tolerance.
    """

    EPS = 1e-12

    def __init__(self):
        super().__init__()
        self._cache = None

    def forward(self, x, train=False):
        k = x.shape[1] // 2
        mu = (x * x).sum(axis=1, keepdims=True)
        scale = np.sqrt(k / (mu + self.EPS))
        if train:
            self._cache = (x, mu, scale)
        return x * scale

    def backward(self, dy):
        x, mu, scale = self._cache
        dot = (dy * x).sum(axis=1, keepdims=True)
        return scale * dy - scale * x * dot / (mu + self.EPS)


class Sequential:
    """An ordered stack of layers with explicit forward/backward."""

    def __init__(self, layers: list[Layer]):
        self.layers = list(layers)

    def forward(self, x, train=False):
        for layer in self.layers:
            x = layer.forward(x, train=train)
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def params(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params]

    def grads(self) -> list[np.ndarray]:
        return [g for layer in self.layers for g in layer.grads]

    def zero_grads(self):
        for layer in self.layers:
            layer.zero_grads()


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean softmax cross-entropy. Returns (loss, dlogits)."""
    p = softmax(logits)
    b = logits.shape[0]
    eps = 1e-300
    loss = -np.log(p[np.arange(b), labels] + eps).mean()
    dlogits = p.copy()
    dlogits[np.arange(b), labels] -= 1.0
    return float(loss), dlogits / b


def mse(pred: np.ndarray, target: np.ndarray):
    """Mean squared error over all elements. Returns (loss, dpred)."""
    diff = pred - target
    loss = float((diff * diff).mean())
    return loss, 2.0 * diff / diff.size


def sgd_step(params: list[np.ndarray], grads: list[np.ndarray], lr: float):
    for p, g in zip(params, grads):
        p -= lr * g
