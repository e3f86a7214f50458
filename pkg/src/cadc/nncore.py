"""Dense layers, activations, BCE and Adam with hand-written backward passes.

Every function accepts a single vector or a batch of row vectors. Parameters
are float32 by default; call ``astype(np.float64)`` on a layer to run
finite-difference checks at double precision.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LOGIT_CLAMP = 80.0
PROB_CLAMP = 1e-7


class TrainingError(RuntimeError):
    """Training aborted (empty input or a non-finite loss)."""


def sigmoid(x):
    x = np.clip(x, -LOGIT_CLAMP, LOGIT_CLAMP)
    return 1.0 / (1.0 + np.exp(-x))


def bce_loss(y_hat, y):
    """Elementwise binary cross-entropy with predictions clamped to [1e-7, 1 - 1e-7]."""
    p = np.clip(np.asarray(y_hat, dtype=np.float64), PROB_CLAMP, 1.0 - PROB_CLAMP)
    y = np.asarray(y, dtype=np.float64)
    return -(y * np.log(p) + (1.0 - y) * np.log1p(-p))


def bce_with_logits(logits, y):
    """BCE of ``sigmoid(logits)`` and its gradient w.r.t. the logits (``sigmoid - y``)."""
    p = sigmoid(np.asarray(logits, dtype=np.float64))
    return bce_loss(p, y), p - y


def relu(x):
    return np.maximum(x, 0)


def relu_backward(x, grad_out):
    # subgradient at exactly 0 is 0
    return np.where(x > 0, grad_out, 0)


def xavier_uniform(rng: np.random.Generator, fan_out: int, fan_in: int, dtype=np.float32):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in)).astype(dtype)


class LinearLayer:
    """``y = W x + b`` with ``W`` of shape (out, in)."""

    def __init__(self, weight, bias=None, trainable: bool = True):
        self.weight = np.asarray(weight)
        if bias is None:
            bias = np.zeros(self.weight.shape[0], dtype=self.weight.dtype)
        self.bias = np.asarray(bias, dtype=self.weight.dtype)
        if self.bias.shape != (self.weight.shape[0],):
            raise ValueError(f"bias shape {self.bias.shape} does not match weight {self.weight.shape}")
        self.trainable = trainable

    @classmethod
    def init(cls, in_dim: int, out_dim: int, rng: np.random.Generator, dtype=np.float32):
        return cls(xavier_uniform(rng, out_dim, in_dim, dtype), np.zeros(out_dim, dtype=dtype))

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    def astype(self, dtype) -> "LinearLayer":
        return LinearLayer(self.weight.astype(dtype), self.bias.astype(dtype), self.trainable)

    def copy(self) -> "LinearLayer":
        return self.astype(self.weight.dtype)

    def forward(self, x):
        return linear_forward(self, x)

    def backward(self, x, grad_out):
        return linear_backward(self, x, grad_out)


def linear_forward(layer: LinearLayer, x):
    x = np.asarray(x)
    if x.shape[-1] != layer.in_dim:
        raise ValueError(f"input width {x.shape[-1]} != layer input {layer.in_dim}")
    return x @ layer.weight.T + layer.bias


def linear_backward(layer: LinearLayer, x, grad_out):
    """Return ``(grad_x, grad_w, grad_b)``; batch gradients are summed over rows."""
    x = np.asarray(x)
    grad_out = np.asarray(grad_out)
    if x.shape[-1] != layer.in_dim or grad_out.shape[-1] != layer.out_dim:
        raise ValueError("dimension mismatch in linear_backward")
    grad_x = grad_out @ layer.weight
    if grad_out.ndim == 1:
        grad_w = np.outer(grad_out, x)
        grad_b = grad_out.copy()
    else:
        grad_w = grad_out.T @ x
        grad_b = grad_out.sum(axis=0)
    return grad_x, grad_w, grad_b


class MLP:
    """Linear layers with ReLU between them; the last layer is linear."""

    def __init__(self, layers: list[LinearLayer]):
        self.layers = layers

    @classmethod
    def init(cls, widths, rng: np.random.Generator, dtype=np.float32):
        return cls([LinearLayer.init(a, b, rng, dtype) for a, b in zip(widths[:-1], widths[1:])])

    @property
    def widths(self) -> list[int]:
        return [self.layers[0].in_dim] + [layer.out_dim for layer in self.layers]

    def astype(self, dtype) -> "MLP":
        return MLP([layer.astype(dtype) for layer in self.layers])

    def copy(self) -> "MLP":
        return MLP([layer.copy() for layer in self.layers])

    def forward(self, x):
        """Return the output and a cache of layer inputs and pre-activations."""
        cache = []
        h = x
        last = len(self.layers) - 1
        for k, layer in enumerate(self.layers):
            z = linear_forward(layer, h)
            cache.append((h, z))
            h = z if k == last else relu(z)
        return h, cache

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache, grad_out):
        grads = []
        g = grad_out
        last = len(self.layers) - 1
        for k in range(last, -1, -1):
            h, z = cache[k]
            if k != last:
                g = relu_backward(z, g)
            g, gw, gb = linear_backward(self.layers[k], h, g)
            grads.append((gw, gb))
        grads.reverse()
        return g, grads

    def named_parameters(self, prefix: str) -> dict[str, np.ndarray]:
        out = {}
        for k, layer in enumerate(self.layers):
            out[f"{prefix}.{k}.weight"] = layer.weight
            out[f"{prefix}.{k}.bias"] = layer.bias
        return out

    @staticmethod
    def named_grads(prefix: str, grads) -> dict[str, np.ndarray]:
        out = {}
        for k, (gw, gb) in enumerate(grads):
            out[f"{prefix}.{k}.weight"] = gw
            out[f"{prefix}.{k}.bias"] = gb
        return out


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def like(cls, params: np.ndarray, **hyper) -> "AdamState":
        return cls(np.zeros_like(params), np.zeros_like(params), **hyper)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState, *,
              rows=None, trainable: bool = True) -> np.ndarray:
    """One bias-corrected Adam update applied in place; returns ``params``.

    Entries whose gradient is exactly zero are left untouched, moments
    included (lazy Adam). This keeps embedding rows absent from a batch fixed
    and makes a zero gradient a no-op regardless of the optimizer state.
    ``rows`` restricts the update to those (unique) rows; ``grads`` then holds
    one gradient row per entry of ``rows``.
    """
    if not trainable:
        raise ValueError("adam_step called on frozen parameters")
    state.t += 1
    if rows is None:
        target_shape = params.shape
    else:
        rows = np.asarray(rows)
        target_shape = (len(rows),) + params.shape[1:]
    if grads.shape != target_shape:
        raise ValueError(f"gradient shape {grads.shape} != parameter shape {target_shape}")
    if state.m.shape != params.shape:
        raise ValueError("optimizer state does not match parameters")

    b1, b2 = state.beta1, state.beta2
    step = state.lr / (1.0 - b1 ** state.t)
    bc2 = 1.0 - b2 ** state.t
    g = grads
    live = g != 0
    if rows is None:
        m, v = state.m, state.v
    else:
        m, v = state.m[rows], state.v[rows]
    m_new = np.where(live, b1 * m + (1.0 - b1) * g, m)
    v_new = np.where(live, b2 * v + (1.0 - b2) * (g * g), v)
    delta = np.where(live, step * m_new / (np.sqrt(v_new / bc2) + state.eps), 0)
    delta = delta.astype(params.dtype, copy=False)
    m_new = m_new.astype(state.m.dtype, copy=False)
    v_new = v_new.astype(state.v.dtype, copy=False)
    if rows is None:
        state.m[...] = m_new
        state.v[...] = v_new
        params -= delta
    else:
        state.m[rows] = m_new
        state.v[rows] = v_new
        params[rows] -= delta
    return params


def scatter_rows(index: np.ndarray, values: np.ndarray):
    """Sum ``values`` rows sharing an index; returns ``(unique_index, summed_rows)``."""
    uniq, inverse = np.unique(index, return_inverse=True)
    out = np.zeros((len(uniq),) + values.shape[1:], dtype=values.dtype)
    np.add.at(out, inverse, values)
    return uniq, out


@dataclass
class RowGrad:
    """Gradient of an embedding table restricted to the rows a batch touched."""

    rows: np.ndarray
    values: np.ndarray

    def dense(self, n_rows: int) -> np.ndarray:
        out = np.zeros((n_rows,) + self.values.shape[1:], dtype=self.values.dtype)
        out[self.rows] = self.values
        return out


@dataclass
class Adam:
    """Keeps one :class:`AdamState` per named parameter."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    states: dict = field(default_factory=dict)

    def step(self, params: dict[str, np.ndarray], grads: dict) -> None:
        for name, grad in grads.items():
            p = params[name]
            state = self.states.get(name)
            if state is None:
                state = self.states[name] = AdamState.like(
                    p, lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps)
            if isinstance(grad, RowGrad):
                adam_step(p, grad.values, state, rows=grad.rows)
            else:
                adam_step(p, np.asarray(grad), state)
