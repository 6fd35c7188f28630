"""Small dense-network toolkit: MLPs with explicit backprop, Adam, clipping, init.

Everything is float64 and works on either a single vector ``(dim,)`` or a
batch ``(n, dim)``. Parameter gradients of a batch are summed over rows.
"""

from collections import namedtuple
from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteError, ShapeError, StaleCacheError

RELU = "relu"
IDENTITY = "identity"

MlpCache = namedtuple("MlpCache", "owner version inputs preacts squeeze")


def seed_sequence(seed):
    """Accept an int, a sequence of ints or an existing ``SeedSequence``."""
    return seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)


def orthogonal_init(rows, cols, seed):
    """Seeded (semi-)orthogonal matrix of shape ``(rows, cols)``.

    QR of a Gaussian matrix with the sign of ``diag(R)`` folded into ``Q`` so
    the result does not depend on the LAPACK sign convention.
    """
    if rows < 1 or cols < 1:
        raise ShapeError(f"orthogonal_init needs positive dims, got ({rows}, {cols})")
    rng = np.random.default_rng(seed)
    big, small = max(rows, cols), min(rows, cols)
    a = rng.standard_normal((big, small))
    q, r = np.linalg.qr(a)
    d = np.sign(np.diag(r))
    d[d == 0] = 1.0
    q = q * d
    return np.ascontiguousarray(q.T if rows <= cols else q)


class GradStore(dict):
    """Name -> gradient array, mirroring a parameter dict."""

    @classmethod
    def zeros_like(cls, params):
        return cls((k, np.zeros_like(v)) for k, v in params.items())

    def accumulate(self, other, prefix=""):
        for k, g in other.items():
            key = prefix + k
            if key in self:
                self[key] = self[key] + g
            else:
                self[key] = np.array(g, dtype=np.float64, copy=True)
        return self

    def scale(self, factor):
        for k in self:
            self[k] = self[k] * factor
        return self

    def global_norm(self):
        return float(np.sqrt(sum(float(np.sum(g * g)) for g in self.values())))

    def copy(self):
        return GradStore((k, v.copy()) for k, v in self.items())


class Mlp:
    """Fully connected network; ReLU between layers, identity on the output."""

    def __init__(self, weights, biases, activations=None):
        if len(weights) != len(biases) or not weights:
            raise ShapeError("weights and biases must be non-empty and of equal count")
        self.weights = [np.ascontiguousarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.ascontiguousarray(b, dtype=np.float64) for b in biases]
        if activations is None:
            activations = [RELU] * (len(weights) - 1) + [IDENTITY]
        self.activations = list(activations)
        if self.activations[-1] != IDENTITY:
            raise ShapeError("final MLP layer must be linear")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ShapeError(f"layer {i}: weight {w.shape} / bias {b.shape} mismatch")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ShapeError(f"layer {i} input {w.shape[1]} != previous output")
        self.version = 0

    @classmethod
    def create(cls, in_dim, out_dim, hidden=128, depth=3, seed=0):
        dims = [in_dim] + [hidden] * (depth - 1) + [out_dim]
        seeds = seed_sequence(seed).spawn(depth)
        weights = [orthogonal_init(dims[i + 1], dims[i], seeds[i]) for i in range(depth)]
        biases = [np.zeros(dims[i + 1]) for i in range(depth)]
        return cls(weights, biases)

    @classmethod
    def zeros(cls, in_dim, out_dim, hidden=128, depth=3):
        dims = [in_dim] + [hidden] * (depth - 1) + [out_dim]
        return cls(
            [np.zeros((dims[i + 1], dims[i])) for i in range(depth)],
            [np.zeros(dims[i + 1]) for i in range(depth)],
        )

    @property
    def in_dim(self):
        return self.weights[0].shape[1]

    @property
    def out_dim(self):
        return self.weights[-1].shape[0]

    def parameters(self):
        params = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            params[f"W{i}"] = w
            params[f"b{i}"] = b
        return params

    def touch(self):
        self.version += 1

    def __call__(self, x):
        return mlp_forward(self, x)[0]


def _as_batch(x, dim, what):
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != dim:
        raise ShapeError(f"{what}: expected length {dim}, got shape {x.shape}")
    return x, squeeze


def mlp_forward(net, x):
    """Return ``(output, cache)``; the cache feeds :func:`mlp_backward`."""
    h, squeeze = _as_batch(x, net.in_dim, "mlp_forward")
    inputs, preacts = [], []
    for w, b, act in zip(net.weights, net.biases, net.activations):
        inputs.append(h)
        a = h @ w.T + b
        preacts.append(a)
        h = np.maximum(a, 0.0) if act == RELU else a
    out = h[0] if squeeze else h
    return out, MlpCache(id(net), net.version, inputs, preacts, squeeze)


def mlp_backward(net, cache, upstream):
    """Exact reverse-mode gradients of the cached forward pass.

    Returns ``(GradStore, input_grad)``.
    """
    if cache.owner != id(net) or cache.version != net.version:
        raise StaleCacheError("MLP cache does not match the current parameters")
    g, _ = _as_batch(upstream, net.out_dim, "mlp_backward upstream")
    if g.shape[0] != cache.inputs[0].shape[0]:
        raise ShapeError("upstream batch size differs from the cached forward pass")
    grads = GradStore()
    for i in range(len(net.weights) - 1, -1, -1):
        if net.activations[i] == RELU:
            g = g * (cache.preacts[i] > 0.0)
        grads[f"W{i}"] = g.T @ cache.inputs[i]
        grads[f"b{i}"] = g.sum(axis=0)
        g = g @ net.weights[i]
    return grads, (g[0] if cache.squeeze else g)


@dataclass
class AdamState:
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def _param_dict(params):
    return params.parameters() if hasattr(params, "parameters") else params


def adam_step(params, grads, state):
    """One bias-corrected Adam update, in place. Returns ``(params, state)``.

    ``params`` is a parameter dict or any object with ``parameters()``; in the
    latter case its ``touch()`` is called so outstanding caches go stale.
    """
    table = _param_dict(params)
    for name, g in grads.items():
        if name not in table:
            raise ShapeError(f"gradient for unknown parameter {name!r}")
        if g.shape != table[name].shape:
            raise ShapeError(f"{name}: gradient {g.shape} vs parameter {table[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, p in table.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.eps)
    if hasattr(params, "touch"):
        params.touch()
    return params, state


def clip_gradients(grads, max_norm):
    """Rescale ``grads`` in place so their global L2 norm is at most ``max_norm``."""
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    norm = grads.global_norm()
    if norm > max_norm:
        grads.scale(max_norm / norm)
    return grads


def finite_difference_grad(f, point, epsilon=1e-5):
    """Central-difference gradient of scalar ``f`` at ``point`` (any shape)."""
    x = np.array(point, dtype=np.float64, copy=True)
    grad = np.empty_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + epsilon
        hi = f(x)
        flat[i] = orig - epsilon
        lo = f(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * epsilon)
    return grad


def max_relative_error(analytic, numeric, floor=1e-6):
    """Largest ``|a - n| / max(|a|, |n|, floor)`` over all entries."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0
