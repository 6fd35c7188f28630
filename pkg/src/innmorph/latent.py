"""Categorical latent: Gumbel-Softmax sampling, hardening, KL to uniform.

A latent vector is ``d`` consecutive blocks of ``cat`` entries, flattened.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ShapeError

UNIFORM_EPS = 1e-12


@dataclass(frozen=True)
class LatentSpec:
    d: int
    cat: int
    tau: float = 1.0

    def __post_init__(self):
        if self.d < 1 or self.cat < 2:
            raise ValueError(f"latent needs d >= 1 and cat >= 2, got d={self.d}, cat={self.cat}")
        if not self.tau > 0:
            raise ValueError(f"temperature must be positive, got {self.tau}")

    @property
    def size(self):
        return self.d * self.cat


def _rows(a, spec, what):
    a = np.asarray(a, dtype=np.float64)
    squeeze = a.ndim == 1
    if squeeze:
        a = a[None, :]
    if a.ndim != 2 or a.shape[1] != spec.size:
        raise ShapeError(f"{what}: expected length {spec.size}, got shape {a.shape}")
    return a, squeeze


def gumbel_noise(shape, rng):
    """Standard Gumbel draws ``-log(-log U)`` with ``U`` kept off 0 and 1."""
    u = np.clip(rng.random(shape), UNIFORM_EPS, 1.0 - UNIFORM_EPS)
    return -np.log(-np.log(u))


def gumbel_softmax(logits, noise, spec, tau=None):
    """Deterministic relaxation given pre-drawn ``noise`` (same shape as logits)."""
    tau = spec.tau if tau is None else tau
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    lb, squeeze = _rows(logits, spec, "gumbel_softmax logits")
    nb = np.asarray(noise, dtype=np.float64).reshape(lb.shape)
    z = _kernels.block_softmax(lb + nb, spec.cat, tau)
    return z[0] if squeeze else z


def gumbel_softmax_sample(logits, spec, rng, tau=None):
    """Reparameterised sample: per block ``softmax((logits + g) / tau)``."""
    tau = spec.tau if tau is None else tau
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    shape = np.shape(logits)
    return gumbel_softmax(logits, gumbel_noise(shape, rng), spec, tau)


def gumbel_softmax_backward(z, upstream, spec, tau=None):
    """Gradient w.r.t. logits given the sample ``z`` and ``dL/dz``."""
    tau = spec.tau if tau is None else tau
    zb, squeeze = _rows(z, spec, "z")
    gb = np.asarray(upstream, dtype=np.float64).reshape(zb.shape)
    n = zb.shape[0]
    z3 = zb.reshape(n, spec.d, spec.cat)
    g3 = gb.reshape(n, spec.d, spec.cat)
    out = (z3 * (g3 - (g3 * z3).sum(axis=2, keepdims=True)) / tau).reshape(n, spec.size)
    return out[0] if squeeze else out


def harden(z, spec):
    """One-hot of each block's argmax; ties go to the lowest index."""
    zb, squeeze = _rows(z, spec, "harden")
    n = zb.shape[0]
    idx = zb.reshape(n, spec.d, spec.cat).argmax(axis=2)
    out = np.zeros((n, spec.d, spec.cat))
    np.put_along_axis(out, idx[:, :, None], 1.0, axis=2)
    out = out.reshape(n, spec.size)
    return out[0] if squeeze else out


def kl_to_uniform(z_probs, spec):
    """``sum_j KL(p_j || Uniform(cat))`` and its gradient w.r.t. the probabilities."""
    pb, squeeze = _rows(z_probs, spec, "kl_to_uniform")
    if np.any(pb < 0):
        raise ValueError("probabilities must be non-negative")
    n = pb.shape[0]
    sums = pb.reshape(n, spec.d, spec.cat).sum(axis=2)
    if np.any(np.abs(sums - 1.0) > 1e-6):
        raise ValueError("each latent block must sum to 1")
    safe = np.maximum(pb, 1e-300)
    log_ratio = np.log(safe * spec.cat)
    loss = np.where(pb > 0, pb * log_ratio, 0.0).sum(axis=1)
    grad = log_ratio + 1.0
    if squeeze:
        return float(loss[0]), grad[0]
    return loss, grad


def kl_uniform_from_logits(logits, spec):
    """KL of ``softmax(logits)`` (temperature 1) to uniform; gradient w.r.t. logits."""
    lb, squeeze = _rows(logits, spec, "kl logits")
    n = lb.shape[0]
    a = lb.reshape(n, spec.d, spec.cat)
    a = a - a.max(axis=2, keepdims=True)
    logp = a - np.log(np.exp(a).sum(axis=2, keepdims=True))
    p = np.exp(logp)
    log_ratio = logp + np.log(spec.cat)
    loss = (p * log_ratio).sum(axis=(1, 2))
    grad = (p * (log_ratio - (p * log_ratio).sum(axis=2, keepdims=True))).reshape(n, spec.size)
    if squeeze:
        return float(loss[0]), grad[0]
    return loss, grad


def uniform_latent(spec, n=None):
    """The prior mean: every block uniform."""
    z = np.full(spec.size, 1.0 / spec.cat)
    return z if n is None else np.tile(z, (n, 1))
