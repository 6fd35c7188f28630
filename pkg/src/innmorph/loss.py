"""Word-vector and tag losses plus the weighted task objectives.

Loss functions accept a single vector or a batch of rows. For a batch they
return per-row losses and per-row gradients; callers decide how to reduce.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

PROB_CLAMP = 1e-7


@dataclass(frozen=True)
class LossWeights:
    alpha_x: float = 20.0
    alpha_t: float = 10.0
    alpha_y: float = 80.0
    alpha_z: float = 1.0

    def __post_init__(self):
        vals = (self.alpha_x, self.alpha_t, self.alpha_y, self.alpha_z)
        if any(v < 0 for v in vals):
            raise ValueError("loss weights must be non-negative")


def _pair(a, b, what):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim not in (1, 2) or a.shape[-1] == 0:
        raise ShapeError(f"{what}: shapes {a.shape} and {b.shape} do not match")
    squeeze = a.ndim == 1
    return (a[None, :], b[None, :], True) if squeeze else (a, b, False)


def cosine_loss(pred, gold):
    """``1 - cos(pred, gold)`` and its gradient with respect to ``pred``."""
    p, g, squeeze = _pair(pred, gold, "cosine_loss")
    pn = np.linalg.norm(p, axis=1)
    gn = np.linalg.norm(g, axis=1)
    if np.any(pn == 0) or np.any(gn == 0):
        raise ValueError("cosine_loss is undefined for a zero vector")
    dot = np.einsum("ij,ij->i", p, g)
    cos = dot / (pn * gn)
    # rounding can push |cos| a hair past 1
    loss = 1.0 - np.clip(cos, -1.0, 1.0)
    grad = -(g / (pn * gn)[:, None] - (cos / pn**2)[:, None] * p)
    if squeeze:
        return float(loss[0]), grad[0]
    return loss, grad


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    return _sigmoid(np.atleast_1d(x)).reshape(x.shape)


def _check_gold(t):
    if not np.all((t == 0) | (t == 1)):
        raise ValueError("gold tag vector must be binary")


def bce_tag_loss(pred_activations, gold):
    """Mean binary cross-entropy of sigmoid activations against a 0/1 vector.

    Activations are clamped to ``[1e-7, 1 - 1e-7]``. The returned gradient is
    with respect to the pre-sigmoid values, ``(a - t) / N``.
    """
    a, t, squeeze = _pair(pred_activations, gold, "bce_tag_loss")
    _check_gold(t)
    a = np.clip(a, PROB_CLAMP, 1.0 - PROB_CLAMP)
    n = a.shape[1]
    loss = -(t * np.log(a) + (1.0 - t) * np.log(1.0 - a)).sum(axis=1) / n
    grad = (a - t) / n
    if squeeze:
        return float(loss[0]), grad[0]
    return loss, grad


def bce_tag_loss_from_logits(logits, gold):
    """Same objective computed stably from pre-sigmoid values.

    Uses ``softplus(l) - t*l``; the clamp on activations is not applied here.
    """
    l, t, squeeze = _pair(logits, gold, "bce_tag_loss_from_logits")
    _check_gold(t)
    n = l.shape[1]
    softplus = np.logaddexp(0.0, l)
    loss = (softplus - t * l).sum(axis=1) / n
    grad = (_sigmoid(l) - t) / n
    if squeeze:
        return float(loss[0]), grad[0]
    return loss, grad


def composite_inflection_loss(lemma_term, tag_term, surface_term, z_term, w):
    """``a_x*L_lemma + a_t*L_t + a_y*L_y + a_z*L_z``."""
    return (
        w.alpha_x * lemma_term
        + w.alpha_t * tag_term
        + w.alpha_y * surface_term
        + w.alpha_z * z_term
    )


def composite_lemmatization_loss(surface_term_x, lemma_term_y, z_term, w):
    """``a_x*L_surface + a_y*L_lemma + a_z*L_z``."""
    return w.alpha_x * surface_term_x + w.alpha_y * lemma_term_y + w.alpha_z * z_term
