"""Invertible network: affine coupling blocks, fixed permutations, padding layout.

A model maps ``x`` (zero padded to ``width``) to ``[y; z_logits; padding]`` and
back with the same parameters. Block order is ``C P C P ... C`` with no
trailing permutation.
"""

from collections import namedtuple
from dataclasses import asdict, dataclass

import numpy as np

from . import _kernels
from .errors import ShapeError, StaleCacheError
from .numerics import GradStore, Mlp, mlp_backward, mlp_forward, seed_sequence

INFLECTION = "inflection"
LEMMATIZATION = "lemmatization"
TASKS = (INFLECTION, LEMMATIZATION)

DEFAULT_S_CLAMP = 5.0
_SUBNETS = ("s1", "s2", "t1", "t2")


@dataclass(frozen=True)
class IoLayout:
    """Semantic sizes of the two ends; ``z_d == 0`` means no latent."""

    x_dim: int
    y_dim: int
    z_d: int = 0
    z_cat: int = 0
    task: str = INFLECTION
    tag_count: int = 0

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.x_dim < 1 or self.y_dim < 1:
            raise ValueError("x_dim and y_dim must be positive")
        if self.z_d < 0 or (self.z_d > 0 and self.z_cat < 2):
            raise ValueError("latent needs z_d >= 1 and z_cat >= 2 (or z_d == 0)")
        if self.task == INFLECTION and self.x_dim != self.word_dim + self.tag_count:
            raise ValueError("inflection layout needs x_dim = word_dim + tag_count")
        if self.width < 2:
            raise ValueError("network width must be at least 2")

    @property
    def z_len(self):
        return self.z_d * self.z_cat if self.z_d else 0

    @property
    def word_dim(self):
        # inflection: x = [lemma; tags] and y = surface share the word dimension
        return self.y_dim

    @property
    def width(self):
        return max(self.x_dim, self.y_dim + self.z_len)

    @classmethod
    def for_task(cls, task, word_dim, tag_count=0, z_d=0, z_cat=0):
        if task == INFLECTION:
            return cls(word_dim + tag_count, word_dim, z_d, z_cat, task, tag_count)
        return cls(word_dim, word_dim, z_d, z_cat, task, 0)


def _soft_clamp_grad(s, clamp):
    if clamp > 0:
        return 1.0 - (s / clamp) ** 2
    return np.ones_like(s)


class CouplingBlock:
    """Two complementary affine couplings sharing one split point."""

    def __init__(self, s1, s2, t1, t2, split_point, width, s_clamp=DEFAULT_S_CLAMP):
        if width < 2 or not 1 <= split_point < width:
            raise ShapeError(f"bad split {split_point} for width {width}")
        rest = width - split_point
        for name, net, (i, o) in (
            ("s1", s1, (split_point, rest)),
            ("t1", t1, (split_point, rest)),
            ("s2", s2, (rest, split_point)),
            ("t2", t2, (rest, split_point)),
        ):
            if (net.in_dim, net.out_dim) != (i, o):
                raise ShapeError(f"{name} maps {net.in_dim}->{net.out_dim}, expected {i}->{o}")
        self.s1, self.s2, self.t1, self.t2 = s1, s2, t1, t2
        self.split_point = split_point
        self.width = width
        self.s_clamp = float(s_clamp)

    @classmethod
    def create(cls, width, hidden=128, depth=3, seed=0, s_clamp=DEFAULT_S_CLAMP):
        k = width // 2
        rest = width - k
        seeds = seed_sequence(seed).spawn(4)
        return cls(
            s1=Mlp.create(k, rest, hidden, depth, seeds[0]),
            s2=Mlp.create(rest, k, hidden, depth, seeds[1]),
            t1=Mlp.create(k, rest, hidden, depth, seeds[2]),
            t2=Mlp.create(rest, k, hidden, depth, seeds[3]),
            split_point=k,
            width=width,
            s_clamp=s_clamp,
        )

    def subnets(self):
        return {"s1": self.s1, "s2": self.s2, "t1": self.t1, "t2": self.t2}

    def parameters(self):
        return {
            f"{name}.{p}": arr
            for name, net in self.subnets().items()
            for p, arr in net.parameters().items()
        }

    def touch(self):
        for net in self.subnets().values():
            net.touch()


BlockCache = namedtuple("BlockCache", "direction u1 u2 v1 v2 a1 a2 nets squeeze")


def _batch(v, width, what):
    v = np.asarray(v, dtype=np.float64)
    squeeze = v.ndim == 1
    if squeeze:
        v = v[None, :]
    if v.ndim != 2 or v.shape[1] != width:
        raise ShapeError(f"{what}: expected length {width}, got shape {v.shape}")
    return v, squeeze


def _coupling_forward_batch(block, u):
    k, c = block.split_point, block.s_clamp
    u1, u2 = u[:, :k], u[:, k:]
    raw2, cs2 = mlp_forward(block.s2, u2)
    sh2, ct2 = mlp_forward(block.t2, u2)
    v1, a2 = _kernels.couple(u1, raw2, sh2, c)
    raw1, cs1 = mlp_forward(block.s1, v1)
    sh1, ct1 = mlp_forward(block.t1, v1)
    v2, a1 = _kernels.couple(u2, raw1, sh1, c)
    logdet = a2.sum(axis=1) + a1.sum(axis=1)
    nets = {"s1": cs1, "s2": cs2, "t1": ct1, "t2": ct2}
    cache = BlockCache("forward", u1, u2, v1, v2, a1, a2, nets, False)
    return np.concatenate([v1, v2], axis=1), logdet, cache


def _coupling_inverse_batch(block, v):
    k, c = block.split_point, block.s_clamp
    v1, v2 = v[:, :k], v[:, k:]
    raw1, cs1 = mlp_forward(block.s1, v1)
    sh1, ct1 = mlp_forward(block.t1, v1)
    u2, a1 = _kernels.uncouple(v2, raw1, sh1, c)
    raw2, cs2 = mlp_forward(block.s2, u2)
    sh2, ct2 = mlp_forward(block.t2, u2)
    u1, a2 = _kernels.uncouple(v1, raw2, sh2, c)
    logdet = -(a2.sum(axis=1) + a1.sum(axis=1))
    nets = {"s1": cs1, "s2": cs2, "t1": ct1, "t2": ct2}
    cache = BlockCache("inverse", u1, u2, v1, v2, a1, a2, nets, False)
    return np.concatenate([u1, u2], axis=1), logdet, cache


def coupling_forward(block, u):
    """``v1 = u1*exp(s2(u2)) + t2(u2)`` then ``v2 = u2*exp(s1(v1)) + t1(v1)``.

    Returns ``(v, logdet, cache)`` where logdet is ``sum s2 + sum s1``.
    """
    u, squeeze = _batch(u, block.width, "coupling_forward")
    v, logdet, cache = _coupling_forward_batch(block, u)
    cache = cache._replace(squeeze=squeeze)
    if squeeze:
        return v[0], float(logdet[0]), cache
    return v, logdet, cache


def coupling_inverse(block, v, return_cache=False):
    """Recover ``u`` from ``v``: first ``u2`` (from ``v1``), then ``u1``."""
    v, squeeze = _batch(v, block.width, "coupling_inverse")
    u, _, cache = _coupling_inverse_batch(block, v)
    cache = cache._replace(squeeze=squeeze)
    out = u[0] if squeeze else u
    return (out, cache) if return_cache else out


def _subnet_backward(block, cache, name, upstream, grads):
    g, gin = mlp_backward(getattr(block, name), cache.nets[name], upstream)
    grads.accumulate(g, prefix=name + ".")
    return gin


def coupling_backward(block, cache, upstream, upstream_logdet=None):
    """Gradients of a cached coupling pass (either direction).

    ``upstream`` is the gradient w.r.t. the pass output (``v`` for forward,
    ``u`` for inverse). Returns ``(GradStore, input_grad)``.
    """
    g, squeeze = _batch(upstream, block.width, "coupling_backward upstream")
    n = cache.u1.shape[0]
    if g.shape[0] != n:
        raise ShapeError("upstream batch size differs from the cached pass")
    for name, c in cache.nets.items():
        net = getattr(block, name)
        if c.owner != id(net) or c.version != net.version:
            raise StaleCacheError(f"coupling cache for {name} is stale")
    gl = None
    if upstream_logdet is not None:
        gl = np.broadcast_to(np.asarray(upstream_logdet, dtype=np.float64), (n,))[:, None]
    k, clamp = block.split_point, block.s_clamp
    u1, u2, a1, a2 = cache.u1, cache.u2, cache.a1, cache.a2
    grads = GradStore()

    if cache.direction == "forward":
        gv1 = g[:, :k].copy()
        gv2 = g[:, k:]
        e1 = np.exp(a1)
        gu2 = gv2 * e1
        ga1 = gv2 * u2 * e1
        if gl is not None:
            ga1 = ga1 + gl
        gv1 += _subnet_backward(block, cache, "s1", ga1 * _soft_clamp_grad(a1, clamp), grads)
        gv1 += _subnet_backward(block, cache, "t1", gv2, grads)
        e2 = np.exp(a2)
        gu1 = gv1 * e2
        ga2 = gv1 * u1 * e2
        if gl is not None:
            ga2 = ga2 + gl
        gu2 = gu2 + _subnet_backward(block, cache, "s2", ga2 * _soft_clamp_grad(a2, clamp), grads)
        gu2 = gu2 + _subnet_backward(block, cache, "t2", gv1, grads)
        gin = np.concatenate([gu1, gu2], axis=1)
    elif cache.direction == "inverse":
        gu1 = g[:, :k]
        gu2 = g[:, k:].copy()
        e2 = np.exp(-a2)
        gv1 = gu1 * e2
        ga2 = -gu1 * u1
        if gl is not None:
            ga2 = ga2 - gl
        gu2 += _subnet_backward(block, cache, "s2", ga2 * _soft_clamp_grad(a2, clamp), grads)
        gu2 += _subnet_backward(block, cache, "t2", -gu1 * e2, grads)
        e1 = np.exp(-a1)
        gv2 = gu2 * e1
        ga1 = -gu2 * u2
        if gl is not None:
            ga1 = ga1 - gl
        gv1 = gv1 + _subnet_backward(block, cache, "s1", ga1 * _soft_clamp_grad(a1, clamp), grads)
        gv1 = gv1 + _subnet_backward(block, cache, "t1", -gu2 * e1, grads)
        gin = np.concatenate([gv1, gv2], axis=1)
    else:
        raise StaleCacheError(f"unknown cache direction {cache.direction!r}")
    return grads, (gin[0] if squeeze else gin)


class PermutationLayer:
    """Fixed shuffle: ``permute(v)[i] == v[forward_index[i]]``."""

    def __init__(self, forward_index):
        idx = np.asarray(forward_index, dtype=np.int64)
        if idx.ndim != 1 or not np.array_equal(np.sort(idx), np.arange(idx.size)):
            raise ShapeError("forward_index must be a permutation of 0..width-1")
        self.forward_index = idx
        self.inverse_index = np.argsort(idx)
        self.width = idx.size

    @classmethod
    def random(cls, width, seed):
        return cls(np.random.default_rng(seed_sequence(seed)).permutation(width))


def permute(layer, v):
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != layer.width:
        raise ShapeError(f"permute: expected length {layer.width}, got {v.shape[-1]}")
    return v[..., layer.forward_index]


def inverse_permute(layer, v):
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != layer.width:
        raise ShapeError(f"inverse_permute: expected length {layer.width}, got {v.shape[-1]}")
    return v[..., layer.inverse_index]


class InnModel:
    """Coupling blocks interleaved with permutations, plus the I/O layout."""

    def __init__(self, blocks, permutations, layout):
        if not blocks:
            raise ShapeError("an INN needs at least one coupling block")
        if len(permutations) != len(blocks) - 1:
            raise ShapeError("need exactly one permutation between consecutive blocks")
        width = layout.width
        for b in blocks:
            if b.width != width:
                raise ShapeError(f"block width {b.width} != layout width {width}")
        for p in permutations:
            if p.width != width:
                raise ShapeError(f"permutation width {p.width} != layout width {width}")
        self.blocks = list(blocks)
        self.permutations = list(permutations)
        self.layout = layout
        self.version = 0

    @classmethod
    def create(cls, layout, n_blocks=3, hidden=128, depth=3, seed=0, s_clamp=DEFAULT_S_CLAMP):
        seeds = seed_sequence(seed).spawn(2 * n_blocks)
        blocks = [
            CouplingBlock.create(layout.width, hidden, depth, seeds[i], s_clamp)
            for i in range(n_blocks)
        ]
        perms = [
            PermutationLayer.random(layout.width, seeds[n_blocks + i]) for i in range(n_blocks - 1)
        ]
        return cls(blocks, perms, layout)

    @property
    def width(self):
        return self.layout.width

    def parameters(self):
        return {
            f"block{i}.{k}": v for i, b in enumerate(self.blocks) for k, v in b.parameters().items()
        }

    def touch(self):
        self.version += 1
        for b in self.blocks:
            b.touch()


InnCache = namedtuple("InnCache", "direction owner version blocks n")


def _rows(a, dim, what):
    a = np.asarray(a, dtype=np.float64)
    squeeze = a.ndim == 1
    if squeeze:
        a = a[None, :]
    if a.ndim != 2 or a.shape[1] != dim:
        raise ShapeError(f"{what}: expected length {dim}, got shape {a.shape}")
    return a, squeeze


def _pad(a, width):
    if a.shape[1] == width:
        return np.ascontiguousarray(a)
    out = np.zeros((a.shape[0], width))
    out[:, : a.shape[1]] = a
    return out


def inn_forward_full(model, x):
    """Forward pass returning the full-width output. ``x`` must be 2-d."""
    h = _pad(x, model.width)
    caches, logdet = [], np.zeros(h.shape[0])
    last = len(model.blocks) - 1
    for i, block in enumerate(model.blocks):
        h, ld, c = _coupling_forward_batch(block, h)
        logdet += ld
        caches.append(c)
        if i < last:
            h = h[:, model.permutations[i].forward_index]
    return h, logdet, InnCache("forward", id(model), model.version, caches, h.shape[0])


def inn_inverse_full(model, out):
    """Inverse pass from a full-width output vector. ``out`` must be 2-d."""
    h = np.ascontiguousarray(out, dtype=np.float64)
    caches = [None] * len(model.blocks)
    logdet = np.zeros(h.shape[0])
    last = len(model.blocks) - 1
    for i in range(last, -1, -1):
        if i < last:
            h = h[:, model.permutations[i].inverse_index]
        h, ld, caches[i] = _coupling_inverse_batch(model.blocks[i], h)
        logdet += ld
    return h, logdet, InnCache("inverse", id(model), model.version, caches, h.shape[0])


def inn_forward(model, x):
    """``x -> (y, z_logits, logdet, cache)``; batched or single vector."""
    lay = model.layout
    xb, squeeze = _rows(x, lay.x_dim, "inn_forward x")
    out, logdet, cache = inn_forward_full(model, xb)
    y = out[:, : lay.y_dim]
    z = out[:, lay.y_dim : lay.y_dim + lay.z_len]
    if squeeze:
        return y[0], z[0], float(logdet[0]), cache
    return y, z, logdet, cache


def join_output(model, y, z):
    """Concatenate ``[y; z]`` and zero-pad to the network width (2-d)."""
    lay = model.layout
    yb, _ = _rows(y, lay.y_dim, "y")
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 1:
        z = np.broadcast_to(z, (yb.shape[0], z.size)) if z.size else np.zeros((yb.shape[0], 0))
    if z.shape != (yb.shape[0], lay.z_len):
        raise ShapeError(f"z: expected length {lay.z_len}, got shape {z.shape}")
    return _pad(np.concatenate([yb, z], axis=1), model.width)


def inn_inverse(model, y, z, return_full=False, return_cache=False):
    """``(y, z) -> x``: join, pad, run every block backwards, keep ``x_dim`` entries."""
    y_arr = np.asarray(y, dtype=np.float64)
    squeeze = y_arr.ndim == 1
    full, _, cache = inn_inverse_full(model, join_output(model, y, z))
    x = full[:, : model.layout.x_dim]
    if squeeze:
        x, full = x[0], full[0]
    result = [x]
    if return_full:
        result.append(full)
    if return_cache:
        result.append(cache)
    return result[0] if len(result) == 1 else tuple(result)


def inn_backward(
    model,
    cache,
    upstream_y=None,
    upstream_z=None,
    direction=None,
    upstream_x=None,
    upstream_logdet=None,
):
    """Backpropagate through a cached forward or inverse pass.

    Forward caches take ``upstream_y``/``upstream_z`` and return
    ``(grads, grad_x)``; inverse caches take ``upstream_x`` and return
    ``(grads, (grad_y, grad_z))``. ``direction``, if given, must match.
    """
    if direction is not None and direction != cache.direction:
        raise StaleCacheError(f"cache is from a {cache.direction} pass, not {direction}")
    if cache.owner != id(model) or cache.version != model.version:
        raise StaleCacheError("INN cache does not match the current parameters")
    lay, n, width = model.layout, cache.n, model.width
    last = len(model.blocks) - 1
    grads = GradStore()
    if cache.direction == "forward":
        g = np.zeros((n, width))
        if upstream_y is not None:
            g[:, : lay.y_dim] = np.asarray(upstream_y).reshape(n, lay.y_dim)
        if upstream_z is not None and lay.z_len:
            g[:, lay.y_dim : lay.y_dim + lay.z_len] = np.asarray(upstream_z).reshape(n, lay.z_len)
        for i in range(last, -1, -1):
            if i < last:
                g = g[:, model.permutations[i].inverse_index]
            bg, g = coupling_backward(model.blocks[i], cache.blocks[i], g, upstream_logdet)
            grads.accumulate(bg, prefix=f"block{i}.")
        return grads, g[:, : lay.x_dim]
    g = np.zeros((n, width))
    if upstream_x is not None:
        g[:, : lay.x_dim] = np.asarray(upstream_x).reshape(n, lay.x_dim)
    for i in range(last + 1):
        bg, g = coupling_backward(model.blocks[i], cache.blocks[i], g, upstream_logdet)
        grads.accumulate(bg, prefix=f"block{i}.")
        if i < last:
            g = g[:, model.permutations[i].forward_index]
    return grads, (g[:, : lay.y_dim], g[:, lay.y_dim : lay.y_dim + lay.z_len])


def inn_logdet(model, x):
    """``log|det df/dx|`` of the full-width map, summed over coupling blocks."""
    return inn_forward(model, x)[2]


def model_state(model):
    """Split a model into JSON-able metadata and named float64 arrays."""
    b0 = model.blocks[0]
    meta = {
        "kind": "inn",
        "layout": asdict(model.layout),
        "n_blocks": len(model.blocks),
        "split_points": [b.split_point for b in model.blocks],
        "s_clamp": [b.s_clamp for b in model.blocks],
        "depth": len(b0.s1.weights),
        "permutations": [p.forward_index.tolist() for p in model.permutations],
    }
    return meta, dict(model.parameters())


def model_from_state(meta, arrays):
    layout = IoLayout(**meta["layout"])
    blocks = []
    for i in range(meta["n_blocks"]):
        nets = {}
        for name in _SUBNETS:
            prefix = f"block{i}.{name}."
            weights = [arrays[f"{prefix}W{j}"] for j in range(meta["depth"])]
            biases = [arrays[f"{prefix}b{j}"] for j in range(meta["depth"])]
            nets[name] = Mlp(weights, biases)
        blocks.append(
            CouplingBlock(
                split_point=meta["split_points"][i],
                width=layout.width,
                s_clamp=meta["s_clamp"][i],
                **nets,
            )
        )
    perms = [PermutationLayer(p) for p in meta["permutations"]]
    return InnModel(blocks, perms, layout)
