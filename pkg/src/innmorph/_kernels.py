"""Hot inner loops, with a numba path and a pure-numpy path.

The numba path is used when numba imports cleanly and ``INNMORPH_NO_NUMBA``
is unset (or ``0``). Both paths are always importable as ``numpy_impl`` and
``numba_impl`` (the latter is ``None`` without numba) so tests and the
benchmark can compare them directly.
"""

import os
import types

import numpy as np

__all__ = [
    "BACKEND",
    "couple",
    "uncouple",
    "block_softmax",
    "screen_scores",
    "numpy_impl",
    "numba_impl",
]


def _np_squash(raw, clamp):
    if clamp > 0.0:
        return clamp * np.tanh(raw / clamp)
    return raw.copy()


def _np_couple(u, raw_s, t, clamp):
    s = _np_squash(raw_s, clamp)
    return u * np.exp(s) + t, s


def _np_uncouple(v, raw_s, t, clamp):
    s = _np_squash(raw_s, clamp)
    return (v - t) * np.exp(-s), s


def _np_block_softmax(logits, cat, tau):
    n, width = logits.shape
    a = logits.reshape(n, width // cat, cat) / tau
    a = a - a.max(axis=2, keepdims=True)
    e = np.exp(a)
    return (e / e.sum(axis=2, keepdims=True)).reshape(n, width)


def _np_screen_scores(unit_rows, unit_query):
    return unit_rows @ unit_query


numpy_impl = types.SimpleNamespace(
    couple=_np_couple,
    uncouple=_np_uncouple,
    block_softmax=_np_block_softmax,
    screen_scores=_np_screen_scores,
)


def _build_numba():
    try:
        from numba import njit
    except ImportError:  # pragma: no cover - numba is a declared dependency
        return None

    opts = dict(cache=True, nogil=True, fastmath=False)

    @njit(**opts)
    def couple(u, raw_s, t, clamp):
        n, m = u.shape
        v = np.empty((n, m))
        s = np.empty((n, m))
        for i in range(n):
            for j in range(m):
                r = raw_s[i, j]
                if clamp > 0.0:
                    r = clamp * np.tanh(r / clamp)
                s[i, j] = r
                v[i, j] = u[i, j] * np.exp(r) + t[i, j]
        return v, s

    @njit(**opts)
    def uncouple(v, raw_s, t, clamp):
        n, m = v.shape
        u = np.empty((n, m))
        s = np.empty((n, m))
        for i in range(n):
            for j in range(m):
                r = raw_s[i, j]
                if clamp > 0.0:
                    r = clamp * np.tanh(r / clamp)
                s[i, j] = r
                u[i, j] = (v[i, j] - t[i, j]) * np.exp(-r)
        return u, s

    @njit(**opts)
    def block_softmax(logits, cat, tau):
        n, width = logits.shape
        out = np.empty((n, width))
        for i in range(n):
            for b in range(0, width, cat):
                top = logits[i, b] / tau
                for k in range(1, cat):
                    a = logits[i, b + k] / tau
                    if a > top:
                        top = a
                total = 0.0
                for k in range(cat):
                    e = np.exp(logits[i, b + k] / tau - top)
                    out[i, b + k] = e
                    total += e
                for k in range(cat):
                    out[i, b + k] /= total
        return out

    @njit(**opts)
    def screen_scores(unit_rows, unit_query):
        n, dim = unit_rows.shape
        out = np.empty(n)
        for i in range(n):
            acc = 0.0
            for j in range(dim):
                acc += unit_rows[i, j] * unit_query[j]
            out[i] = acc
        return out

    return types.SimpleNamespace(
        couple=couple,
        uncouple=uncouple,
        block_softmax=block_softmax,
        screen_scores=screen_scores,
    )


def _numba_disabled():
    return os.environ.get("INNMORPH_NO_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")


numba_impl = _build_numba()

if numba_impl is not None and not _numba_disabled():
    BACKEND = "numba"
    _impl = numba_impl
else:
    BACKEND = "numpy"
    _impl = numpy_impl


def couple(u, raw_s, t, clamp):
    """Return ``(u * exp(s) + t, s)`` with ``s`` the soft-clamped scale."""
    return _impl.couple(u, raw_s, t, float(clamp))


def uncouple(v, raw_s, t, clamp):
    """Return ``((v - t) * exp(-s), s)``; exact inverse of :func:`couple`."""
    return _impl.uncouple(v, raw_s, t, float(clamp))


def block_softmax(logits, cat, tau=1.0):
    """Softmax over consecutive groups of ``cat`` columns of a 2-d array."""
    return _impl.block_softmax(logits, int(cat), float(tau))


def screen_scores(unit_rows, unit_query):
    """Approximate cosine scores used to shortlist nearest-neighbour candidates."""
    return _impl.screen_scores(unit_rows, unit_query)
