import os
import subprocess
import sys

import numpy as np
import pytest

from innmorph import _kernels

needs_numba = pytest.mark.skipif(_kernels.numba_impl is None, reason="numba not importable")


def _inputs(rng, n=7, m=5):
    return rng.standard_normal((n, m)), rng.normal(0, 4, (n, m)), rng.standard_normal((n, m))


@needs_numba
@pytest.mark.parametrize("clamp", [5.0, 0.0])
def test_couple_paths_agree(rng, clamp):
    u, raw, t = _inputs(rng)
    for name in ("couple", "uncouple"):
        a = getattr(_kernels.numpy_impl, name)(u, raw, t, clamp)
        b = getattr(_kernels.numba_impl, name)(u, raw, t, clamp)
        for x, y in zip(a, b):
            np.testing.assert_allclose(x, y, rtol=1e-14, atol=1e-14)


@needs_numba
def test_block_softmax_paths_agree(rng):
    logits = rng.normal(0, 10, (6, 12))
    for cat in (2, 3, 4):
        for tau in (0.05, 1.0, 50.0):
            a = _kernels.numpy_impl.block_softmax(logits, cat, tau)
            b = _kernels.numba_impl.block_softmax(logits, cat, tau)
            np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-15)


@needs_numba
def test_screen_scores_paths_agree(rng):
    rows = rng.standard_normal((300, 9))
    q = rng.standard_normal(9)
    np.testing.assert_allclose(
        _kernels.numpy_impl.screen_scores(rows, q), _kernels.numba_impl.screen_scores(rows, q), rtol=1e-12, atol=1e-13
    )


def test_uncouple_inverts_couple(backend, rng):
    u, raw, t = _inputs(rng)
    v, s = _kernels.couple(u, raw, t, 5.0)
    assert np.all(np.abs(s) <= 5.0)
    back, s2 = _kernels.uncouple(v, raw, t, 5.0)
    np.testing.assert_allclose(back, u, atol=1e-12)
    np.testing.assert_array_equal(s, s2)


def test_kernels_accept_non_contiguous_views(backend, rng):
    big = rng.standard_normal((6, 10))
    u, raw, t = big[:, :5], big[:, 5:], big[:, ::2]
    v, _ = _kernels.couple(u, raw, t, 5.0)
    np.testing.assert_allclose(v, u * np.exp(5 * np.tanh(raw / 5)) + t)


def _backend_in_subprocess(flag):
    env = dict(os.environ, INNMORPH_NO_NUMBA=flag)
    out = subprocess.run(
        [sys.executable, "-c", "import innmorph; print(innmorph.BACKEND)"],
        env=env,
        capture_output=True,
        text=True,
        check=True,
    )
    return out.stdout.strip()


def test_env_flag_selects_numpy_fallback():
    assert _backend_in_subprocess("1") == "numpy"
    expected = "numba" if _kernels.numba_impl is not None else "numpy"
    assert _backend_in_subprocess("0") == expected
