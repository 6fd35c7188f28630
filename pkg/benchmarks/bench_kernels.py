"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 50] [--epoch]

Kernel timings call both implementations directly in one process. ``--epoch``
also times one training epoch per backend in a subprocess, switching with
``INNMORPH_NO_NUMBA``.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from innmorph import _kernels

EPOCH_SNIPPET = """
import time
from innmorph import BACKEND
from innmorph.morphdata import ToyLangConfig, generate_toy_language
from innmorph.training import TrainConfig, build_model, train_inflection
from innmorph.morphdata import build_tag_index
records, table = generate_toy_language(ToyLangConfig(lemma_count=60))
index = build_tag_index(records)
cfg = TrainConfig(epochs=1)
model = build_model("inflection", table.dim, len(index), cfg)
t0 = time.perf_counter()
train_inflection(model, records, table, cfg, index=index)
print(BACKEND, time.perf_counter() - t0)
"""


def _cases(rng):
    n, half = 32, 53
    u = rng.standard_normal((n, half))
    raw = rng.standard_normal((n, half))
    t = rng.standard_normal((n, half))
    logits = rng.standard_normal((n, 6))
    rows = rng.standard_normal((5000, 100))
    rows /= np.linalg.norm(rows, axis=1, keepdims=True)
    q = rows[17].copy()
    return {
        "couple (32x53)": lambda impl: impl.couple(u, raw, t, 5.0),
        "uncouple (32x53)": lambda impl: impl.uncouple(u, raw, t, 5.0),
        "block_softmax (32x6, cat=3)": lambda impl: impl.block_softmax(logits, 3, 1.0),
        "screen_scores (5000x100)": lambda impl: impl.screen_scores(rows, q),
    }


def bench_kernels(repeat):
    if _kernels.numba_impl is None:
        print("numba is not importable; only the numpy path exists")
        return
    cases = _cases(np.random.default_rng(0))
    print(f"{'kernel':30s} {'numpy us':>10s} {'numba us':>10s} {'speedup':>8s}")
    for name, call in cases.items():
        call(_kernels.numba_impl)  # compile outside the timed region
        t_np = min(timeit.repeat(lambda: call(_kernels.numpy_impl), number=repeat, repeat=5)) / repeat
        t_nb = min(timeit.repeat(lambda: call(_kernels.numba_impl), number=repeat, repeat=5)) / repeat
        print(f"{name:30s} {t_np * 1e6:10.1f} {t_nb * 1e6:10.1f} {t_np / t_nb:8.2f}")


def bench_epoch():
    for flag in ("1", "0"):
        env = dict(os.environ, INNMORPH_NO_NUMBA=flag)
        out = subprocess.run(
            [sys.executable, "-c", EPOCH_SNIPPET], env=env, capture_output=True, text=True, check=True
        )
        backend, seconds = out.stdout.split()
        print(f"one epoch, {backend:6s} backend: {float(seconds):.2f} s")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--epoch", action="store_true", help="also time a training epoch per backend")
    args = ap.parse_args()
    bench_kernels(args.repeat)
    if args.epoch:
        bench_epoch()


if __name__ == "__main__":
    main()
