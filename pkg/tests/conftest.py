import time

import numpy as np
import pytest

from innmorph import _kernels
from innmorph.flow import (
    CouplingBlock,
    InnModel,
    IoLayout,
    coupling_backward,
    coupling_forward,
    coupling_inverse,
    inn_backward,
    inn_forward,
    inn_forward_full,
    inn_inverse,
)
from innmorph.morphdata import ToyLangConfig, build_tag_index, generate_toy_language, split_dataset
from innmorph.numerics import Mlp, finite_difference_grad, max_relative_error
from innmorph.training import TrainConfig, build_model, train_inflection, train_lemmatization

BACKENDS = ["numpy"] + (["numba"] if _kernels.numba_impl is not None else [])


@pytest.fixture(params=BACKENDS)
def backend(request, monkeypatch):
    """Run the test once per kernel implementation."""
    impl = _kernels.numpy_impl if request.param == "numpy" else _kernels.numba_impl
    monkeypatch.setattr(_kernels, "_impl", impl)
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def const_mlp(in_dim, out_dim, value=0.0, hidden=4, depth=2):
    """An MLP whose output is the constant ``value`` for every input."""
    net = Mlp.zeros(in_dim, out_dim, hidden, depth)
    net.biases[-1][:] = value
    return net


def const_block(width, split, s1=0.0, s2=0.0, t1=0.0, t2=0.0, s_clamp=5.0):
    rest = width - split
    return CouplingBlock(
        s1=const_mlp(split, rest, s1),
        s2=const_mlp(rest, split, s2),
        t1=const_mlp(split, rest, t1),
        t2=const_mlp(rest, split, t2),
        split_point=split,
        width=width,
        s_clamp=s_clamp,
    )


def unclamped(s, clamp=5.0):
    """Raw subnetwork output whose soft-clamped value is exactly ``s``."""
    return clamp * np.arctanh(s / clamp)


def jitter(model, rng, scale=0.1, biases_only=True):
    """Add Gaussian noise to parameters so no path is trivially zero."""
    for name, p in model.parameters().items():
        if biases_only and ".b" not in name and not name.startswith("b"):
            continue
        p += scale * rng.standard_normal(p.shape)
    model.touch()
    return model


def small_model(layout, seed, hidden=4, depth=3, n_blocks=3, rng=None):
    model = InnModel.create(layout, n_blocks, hidden, depth, seed)
    if rng is not None:
        jitter(model, rng)
    return model


def square_layout(width):
    return IoLayout(width, width, task="lemmatization")


# Finite-difference oracles shared by the flow and acceptance tests.


def block_fd_error(block, u, r, direction, rl=0.0):
    """Max relative error of coupling_backward vs central differences (inputs and all parameters)."""

    def scalar(point):
        if direction == "forward":
            out, logdet, _ = coupling_forward(block, point)
            return float(r @ out + rl * logdet)
        return float(r @ coupling_inverse(block, point))

    if direction == "forward":
        _, _, cache = coupling_forward(block, u)
        grads, gin = coupling_backward(block, cache, r, rl if rl else None)
    else:
        _, cache = coupling_inverse(block, u, return_cache=True)
        grads, gin = coupling_backward(block, cache, r)
    worst = max_relative_error(gin, finite_difference_grad(scalar, u))
    for name, p in block.parameters().items():

        def f(v, p=p):
            old = p.copy()
            p[...] = v
            block.touch()
            out = scalar(u)
            p[...] = old
            block.touch()
            return out

        worst = max(worst, max_relative_error(grads[name], finite_difference_grad(f, p.copy())))
    return worst


def fd_jacobian_logdet(model, x):
    width = model.width

    def col(i):
        return lambda p: inn_forward_full(model, p[None, :])[0][0, i]

    jac = np.array([finite_difference_grad(col(i), x) for i in range(width)])
    return np.linalg.slogdet(jac)[1]


def inn_fd_error(model, x, ry, rz, rx_inv=None, offset=0.1):
    """Forward-pass (and optionally inverse-pass) gradient check over inputs and parameters."""
    lay = model.layout

    def fwd(point):
        y, z, _, _ = inn_forward(model, point)
        return float(ry @ y + rz @ z)

    y, z, _, cache = inn_forward(model, x)
    grads, gx = inn_backward(model, cache, ry, rz, direction="forward")
    worst = max_relative_error(gx, finite_difference_grad(fwd, x))
    scalars = [(fwd, grads)]
    if rx_inv is not None:
        y_in, z_in = y + offset, z - offset

        def inv(point=None):
            return float(rx_inv @ inn_inverse(model, y_in, z_in))

        _, icache = inn_inverse(model, y_in, z_in, return_cache=True)
        igrads, (gy, gz) = inn_backward(model, icache, direction="inverse", upstream_x=rx_inv)
        num_y = finite_difference_grad(lambda p: float(rx_inv @ inn_inverse(model, p, z_in)), y_in)
        worst = max(worst, max_relative_error(gy, num_y))
        if lay.z_len:
            num_z = finite_difference_grad(lambda p: float(rx_inv @ inn_inverse(model, y_in, p)), z_in)
            worst = max(worst, max_relative_error(gz, num_z))
        scalars.append((lambda _x: inv(), igrads))
    params = model.parameters()
    for name, p in params.items():
        for func, g in scalars:

            def f(v, p=p, func=func):
                old = p.copy()
                p[...] = v
                model.touch()
                out = func(x)
                p[...] = old
                model.touch()
                return out

            worst = max(worst, max_relative_error(g[name], finite_difference_grad(f, p.copy())))
    return worst


# Trained toy models are shared across test modules; each is trained once per session.

TOY = ToyLangConfig()  # 200 lemmas, 3 slots, 2 tags per slot, dim 100


@pytest.fixture(scope="session")
def toy():
    records, table = generate_toy_language(TOY)
    train, dev, test = split_dataset(records, (0.8, 0.1, 0.1), seed=0)
    index = build_tag_index(train)
    return {"records": records, "table": table, "train": train, "dev": dev, "test": test, "index": index}


class _Trained:
    def __init__(self, toy):
        self.toy = toy
        self.cache = {}
        self.elapsed = {}

    def inflection(self, **changes):
        key = ("inflection",) + tuple(sorted(changes.items()))
        if key not in self.cache:
            cfg = TrainConfig().replace(**changes)
            t = self.toy
            model = build_model("inflection", t["table"].dim, len(t["index"]), cfg)
            start = time.perf_counter()
            self.cache[key] = train_inflection(model, t["train"], t["table"], cfg, dev=t["dev"], index=t["index"])
            self.elapsed[key] = time.perf_counter() - start
        return self.cache[key]

    def lemmatization(self, **changes):
        key = ("lemmatization",) + tuple(sorted(changes.items()))
        if key not in self.cache:
            cfg = TrainConfig().replace(**changes)
            t = self.toy
            model = build_model("lemmatization", t["table"].dim, 0, cfg)
            start = time.perf_counter()
            self.cache[key] = train_lemmatization(model, t["train"], t["table"], cfg, dev=t["dev"])
            self.elapsed[key] = time.perf_counter() - start
        return self.cache[key]


    def seconds(self, task, **changes):
        """Wall time of the cached training run."""
        return self.elapsed[(task,) + tuple(sorted(changes.items()))]


@pytest.fixture(scope="session")
def trained(toy):
    return _Trained(toy)


def pytest_configure(config):
    config._criteria = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    rows = getattr(config, "_criteria", [])
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for num, ok, text in sorted(rows):
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {text}")


@pytest.fixture
def criterion(request):
    """``criterion(n, ok, text)`` records a PASS/FAIL line and prints it."""

    def record(num, ok, text):
        request.config._criteria.append((num, bool(ok), text))
        print(f"criterion {num}: {'PASS' if ok else 'FAIL'}  {text}")
        return ok

    return record
