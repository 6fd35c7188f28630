"""Bi-directional INN training, the feed-forward baseline, schedules, checkpoints."""

import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint
from .embedding import compose_word_vector
from .errors import CheckpointError, TrainingError
from .flow import (
    INFLECTION,
    LEMMATIZATION,
    InnModel,
    IoLayout,
    inn_backward,
    inn_forward,
    inn_inverse,
    model_from_state,
    model_state,
)
from .latent import LatentSpec, gumbel_noise, gumbel_softmax, gumbel_softmax_backward, kl_uniform_from_logits
from .loss import LossWeights, bce_tag_loss_from_logits, cosine_loss
from .morphdata import build_tag_index, tag_vector
from .numerics import AdamState, GradStore, Mlp, adam_step, clip_gradients, mlp_backward, mlp_forward

log = logging.getLogger(__name__)

WITHIN = "within"
ACROSS = "across"


@dataclass
class TrainConfig:
    """All training hyperparameters; flat so it round-trips through ``key = value`` files."""

    epochs: int = 30
    learning_rate: float = 0.001
    plateau_factor: float = 0.3
    plateau_patience: int = 5
    early_stop_patience: int = 10
    clip_norm: float = 5.0
    alpha_x: float = 20.0
    alpha_t: float = 10.0
    alpha_y: float = 80.0
    alpha_z: float = 1.0
    latent_d: int = 2
    latent_cat: int = 3
    tau: float = 1.0
    tau_final: float = 0.0
    blocks: int = 3
    hidden: int = 128
    depth: int = 3
    s_clamp: float = 5.0
    seed: int = 0
    batch_size: int = 1
    accumulation: int = 32
    use_lx: bool = True
    use_lt: bool = True
    use_lz: bool = True
    z_grad: bool = True
    alternate: str = WITHIN
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        positive = ("learning_rate", "clip_norm", "tau", "blocks", "hidden", "depth", "batch_size", "accumulation")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.epochs < 0 or self.plateau_patience < 1 or self.early_stop_patience < 1:
            raise ValueError("epochs must be >= 0 and patience values >= 1")
        if not 0 < self.plateau_factor < 1:
            raise ValueError("plateau_factor must be in (0, 1)")
        if self.latent_d < 0 or (self.latent_d and self.latent_cat < 2):
            raise ValueError("latent_d must be 0 (no latent) or paired with latent_cat >= 2")
        if self.alternate not in (WITHIN, ACROSS):
            raise ValueError(f"alternate must be {WITHIN!r} or {ACROSS!r}")
        LossWeights(self.alpha_x, self.alpha_t, self.alpha_y, self.alpha_z)

    @property
    def weights(self):
        return LossWeights(self.alpha_x, self.alpha_t, self.alpha_y, self.alpha_z)

    @property
    def latent(self):
        return LatentSpec(self.latent_d, self.latent_cat, self.tau) if self.latent_d else None

    @property
    def group_size(self):
        return self.batch_size * self.accumulation

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_text(self):
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {str(v).lower() if isinstance(v, bool) else v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        return cls(**parse_config_values(text))

    def fingerprint(self):
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]


def _coerce(name, raw):
    kinds = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    if name not in kinds:
        raise ValueError(f"unknown config key {name!r}")
    kind = kinds[name]
    raw = raw.strip()
    if kind in (bool, "bool"):
        low = raw.lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"{name}: expected a boolean, got {raw!r}")
        return low in ("true", "1", "yes")
    if kind in (int, "int"):
        return int(raw)
    if kind in (float, "float"):
        return float(raw)
    return raw


def parse_config_values(text):
    """``key = value`` lines (``#`` comments allowed) -> dict of typed values."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value'")
        key, raw = line.split("=", 1)
        values[key.strip()] = _coerce(key.strip(), raw)
    return values


def temperature_at(cfg, epoch):
    """Gumbel-Softmax temperature: constant, or linear from ``tau`` to ``tau_final``."""
    if cfg.tau_final <= 0 or cfg.epochs <= 1:
        return cfg.tau
    frac = min(epoch / (cfg.epochs - 1), 1.0)
    return cfg.tau + frac * (cfg.tau_final - cfg.tau)


class PlateauScheduler:
    """Multiply the learning rate by ``factor`` after ``patience`` epochs without a new best."""

    def __init__(self, lr, patience=5, factor=0.3):
        if patience < 1 or not 0 < factor < 1:
            raise ValueError("need patience >= 1 and 0 < factor < 1")
        self.lr = lr
        self.patience = patience
        self.factor = factor
        self.best = None
        self.bad_epochs = 0

    def step(self, metric):
        if self.best is None or metric > self.best:
            self.best = metric
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.lr *= self.factor
                self.bad_epochs = 0
        return self.lr

    def state(self):
        return {"lr": self.lr, "best": self.best, "bad_epochs": self.bad_epochs}

    def load(self, state):
        self.lr, self.best, self.bad_epochs = state["lr"], state["best"], state["bad_epochs"]


def plateau_schedule(history, patience, factor, lr):
    """Learning rate after replaying a monitored dev-metric sequence (higher is better)."""
    sched = PlateauScheduler(lr, patience, factor)
    for metric in history:
        sched.step(metric)
    return sched.lr


@dataclass
class TrainHistory:
    epochs: list = field(default_factory=list)

    def __len__(self):
        return len(self.epochs)

    def append(self, record):
        self.epochs.append(record)

    def to_lines(self):
        return [json.dumps(r, sort_keys=True) for r in self.epochs]


@dataclass
class EncodedData:
    x: np.ndarray
    y: np.ndarray
    records: list


def encode_records(records, table, index, task):
    """Stack the network's ``x`` and ``y`` vectors for each record."""
    xs, ys = [], []
    for rec in records:
        lemma = compose_word_vector(rec.lemma, table)
        surface = compose_word_vector(rec.surface, table)
        if task == INFLECTION:
            xs.append(np.concatenate([lemma, tag_vector(rec.tags, index)]))
            ys.append(surface)
        else:
            xs.append(surface)
            ys.append(lemma)
    dim_x = table.dim + (len(index) if task == INFLECTION else 0)
    x = np.array(xs, dtype=np.float64).reshape(len(records), dim_x)
    y = np.array(ys, dtype=np.float64).reshape(len(records), table.dim)
    return EncodedData(x, y, list(records))


def build_model(task, word_dim, tag_count, cfg):
    layout = IoLayout.for_task(task, word_dim, tag_count, cfg.latent_d, cfg.latent_cat)
    return InnModel.create(layout, cfg.blocks, cfg.hidden, cfg.depth, cfg.seed, cfg.s_clamp)


def compute_gradients(model, x, y, cfg, noise=None, tau=None, parts=("forward", "inverse")):
    """Gradients of the weighted bi-directional loss on one group of records.

    ``parts`` selects the forward-pass terms (``L_y``, ``L_z``) and/or the
    inverse-pass terms (``L_x``; ``L_t`` for inflection). Inverse terms use the
    gold ``y`` and a Gumbel-Softmax ``z`` drawn from the forward z-logits with
    ``noise``; with ``cfg.z_grad`` their gradient also flows back through ``z``.
    Losses are averaged over rows. Returns ``(GradStore, losses)``.
    """
    lay = model.layout
    w = cfg.weights
    spec = LatentSpec(lay.z_d, lay.z_cat, cfg.tau if tau is None else tau) if lay.z_d else None
    n = x.shape[0]
    losses = {}
    grads = GradStore()

    y_pred, z_logits, _, fcache = inn_forward(model, x)
    gy = np.zeros_like(y_pred)
    gz = np.zeros_like(z_logits)
    total = 0.0
    if "forward" in parts:
        ly, gly = cosine_loss(y_pred, y)
        losses["L_y"] = float(ly.mean())
        total += w.alpha_y * losses["L_y"]
        gy += (w.alpha_y / n) * gly
        if spec is not None and cfg.use_lz:
            lz, glz = kl_uniform_from_logits(z_logits, spec)
            losses["L_z"] = float(lz.mean())
            total += w.alpha_z * losses["L_z"]
            gz += (w.alpha_z / n) * glz

    if "inverse" in parts and cfg.use_lx:
        if spec is not None:
            if noise is None:
                raise ValueError("a latent model needs Gumbel noise for the inverse pass")
            z = gumbel_softmax(z_logits, noise, spec)
        else:
            z = np.zeros((n, 0))
        x_pred, icache = inn_inverse(model, y, z, return_cache=True)
        gx = np.zeros_like(x_pred)
        d = lay.word_dim
        if lay.task == INFLECTION:
            ll, gll = cosine_loss(x_pred[:, :d], x[:, :d])
            losses["L_lemma"] = float(ll.mean())
            total += w.alpha_x * losses["L_lemma"]
            gx[:, :d] = (w.alpha_x / n) * gll
            if cfg.use_lt and lay.tag_count:
                lt, glt = bce_tag_loss_from_logits(x_pred[:, d:], x[:, d:])
                losses["L_t"] = float(lt.mean())
                total += w.alpha_t * losses["L_t"]
                gx[:, d:] = (w.alpha_t / n) * glt
        else:
            lx, glx = cosine_loss(x_pred, x)
            losses["L_x"] = float(lx.mean())
            total += w.alpha_x * losses["L_x"]
            gx = (w.alpha_x / n) * glx
        ginv, (_, gz_in) = inn_backward(model, icache, direction="inverse", upstream_x=gx)
        grads.accumulate(ginv)
        if spec is not None and cfg.z_grad:
            gz += gumbel_softmax_backward(z, gz_in, spec)

    if np.any(gy) or np.any(gz):
        gfwd, _ = inn_backward(model, fcache, gy, gz, direction="forward")
        grads.accumulate(gfwd)
    losses["total"] = total
    return grads, losses


class BaselineModel:
    """Plain feed-forward regressor for the forward direction only."""

    def __init__(self, net, task, tag_count=0):
        self.net = net
        self.task = task
        self.tag_count = tag_count

    @classmethod
    def create(cls, task, word_dim, tag_count, cfg):
        in_dim = word_dim + tag_count if task == INFLECTION else word_dim
        return cls(Mlp.create(in_dim, word_dim, cfg.hidden, cfg.depth, cfg.seed), task, tag_count)

    def parameters(self):
        return self.net.parameters()

    def touch(self):
        self.net.touch()

    def predict_vectors(self, x):
        return mlp_forward(self.net, x)[0]


def _baseline_gradients(model, x, y, cfg):
    n = x.shape[0]
    y_pred, cache = mlp_forward(model.net, x)
    ly, gly = cosine_loss(y_pred, y)
    grads, _ = mlp_backward(model.net, cache, (cfg.alpha_y / n) * gly)
    return grads, {"L_y": float(ly.mean()), "total": cfg.alpha_y * float(ly.mean())}


def _snapshot(params):
    return {k: v.copy() for k, v in params.items()}


def _restore(model, snap):
    for k, v in model.parameters().items():
        v[...] = snap[k]
    model.touch()


class Trainer:
    """Epoch loop shared by both tasks and the baseline; resumable at epoch boundaries."""

    def __init__(self, model, train, cfg, dev=None, dev_metric=None, baseline=False):
        self.model = model
        self.train = train
        self.cfg = cfg
        self.dev = dev
        self.dev_metric = dev_metric
        self.baseline = baseline
        self.adam = AdamState(cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
        self.scheduler = PlateauScheduler(cfg.learning_rate, cfg.plateau_patience, cfg.plateau_factor)
        self.history = TrainHistory()
        self.epoch = 0
        self.step_count = 0
        self.best_metric = None
        self.best_epoch = -1
        self.best_params = None
        self.stopped = False

    def _gradients(self, x, y, rng, tau):
        if self.baseline:
            return _baseline_gradients(self.model, x, y, self.cfg)
        lay = self.model.layout
        noise = gumbel_noise((x.shape[0], lay.z_len), rng) if lay.z_len else None
        parts = ("forward", "inverse")
        if self.cfg.alternate == ACROSS:
            parts = ("forward",) if self.step_count % 2 == 0 else ("inverse",)
        return compute_gradients(self.model, x, y, self.cfg, noise, tau, parts)

    def run_epoch(self):
        cfg, epoch = self.cfg, self.epoch
        rng = np.random.default_rng([cfg.seed, epoch])
        tau = temperature_at(cfg, epoch)
        n = self.train.x.shape[0]
        order = rng.permutation(n)
        sums, counts, norms = {}, {}, []
        self.adam.learning_rate = self.scheduler.lr
        for step, start in enumerate(range(0, n, cfg.group_size)):
            idx = order[start : start + cfg.group_size]
            grads, losses = self._gradients(self.train.x[idx], self.train.y[idx], rng, tau)
            if not all(np.isfinite(v) for v in losses.values()):
                raise TrainingError(f"non-finite loss at epoch {epoch} step {step}: {losses}")
            norms.append(grads.global_norm())
            clip_gradients(grads, cfg.clip_norm)
            adam_step(self.model, grads, self.adam)
            self.step_count += 1
            for k, v in losses.items():
                sums[k] = sums.get(k, 0.0) + v * len(idx)
                counts[k] = counts.get(k, 0) + len(idx)
        record = {"epoch": epoch, "lr": self.scheduler.lr, "tau": tau}
        record.update({k: sums[k] / counts[k] for k in sorted(sums)})
        record["grad_norm"] = float(np.mean(norms)) if norms else 0.0
        if self.dev is not None and self.dev_metric is not None:
            metrics = self.dev_metric(self.model, self.dev)
            record.update({f"dev_{k}": v for k, v in metrics.items()})
            monitored = next(iter(metrics.values()))
            self.scheduler.step(monitored)
            if self.best_metric is None or monitored > self.best_metric:
                self.best_metric, self.best_epoch = monitored, epoch
                self.best_params = _snapshot(self.model.parameters())
            elif epoch - self.best_epoch >= cfg.early_stop_patience:
                self.stopped = True
        self.history.append(record)
        log.info("epoch %d %s", epoch, json.dumps(record, sort_keys=True))
        self.epoch += 1

    def run(self, until=None, checkpoint_path=None):
        until = self.cfg.epochs if until is None else min(until, self.cfg.epochs)
        while self.epoch < until and not self.stopped:
            self.run_epoch()
            if checkpoint_path is not None:
                self.save(checkpoint_path)
        return self

    def finish(self):
        """Restore the best-on-dev parameters, if any dev evaluation happened."""
        if self.best_params is not None:
            _restore(self.model, self.best_params)
        return self.model, self.history

    def save(self, path):
        meta, arrays = _model_meta(self.model)
        for k in self.adam.m:
            arrays[f"adam.m.{k}"] = self.adam.m[k]
            arrays[f"adam.v.{k}"] = self.adam.v[k]
        if self.best_params is not None:
            for k, v in self.best_params.items():
                arrays[f"best.{k}"] = v
        meta["trainer"] = {
            "config": dataclasses.asdict(self.cfg),
            "epoch": self.epoch,
            "step_count": self.step_count,
            "adam_step": self.adam.step,
            "adam_lr": self.adam.learning_rate,
            "scheduler": self.scheduler.state(),
            "best_metric": self.best_metric,
            "best_epoch": self.best_epoch,
            "stopped": self.stopped,
            "history": self.history.epochs,
        }
        checkpoint.write(path, meta, arrays)

    def load(self, path):
        meta, arrays = checkpoint.read(path)
        state = meta.get("trainer")
        if state is None:
            raise CheckpointError(f"{path} holds a model but no training state")
        loaded = _model_from_meta(meta, arrays)
        for k, v in self.model.parameters().items():
            if v.shape != loaded.parameters()[k].shape:
                raise CheckpointError(f"parameter {k} shape mismatch")
            v[...] = loaded.parameters()[k]
        self.model.touch()
        self.adam.m = {k[7:]: v for k, v in arrays.items() if k.startswith("adam.m.")}
        self.adam.v = {k[7:]: v for k, v in arrays.items() if k.startswith("adam.v.")}
        self.adam.step = state["adam_step"]
        self.adam.learning_rate = state["adam_lr"]
        self.scheduler.load(state["scheduler"])
        self.epoch = state["epoch"]
        self.step_count = state["step_count"]
        self.best_metric = state["best_metric"]
        self.best_epoch = state["best_epoch"]
        self.stopped = state["stopped"]
        best = {k[5:]: v for k, v in arrays.items() if k.startswith("best.")}
        self.best_params = best or None
        self.history = TrainHistory(list(state["history"]))
        return self


def _model_meta(model):
    if isinstance(model, BaselineModel):
        meta = {
            "kind": "baseline",
            "task": model.task,
            "tag_count": model.tag_count,
            "depth": len(model.net.weights),
        }
        return meta, {f"net.{k}": v for k, v in model.parameters().items()}
    return model_state(model)


def _model_from_meta(meta, arrays):
    kind = meta.get("kind")
    if kind == "inn":
        try:
            return model_from_state(meta, arrays)
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointError(f"inconsistent INN checkpoint: {exc}") from None
    if kind == "baseline":
        d = meta["depth"]
        net = Mlp([arrays[f"net.W{i}"] for i in range(d)], [arrays[f"net.b{i}"] for i in range(d)])
        return BaselineModel(net, meta["task"], meta["tag_count"])
    raise CheckpointError(f"unknown model kind {kind!r}")


def save_model(model, path, extra=None):
    """Write a model (INN or baseline) checkpoint; ``extra`` is JSON metadata."""
    meta, arrays = _model_meta(model)
    if extra:
        meta["extra"] = extra
    checkpoint.write(path, meta, arrays)


def load_model(path, with_meta=False):
    meta, arrays = checkpoint.read(path)
    model = _model_from_meta(meta, arrays)
    return (model, meta) if with_meta else model


def _dev_metric_for(task, table, index, baseline):
    from .evaluation import dev_exact_match

    def metric(model, dev):
        return dev_exact_match(model, dev, table, index, task)

    return metric


def _prepare(task, data, table, index, dev):
    if index is None:
        index = build_tag_index(data) if task == INFLECTION else build_tag_index([])
    train = encode_records(data, table, index, task)
    return train, index, (list(dev) if dev else None)


def _train(task, model, data, table, cfg, dev, index, baseline, checkpoint_path, resume_from):
    train, index, dev = _prepare(task, data, table, index, dev)
    trainer = Trainer(
        model,
        train,
        cfg,
        dev=dev,
        dev_metric=_dev_metric_for(task, table, index, baseline) if dev else None,
        baseline=baseline,
    )
    if resume_from is not None:
        trainer.load(resume_from)
    trainer.run(checkpoint_path=checkpoint_path)
    return trainer.finish()


def train_inflection(model, data, table, cfg, dev=None, index=None, checkpoint_path=None, resume_from=None):
    """Train an inflection INN: ``x = [lemma; tags]``, ``y = surface``.

    Each group runs the forward pass (``L_y``, ``L_z``), samples ``z``, runs
    the inverse pass on gold ``y`` (``L_lemma``, ``L_t``) and applies one
    clipped Adam update with the summed gradients. With ``dev`` records the
    dev surface exact match drives plateau decay and early stopping, and the
    best epoch's parameters are restored at the end.
    """
    if model.layout.task != INFLECTION:
        raise ValueError("model layout is not an inflection layout")
    return _train(INFLECTION, model, data, table, cfg, dev, index, False, checkpoint_path, resume_from)


def train_lemmatization(model, data, table, cfg, dev=None, checkpoint_path=None, resume_from=None):
    """Train a lemmatization INN: ``x = surface``, ``y = lemma``; ``L_x`` on the inverse pass."""
    if model.layout.task != LEMMATIZATION:
        raise ValueError("model layout is not a lemmatization layout")
    return _train(LEMMATIZATION, model, data, table, cfg, dev, None, False, checkpoint_path, resume_from)


def train_baseline(task, data, table, cfg, dev=None, index=None, checkpoint_path=None, resume_from=None):
    """Forward-only MLP with the same optimiser, schedule and stopping rule."""
    if task == INFLECTION and index is None:
        index = build_tag_index(data)
    tag_count = len(index) if task == INFLECTION else 0
    model = BaselineModel.create(task, table.dim, tag_count, cfg)
    return _train(task, model, data, table, cfg, dev, index, True, checkpoint_path, resume_from)
