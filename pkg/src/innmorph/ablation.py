"""Grid of training runs reported as one L(EM%) / Tag(F1%) / S(EM%) table."""

import configparser
import dataclasses
import logging
from dataclasses import dataclass

from .errors import InnMorphError
from .evaluation import EvalReport, evaluate
from .flow import INFLECTION, LEMMATIZATION, TASKS
from .morphdata import build_tag_index
from .training import (
    TrainConfig,
    build_model,
    parse_config_values,
    train_baseline,
    train_inflection,
    train_lemmatization,
)

log = logging.getLogger(__name__)

INN = "inn"
BASELINE = "baseline"

DEFAULT_GRID = """\
# One section per run. Keys: task, model (inn|baseline), and any TrainConfig key.
[DEFAULT]
epochs = 30

[Lem baseline]
task = lemmatization
model = baseline

[Lem INN (L_y+L_x)]
task = lemmatization
latent_d = 0

[Lem INN (+L_z, d=2, cat=3)]
task = lemmatization
latent_d = 2
latent_cat = 3

[Lem INN (+L_z, d=6, cat=4)]
task = lemmatization
latent_d = 6
latent_cat = 4

[Inf baseline]
task = inflection
model = baseline

[Inf INN (L_y)]
task = inflection
use_lx = false
use_lt = false
use_lz = false

[Inf INN (L_y+L_x)]
task = inflection
use_lt = false
use_lz = false

[Inf INN (L_y+L_x+L_t)]
task = inflection
use_lz = false

[Inf INN (L_y+L_x+L_t+L_z)]
task = inflection
"""


@dataclass
class AblationCell:
    name: str
    task: str
    model: str
    config: TrainConfig


def parse_grid(text, base=None):
    """INI-style grid -> list of :class:`AblationCell` (sections in file order)."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.read_string(text)
    base_values = dataclasses.asdict(base) if base is not None else {}
    cells = []
    for name in parser.sections():
        section = dict(parser[name])
        task = section.pop("task", INFLECTION)
        model = section.pop("model", INN)
        if task not in TASKS:
            raise ValueError(f"[{name}] unknown task {task!r}")
        if model not in (INN, BASELINE):
            raise ValueError(f"[{name}] unknown model kind {model!r}")
        values = dict(base_values)
        values.update(parse_config_values("\n".join(f"{k} = {v}" for k, v in section.items())))
        cells.append(AblationCell(name, task, model, TrainConfig(**values)))
    return cells


def run_cell(cell, train, dev, test, table, index):
    cfg = cell.config
    if cell.model == BASELINE:
        model, history = train_baseline(cell.task, train, table, cfg, dev=dev, index=index)
    elif cell.task == INFLECTION:
        model = build_model(INFLECTION, table.dim, len(index), cfg)
        model, history = train_inflection(model, train, table, cfg, dev=dev, index=index)
    else:
        model = build_model(LEMMATIZATION, table.dim, 0, cfg)
        model, history = train_lemmatization(model, train, table, cfg, dev=dev)
    report = evaluate(model, test, table, index, name=cell.name, fingerprint=cfg.fingerprint())
    report.extra["epochs_run"] = len(history)
    return report


def run_ablation(train, dev, test, table, grid, index=None):
    """Train and score every grid cell from its own seed; failures become error rows."""
    if index is None:
        index = build_tag_index(train)
    reports = []
    for cell in grid:
        log.info("ablation cell %s", cell.name)
        try:
            reports.append(run_cell(cell, train, dev, test, table, index))
        except InnMorphError as exc:
            log.error("cell %s failed: %s", cell.name, exc)
            err = EvalReport(task=cell.task, name=cell.name, fingerprint=cell.config.fingerprint())
            err.extra["error"] = f"{type(exc).__name__}: {exc}"
            reports.append(err)
    return reports
