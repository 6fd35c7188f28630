"""Metrics and the prediction pipelines (inflect, analyze, lemmatize, sample)."""

import json
from dataclasses import dataclass, field

import numpy as np

from .embedding import compose_word_vector, nearest_words
from .flow import INFLECTION, LEMMATIZATION, InnModel, inn_forward, inn_inverse
from .latent import LatentSpec, gumbel_softmax_sample, harden
from .loss import sigmoid
from .morphdata import tag_vector

HARDENED = "hardened"
SAMPLED = "sampled"
TAG_THRESHOLD = 0.5


def exact_match(predictions, golds):
    """Percentage of positions where prediction and gold strings are equal."""
    predictions, golds = list(predictions), list(golds)
    if len(predictions) != len(golds):
        raise ValueError(f"{len(predictions)} predictions vs {len(golds)} golds")
    if not golds:
        raise ValueError("exact_match needs at least one instance")
    return 100.0 * sum(p == g for p, g in zip(predictions, golds)) / len(golds)


def tag_f1(pred_sets, gold_sets, average="micro"):
    """Multi-label F1 (percent) over all (instance, tag) decisions.

    ``micro`` pools counts over instances; ``macro`` averages per-tag F1 over
    every tag that occurs in a prediction or a gold set.
    """
    pred_sets, gold_sets = [set(p) for p in pred_sets], [set(g) for g in gold_sets]
    if len(pred_sets) != len(gold_sets):
        raise ValueError(f"{len(pred_sets)} predictions vs {len(gold_sets)} golds")
    if average == "micro":
        tp = sum(len(p & g) for p, g in zip(pred_sets, gold_sets))
        fp = sum(len(p - g) for p, g in zip(pred_sets, gold_sets))
        fn = sum(len(g - p) for p, g in zip(pred_sets, gold_sets))
        return 100.0 if tp + fp + fn == 0 else 100.0 * 2 * tp / (2 * tp + fp + fn)
    if average != "macro":
        raise ValueError(f"unknown averaging {average!r}")
    tags = set().union(*pred_sets, *gold_sets) if pred_sets else set()
    if not tags:
        return 100.0
    scores = []
    for tag in sorted(tags):
        tp = sum(tag in p and tag in g for p, g in zip(pred_sets, gold_sets))
        fp = sum(tag in p and tag not in g for p, g in zip(pred_sets, gold_sets))
        fn = sum(tag in g and tag not in p for p, g in zip(pred_sets, gold_sets))
        scores.append(2 * tp / (2 * tp + fp + fn))
    return 100.0 * float(np.mean(scores))


def shuffled_tag_f1(pred_sets, gold_sets, seed=0, rounds=200):
    """Chance level: mean micro F1 after randomly reassigning predictions to instances."""
    pred_sets = list(pred_sets)
    rng = np.random.default_rng(seed)
    scores = []
    for _ in range(rounds):
        perm = rng.permutation(len(pred_sets))
        scores.append(tag_f1([pred_sets[i] for i in perm], gold_sets))
    return float(np.mean(scores))


def _words(words, table):
    return np.array([compose_word_vector(w, table) for w in words]).reshape(len(words), table.dim)


def _decode(vectors, table):
    return [hits[0][0] for hits in nearest_words(vectors, table, k=1)]


def _require(model, task):
    if isinstance(model, InnModel):
        if model.layout.task != task:
            raise ValueError(f"model was built for {model.layout.task}, not {task}")
    elif getattr(model, "task", None) != task:
        raise ValueError(f"model was built for {getattr(model, 'task', None)}, not {task}")


def inflect_batch(model, lemmas, tagsets, table, index):
    _require(model, INFLECTION)
    lemma_vecs = _words(lemmas, table)
    tag_vecs = np.array([tag_vector(t, index) for t in tagsets]).reshape(len(lemmas), len(index))
    x = np.concatenate([lemma_vecs, tag_vecs], axis=1)
    if isinstance(model, InnModel):
        y = inn_forward(model, x)[0]
    else:
        y = model.predict_vectors(x)
    return _decode(y, table)


def predict_inflection(model, lemma, tags, table, index):
    """Surface form for ``lemma`` + ``tags`` via the forward pass and cosine search."""
    return inflect_batch(model, [lemma], [tags], table, index)[0]


def analysis_latent(model, y, z_mode=HARDENED, tau=1.0, rng=None):
    """Latent input for the inverse pass when only ``y`` is known.

    ``hardened``: invert once from the uniform latent, run the forward pass on
    that reconstruction and harden its own z-logits. ``sampled``: a
    Gumbel-Softmax draw from the uniform prior at temperature ``tau``.
    """
    lay = model.layout
    n = y.shape[0]
    if not lay.z_d:
        return np.zeros((n, 0))
    spec = LatentSpec(lay.z_d, lay.z_cat, tau)
    if z_mode == HARDENED:
        x0 = inn_inverse(model, y, np.full((n, lay.z_len), 1.0 / lay.z_cat))
        logits = inn_forward(model, x0)[1]
        return harden(logits, spec)
    if z_mode == SAMPLED:
        if rng is None:
            raise ValueError("sampled analysis needs an rng")
        return gumbel_softmax_sample(np.zeros((n, lay.z_len)), spec, rng)
    raise ValueError(f"unknown z_mode {z_mode!r}")


def analyze_batch(model, surfaces, table, index, z_mode=HARDENED, tau=1.0, rng=None):
    _require(model, INFLECTION)
    if not isinstance(model, InnModel):
        raise TypeError("analysis needs an invertible model; the baseline has no inverse")
    y = _words(surfaces, table)
    z = analysis_latent(model, y, z_mode, tau, rng)
    x = np.atleast_2d(inn_inverse(model, y, z))
    d = model.layout.word_dim
    lemmas = _decode(x[:, :d], table)
    active = sigmoid(x[:, d:]) > TAG_THRESHOLD
    return lemmas, [index.decode(row) for row in active]


def predict_analysis(model, surface, table, index, z_mode=HARDENED, tau=1.0, rng=None):
    """``(lemma, tags)`` for a surface form via the inverse pass."""
    lemmas, tags = analyze_batch(model, [surface], table, index, z_mode, tau, rng)
    return lemmas[0], tags[0]


def lemmatize_batch(model, surfaces, table):
    _require(model, LEMMATIZATION)
    x = _words(surfaces, table)
    y = inn_forward(model, x)[0] if isinstance(model, InnModel) else model.predict_vectors(x)
    return _decode(y, table)


def predict_lemma(model, surface, table):
    return lemmatize_batch(model, [surface], table)[0]


def sample_surfaces(model, lemma, n, tau, rng, table, logits=None):
    """Decode ``n`` inverse passes of a lemma, each with a fresh Gumbel-Softmax ``z``.

    ``logits`` defaults to the uniform prior (all zeros).
    """
    _require(model, LEMMATIZATION)
    if n == 0:
        return []
    lay = model.layout
    y = np.tile(compose_word_vector(lemma, table), (n, 1))
    if lay.z_d:
        spec = LatentSpec(lay.z_d, lay.z_cat, tau)
        base = np.zeros(lay.z_len) if logits is None else np.asarray(logits, dtype=np.float64)
        z = gumbel_softmax_sample(np.tile(base, (n, 1)), spec, rng)
    else:
        z = np.zeros((n, 0))
    return _decode(np.atleast_2d(inn_inverse(model, y, z)), table)


def dev_exact_match(model, records, table, index, task):
    """The monitored dev metric: surface EM (inflection) or lemma EM (lemmatization)."""
    if task == INFLECTION:
        preds = inflect_batch(model, [r.lemma for r in records], [r.tags for r in records], table, index)
        return {"surface_em": exact_match(preds, [r.surface for r in records])}
    preds = lemmatize_batch(model, [r.surface for r in records], table)
    return {"lemma_em": exact_match(preds, [r.lemma for r in records])}


@dataclass
class EvalReport:
    task: str
    name: str = ""
    lemma_em: float = None
    tag_f1: float = None
    surface_em: float = None
    count: int = 0
    fingerprint: str = ""
    extra: dict = field(default_factory=dict)

    def to_json(self):
        return json.dumps(
            {
                "name": self.name,
                "task": self.task,
                "lemma_em": self.lemma_em,
                "tag_f1": self.tag_f1,
                "surface_em": self.surface_em,
                "count": self.count,
                "fingerprint": self.fingerprint,
                **self.extra,
            },
            sort_keys=True,
        )


def evaluate(model, records, table, index=None, name="", fingerprint=""):
    """Score a model on ``records``; inflection INNs also get analysis scores."""
    records = list(records)
    task = model.layout.task if isinstance(model, InnModel) else model.task
    report = EvalReport(task=task, name=name, count=len(records), fingerprint=fingerprint)
    if task == INFLECTION:
        preds = inflect_batch(model, [r.lemma for r in records], [r.tags for r in records], table, index)
        report.surface_em = exact_match(preds, [r.surface for r in records])
        if isinstance(model, InnModel):
            lemmas, tags = analyze_batch(model, [r.surface for r in records], table, index)
            report.lemma_em = exact_match(lemmas, [r.lemma for r in records])
            gold = [r.tags for r in records]
            report.tag_f1 = tag_f1(tags, gold)
            report.extra["tag_f1_chance"] = shuffled_tag_f1(tags, gold)
    else:
        preds = lemmatize_batch(model, [r.surface for r in records], table)
        report.lemma_em = exact_match(preds, [r.lemma for r in records])
    return report


def _cell(v):
    return "-" if v is None else f"{v:.2f}"


def format_reports(reports):
    """Aligned text table with columns L(EM%), Tag(F1%), S(EM%)."""
    header = ("Model", "Task", "L (EM%)", "Tag (F1%)", "S (EM%)")
    rows = [header] + [
        (r.name, r.task, _cell(r.lemma_em), _cell(r.tag_f1), _cell(r.surface_em)) for r in reports
    ]
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    lines = []
    for j, row in enumerate(rows):
        cells = [row[0].ljust(widths[0]), row[1].ljust(widths[1])]
        cells += [c.rjust(w) for c, w in zip(row[2:], widths[2:])]
        lines.append("  ".join(cells).rstrip())
        if j == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)
