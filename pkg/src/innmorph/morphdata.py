"""Morphological records: TSV I/O, tag indexing, splitting, toy-language generator."""

import itertools
import logging
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .embedding import EmbeddingTable
from .errors import DataFormatError

log = logging.getLogger(__name__)

TAG_SEP = ";"


@dataclass(frozen=True)
class MorphRecord:
    lemma: str
    tags: frozenset = field(default_factory=frozenset)
    surface: str = ""

    def __post_init__(self):
        object.__setattr__(self, "tags", frozenset(self.tags))
        if not self.lemma or not self.surface:
            raise ValueError("lemma and surface must be non-empty")


def parse_dataset(stream):
    """Read ``lemma<TAB>surface[<TAB>tag;tag;...]`` lines, keeping order and duplicates."""
    records = []
    for lineno, line in enumerate(stream, start=1):
        line = line.rstrip("\n").rstrip("\r")
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) not in (2, 3):
            raise DataFormatError(f"expected 2 or 3 tab-separated fields, got {len(fields)}", lineno)
        lemma, surface = fields[0], fields[1]
        if not lemma:
            raise DataFormatError("empty lemma", lineno)
        if not surface:
            raise DataFormatError("empty surface form", lineno)
        tags = frozenset(t for t in fields[2].split(TAG_SEP) if t) if len(fields) == 3 else frozenset()
        records.append(MorphRecord(lemma, tags, surface))
    return records


def format_record(rec):
    for tag in rec.tags:
        if TAG_SEP in tag or "\t" in tag or "\n" in tag:
            raise ValueError(f"tag {tag!r} cannot be written in TSV form")
    base = f"{rec.lemma}\t{rec.surface}"
    return base + "\t" + TAG_SEP.join(sorted(rec.tags)) if rec.tags else base


def write_dataset(records, stream):
    for rec in records:
        stream.write(format_record(rec) + "\n")


class TagIndex:
    """Sorted tag inventory; ``dropped`` counts unknown tags seen by :func:`tag_vector`."""

    def __init__(self, tags):
        self.tags = sorted(set(tags))
        self.index = {t: i for i, t in enumerate(self.tags)}
        self.dropped = Counter()

    def __len__(self):
        return len(self.tags)

    def __eq__(self, other):
        return isinstance(other, TagIndex) and self.tags == other.tags

    def decode(self, vector_mask):
        return frozenset(self.tags[i] for i in np.flatnonzero(vector_mask))


def build_tag_index(train):
    return TagIndex(tag for rec in train for tag in rec.tags)


def tag_vector(tags, index):
    """0/1 indicator of ``tags`` over the index; unknown tags are dropped and counted."""
    vec = np.zeros(len(index))
    for tag in tags:
        i = index.index.get(tag)
        if i is None:
            if not index.dropped[tag]:
                log.warning("tag %r not in the training tag index; dropped", tag)
            index.dropped[tag] += 1
        else:
            vec[i] = 1.0
    return vec


def split_dataset(records, ratios=(0.8, 0.1, 0.1), seed=0):
    """Seeded shuffle, then contiguous train/dev/test slices (largest-remainder sizes)."""
    ratios = [float(r) for r in ratios]
    if any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("split ratios must be positive and sum to 1")
    n, parts = len(records), len(ratios)
    if n < parts:
        raise ValueError(f"cannot split {n} records into {parts} non-empty parts")
    exact = [r * n for r in ratios]
    sizes = [int(np.floor(e + 1e-9)) for e in exact]
    by_remainder = sorted(range(parts), key=lambda i: (-(exact[i] - sizes[i]), i))
    for i in by_remainder[: n - sum(sizes)]:
        sizes[i] += 1
    for i in range(parts):
        while sizes[i] == 0:
            donor = max(range(parts), key=lambda j: sizes[j])
            sizes[donor] -= 1
            sizes[i] += 1
    order = np.random.default_rng(seed).permutation(n)
    out, start = [], 0
    for size in sizes:
        out.append([records[j] for j in order[start : start + size]])
        start += size
    return tuple(out)


@dataclass(frozen=True)
class ToyLangConfig:
    """Agglutinative toy language: every lemma takes one suffix per slot."""

    lemma_count: int = 200
    suffix_slots: int = 3
    tags_per_slot: int = 2
    embedding_dim: int = 100
    seed: int = 0
    offset_scale: float = 0.5
    noise_scale: float = 0.01

    def __post_init__(self):
        for name in ("lemma_count", "suffix_slots", "tags_per_slot", "embedding_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.embedding_dim < self.suffix_slots + 1:
            raise ValueError("embedding_dim must exceed suffix_slots (one axis per slot)")


_STEM_CONSONANTS = "ptkbdgmnlrs"
_SUFFIX_CONSONANTS = "vzhjfwy"
_VOWELS = "aeiou"


def _syllables(consonants):
    return [c + v for c in consonants for v in _VOWELS]


def toy_tag_name(slot, value):
    return f"S{slot + 1}.{value + 1}"


def _make_lemmas(count, rng):
    sylls = _syllables(_STEM_CONSONANTS)
    capacity = len(sylls) ** 2 + len(sylls) ** 3
    if count > capacity:
        raise ValueError(f"toy generator supports at most {capacity} lemmas")
    seen, lemmas = set(), []
    while len(lemmas) < count:
        n_syll = 2 + int(rng.integers(0, 2))
        word = "".join(sylls[i] for i in rng.integers(0, len(sylls), n_syll))
        if word not in seen:
            seen.add(word)
            lemmas.append(word)
    return lemmas


def _make_suffixes(n, rng):
    sylls = _syllables(_SUFFIX_CONSONANTS)
    length = 1
    while len(sylls) ** length < n:
        length += 1
    pool = ["".join(p) for p in itertools.product(sylls, repeat=length)]
    return [pool[i] for i in rng.choice(len(pool), size=n, replace=False)]


def generate_toy_language(cfg):
    """Return ``(records, table)`` for a seeded toy language.

    Stems use consonants disjoint from suffixes and all suffixes have equal
    length, so every surface decomposes uniquely as ``lemma + suffixes``.
    Vectors: lemma = random unit direction (first ``dim - slots`` axes); each
    tag adds a fixed offset that marks its slot axis; every word gets its own
    small Gaussian noise.
    """
    rng = np.random.default_rng(cfg.seed)
    slots, per_slot, dim = cfg.suffix_slots, cfg.tags_per_slot, cfg.embedding_dim
    lemmas = _make_lemmas(cfg.lemma_count, rng)
    suffix = np.array(_make_suffixes(slots * per_slot, rng), dtype=object).reshape(slots, per_slot)

    stem_dims = dim - slots
    base = rng.standard_normal((cfg.lemma_count, stem_dims))
    base /= np.linalg.norm(base, axis=1, keepdims=True)
    lemma_dirs = np.zeros((cfg.lemma_count, dim))
    lemma_dirs[:, :stem_dims] = base

    offsets = np.zeros((slots, per_slot, dim))
    marks = np.linspace(-1.0, 1.0, per_slot) if per_slot > 1 else np.ones(1)
    for s in range(slots):
        for k in range(per_slot):
            mix = rng.standard_normal(stem_dims)
            offsets[s, k, :stem_dims] = 0.5 * cfg.offset_scale * mix / np.linalg.norm(mix)
            offsets[s, k, stem_dims + s] = cfg.offset_scale * marks[k]

    records, tokens, vectors = [], [], []
    for i, lemma in enumerate(lemmas):
        tokens.append(lemma)
        vectors.append(lemma_dirs[i] + cfg.noise_scale * rng.standard_normal(dim))
    for i, lemma in enumerate(lemmas):
        for combo in itertools.product(range(per_slot), repeat=slots):
            surface = lemma + "".join(suffix[s, k] for s, k in enumerate(combo))
            tags = frozenset(toy_tag_name(s, k) for s, k in enumerate(combo))
            records.append(MorphRecord(lemma, tags, surface))
            vec = lemma_dirs[i] + sum(offsets[s, k] for s, k in enumerate(combo))
            tokens.append(surface)
            vectors.append(vec + cfg.noise_scale * rng.standard_normal(dim))
    return records, EmbeddingTable(tokens, np.array(vectors))


def toy_suffix_table(cfg):
    """Per-(slot, tag) suffix strings of the toy language, for inspection."""
    rng = np.random.default_rng(cfg.seed)
    _make_lemmas(cfg.lemma_count, rng)
    suffix = _make_suffixes(cfg.suffix_slots * cfg.tags_per_slot, rng)
    return {
        toy_tag_name(s, k): suffix[s * cfg.tags_per_slot + k]
        for s in range(cfg.suffix_slots)
        for k in range(cfg.tags_per_slot)
    }
