"""Word-vector table: text I/O, subword composition, cosine nearest neighbours."""

import math

import numpy as np

from . import _kernels
from .errors import DataFormatError, ShapeError, VocabularyError

# screening scores may differ from the exact ones by a few ulps
_SCREEN_MARGIN = 1e-9


class EmbeddingTable:
    """Ordered token -> vector mapping, immutable once built.

    ``subwords`` is an optional separate table used only for segmentation.
    """

    def __init__(self, tokens, vectors, subwords=None):
        tokens = list(tokens)
        vectors = np.array(vectors, dtype=np.float64, copy=True).reshape(len(tokens), -1)
        if len(set(tokens)) != len(tokens):
            seen = set()
            dup = next(t for t in tokens if t in seen or seen.add(t))
            raise ValueError(f"duplicate token {dup!r}")
        if not np.all(np.isfinite(vectors)):
            raise ValueError("embedding vectors must be finite")
        norms = np.linalg.norm(vectors, axis=1)
        if np.any(norms == 0):
            bad = tokens[int(np.flatnonzero(norms == 0)[0])]
            raise ValueError(f"zero vector for token {bad!r}")
        if subwords is not None and tokens and subwords.dim != vectors.shape[1]:
            raise ShapeError("subword table dimension differs from the word table")
        self.tokens = tokens
        self.vectors = vectors
        self.vectors.setflags(write=False)
        self.index = {t: i for i, t in enumerate(tokens)}
        self.subwords = subwords
        self.unit = vectors / norms[:, None] if tokens else vectors
        self.unit.setflags(write=False)
        order = sorted(range(len(tokens)), key=tokens.__getitem__)
        self.lex_rank = np.empty(len(tokens), dtype=np.int64)
        self.lex_rank[order] = np.arange(len(tokens))

    @property
    def dim(self):
        return self.vectors.shape[1]

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    def __getitem__(self, token):
        return self.vectors[self.index[token]]

    @property
    def entries(self):
        return {t: self.vectors[i] for i, t in enumerate(self.tokens)}


def load_embeddings(stream):
    """Parse the ``count dim`` header format, one ``token v1 ... vdim`` per line."""
    lines = iter(stream)
    try:
        header = next(lines)
    except StopIteration:
        raise DataFormatError("empty embedding file", 1) from None
    parts = header.split()
    try:
        count, dim = int(parts[0]), int(parts[1])
        if len(parts) != 2 or count < 0 or dim < 1:
            raise ValueError
    except (ValueError, IndexError):
        raise DataFormatError(f"bad header {header.strip()!r}, expected 'count dim'", 1) from None
    tokens, rows, seen = [], [], set()
    for lineno, line in enumerate(lines, start=2):
        line = line.rstrip("\n").rstrip("\r")
        if not line.strip():
            continue
        fields = line.split(" ")
        if len(fields) != dim + 1:
            raise DataFormatError(f"expected token and {dim} values, got {len(fields) - 1}", lineno)
        token = fields[0]
        if token in seen:
            raise DataFormatError(f"duplicate token {token!r}", lineno)
        try:
            vals = [float(v) for v in fields[1:]]
        except ValueError:
            raise DataFormatError("non-numeric vector component", lineno) from None
        if not all(math.isfinite(v) for v in vals):
            raise DataFormatError("non-finite vector component", lineno)
        seen.add(token)
        tokens.append(token)
        rows.append(vals)
    if len(tokens) != count:
        raise DataFormatError(f"header declares {count} entries, found {len(tokens)}")
    vectors = np.array(rows, dtype=np.float64).reshape(count, dim)
    try:
        return EmbeddingTable(tokens, vectors)
    except ValueError as exc:
        raise DataFormatError(str(exc)) from None


def save_embeddings(table, stream):
    stream.write(f"{len(table)} {table.dim}\n")
    for token, row in zip(table.tokens, table.vectors):
        stream.write(token + " " + " ".join(repr(float(v)) for v in row) + "\n")


def segment(word, vocab):
    """Greedy longest-match segmentation of ``word`` over ``vocab`` tokens."""
    longest = max((len(t) for t in vocab), default=0)
    pieces, pos = [], 0
    while pos < len(word):
        for end in range(min(len(word), pos + longest), pos, -1):
            if word[pos:end] in vocab:
                pieces.append(word[pos:end])
                pos = end
                break
        else:
            raise VocabularyError(f"cannot segment {word!r}: no subword covers {word[pos:]!r}")
    return pieces


def compose_word_vector(word, table):
    """Whole-word vector when present, else the sum of greedy subword vectors."""
    if word in table:
        return table[word].copy()
    vocab = table.subwords if table.subwords is not None else table
    if not len(vocab):
        raise VocabularyError(f"cannot segment {word!r}: empty subword vocabulary")
    pieces = segment(word, vocab.index)
    return np.sum([vocab[p] for p in pieces], axis=0)


def _unit_query(query, table):
    q = np.asarray(query, dtype=np.float64)
    if q.shape != (table.dim,):
        raise ShapeError(f"query length {q.shape} != table dim {table.dim}")
    norm = np.linalg.norm(q)
    if norm == 0 or not np.isfinite(norm):
        raise ValueError("nearest-neighbour query must be a finite nonzero vector")
    return q / norm


def exact_scores(unit_rows, unit_query):
    """Reference cosine scores; each row's value depends only on that row."""
    return np.sum(unit_rows * unit_query, axis=1)


def _rank(scores, rows, table, k):
    order = np.lexsort((table.lex_rank[rows], -scores))[:k]
    return [(table.tokens[rows[i]], float(scores[i])) for i in order]


def brute_force_nearest(query, table, k=1):
    """Full scan: exact top-k by cosine, ties broken lexicographically."""
    if not len(table):
        raise ValueError("nearest-neighbour search over an empty table")
    if k < 1:
        raise ValueError("k must be at least 1")
    uq = _unit_query(query, table)
    return _rank(exact_scores(table.unit, uq), np.arange(len(table)), table, k)


def _shortlist(screen, k):
    n = screen.size
    if k >= n:
        return np.arange(n)
    kth = np.partition(screen, n - k)[n - k]
    return np.flatnonzero(screen >= kth - _SCREEN_MARGIN)


def nearest_word(query, table, k=1):
    """Exact top-k ``(token, cosine)`` pairs, best first.

    A fast screening pass shortlists every entry within a tiny margin of the
    k-th best score; the shortlist is then re-scored with :func:`exact_scores`
    so the result is identical to :func:`brute_force_nearest`.
    """
    if not len(table):
        raise ValueError("nearest-neighbour search over an empty table")
    if k < 1:
        raise ValueError("k must be at least 1")
    uq = _unit_query(query, table)
    rows = _shortlist(_kernels.screen_scores(table.unit, uq), k)
    return _rank(exact_scores(table.unit[rows], uq), rows, table, k)


def nearest_words(queries, table, k=1):
    """:func:`nearest_word` for each row of ``queries``; screening is one matmul."""
    q = np.asarray(queries, dtype=np.float64)
    if q.ndim != 2 or q.shape[1] != table.dim:
        raise ShapeError(f"queries must be (n, {table.dim}), got {q.shape}")
    if not len(table):
        raise ValueError("nearest-neighbour search over an empty table")
    # same normalisation as the single-query path, so scores agree to the bit
    uq = np.array([_unit_query(row, table) for row in q]).reshape(q.shape)
    screen = uq @ table.unit.T
    results = []
    for i in range(q.shape[0]):
        rows = _shortlist(screen[i], k)
        results.append(_rank(exact_scores(table.unit[rows], uq[i]), rows, table, k))
    return results


def extend_vocabulary(table, extra):
    """Union of ``table`` and ``extra`` ``(token, vector)`` pairs.

    Re-adding a token with the same vector is a no-op; a different vector is an error.
    """
    tokens, rows = list(table.tokens), [table.vectors]
    added = {}
    for token, vec in extra:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (table.dim,):
            raise ShapeError(f"vector for {token!r} has shape {vec.shape}, table dim {table.dim}")
        known = table.vectors[table.index[token]] if token in table else added.get(token)
        if known is not None:
            if not np.array_equal(known, vec):
                raise ValueError(f"token {token!r} already present with a different vector")
            continue
        added[token] = vec
    if not added:
        return table
    tokens.extend(added)
    rows.append(np.array(list(added.values())))
    return EmbeddingTable(tokens, np.concatenate(rows, axis=0), table.subwords)


def random_distractors(count, dim, seed, prefix="~distractor"):
    """Seeded Gaussian ``(token, vector)`` pairs to pad the candidate vocabulary."""
    rng = np.random.default_rng(seed)
    vecs = rng.standard_normal((count, dim))
    return [(f"{prefix}{i:07d}", vecs[i]) for i in range(count)]
