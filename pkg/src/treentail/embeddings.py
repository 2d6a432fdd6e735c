"""Pretrained word vectors plus trainable rows for everything else.

Pretrained rows are loaded once and never updated; tokens outside the
pretrained file (plus one shared fallback row) get trainable rows.
Tokens are stored verbatim and case-folding happens only at lookup:
exact match first, then the lowercased form, then the fallback row.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Parameter

UNK_TOKEN = "<unk>"
INIT_SCALE = 0.05


class EmbeddingFileError(ValueError):
    """Base class for malformed pretrained-vector files."""

    def __init__(self, message, line_no=None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


class EmptyFile(EmbeddingFileError):
    pass


class InconsistentDimension(EmbeddingFileError):
    pass


class UnreadableFloat(EmbeddingFileError):
    pass


class CalledTwice(RuntimeError):
    pass


@dataclass
class Vocabulary:
    """Token-to-row mapping.  Rows below ``frozen_count`` are pretrained."""

    tokens: list = field(default_factory=list)
    index: dict = field(default_factory=dict)
    frozen_count: int = 0
    oov_count: int = 0
    unk_index: int | None = None

    def __len__(self):
        return len(self.tokens)


@dataclass
class EmbeddingTable:
    """Row storage split by trainability.

    ``frozen`` is a plain array the optimizer never sees; ``trainable``
    is a Parameter holding the fallback row and one row per registered
    out-of-vocabulary token.
    """

    frozen: np.ndarray
    trainable: Parameter | None = None

    @property
    def dim(self):
        return self.frozen.shape[1]


def empty_vocabulary(dim, dtype=np.float64):
    """A vocabulary with no pretrained rows, for corpora trained from scratch."""
    return Vocabulary(), EmbeddingTable(np.zeros((0, dim), dtype=dtype))


def load_pretrained(path, restrict_to=None, dtype=np.float64):
    """Read a text file of ``token v1 ... vd`` lines.

    The width ``d`` is fixed by the first line.  ``restrict_to`` keeps
    only the listed tokens, which makes loading a multi-gigabyte vector
    file affordable when the corpus vocabulary is known up front.
    """
    if restrict_to is not None:
        restrict_to = set(restrict_to)

    tokens, rows, dim = [], [], None
    seen = set()
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, 1):
            parts = line.split()
            if not parts:
                continue
            token, fields = parts[0], parts[1:]
            if dim is None:
                dim = len(fields)
                if dim == 0:
                    raise InconsistentDimension("first line has no vector fields", line_no)
            elif len(fields) != dim:
                raise InconsistentDimension(
                    f"expected {dim} fields, found {len(fields)}", line_no
                )
            if restrict_to is not None and token not in restrict_to:
                continue
            if token in seen:
                continue
            try:
                row = [float(f) for f in fields]
            except ValueError as exc:
                raise UnreadableFloat(str(exc), line_no) from None
            seen.add(token)
            tokens.append(token)
            rows.append(row)

    if dim is None:
        raise EmptyFile("no vector lines in file")

    vocab = Vocabulary(
        tokens=tokens,
        index={t: i for i, t in enumerate(tokens)},
        frozen_count=len(tokens),
    )
    frozen = np.array(rows, dtype=dtype).reshape(len(tokens), dim)
    return vocab, EmbeddingTable(frozen)


def register_oov(vocab, table, corpus_tokens, rng):
    """Add trainable rows for unseen corpus tokens plus the fallback row.

    May run once per model; a second call raises :class:`CalledTwice`.
    Tokens already reachable through exact or lowercase match keep their
    pretrained rows.  New rows are drawn uniform on [-0.05, 0.05] in
    sorted token order so registration is reproducible.
    """
    if vocab.unk_index is not None:
        raise CalledTwice("out-of-vocabulary rows already registered")

    missing = sorted(
        {t for t in corpus_tokens if t not in vocab.index and t.lower() not in vocab.index}
    )
    new_tokens = [UNK_TOKEN] + missing
    dtype = table.frozen.dtype
    rows = rng.uniform(-INIT_SCALE, INIT_SCALE, (len(new_tokens), table.dim))

    vocab.unk_index = len(vocab.tokens)
    for t in new_tokens:
        vocab.index[t] = len(vocab.tokens)
        vocab.tokens.append(t)
    vocab.oov_count = len(new_tokens)
    table.trainable = Parameter("embeddings.oov", rows.astype(dtype))


def resolve(vocab, token):
    """Row index for a token: exact, then lowercased, then fallback."""
    idx = vocab.index.get(token)
    if idx is None:
        idx = vocab.index.get(token.lower())
    if idx is None:
        idx = vocab.unk_index
    if idx is None:
        raise KeyError(f"token {token!r} unknown and no fallback row registered")
    return idx


def lookup(vocab, table, token):
    """The embedding row for a token (read-only; length ``dim``)."""
    idx = resolve(vocab, token)
    if idx < vocab.frozen_count:
        return table.frozen[idx]
    return table.trainable.value[idx - vocab.frozen_count, :]


def embedding_node(graph, vocab, table, token):
    """Graph leaf for a token: a constant for pretrained rows, a
    differentiable row of the trainable table otherwise."""
    idx = resolve(vocab, token)
    if idx < vocab.frozen_count:
        return graph.constant(table.frozen[idx].reshape(-1, 1), op=f"embed:{token}")
    return graph.take_row(graph.parameter(table.trainable), idx - vocab.frozen_count)
