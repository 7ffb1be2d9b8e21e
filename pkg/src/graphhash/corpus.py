"""Sparse text corpora: loading, validation, TFIDF weighting, persistence.

A corpus lives in three UTF-8 text files:

* ``<path>``        one document per line:
                    ``<doc_id> | <idx>:<weight> ... | <label>[,<label>...]``
                    (``#`` starts a comment line; the label field may be empty)
* ``<path>.meta``   sidecar header with ``vocab_size <int>`` and ``n_docs <int>``
* ``<path>.split``  lines ``<doc_id> <train|val|test>``

Documents are stored row-major in a ``scipy.sparse.csr_matrix`` in file
order.  Weights are raw term counts on ingestion; ``tfidf_transform``
produces a new corpus with ``tf * ln(N / df)`` weights.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import DataError, ParseError

logger = logging.getLogger(__name__)

SPLIT_NAMES = ("train", "val", "test")


@dataclass(frozen=True)
class Vocabulary:
    """Ordered term identifiers; bow files carry indices only, so loaders
    synthesize ``w0..w{V-1}`` names."""

    terms: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.terms)) != len(self.terms):
            raise DataError("vocabulary terms are not unique")

    @property
    def size(self) -> int:
        return len(self.terms)

    @classmethod
    def from_size(cls, size: int) -> "Vocabulary":
        if size <= 0:
            raise DataError(f"vocabulary size must be positive, got {size}")
        return cls(tuple(f"w{i}" for i in range(size)))


@dataclass(frozen=True)
class Document:
    doc_id: int
    term_weights: dict[int, float]
    labels: frozenset[str] = frozenset()

    def validate(self, vocab_size: int, require_nonempty: bool = True) -> None:
        if require_nonempty and not any(w != 0.0 for w in self.term_weights.values()):
            raise DataError(f"document {self.doc_id} has no nonzero term weight")
        for idx, w in self.term_weights.items():
            if not 0 <= idx < vocab_size:
                raise DataError(
                    f"document {self.doc_id}: term index {idx} out of bounds "
                    f"for vocabulary size {vocab_size}"
                )
            if not np.isfinite(w) or w < 0:
                raise DataError(
                    f"document {self.doc_id}: weight {w!r} for term {idx} "
                    "is not a finite nonnegative number"
                )


@dataclass
class Corpus:
    """Immutable-by-convention container for a loaded corpus.

    ``matrix`` rows follow ``doc_ids`` order; ``split`` maps split name to a
    sorted array of row positions (not doc ids).
    """

    vocabulary: Vocabulary
    doc_ids: np.ndarray
    matrix: sp.csr_matrix
    labels: tuple[frozenset[str], ...]
    split: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def n_docs(self) -> int:
        return self.matrix.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.vocabulary.size

    def rows_of(self, split_name: str) -> np.ndarray:
        if split_name not in SPLIT_NAMES:
            raise DataError(f"unknown split {split_name!r}")
        return self.split[split_name]

    def submatrix(self, split_name: str) -> sp.csr_matrix:
        return self.matrix[self.rows_of(split_name)]

    def labels_of(self, split_name: str) -> tuple[frozenset[str], ...]:
        return tuple(self.labels[r] for r in self.rows_of(split_name))

    def doc_ids_of(self, split_name: str) -> np.ndarray:
        return self.doc_ids[self.rows_of(split_name)]

    def row_index(self) -> dict[int, int]:
        return {int(d): i for i, d in enumerate(self.doc_ids)}

    def document(self, row: int) -> Document:
        start, end = self.matrix.indptr[row], self.matrix.indptr[row + 1]
        weights = {
            int(i): float(w)
            for i, w in zip(self.matrix.indices[start:end], self.matrix.data[start:end])
        }
        return Document(int(self.doc_ids[row]), weights, self.labels[row])

    def validate(self, require_nonempty_rows: bool = True) -> None:
        n = self.n_docs
        if len(self.doc_ids) != n or len(self.labels) != n:
            raise DataError("doc_ids/labels length does not match matrix rows")
        if len(set(int(d) for d in self.doc_ids)) != n:
            raise DataError("doc_ids are not unique")
        if self.matrix.shape[1] != self.vocab_size:
            raise DataError("matrix column count does not match vocabulary size")
        if self.matrix.nnz and (
            not np.all(np.isfinite(self.matrix.data)) or np.any(self.matrix.data < 0)
        ):
            raise DataError("matrix contains negative or non-finite weights")
        if require_nonempty_rows:
            counts = np.diff(self.matrix.indptr)
            empty = np.flatnonzero(counts == 0)
            if empty.size:
                ids = [int(self.doc_ids[r]) for r in empty[:10]]
                raise DataError(f"documents with no nonzero weight: doc_ids {ids}")
        seen = np.zeros(n, dtype=bool)
        for name in SPLIT_NAMES:
            rows = self.split.get(name)
            if rows is None:
                raise DataError(f"split is missing the {name!r} cell")
            if np.any(seen[rows]):
                raise DataError("split cells are not disjoint")
            seen[rows] = True
        if not np.all(seen):
            raise DataError("split does not cover all documents")
        self._warn_unseen_test_labels()

    def _warn_unseen_test_labels(self) -> None:
        train_labels = set().union(*self.labels_of("train")) if self.rows_of("train").size else set()
        test_labels = set().union(*self.labels_of("test")) if self.rows_of("test").size else set()
        unseen = test_labels - train_labels
        if unseen:
            warnings.warn(
                f"{len(unseen)} test label(s) never occur in train: "
                f"{sorted(unseen)[:5]}",
                stacklevel=3,
            )


def _parse_meta(path: str) -> tuple[int, int]:
    vocab_size = n_docs = None
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ParseError(f"expected '<key> <int>', got {line!r}", path, line_no)
            key, value = parts
            try:
                value = int(value)
            except ValueError:
                raise ParseError(f"non-integer value {parts[1]!r}", path, line_no) from None
            if key == "vocab_size":
                vocab_size = value
            elif key == "n_docs":
                n_docs = value
            else:
                raise ParseError(f"unknown header key {key!r}", path, line_no)
    if vocab_size is None or n_docs is None:
        raise ParseError("header must declare vocab_size and n_docs", path)
    return vocab_size, n_docs


def _parse_doc_line(line: str, path: str, line_no: int) -> Document:
    parts = line.split("|")
    if len(parts) != 3:
        raise ParseError(
            f"expected '<doc_id> | <idx>:<w> ... | <labels>', got {line!r}", path, line_no
        )
    try:
        doc_id = int(parts[0].strip())
    except ValueError:
        raise ParseError(f"bad doc_id {parts[0].strip()!r}", path, line_no) from None
    weights: dict[int, float] = {}
    for tok in parts[1].split():
        idx_s, _, w_s = tok.partition(":")
        try:
            idx, w = int(idx_s), float(w_s)
        except ValueError:
            raise ParseError(f"bad term entry {tok!r}", path, line_no) from None
        if idx in weights:
            raise ParseError(f"duplicate term index {idx}", path, line_no)
        weights[idx] = w
    labels = frozenset(s.strip() for s in parts[2].split(",") if s.strip())
    return Document(doc_id, weights, labels)


def _parse_split(path: str, doc_ids: np.ndarray) -> dict[str, np.ndarray]:
    assignment: dict[int, str] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2 or parts[1] not in SPLIT_NAMES:
                raise ParseError(
                    f"expected '<doc_id> <train|val|test>', got {line!r}", path, line_no
                )
            doc_id = int(parts[0])
            if doc_id in assignment:
                raise ParseError(f"doc_id {doc_id} assigned to a split twice", path, line_no)
            assignment[doc_id] = parts[1]
    rows: dict[str, list[int]] = {name: [] for name in SPLIT_NAMES}
    for row, doc_id in enumerate(doc_ids):
        name = assignment.get(int(doc_id))
        if name is None:
            raise DataError(f"doc_id {int(doc_id)} missing from split file {path}")
        rows[name].append(row)
    return {name: np.asarray(r, dtype=np.int64) for name, r in rows.items()}


def corpus_from_documents(
    vocabulary: Vocabulary,
    documents: list[Document],
    split: dict[str, np.ndarray],
    require_nonempty_rows: bool = True,
) -> Corpus:
    for doc in documents:
        doc.validate(vocabulary.size, require_nonempty=require_nonempty_rows)
    indptr = [0]
    indices: list[int] = []
    data: list[float] = []
    for doc in documents:
        for idx in sorted(doc.term_weights):
            w = doc.term_weights[idx]
            if w != 0.0:
                indices.append(idx)
                data.append(w)
        indptr.append(len(indices))
    matrix = sp.csr_matrix(
        (np.asarray(data, dtype=np.float64), np.asarray(indices, dtype=np.int32), indptr),
        shape=(len(documents), vocabulary.size),
    )
    corpus = Corpus(
        vocabulary=vocabulary,
        doc_ids=np.asarray([d.doc_id for d in documents], dtype=np.int64),
        matrix=matrix,
        labels=tuple(d.labels for d in documents),
        split=split,
    )
    corpus.validate(require_nonempty_rows=require_nonempty_rows)
    return corpus


def load_corpus(path: str, format: str = "bow-text") -> Corpus:
    """Load and validate a corpus; row order follows the file."""
    if format != "bow-text":
        raise DataError(f"unsupported corpus format {format!r}")
    vocab_size, n_docs = _parse_meta(path + ".meta")
    vocabulary = Vocabulary.from_size(vocab_size)
    documents: list[Document] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            documents.append(_parse_doc_line(line, path, line_no))
    if len(documents) != n_docs:
        raise DataError(
            f"{path}: header declares n_docs={n_docs} but file has {len(documents)}"
        )
    doc_ids = np.asarray([d.doc_id for d in documents], dtype=np.int64)
    split = _parse_split(path + ".split", doc_ids)
    corpus = corpus_from_documents(vocabulary, documents, split)
    logger.info(
        "loaded corpus %s: N=%d |V|=%d split=%s",
        path,
        corpus.n_docs,
        corpus.vocab_size,
        {name: len(rows) for name, rows in corpus.split.items()},
    )
    return corpus


def save_corpus(corpus: Corpus, path: str) -> None:
    """Write the three corpus files; floats printed with round-trip repr."""
    with open(path, "w", encoding="utf-8") as fh:
        for row in range(corpus.n_docs):
            start, end = corpus.matrix.indptr[row], corpus.matrix.indptr[row + 1]
            entries = " ".join(
                f"{int(i)}:{float(w)!r}"
                for i, w in zip(corpus.matrix.indices[start:end], corpus.matrix.data[start:end])
            )
            labels = ",".join(sorted(corpus.labels[row]))
            fh.write(f"{int(corpus.doc_ids[row])} | {entries} | {labels}\n")
    with open(path + ".meta", "w", encoding="utf-8") as fh:
        fh.write(f"vocab_size {corpus.vocab_size}\nn_docs {corpus.n_docs}\n")
    with open(path + ".split", "w", encoding="utf-8") as fh:
        for name in SPLIT_NAMES:
            for row in corpus.split[name]:
                fh.write(f"{int(corpus.doc_ids[row])} {name}\n")


def tfidf_transform(corpus: Corpus) -> Corpus:
    """Reweight raw counts as ``tf * ln(N / df)``.

    Terms present in every document get weight zero and leave the sparsity
    pattern; rows that become all-zero are kept (so row indexing is stable)
    but flagged with a warning.  Do not apply twice: the weights must be raw
    counts.
    """
    n = corpus.n_docs
    if n == 0:
        raise DataError("cannot TFIDF-transform an empty corpus")
    df = np.bincount(corpus.matrix.indices, minlength=corpus.vocab_size)
    with np.errstate(divide="ignore"):
        idf = np.log(n / df.astype(np.float64))
    idf[df == 0] = 0.0
    matrix = corpus.matrix.copy()
    matrix.data = matrix.data * idf[matrix.indices]
    matrix.eliminate_zeros()
    empty = np.flatnonzero(np.diff(matrix.indptr) == 0)
    if empty.size:
        ids = [int(corpus.doc_ids[r]) for r in empty]
        warnings.warn(f"TFIDF produced all-zero rows for doc_ids {ids[:10]}", stacklevel=2)
    out = Corpus(
        vocabulary=corpus.vocabulary,
        doc_ids=corpus.doc_ids.copy(),
        matrix=matrix,
        labels=corpus.labels,
        split={k: v.copy() for k, v in corpus.split.items()},
    )
    out.validate(require_nonempty_rows=False)
    return out
