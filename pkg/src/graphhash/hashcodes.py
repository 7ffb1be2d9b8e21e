"""Binary codes and Hamming-distance retrieval.

Codes are the sign test on the encoder's mean pre-activation (equivalent
to thresholding the sigmoid-squashed mean at 0.5; the boundary value maps
to bit 0).  Bits are packed little-endian: latent dimension 0 is the LSB
of byte 0.  Retrieval is a linear scan with per-byte popcounts; ties in
distance are broken by ascending doc_id.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DataError, ParseError
from .model import ModelConfig, ModelParams, _as_csr_rows

logger = logging.getLogger(__name__)


@dataclass
class HashCodes:
    doc_ids: np.ndarray        # (n,)
    code_length: int
    packed: np.ndarray         # (n, ceil(d/8)) uint8, little bit order

    @property
    def n_docs(self) -> int:
        return self.packed.shape[0]

    def unpacked(self) -> np.ndarray:
        return unpack_bits(self.packed, self.code_length)


@dataclass
class RetrievalResult:
    per_query: np.ndarray
    mean_precision: float
    k: int


def pack_bits(bits: np.ndarray) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.uint8)
    return np.packbits(bits, axis=-1, bitorder="little")


def unpack_bits(packed: np.ndarray, code_length: int) -> np.ndarray:
    return np.unpackbits(packed, axis=-1, count=code_length, bitorder="little")


def binarize(params: ModelParams, rows, config: ModelConfig, doc_ids=None) -> HashCodes:
    """Hash the given feature rows: bit n = 1 iff mean pre-activation > 0."""
    rows = _as_csr_rows(rows, config.vocab_size)
    activations = rows @ params.w_mu.T + params.b_mu
    bits = activations > 0.0
    if doc_ids is None:
        doc_ids = np.arange(rows.shape[0], dtype=np.int64)
    doc_ids = np.asarray(doc_ids, dtype=np.int64)
    if len(doc_ids) != rows.shape[0]:
        raise DataError("doc_ids length does not match rows")
    return HashCodes(doc_ids, config.latent_dim, pack_bits(bits))


def hamming_distances(query_packed: np.ndarray, database_packed: np.ndarray) -> np.ndarray:
    """Distance of each query row to each database row; (n_q, n_db)."""
    q = np.atleast_2d(query_packed)
    xor = q[:, None, :] ^ database_packed[None, :, :]
    return np.bitwise_count(xor).sum(axis=-1, dtype=np.int64)


def hamming_topk(query_packed: np.ndarray, database: HashCodes, k: int) -> np.ndarray:
    """doc_ids of the k nearest database codes; ties by ascending doc_id."""
    if k > database.n_docs:
        raise DataError(f"k={k} exceeds database size {database.n_docs}")
    dist = hamming_distances(query_packed, database.packed)[0]
    order = np.lexsort((database.doc_ids, dist))
    return database.doc_ids[order[:k]]


def precision_at_k(
    queries: HashCodes,
    database: HashCodes,
    query_labels,
    database_labels,
    k: int = 100,
    batch: int = 64,
) -> RetrievalResult:
    """Fraction of the k Hamming-nearest database docs sharing at least one
    label with the query, averaged over labeled queries.

    Unlabeled queries are excluded with a warning.  Retrieval order is a
    pure function of (codes, doc_ids), independent of database row order.
    """
    if queries.code_length != database.code_length:
        raise DataError(
            f"code length mismatch: {queries.code_length} vs {database.code_length}"
        )
    if k > database.n_docs:
        raise DataError(f"k={k} exceeds database size {database.n_docs}")
    query_labels = list(query_labels)
    database_labels = list(database_labels)
    if len(query_labels) != queries.n_docs or len(database_labels) != database.n_docs:
        raise DataError("label list lengths do not match code counts")

    unlabeled = [i for i, ls in enumerate(query_labels) if not ls]
    if unlabeled:
        warnings.warn(
            f"excluding {len(unlabeled)} unlabeled query doc(s) from precision@{k}",
            stacklevel=2,
        )
    keep = np.asarray([i for i in range(queries.n_docs) if query_labels[i]], dtype=np.int64)
    if keep.size == 0:
        raise DataError("no labeled queries")

    precisions = np.empty(keep.size, dtype=np.float64)
    for start in range(0, keep.size, batch):
        idx = keep[start : start + batch]
        dist = hamming_distances(queries.packed[idx], database.packed)
        for row, qi in enumerate(idx):
            order = np.lexsort((database.doc_ids, dist[row]))[:k]
            qlabels = query_labels[qi]
            hits = sum(1 for db_row in order if qlabels & database_labels[db_row])
            precisions[start + row] = hits / k
    return RetrievalResult(precisions, float(precisions.mean()), k)


def save_codes(codes: HashCodes, path: str, header_comments: dict[str, str] | None = None) -> None:
    """Text format: header ``n_docs d``, then ``doc_id <hex>`` per line with
    bit 0 of the code in the LSB of byte 0."""
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in (header_comments or {}).items():
            fh.write(f"# {key}: {value}\n")
        fh.write(f"{codes.n_docs} {codes.code_length}\n")
        for doc_id, row in zip(codes.doc_ids, codes.packed):
            fh.write(f"{int(doc_id)} {row.tobytes().hex()}\n")


def load_codes(path: str) -> tuple[HashCodes, dict[str, str]]:
    comments: dict[str, str] = {}
    header = None
    doc_ids: list[int] = []
    rows: list[bytes] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].partition(":")
                comments[key.strip()] = value.strip()
                continue
            parts = line.split()
            if header is None:
                if len(parts) != 2:
                    raise ParseError("expected header 'n_docs d'", path, line_no)
                header = (int(parts[0]), int(parts[1]))
                continue
            if len(parts) != 2:
                raise ParseError(f"expected 'doc_id <hex>', got {line!r}", path, line_no)
            doc_ids.append(int(parts[0]))
            rows.append(bytes.fromhex(parts[1]))
    if header is None:
        raise ParseError("missing header line", path)
    n_docs, d = header
    if len(rows) != n_docs:
        raise DataError(f"{path}: header declares {n_docs} docs but file has {len(rows)}")
    n_bytes = (d + 7) // 8
    if any(len(r) != n_bytes for r in rows):
        raise DataError(f"{path}: expected {n_bytes} code bytes per row")
    packed = (
        np.frombuffer(b"".join(rows), dtype=np.uint8).reshape(n_docs, n_bytes)
        if n_docs
        else np.empty((0, n_bytes), dtype=np.uint8)
    )
    return HashCodes(np.asarray(doc_ids, dtype=np.int64), d, packed.copy()), comments
