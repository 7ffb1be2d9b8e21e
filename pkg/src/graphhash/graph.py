"""KNN affinity graph over training documents.

Exact k-nearest-neighbour search by blocked dense similarity against the
sparse feature rows; no approximate index is needed at the corpus sizes
this package targets (tens of thousands of rows).

Edge weights: cosine similarity of L2-normalized rows (default), or a
Gaussian kernel ``exp(-||x_i - x_j||^2 / bandwidth)`` over the Euclidean
KNN support.  Directed KNN edges are symmetrized by taking the max of the
two directions, and exact-zero weights are dropped.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components as _cc

from .corpus import Corpus
from .errors import ConfigError, DataError, ParseError

logger = logging.getLogger(__name__)

_BLOCK = 256


@dataclass(frozen=True)
class AffinityConfig:
    k: int
    metric: str = "cosine"
    bandwidth: float | None = None

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError(f"k must be positive, got {self.k}")
        if self.metric not in ("cosine", "gaussian-kernel"):
            raise ConfigError(f"unknown metric {self.metric!r}")
        if self.metric == "gaussian-kernel" and (
            self.bandwidth is None or self.bandwidth <= 0
        ):
            raise ConfigError("gaussian-kernel metric requires a positive bandwidth")


@dataclass
class AffinityGraph:
    """Undirected weighted graph; edges stored once with ``edge_i < edge_j``."""

    n_nodes: int
    edge_i: np.ndarray
    edge_j: np.ndarray
    weights: np.ndarray

    @property
    def n_edges(self) -> int:
        return len(self.weights)

    def adjacency(self) -> sp.csr_matrix:
        """Symmetric sparse adjacency with a_ij = a_ji."""
        ii = np.concatenate([self.edge_i, self.edge_j])
        jj = np.concatenate([self.edge_j, self.edge_i])
        ww = np.concatenate([self.weights, self.weights])
        return sp.csr_matrix((ww, (ii, jj)), shape=(self.n_nodes, self.n_nodes))

    def neighbor_lists(self) -> list[np.ndarray]:
        adj = self.adjacency()
        return [adj.indices[adj.indptr[i] : adj.indptr[i + 1]] for i in range(self.n_nodes)]

    def edge_weight(self, i: int, j: int) -> float:
        a, b = (i, j) if i < j else (j, i)
        mask = (self.edge_i == a) & (self.edge_j == b)
        hit = np.flatnonzero(mask)
        return float(self.weights[hit[0]]) if hit.size else 0.0

    def validate(self) -> None:
        if np.any(self.edge_i >= self.edge_j):
            raise DataError("edges must be stored with i < j")
        if np.any(self.edge_j >= self.n_nodes) or np.any(self.edge_i < 0):
            raise DataError("edge endpoint out of range")
        if self.n_edges and (
            np.any(self.weights <= 0) or np.any(self.weights > 1) or not np.all(np.isfinite(self.weights))
        ):
            raise DataError("edge weights must lie in (0, 1]")
        pairs = set(zip(self.edge_i.tolist(), self.edge_j.tolist()))
        if len(pairs) != self.n_edges:
            raise DataError("duplicate edges")


def _l2_normalize(x: sp.csr_matrix) -> tuple[sp.csr_matrix, np.ndarray]:
    norms = np.sqrt(np.asarray(x.multiply(x).sum(axis=1)).ravel())
    xn = x.copy().astype(np.float64)
    nz = norms > 0
    scale = np.ones_like(norms)
    scale[nz] = 1.0 / norms[nz]
    xn = sp.diags(scale) @ xn
    return xn.tocsr(), norms


def _topk_rows(scores: np.ndarray, row_offset: int, k: int) -> list[np.ndarray]:
    """Indices of the k largest entries per row, self excluded, ties broken
    by ascending column index."""
    out = []
    n = scores.shape[1]
    cols = np.arange(n)
    for local, row in enumerate(scores):
        row = row.copy()
        row[row_offset + local] = -np.inf
        order = np.lexsort((cols, -row))
        out.append(order[:k])
    return out


def build_knn_graph(corpus: Corpus, config: AffinityConfig, split: str = "train") -> AffinityGraph:
    """Exact KNN graph over the given split's feature rows.

    Rows with zero norm are excluded from the search (isolated nodes) with
    a warning; node indices still cover the whole split so downstream
    artifacts stay aligned with split row positions.
    """
    x = corpus.submatrix(split)
    n = x.shape[0]
    if n == 0:
        raise DataError(f"{split} split is empty")
    if config.k >= n:
        raise ConfigError(f"k={config.k} must be smaller than the number of rows ({n})")
    xn, norms = _l2_normalize(x)
    zero_rows = np.flatnonzero(norms == 0)
    if zero_rows.size:
        warnings.warn(
            f"{zero_rows.size} zero-feature row(s) excluded from KNN search "
            f"(rows {zero_rows[:10].tolist()})",
            stacklevel=2,
        )
    use_gaussian = config.metric == "gaussian-kernel"
    sq_norms = norms**2
    dense_x = None
    pairs: dict[tuple[int, int], float] = {}
    for start in range(0, n, _BLOCK):
        stop = min(start + _BLOCK, n)
        if use_gaussian:
            # Euclidean KNN: maximize -(|xi|^2 + |xj|^2 - 2 xi.xj).
            gram = (x[start:stop] @ x.T).toarray()
            scores = 2.0 * gram - sq_norms[None, :] - sq_norms[start:stop, None]
        else:
            scores = (xn[start:stop] @ xn.T).toarray()
        scores[:, zero_rows] = -np.inf
        for local, neigh in enumerate(_topk_rows(scores, start, config.k)):
            i = start + local
            if norms[i] == 0:
                continue
            for j in neigh:
                j = int(j)
                if scores[local, j] == -np.inf:
                    continue
                if use_gaussian:
                    w = float(np.exp(scores[local, j] / config.bandwidth))
                else:
                    w = float(scores[local, j])
                a, b = (i, j) if i < j else (j, i)
                key = (a, b)
                if w > pairs.get(key, 0.0):
                    pairs[key] = w
    # cosine of nonnegative rows is mathematically in [0, 1]; clip rounding spill
    items = sorted((key, min(w, 1.0)) for key, w in pairs.items() if w > 0.0)
    edge_i = np.asarray([a for (a, _), _ in items], dtype=np.int64)
    edge_j = np.asarray([b for (_, b), _ in items], dtype=np.int64)
    weights = np.asarray([w for _, w in items], dtype=np.float64)
    graph = AffinityGraph(n, edge_i, edge_j, weights)
    graph.validate()
    n_comp = len(connected_components(graph))
    logger.info(
        "built %s KNN graph: n=%d edges=%d components=%d", config.metric, n, graph.n_edges, n_comp
    )
    return graph


def connected_components(graph: AffinityGraph) -> list[set[int]]:
    """Partition of nodes into connected components (singletons allowed)."""
    if graph.n_edges == 0:
        return [{i} for i in range(graph.n_nodes)]
    n_comp, labels = _cc(graph.adjacency(), directed=False)
    comps: list[set[int]] = [set() for _ in range(n_comp)]
    for node, lab in enumerate(labels):
        comps[lab].add(node)
    return comps


def save_graph(graph: AffinityGraph, path: str, header_comments: dict[str, str] | None = None) -> None:
    """Text format: header ``n_nodes n_edges``, then ``i j a_ij`` lines with
    i < j and 17-significant-digit weights."""
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in (header_comments or {}).items():
            fh.write(f"# {key}: {value}\n")
        fh.write(f"{graph.n_nodes} {graph.n_edges}\n")
        for i, j, w in zip(graph.edge_i, graph.edge_j, graph.weights):
            fh.write(f"{int(i)} {int(j)} {w:.17g}\n")


def load_graph(path: str) -> tuple[AffinityGraph, dict[str, str]]:
    comments: dict[str, str] = {}
    edges: list[tuple[int, int, float]] = []
    header = None
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
                    raise ParseError("expected header 'n_nodes n_edges'", path, line_no)
                header = (int(parts[0]), int(parts[1]))
                continue
            if len(parts) != 3:
                raise ParseError(f"expected 'i j a_ij', got {line!r}", path, line_no)
            edges.append((int(parts[0]), int(parts[1]), float(parts[2])))
    if header is None:
        raise ParseError("missing header line", path)
    n_nodes, n_edges = header
    if len(edges) != n_edges:
        raise DataError(f"{path}: header declares {n_edges} edges but file has {len(edges)}")
    graph = AffinityGraph(
        n_nodes,
        np.asarray([e[0] for e in edges], dtype=np.int64),
        np.asarray([e[1] for e in edges], dtype=np.int64),
        np.asarray([e[2] for e in edges], dtype=np.float64),
    )
    graph.validate()
    return graph, comments
