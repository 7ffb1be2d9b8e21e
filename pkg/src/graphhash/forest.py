"""Random spanning forests of the affinity graph.

Each tree comes from a randomized depth-first traversal: pick an unvisited
start node uniformly at random, then repeatedly sample an unvisited
neighbor j of the stack-top node i with probability proportional to
``exp(cos(x_i, x_j) / alpha)``, marking nodes visited at push time; when
the top node has no unvisited neighbor, pop.  On a disconnected graph the
restart loop yields a spanning forest.  Low ``alpha`` concentrates the
traversal on high-similarity edges, ``alpha = 1`` is closest to uniform.

Neighbor sampling uses cosines of the raw feature rows, not the stored
edge weights, so it behaves identically under both graph metrics.

Trees are mutually independent: tree ``t`` uses a generator seeded with
``rng_seed + t``, so forests are reproducible and trees could be drawn in
parallel.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, DataError, ParseError
from .graph import AffinityGraph, _l2_normalize

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TreeGenConfig:
    m_trees: int
    alpha: float = 1.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.m_trees < 1:
            raise ConfigError(f"m_trees must be >= 1, got {self.m_trees}")
        if not 0 < self.alpha <= 1:
            raise ConfigError(f"alpha must lie in (0, 1], got {self.alpha}")


@dataclass
class SpanningForest:
    """M sampled trees plus the collapsed weighted edge list.

    ``weights[e]`` is the fraction of trees containing edge
    ``(edge_i[e], edge_j[e])``; edges are canonical (i < j) and sorted.
    """

    m_trees: int
    trees: list[np.ndarray]
    edge_i: np.ndarray
    edge_j: np.ndarray
    weights: np.ndarray

    @property
    def n_weighted_edges(self) -> int:
        return len(self.weights)


def edge_cosines(graph: AffinityGraph, features: sp.csr_matrix) -> sp.csr_matrix:
    """Symmetric matrix of feature cosines on the graph's edge support."""
    if features.shape[0] != graph.n_nodes:
        raise DataError(
            f"feature rows ({features.shape[0]}) do not match graph nodes ({graph.n_nodes})"
        )
    xn, _ = _l2_normalize(features)
    cos = np.asarray(
        xn[graph.edge_i].multiply(xn[graph.edge_j]).sum(axis=1)
    ).ravel()
    ii = np.concatenate([graph.edge_i, graph.edge_j])
    jj = np.concatenate([graph.edge_j, graph.edge_i])
    cc = np.concatenate([cos, cos])
    return sp.csr_matrix((cc, (ii, jj)), shape=(graph.n_nodes, graph.n_nodes))


def _sample_tree(
    adj_indices: np.ndarray,
    adj_indptr: np.ndarray,
    adj_cos: np.ndarray,
    n_nodes: int,
    alpha: float,
    rng: np.random.Generator,
) -> np.ndarray:
    visited = np.zeros(n_nodes, dtype=bool)
    edges: list[tuple[int, int]] = []
    while not visited.all():
        unvisited = np.flatnonzero(~visited)
        start = int(unvisited[rng.integers(len(unvisited))])
        visited[start] = True
        stack = [start]
        while stack:
            i = stack[-1]
            lo, hi = adj_indptr[i], adj_indptr[i + 1]
            nbrs = adj_indices[lo:hi]
            open_mask = ~visited[nbrs]
            if not open_mask.any():
                stack.pop()
                continue
            cand = nbrs[open_mask]
            logits = adj_cos[lo:hi][open_mask] / alpha
            p = np.exp(logits - logits.max())
            p /= p.sum()
            j = int(cand[rng.choice(len(cand), p=p)])
            visited[j] = True
            stack.append(j)
            edges.append((i, j))
    return np.asarray(edges, dtype=np.int64).reshape(-1, 2)


def generate_forest(
    graph: AffinityGraph, features: sp.csr_matrix, config: TreeGenConfig
) -> SpanningForest:
    """Sample ``m_trees`` spanning trees (forests, if disconnected)."""
    if graph.n_nodes == 0:
        return SpanningForest(config.m_trees, [], *_empty_edges())
    cos = edge_cosines(graph, features)
    trees = [
        _sample_tree(
            cos.indices,
            cos.indptr,
            cos.data,
            graph.n_nodes,
            config.alpha,
            np.random.default_rng(config.rng_seed + t),
        )
        for t in range(config.m_trees)
    ]
    forest = collapse_weights(config.m_trees, trees)
    logger.info(
        "generated %d trees over %d nodes: %d distinct weighted edges",
        config.m_trees,
        graph.n_nodes,
        forest.n_weighted_edges,
    )
    return forest


def _empty_edges():
    return (
        np.empty(0, dtype=np.int64),
        np.empty(0, dtype=np.int64),
        np.empty(0, dtype=np.float64),
    )


def collapse_weights(m_trees: int, trees: list[np.ndarray]) -> SpanningForest:
    """Merge trees into one weighted edge list with w = count / M."""
    if m_trees < 1:
        raise ConfigError("m_trees must be >= 1")
    counts: dict[tuple[int, int], int] = {}
    for tree in trees:
        for a, b in tree:
            key = (int(min(a, b)), int(max(a, b)))
            counts[key] = counts.get(key, 0) + 1
    items = sorted(counts.items())
    edge_i = np.asarray([a for (a, _), _ in items], dtype=np.int64)
    edge_j = np.asarray([b for (_, b), _ in items], dtype=np.int64)
    weights = np.asarray([c for _, c in items], dtype=np.float64) / m_trees
    return SpanningForest(m_trees, trees, edge_i, edge_j, weights)


def save_forest(forest: SpanningForest, path: str, header_comments: dict[str, str] | None = None) -> None:
    """Text format: header ``M n_weighted_edges``, then ``i j w_ij`` lines."""
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in (header_comments or {}).items():
            fh.write(f"# {key}: {value}\n")
        fh.write(f"{forest.m_trees} {forest.n_weighted_edges}\n")
        for i, j, w in zip(forest.edge_i, forest.edge_j, forest.weights):
            fh.write(f"{int(i)} {int(j)} {w:.17g}\n")


def load_forest(path: str) -> tuple[SpanningForest, dict[str, str]]:
    """Load a collapsed forest; per-tree edge lists are not persisted."""
    comments: dict[str, str] = {}
    header = None
    rows: list[tuple[int, int, float]] = []
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
                    raise ParseError("expected header 'M n_weighted_edges'", path, line_no)
                header = (int(parts[0]), int(parts[1]))
                continue
            if len(parts) != 3:
                raise ParseError(f"expected 'i j w_ij', got {line!r}", path, line_no)
            rows.append((int(parts[0]), int(parts[1]), float(parts[2])))
    if header is None:
        raise ParseError("missing header line", path)
    m_trees, n_edges = header
    if len(rows) != n_edges:
        raise DataError(f"{path}: header declares {n_edges} edges but file has {len(rows)}")
    forest = SpanningForest(
        m_trees,
        [],
        np.asarray([r[0] for r in rows], dtype=np.int64),
        np.asarray([r[1] for r in rows], dtype=np.int64),
        np.asarray([r[2] for r in rows], dtype=np.float64),
    )
    if forest.n_weighted_edges and (
        np.any(forest.weights <= 0) or np.any(forest.weights > 1)
    ):
        raise DataError("forest weights must lie in (0, 1]")
    return forest, comments
