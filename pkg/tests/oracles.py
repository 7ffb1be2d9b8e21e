"""Independent reference implementations used as test oracles.

Everything here is deliberately naive (brute force, enumeration,
bit-by-bit) and shares no code with the library paths it checks.
"""

import math

import numpy as np


def brute_force_knn_edges(x_dense: np.ndarray, k: int, metric="cosine", bandwidth=None):
    """All-pairs KNN graph as a dict {(i, j): w} with i < j.

    Mirrors the contract: per-row top-k (self excluded, ties by ascending
    index), max-union symmetrization, exact zeros dropped.
    """
    n = x_dense.shape[0]
    norms = np.linalg.norm(x_dense, axis=1)
    sims = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            if metric == "cosine":
                if norms[i] == 0 or norms[j] == 0:
                    sims[i, j] = -np.inf
                else:
                    sims[i, j] = float(x_dense[i] @ x_dense[j]) / (norms[i] * norms[j])
            else:
                if norms[i] == 0 or norms[j] == 0:
                    sims[i, j] = -np.inf
                else:
                    sims[i, j] = -float(np.sum((x_dense[i] - x_dense[j]) ** 2))
    edges = {}
    for i in range(n):
        if norms[i] == 0:
            continue
        ranked = sorted(range(n), key=lambda j: (-sims[i, j], j))
        ranked = [j for j in ranked if j != i][:k]
        for j in ranked:
            if sims[i, j] == -np.inf:
                continue
            w = sims[i, j] if metric == "cosine" else math.exp(sims[i, j] / bandwidth)
            key = (min(i, j), max(i, j))
            edges[key] = max(edges.get(key, 0.0), w)
    return {key: w for key, w in edges.items() if w > 0.0}


class UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, a):
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.parent[ra] = rb
        return True


def union_find_components(n_nodes, edges):
    uf = UnionFind(n_nodes)
    for i, j in edges:
        uf.union(i, j)
    groups = {}
    for node in range(n_nodes):
        groups.setdefault(uf.find(node), set()).add(node)
    return sorted(groups.values(), key=min)


def is_acyclic(n_nodes, edges):
    uf = UnionFind(n_nodes)
    return all(uf.union(i, j) for i, j in edges)


def enumerate_tree_distribution(neighbors, cosines, alpha):
    """Exact distribution over spanning-forest edge sets produced by the
    randomized DFS: uniform restarts over unvisited nodes, neighbor choice
    softmax(cos / alpha) over unvisited neighbors, pop on exhaustion.

    Returns {frozenset(edges): probability}.  Exponential in graph size;
    meant for <= ~5 nodes.
    """
    n = len(neighbors)
    results = {}

    def walk(visited, stack, edges, prob):
        if not stack:
            unvisited = [u for u in range(n) if not visited[u]]
            if not unvisited:
                key = frozenset(edges)
                results[key] = results.get(key, 0.0) + prob
                return
            for start in unvisited:
                v2 = visited.copy()
                v2[start] = True
                walk(v2, [start], edges, prob / len(unvisited))
            return
        i = stack[-1]
        cand = [j for j in neighbors[i] if not visited[j]]
        if not cand:
            walk(visited, stack[:-1], edges, prob)
            return
        logits = [cosines[(i, j)] / alpha for j in cand]
        mx = max(logits)
        ws = [math.exp(l - mx) for l in logits]
        z = sum(ws)
        for j, w in zip(cand, ws):
            v2 = visited.copy()
            v2[j] = True
            walk(v2, stack + [j], edges + [(min(i, j), max(i, j))], prob * w / z)

    walk([False] * n, [], [], 1.0)
    assert abs(sum(results.values()) - 1.0) < 1e-12
    return results


def edge_probabilities(distribution):
    probs = {}
    for edge_set, p in distribution.items():
        for e in edge_set:
            probs[e] = probs.get(e, 0.0) + p
    return probs


def naive_hamming(bits_a, bits_b):
    return int(sum(int(x) != int(y) for x, y in zip(bits_a, bits_b)))


def affine_sigmoid_softplus_reference(x_dense, w_mu, b_mu, w_sigma, b_sigma, temp, floor):
    """Straight-line re-evaluation of the encoder pipeline."""
    mu_rows, sigma_rows = [], []
    for row in np.atleast_2d(x_dense):
        a_mu = w_mu @ row + b_mu
        a_sig = w_sigma @ row + b_sigma
        mu_rows.append(1.0 / (1.0 + np.exp(-a_mu / temp)))
        sigma_rows.append(np.log1p(np.exp(a_sig)) + floor)
    return np.array(mu_rows), np.array(sigma_rows)


def naive_decode_logprob(z, counts_dense, dec_e, dec_b):
    """Unstabilized softmax log-likelihood; valid at moderate magnitudes."""
    scores = z @ dec_e + dec_b
    probs = np.exp(scores) / np.exp(scores).sum()
    return float(np.sum(counts_dense * np.log(probs)))
