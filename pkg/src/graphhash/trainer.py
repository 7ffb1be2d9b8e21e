"""Minibatch training of the hashing model.

The per-step objective is normalized per document:

    total = mean_i [recon_i] - beta * ( mean_i [klS_i]
            + (E_w / (b_e * N)) * sum_e w_e * corr_e )

where the node batch is an unbiased estimate of the corpus mean and the
edge batch (size b_e, drawn uniformly from the E_w collapsed forest edges)
is scaled so its expectation is the per-document edge total.  With the
node batch equal to all N documents and the edge batch equal to the whole
edge list, the estimate coincides exactly with the full objective divided
by N.

Edge terms are closed-form KL corrections: no reparameterization noise is
drawn for pairs, a single draw per document feeds the reconstruction term.

Ablations: ``ind`` ignores edges entirely (independent model), ``prior``
keeps the edge prior coupling but freezes the posterior correlation gamma
at zero.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import gauss, hashcodes, model
from .corpus import Corpus
from .errors import ConfigError, DataError, DivergenceError
from .forest import SpanningForest
from .graph import AffinityGraph

logger = logging.getLogger(__name__)

ABLATIONS = ("full", "prior", "ind")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    learning_rate: float = 0.001
    kl_weight: float = 0.05
    epochs: int = 50
    lam: float = 0.99
    rng_seed: int = 0
    eval_k: int = 100
    patience: int = 10
    ablation: str = "full"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.kl_weight < 0:
            raise ConfigError("kl_weight must be nonnegative")
        if self.epochs < 0:
            raise ConfigError("epochs must be nonnegative")
        if not 0 <= self.lam < 1:
            raise ConfigError("lam must lie in [0, 1)")
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"ablation must be one of {ABLATIONS}")


@dataclass
class MinibatchObjective:
    recon_term: float
    singleton_kl: float
    edge_term: float
    total: float

    def check_finite(self) -> None:
        for name in ("recon_term", "singleton_kl", "edge_term", "total"):
            if not np.isfinite(getattr(self, name)):
                raise DivergenceError(f"objective component {name} is non-finite")


@dataclass
class TrainingData:
    """Training-split artifacts resolved to aligned arrays."""

    features: sp.csr_matrix
    counts: sp.csr_matrix
    edges_i: np.ndarray
    edges_j: np.ndarray
    edge_w: np.ndarray
    edge_tau: np.ndarray

    @property
    def n_docs(self) -> int:
        return self.features.shape[0]

    @property
    def n_edges(self) -> int:
        return len(self.edge_w)

    @classmethod
    def assemble(
        cls,
        corpus: Corpus,
        graph: AffinityGraph | None,
        forest: SpanningForest | None,
        lam: float,
        ablation: str = "full",
    ) -> "TrainingData":
        x = corpus.submatrix("train").astype(np.float64)
        if graph is not None and graph.n_nodes != x.shape[0]:
            raise DataError(
                f"graph has {graph.n_nodes} nodes but train split has {x.shape[0]} rows"
            )
        if ablation == "ind" or forest is None or forest.n_weighted_edges == 0:
            empty = np.empty(0, dtype=np.int64)
            return cls(x, x, empty, empty, np.empty(0), np.empty(0))
        if graph is None:
            raise DataError("a forest without its graph cannot provide edge affinities")
        adj = graph.adjacency()
        a = np.asarray(adj[forest.edge_i, forest.edge_j]).ravel()
        if np.any(a <= 0):
            raise DataError("forest contains edges absent from the graph")
        tau = gauss.clamp_tau(lam * a)
        return cls(x, x, forest.edge_i.copy(), forest.edge_j.copy(), forest.weights.copy(), tau)


# ---------------------------------------------------------------------------
# objective terms


def node_loss(params, x_row, counts_row, eps, config: model.ModelConfig, beta: float) -> float:
    """Single-document term: one-draw reconstruction minus beta * KL."""
    enc = model.encode_batch(params, x_row, config)
    z = enc.mu + enc.sigma * np.atleast_2d(eps)
    dec = model.decode_logprob_batch(params, z, counts_row, config)
    kl = gauss.kl_singleton_arrays(enc.mu, enc.sigma)
    return float(dec.logprobs[0] - beta * kl[0])


def edge_loss(
    params,
    x_i,
    x_j,
    a_ij: float,
    lam: float,
    config: model.ModelConfig,
    beta: float,
    freeze_gamma: bool = False,
) -> float:
    """Single-edge term: beta-weighted pairwise KL surcharge (closed form)."""
    enc_i = model.encode_batch(params, x_i, config)
    enc_j = model.encode_batch(params, x_j, config)
    if freeze_gamma:
        gamma = np.zeros_like(enc_i.mu)
    else:
        gamma = model.encode_pair_batch(params, x_i, x_j, config).gamma
    tau = np.asarray([gauss.clamp_tau(lam * a_ij)])
    corr = gauss.edge_correction_arrays(enc_i.mu, enc_i.sigma, enc_j.mu, enc_j.sigma, gamma, tau)
    return float(beta * corr[0])


def minibatch_forward(
    params: model.ModelParams,
    data: TrainingData,
    node_idx: np.ndarray,
    edge_idx: np.ndarray | None,
    eps: np.ndarray,
    config: model.ModelConfig,
    beta: float,
    freeze_gamma: bool = False,
) -> tuple[MinibatchObjective, model.MinibatchTape]:
    """Evaluate the minibatch objective, recording the tape for backward."""
    node_idx = np.asarray(node_idx, dtype=np.int64)
    if node_idx.size == 0:
        raise ConfigError("node batch must be nonempty")
    enc = model.encode_batch(params, data.features[node_idx], config)
    z = enc.mu + enc.sigma * eps
    dec = model.decode_logprob_batch(params, z, data.counts[node_idx], config)
    kls = gauss.kl_singleton_arrays(enc.mu, enc.sigma)
    node_scale = 1.0 / node_idx.size
    recon_term = float(dec.logprobs.sum() * node_scale)
    singleton_kl = float(kls.sum() * node_scale)

    edge_term = 0.0
    edge_scale = 0.0
    edge_tape = None
    if edge_idx is not None and len(edge_idx) and data.n_edges:
        edge_idx = np.asarray(edge_idx, dtype=np.int64)
        rows_i = data.edges_i[edge_idx]
        rows_j = data.edges_j[edge_idx]
        enc_i = model.encode_batch(params, data.features[rows_i], config)
        enc_j = model.encode_batch(params, data.features[rows_j], config)
        pair = None
        if freeze_gamma:
            gamma = np.zeros_like(enc_i.mu)
        else:
            pair = model.encode_pair_batch(
                params, data.features[rows_i], data.features[rows_j], config
            )
            gamma = pair.gamma
        tau = data.edge_tau[edge_idx]
        w = data.edge_w[edge_idx]
        corr = gauss.edge_correction_arrays(
            enc_i.mu, enc_i.sigma, enc_j.mu, enc_j.sigma, gamma, tau
        )
        edge_scale = data.n_edges / (edge_idx.size * data.n_docs)
        edge_term = float(edge_scale * np.sum(w * corr))
        edge_tape = model.EdgeTermTape(enc_i, enc_j, pair, gamma, tau, w)

    total = recon_term - beta * (singleton_kl + edge_term)
    obj = MinibatchObjective(recon_term, singleton_kl, edge_term, total)
    tape = model.MinibatchTape(
        config=config,
        beta=beta,
        node_scale=node_scale,
        edge_scale=edge_scale,
        node=model.NodeTermTape(enc, eps, dec),
        edge=edge_tape,
    )
    return obj, tape


def minibatch_objective(
    params, data, node_idx, edge_idx, eps, config, beta, freeze_gamma=False
) -> MinibatchObjective:
    return minibatch_forward(params, data, node_idx, edge_idx, eps, config, beta, freeze_gamma)[0]


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params: model.ModelParams) -> "AdamState":
        return cls(params.zero_grads(), params.zero_grads(), 0)


def adam_step(
    params: model.ModelParams,
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> tuple[model.ModelParams, AdamState]:
    """One bias-corrected adaptive-moment descent step (in place)."""
    b1, b2 = betas
    state.t += 1
    for name, p in params.blocks().items():
        g = grads[name]
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = state.m[name] / (1.0 - b1**state.t)
        v_hat = state.v[name] / (1.0 - b2**state.t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return params, state


# ---------------------------------------------------------------------------
# training loop


@dataclass
class EpochStats:
    epoch: int
    recon: float
    kl_node: float
    kl_edge: float
    total: float
    val_precision: float
    seconds: float

    def line(self, with_seconds: bool = True) -> str:
        cells = [
            str(self.epoch),
            f"{self.recon:.10g}",
            f"{self.kl_node:.10g}",
            f"{self.kl_edge:.10g}",
            f"{self.total:.10g}",
            f"{self.val_precision:.10g}",
        ]
        if with_seconds:
            cells.append(f"{self.seconds:.3f}")
        return "\t".join(cells)


@dataclass
class TrainingLog:
    epochs: list[EpochStats] = field(default_factory=list)

    def lines(self, with_seconds: bool = True) -> list[str]:
        return [e.line(with_seconds) for e in self.epochs]

    def write(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("epoch\trecon\tkl_node\tkl_edge\ttotal\tval_precision\tseconds\n")
            for line in self.lines():
                fh.write(line + "\n")


@dataclass
class TrainResult:
    params: model.ModelParams
    log: TrainingLog
    best_epoch: int
    best_val_precision: float
    diverged: bool = False


def _validation_precision(params, config, corpus: Corpus, eval_k: int) -> float:
    val_rows = corpus.rows_of("val")
    train_rows = corpus.rows_of("train")
    if val_rows.size == 0 or eval_k > train_rows.size:
        return float("nan")
    db = hashcodes.binarize(
        params, corpus.matrix[train_rows], config, corpus.doc_ids[train_rows]
    )
    queries = hashcodes.binarize(
        params, corpus.matrix[val_rows], config, corpus.doc_ids[val_rows]
    )
    result = hashcodes.precision_at_k(
        queries, db, corpus.labels_of("val"), corpus.labels_of("train"), k=eval_k
    )
    return result.mean_precision


def train(
    corpus: Corpus,
    graph: AffinityGraph | None,
    forest: SpanningForest | None,
    model_config: model.ModelConfig,
    train_config: TrainConfig,
) -> TrainResult:
    """Run minibatch training; returns the best-validation parameters.

    Per step: sample a node batch (an epoch is a shuffled pass over the
    train split), sample the same number of edges uniformly with
    replacement, take one gradient step on the objective.  Aborts on a
    non-finite objective, returning the last good parameters.
    """
    if corpus.vocab_size != model_config.vocab_size:
        raise ConfigError("model vocab_size does not match corpus")
    data = TrainingData.assemble(
        corpus, graph, forest, train_config.lam, train_config.ablation
    )
    rng = np.random.default_rng(train_config.rng_seed)
    params = model.init_params(model_config, seed=train_config.rng_seed)
    state = AdamState.for_params(params)
    freeze_gamma = train_config.ablation == "prior"
    beta = train_config.kl_weight
    n = data.n_docs
    b = min(train_config.batch_size, n)

    log = TrainingLog()
    best = params.copy()
    best_epoch = -1
    best_val = -np.inf
    stale = 0
    diverged = False

    for epoch in range(train_config.epochs):
        t0 = time.perf_counter()
        perm = rng.permutation(n)
        sums = np.zeros(4)
        steps = 0
        for start in range(0, n, b):
            node_idx = perm[start : start + b]
            edge_idx = (
                rng.integers(0, data.n_edges, size=node_idx.size) if data.n_edges else None
            )
            eps = rng.standard_normal((node_idx.size, model_config.latent_dim))
            try:
                obj, tape = minibatch_forward(
                    params, data, node_idx, edge_idx, eps, model_config, beta, freeze_gamma
                )
                obj.check_finite()
                grads = model.backward(params, tape)
            except DivergenceError as err:
                logger.error("aborting at epoch %d: %s", epoch, err)
                diverged = True
                break
            neg = {k: -v for k, v in grads.items()}
            params, state = adam_step(params, neg, state, train_config.learning_rate)
            sums += (obj.recon_term, obj.singleton_kl, obj.edge_term, obj.total)
            steps += 1
        if diverged:
            break
        val = _validation_precision(params, model_config, corpus, train_config.eval_k)
        stats = EpochStats(
            epoch,
            *(sums / max(steps, 1)),
            val_precision=val,
            seconds=time.perf_counter() - t0,
        )
        log.epochs.append(stats)
        logger.info("epoch %s", stats.line())
        if np.isnan(val) or val > best_val:
            if not np.isnan(val):
                best_val = val
            best = params.copy()
            best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= train_config.patience:
                logger.info("early stop at epoch %d (no improvement)", epoch)
                break

    if diverged and best_epoch < 0:
        best = params
    return TrainResult(
        params=best,
        log=log,
        best_epoch=best_epoch,
        best_val_precision=float(best_val) if np.isfinite(best_val) else float("nan"),
        diverged=diverged,
    )
