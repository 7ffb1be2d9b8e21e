"""Three-component network: variational encoder, order-irrelevant pair
encoder, and softmax decoder.

All layers are single affine maps (per the reference architecture), so
gradients are hand-derived and composed through lightweight forward tapes
instead of a general autodiff framework:

* encoder:      mu = sigmoid((W_mu x + b_mu) / temp),
                sigma = softplus(W_sig x + b_sig) + SIGMA_FLOOR
* pair encoder: gamma = CORR_BOUND * (sig(u_ij) + sig(u_ji) - 1) with
                u_ij = W_corr [x_i ; x_j] + b_corr; exactly symmetric in
                (x_i, x_j) by construction
* decoder:      log p(x | z) = sum_w c_w (z . E_w + b_w) - C * logsumexp

``backward`` consumes the tape recorded by the trainer's minibatch forward
and returns exact gradients of the scalar objective for every parameter
block.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .errors import ConfigError, DataError, DivergenceError
from .gauss import (
    CORR_BOUND,
    SIGMA_FLOOR,
    SingletonPosterior,
    edge_correction_grads,
    kl_singleton_grads,
)


@dataclass(frozen=True)
class ModelConfig:
    latent_dim: int
    vocab_size: int
    sigmoid_temp: float = 1.0

    def __post_init__(self):
        if self.latent_dim < 1:
            raise ConfigError(f"latent_dim must be positive, got {self.latent_dim}")
        if self.vocab_size < 1:
            raise ConfigError(f"vocab_size must be positive, got {self.vocab_size}")
        if self.sigmoid_temp <= 0:
            raise ConfigError(f"sigmoid_temp must be positive, got {self.sigmoid_temp}")


@dataclass
class ModelParams:
    w_mu: np.ndarray      # (d, V)
    b_mu: np.ndarray      # (d,)
    w_sigma: np.ndarray   # (d, V)
    b_sigma: np.ndarray   # (d,)
    w_corr: np.ndarray    # (d, 2V)
    b_corr: np.ndarray    # (d,)
    dec_e: np.ndarray     # (d, V)
    dec_b: np.ndarray     # (V,)

    BLOCKS = ("w_mu", "b_mu", "w_sigma", "b_sigma", "w_corr", "b_corr", "dec_e", "dec_b")

    def blocks(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.BLOCKS}

    def copy(self) -> "ModelParams":
        return ModelParams(**{k: v.copy() for k, v in self.blocks().items()})

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.blocks().items()}

    def check_finite(self) -> None:
        for name, arr in self.blocks().items():
            if not np.all(np.isfinite(arr)):
                raise DivergenceError(f"parameter block {name} is non-finite")


def init_params(config: ModelConfig, seed: int = 0) -> ModelParams:
    """Uniform weights scaled by 1/sqrt(fan_in); zero biases."""
    rng = np.random.default_rng(seed)
    d, v = config.latent_dim, config.vocab_size

    def uniform(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    return ModelParams(
        w_mu=uniform((d, v), v),
        b_mu=np.zeros(d),
        w_sigma=uniform((d, v), v),
        b_sigma=np.zeros(d),
        w_corr=uniform((d, 2 * v), 2 * v),
        b_corr=np.zeros(d),
        dec_e=uniform((d, v), d),
        dec_b=np.zeros(v),
    )


def _as_csr_rows(x, vocab_size: int) -> sp.csr_matrix:
    if sp.issparse(x):
        x = x.tocsr()
    else:
        x = sp.csr_matrix(np.atleast_2d(np.asarray(x, dtype=np.float64)))
    if x.shape[1] != vocab_size:
        raise DataError(f"feature dimension {x.shape[1]} != vocab size {vocab_size}")
    return x


def _softplus(a: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, a)


# ---------------------------------------------------------------------------
# forward passes (each returns a tape used by ``backward``)


@dataclass
class EncodeTape:
    x: sp.csr_matrix
    a_mu: np.ndarray
    mu: np.ndarray
    a_sigma: np.ndarray
    sigma: np.ndarray


def encode_batch(params: ModelParams, x, config: ModelConfig) -> EncodeTape:
    x = _as_csr_rows(x, config.vocab_size)
    a_mu = x @ params.w_mu.T + params.b_mu
    mu = expit(a_mu / config.sigmoid_temp)
    a_sigma = x @ params.w_sigma.T + params.b_sigma
    sigma = _softplus(a_sigma) + SIGMA_FLOOR
    return EncodeTape(x, a_mu, mu, a_sigma, sigma)


def encode(params: ModelParams, x, config: ModelConfig) -> SingletonPosterior:
    tape = encode_batch(params, x, config)
    return SingletonPosterior(tape.mu[0], tape.sigma[0])


@dataclass
class PairTape:
    x_i: sp.csr_matrix
    x_j: sp.csr_matrix
    s_ij: np.ndarray
    s_ji: np.ndarray
    gamma: np.ndarray


def encode_pair_batch(params: ModelParams, x_i, x_j, config: ModelConfig) -> PairTape:
    x_i = _as_csr_rows(x_i, config.vocab_size)
    x_j = _as_csr_rows(x_j, config.vocab_size)
    v = config.vocab_size
    w_left, w_right = params.w_corr[:, :v], params.w_corr[:, v:]
    u_ij = x_i @ w_left.T + x_j @ w_right.T + params.b_corr
    u_ji = x_j @ w_left.T + x_i @ w_right.T + params.b_corr
    s_ij, s_ji = expit(u_ij), expit(u_ji)
    # averaging the two argument orders makes gamma exactly symmetric;
    # CORR_BOUND keeps it strictly inside (-1, 1) in floating point
    gamma = CORR_BOUND * (s_ij + s_ji - 1.0)
    return PairTape(x_i, x_j, s_ij, s_ji, gamma)


def encode_pair(params: ModelParams, x_i, x_j, config: ModelConfig) -> np.ndarray:
    return encode_pair_batch(params, x_i, x_j, config).gamma[0]


@dataclass
class DecodeTape:
    counts: sp.csr_matrix
    z: np.ndarray
    probs: np.ndarray
    totals: np.ndarray
    logprobs: np.ndarray


def decode_logprob_batch(params: ModelParams, z: np.ndarray, counts, config: ModelConfig) -> DecodeTape:
    counts = _as_csr_rows(counts, config.vocab_size)
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    if z.shape[1] != config.latent_dim:
        raise DataError(f"latent dimension {z.shape[1]} != {config.latent_dim}")
    scores = z @ params.dec_e + params.dec_b
    m = scores.max(axis=1, keepdims=True)
    shifted = np.exp(scores - m)
    norm = shifted.sum(axis=1, keepdims=True)
    probs = shifted / norm
    log_norm = (m + np.log(norm)).ravel()
    totals = np.asarray(counts.sum(axis=1)).ravel()
    weighted = np.asarray(counts.multiply(scores).sum(axis=1)).ravel()
    logprobs = weighted - totals * log_norm
    return DecodeTape(counts, z, probs, totals, logprobs)


def decode_logprob(params: ModelParams, z: np.ndarray, counts, config: ModelConfig) -> float:
    return float(decode_logprob_batch(params, z, counts, config).logprobs[0])


# ---------------------------------------------------------------------------
# minibatch tape and backward


@dataclass
class NodeTermTape:
    enc: EncodeTape
    eps: np.ndarray
    dec: DecodeTape


@dataclass
class EdgeTermTape:
    enc_i: EncodeTape
    enc_j: EncodeTape
    pair: PairTape | None     # None when gamma is frozen at zero
    gamma: np.ndarray
    tau: np.ndarray
    w: np.ndarray


@dataclass
class MinibatchTape:
    """Recorded forward pass of the minibatch objective.

    objective = node_scale * sum_i (recon_i - beta * klS_i)
                - beta * edge_scale * sum_e w_e * corr_e
    """

    config: ModelConfig
    beta: float
    node_scale: float
    edge_scale: float
    node: NodeTermTape | None
    edge: EdgeTermTape | None = None
    extras: dict = field(default_factory=dict)


def _accumulate_affine(grads, w_name, b_name, d_act, x):
    grads[w_name] += (x.T @ d_act).T
    grads[b_name] += d_act.sum(axis=0)


def _encoder_backward(grads, tape: EncodeTape, d_mu, d_sigma, config: ModelConfig):
    d_a_mu = d_mu * tape.mu * (1.0 - tape.mu) / config.sigmoid_temp
    d_a_sigma = d_sigma * expit(tape.a_sigma)
    _accumulate_affine(grads, "w_mu", "b_mu", d_a_mu, tape.x)
    _accumulate_affine(grads, "w_sigma", "b_sigma", d_a_sigma, tape.x)


def backward(params: ModelParams, tape: MinibatchTape) -> dict[str, np.ndarray]:
    """Exact gradients of the recorded minibatch objective."""
    grads = params.zero_grads()
    beta = tape.beta

    if tape.node is not None:
        enc, eps, dec = tape.node.enc, tape.node.eps, tape.node.dec
        scale = tape.node_scale
        # reconstruction path
        d_scores = scale * (dec.counts.toarray() - dec.totals[:, None] * dec.probs)
        grads["dec_e"] += dec.z.T @ d_scores
        grads["dec_b"] += d_scores.sum(axis=0)
        d_z = d_scores @ params.dec_e.T
        d_mu = d_z.copy()
        d_sigma = d_z * eps
        # singleton KL path
        g_mu, g_sigma = kl_singleton_grads(enc.mu, enc.sigma)
        d_mu += -beta * scale * g_mu
        d_sigma += -beta * scale * g_sigma
        _encoder_backward(grads, enc, d_mu, d_sigma, tape.config)

    if tape.edge is not None and len(tape.edge.w):
        e = tape.edge
        coeff = (-beta * tape.edge_scale * e.w)[:, None]
        d_mu_i, d_sig_i, d_mu_j, d_sig_j, d_gamma = edge_correction_grads(
            e.enc_i.mu, e.enc_i.sigma, e.enc_j.mu, e.enc_j.sigma, e.gamma, e.tau
        )
        _encoder_backward(grads, e.enc_i, coeff * d_mu_i, coeff * d_sig_i, tape.config)
        _encoder_backward(grads, e.enc_j, coeff * d_mu_j, coeff * d_sig_j, tape.config)
        if e.pair is not None:
            d_gamma = coeff * d_gamma
            d_u_ij = d_gamma * CORR_BOUND * e.pair.s_ij * (1.0 - e.pair.s_ij)
            d_u_ji = d_gamma * CORR_BOUND * e.pair.s_ji * (1.0 - e.pair.s_ji)
            v = tape.config.vocab_size
            d_w_left = (e.pair.x_i.T @ d_u_ij).T + (e.pair.x_j.T @ d_u_ji).T
            d_w_right = (e.pair.x_j.T @ d_u_ij).T + (e.pair.x_i.T @ d_u_ji).T
            grads["w_corr"][:, :v] += d_w_left
            grads["w_corr"][:, v:] += d_w_right
            grads["b_corr"] += (d_u_ij + d_u_ji).sum(axis=0)

    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient in block {name}")
    return grads


# ---------------------------------------------------------------------------
# checkpointing


def save_checkpoint(path: str, params: ModelParams, config: ModelConfig, extras: dict | None = None) -> None:
    """Self-describing .npz container; round-trips parameters bit-exactly."""
    meta = {
        "latent_dim": config.latent_dim,
        "vocab_size": config.vocab_size,
        "sigmoid_temp": config.sigmoid_temp,
        "extras": extras or {},
    }
    with open(path, "wb") as fh:
        np.savez(fh, meta_json=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **params.blocks())


def load_checkpoint(path: str) -> tuple[ModelParams, ModelConfig, dict]:
    with np.load(path) as data:
        meta = json.loads(bytes(data["meta_json"]).decode())
        params = ModelParams(**{name: data[name] for name in ModelParams.BLOCKS})
    config = ModelConfig(
        latent_dim=int(meta["latent_dim"]),
        vocab_size=int(meta["vocab_size"]),
        sigmoid_temp=float(meta["sigmoid_temp"]),
    )
    params.check_finite()
    return params, config, meta.get("extras", {})
