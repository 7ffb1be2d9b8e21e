"""Gaussian math for the graph-coupled latent model.

The latent prior couples neighboring documents: its single-node marginal
is standard normal and its two-node marginal on a graph edge has
per-dimension covariance ``[[1, tau], [tau, 1]]`` with ``tau = lambda *
a_ij``.  The variational posterior is diagonal per document, with an
optional per-dimension correlation ``gamma`` between the two endpoints of
an edge (covariance ``gamma * sigma_i * sigma_j``).

Everything here is a pure function of numpy arrays; the closed-form KL
divergences, their hand-derived gradients, the correlated
reparameterization, and a Monte-Carlo KL estimator used as a test oracle.
Array functions accept shape ``(..., d)`` and reduce over the last axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, DivergenceError

# Guards against the singularities at |gamma| = 1, |tau| = 1, sigma = 0.
SIGMA_FLOOR = 1e-6
CORR_BOUND = 1.0 - 1e-6


@dataclass(frozen=True)
class PriorConfig:
    latent_dim: int
    lam: float = 0.99

    def __post_init__(self):
        if not 0 <= self.lam < 1:
            raise ConfigError(f"lambda must lie in [0, 1), got {self.lam}")
        if self.latent_dim < 1:
            raise ConfigError(f"latent_dim must be positive, got {self.latent_dim}")


@dataclass(frozen=True)
class SingletonPosterior:
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        mu, sigma = np.asarray(self.mu), np.asarray(self.sigma)
        if mu.shape != sigma.shape:
            raise DataError("mu and sigma must have the same shape")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma))):
            raise DataError("posterior parameters must be finite")
        if np.any(sigma <= 0):
            raise DataError("sigma entries must be positive")


@dataclass(frozen=True)
class PairwisePosterior:
    left: SingletonPosterior
    right: SingletonPosterior
    gamma: np.ndarray

    def __post_init__(self):
        gamma = np.asarray(self.gamma)
        if gamma.shape != np.asarray(self.left.mu).shape:
            raise DataError("gamma must match the marginal dimension")
        if np.any(np.abs(gamma) >= 1):
            raise DataError("gamma entries must lie strictly inside (-1, 1)")


@dataclass(frozen=True)
class EdgePrior:
    tau: float

    def __post_init__(self):
        if not abs(self.tau) < 1:
            raise DataError(f"|tau| must be < 1, got {self.tau}")

    @classmethod
    def from_affinity(cls, lam: float, a_ij: float) -> "EdgePrior":
        return cls(clamp_tau(lam * a_ij))


def clamp_tau(tau):
    return np.clip(tau, -CORR_BOUND, CORR_BOUND)


# ---------------------------------------------------------------------------
# closed-form divergences


def kl_singleton_arrays(mu: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """KL( N(mu, diag sigma^2) || N(0, I) ), reduced over the last axis."""
    if np.any(sigma <= 0):
        raise DataError("sigma entries must be positive")
    return 0.5 * np.sum(mu**2 + sigma**2 - 1.0 - 2.0 * np.log(sigma), axis=-1)


def kl_pairwise_arrays(mu_i, sigma_i, mu_j, sigma_j, gamma, tau) -> np.ndarray:
    """KL between the correlated pair posterior and the edge prior.

    Both are 2d-dimensional Gaussians that factor across the d latent
    dimensions, so the divergence is a sum of per-dimension terms:

        0.5 * { log(1-tau^2) - log sigma_i^2 - log sigma_j^2 - log(1-gamma^2)
                - 2 + [sigma_i^2 + sigma_j^2 - 2 tau gamma sigma_i sigma_j
                       + mu_i^2 + mu_j^2 - 2 tau mu_i mu_j] / (1-tau^2) }
    """
    tau = np.asarray(tau, dtype=np.float64)[..., None]
    if np.any(np.abs(tau) >= 1):
        raise DataError("|tau| must be < 1")
    if np.any(np.abs(gamma) >= 1):
        raise DataError("|gamma| entries must be < 1")
    if np.any(sigma_i <= 0) or np.any(sigma_j <= 0):
        raise DataError("sigma entries must be positive")
    one_m_tau2 = 1.0 - tau**2
    quad = (
        sigma_i**2
        + sigma_j**2
        - 2.0 * tau * gamma * sigma_i * sigma_j
        + mu_i**2
        + mu_j**2
        - 2.0 * tau * mu_i * mu_j
    )
    per_dim = (
        np.log(one_m_tau2)
        - 2.0 * np.log(sigma_i)
        - 2.0 * np.log(sigma_j)
        - np.log1p(-(gamma**2))
        - 2.0
        + quad / one_m_tau2
    )
    return 0.5 * np.sum(per_dim, axis=-1)


def edge_correction_arrays(mu_i, sigma_i, mu_j, sigma_j, gamma, tau) -> np.ndarray:
    """Pairwise KL minus the two singleton KLs; the surcharge a tree edge
    adds to the objective.  May be negative."""
    return (
        kl_pairwise_arrays(mu_i, sigma_i, mu_j, sigma_j, gamma, tau)
        - kl_singleton_arrays(mu_i, sigma_i)
        - kl_singleton_arrays(mu_j, sigma_j)
    )


# dataclass-level wrappers


def kl_singleton(q: SingletonPosterior) -> float:
    return float(kl_singleton_arrays(np.asarray(q.mu), np.asarray(q.sigma)))


def kl_pairwise(q: PairwisePosterior, prior: EdgePrior) -> float:
    return float(
        kl_pairwise_arrays(
            np.asarray(q.left.mu),
            np.asarray(q.left.sigma),
            np.asarray(q.right.mu),
            np.asarray(q.right.sigma),
            np.asarray(q.gamma),
            prior.tau,
        )
    )


def edge_correction(q: PairwisePosterior, prior: EdgePrior) -> float:
    return kl_pairwise(q, prior) - kl_singleton(q.left) - kl_singleton(q.right)


# ---------------------------------------------------------------------------
# hand-derived gradients of the closed forms


def kl_singleton_grads(mu, sigma):
    """d klS / d mu = mu;  d klS / d sigma = sigma - 1/sigma."""
    return np.asarray(mu).copy(), sigma - 1.0 / sigma


def edge_correction_grads(mu_i, sigma_i, mu_j, sigma_j, gamma, tau):
    """Partials of edge_correction wrt (mu_i, sigma_i, mu_j, sigma_j, gamma)."""
    tau = np.asarray(tau, dtype=np.float64)[..., None]
    one_m_tau2 = 1.0 - tau**2
    d_mu_i = (mu_i - tau * mu_j) / one_m_tau2 - mu_i
    d_mu_j = (mu_j - tau * mu_i) / one_m_tau2 - mu_j
    d_sigma_i = (sigma_i - tau * gamma * sigma_j) / one_m_tau2 - sigma_i
    d_sigma_j = (sigma_j - tau * gamma * sigma_i) / one_m_tau2 - sigma_j
    d_gamma = gamma / (1.0 - gamma**2) - tau * sigma_i * sigma_j / one_m_tau2
    return d_mu_i, d_sigma_i, d_mu_j, d_sigma_j, d_gamma


# ---------------------------------------------------------------------------
# correlated reparameterization


def sample_pair_arrays(mu_i, sigma_i, mu_j, sigma_j, gamma, eps1, eps2):
    """Cholesky-factor reparameterization of the correlated pair posterior.

    z_i = mu_i + sigma_i * eps1
    z_j = mu_j + sigma_j * (gamma * eps1 + sqrt(1 - gamma^2) * eps2)

    so cov(z_i, z_j) = gamma * sigma_i * sigma_j per dimension.
    """
    z_i = mu_i + sigma_i * eps1
    z_j = mu_j + sigma_j * (gamma * eps1 + np.sqrt(1.0 - gamma**2) * eps2)
    return z_i, z_j


def sample_pair(q: PairwisePosterior, eps1: np.ndarray, eps2: np.ndarray):
    return sample_pair_arrays(
        np.asarray(q.left.mu),
        np.asarray(q.left.sigma),
        np.asarray(q.right.mu),
        np.asarray(q.right.sigma),
        np.asarray(q.gamma),
        np.asarray(eps1),
        np.asarray(eps2),
    )


# ---------------------------------------------------------------------------
# log densities and the Monte-Carlo oracle


def logpdf_diag(z, mu, sigma):
    """Log density of N(mu, diag sigma^2), reduced over the last axis."""
    return -0.5 * np.sum(
        np.log(2.0 * np.pi) + 2.0 * np.log(sigma) + ((z - mu) / sigma) ** 2, axis=-1
    )


def logpdf_pair(z_i, z_j, mu_i, sigma_i, mu_j, sigma_j, rho):
    """Log density of the per-dimension bivariate Gaussian with means
    (mu_i, mu_j), scales (sigma_i, sigma_j) and correlation rho."""
    u = (z_i - mu_i) / sigma_i
    v = (z_j - mu_j) / sigma_j
    one_m_rho2 = 1.0 - rho**2
    quad = (u**2 - 2.0 * rho * u * v + v**2) / one_m_rho2
    log_norm = (
        np.log(2.0 * np.pi) + np.log(sigma_i) + np.log(sigma_j) + 0.5 * np.log(one_m_rho2)
    )
    return np.sum(-log_norm - 0.5 * quad, axis=-1)


def mc_kl_oracle(log_q, log_p, sampler, n_samples: int) -> tuple[float, float]:
    """Monte-Carlo estimate of KL(q || p) = E_q[log q - log p].

    ``sampler(n)`` draws n samples from q; ``log_q``/``log_p`` evaluate the
    respective log densities on those draws.  Returns (estimate, standard
    error of the mean).
    """
    if n_samples < 10_000:
        raise ConfigError(f"mc_kl_oracle needs n_samples >= 10000, got {n_samples}")
    draws = sampler(n_samples)
    values = np.asarray(log_q(draws)) - np.asarray(log_p(draws))
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        i = int(bad[0])
        offending = draws[i] if not isinstance(draws, tuple) else tuple(d[i] for d in draws)
        raise DivergenceError(
            f"non-finite log-density at sample {i}: draw {offending!r}"
        )
    est = float(values.mean())
    se = float(values.std(ddof=1) / np.sqrt(n_samples))
    return est, se


# ---------------------------------------------------------------------------
# tree-structured prior assembly (for marginal-matching checks)


def tree_prior_precision(n_nodes: int, edges, taus, d: int = 1) -> np.ndarray:
    """Precision matrix of the tree-structured prior on ``n_nodes * d``
    variables.

    The tree prior is the product of standard-normal node marginals and,
    per tree edge, the ratio of the pairwise edge marginal to the two node
    marginals; log densities add, so the joint precision is the sum of the
    factors' precisions.  Its inverse has unit diagonal blocks and block
    (i, j) equal to ``tau_ij * I_d`` on every tree edge, i.e. the pairwise
    marginals of the full graph prior are reproduced exactly on the tree.
    """
    J = np.eye(n_nodes * d)
    for (i, j), tau in zip(edges, taus):
        if not abs(tau) < 1:
            raise DataError(f"|tau| must be < 1 on edge ({i}, {j})")
        c = 1.0 / (1.0 - tau**2)
        bi, bj = i * d, j * d
        idx_i = slice(bi, bi + d)
        idx_j = slice(bj, bj + d)
        J[idx_i, idx_i] += (c - 1.0) * np.eye(d)
        J[idx_j, idx_j] += (c - 1.0) * np.eye(d)
        J[idx_i, idx_j] += -tau * c * np.eye(d)
        J[idx_j, idx_i] += -tau * c * np.eye(d)
    return J


def tree_prior_covariance(n_nodes: int, edges, taus, d: int = 1) -> np.ndarray:
    return np.linalg.inv(tree_prior_precision(n_nodes, edges, taus, d))
