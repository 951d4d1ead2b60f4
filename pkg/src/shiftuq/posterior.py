"""Amortized variational posterior over head parameters.

A single inference network maps (aggregated train embedding, test embedding)
to the mean and log-std of a diagonal Gaussian over the k+1 head parameters.
Sampling uses the shift-and-scale reparametrization so likelihood terms stay
differentiable in the network parameters.  The network's final-layer bias is
warm-started at a pretrained head (and a chosen initial log-std), with the
final weights shrunk so the warm start dominates at initialization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .model import TASK_REGRESSION, aggregate, head_inputs, log_lik
from .nn import DenseNet
from .prior import PriorConfig, energy
from .rngs import SeedTree

LOG_STD_MIN = -6.0
LOG_STD_MAX = 3.0

_HALF_LOG_TWO_PI = 0.5 * np.log(2.0 * np.pi)

# hidden widths as multiples of the embedding dim, wide to narrow
DEFAULT_HIDDEN_FACTORS = (64, 32, 16, 8, 4, 2)


@dataclass
class VariationalParams:
    """Diagonal Gaussian over head parameters; log_std arrives clamped."""

    mu: np.ndarray
    log_std: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.log_std = np.asarray(self.log_std, dtype=np.float64)
        if self.mu.shape != self.log_std.shape:
            raise ValueError("mu and log_std must have the same shape")

    @property
    def std(self) -> np.ndarray:
        return np.exp(self.log_std)


@dataclass
class InferenceNet:
    """Wraps a DenseNet from 2k inputs to 2(k+1) outputs."""

    net: DenseNet

    def __post_init__(self):
        if self.net.in_width % 2 != 0:
            raise ValueError("inference net input width must be 2k")
        if self.net.out_width != self.net.in_width + 2:
            raise ValueError(
                f"inference net must map 2k -> 2(k+1); got {self.net.in_width} -> {self.net.out_width}"
            )

    @property
    def embed_dim(self) -> int:
        return self.net.in_width // 2

    @property
    def head_dim(self) -> int:
        return self.embed_dim + 1


def default_hidden(embed_dim: int) -> tuple:
    return tuple(f * embed_dim for f in DEFAULT_HIDDEN_FACTORS)


def build_inference_net(
    embed_dim: int,
    hidden: tuple | None = None,
    rng: np.random.Generator | None = None,
    head_init: np.ndarray | None = None,
    log_std_init: float = -1.0,
    final_weight_scale: float = 0.001,
) -> InferenceNet:
    """Fresh inference net warm-started at a given head.

    The final-layer bias carries (head_init, log_std_init); final weights are
    scaled down so initial outputs sit near the warm start for any input.
    """
    if hidden is None:
        hidden = default_hidden(embed_dim)
    if rng is None:
        rng = np.random.default_rng(0)
    widths = [2 * embed_dim, *hidden, 2 * (embed_dim + 1)]
    net = DenseNet.create(widths, rng=rng)
    final = net.layers[-1]
    final.weights *= final_weight_scale
    if head_init is not None:
        head_init = np.asarray(head_init, dtype=np.float64)
        if head_init.shape != (embed_dim + 1,):
            raise ValueError(f"head_init must have shape ({embed_dim + 1},)")
        final.bias[: embed_dim + 1] = head_init
    final.bias[embed_dim + 1 :] = log_std_init
    return InferenceNet(net)


def split_outputs(raw, head_dim: int):
    """Split net output into (mu, clamped log_std); array or graph node."""
    mu = raw[..., :head_dim]
    log_std = ad.clip(raw[..., head_dim:], LOG_STD_MIN, LOG_STD_MAX)
    return mu, log_std


def infer_phi(inference: InferenceNet, train_summary: np.ndarray, test_embed: np.ndarray) -> VariationalParams:
    """Variational parameters for one test covariate."""
    train_summary = np.asarray(train_summary, dtype=np.float64)
    test_embed = np.asarray(test_embed, dtype=np.float64)
    k = inference.embed_dim
    if train_summary.shape != (k,) or test_embed.shape != (k,):
        raise ValueError(f"expected two ({k},) embeddings")
    raw = inference.net.forward(np.concatenate([train_summary, test_embed]))
    mu, log_std = split_outputs(raw, inference.head_dim)
    return VariationalParams(mu, log_std)


def infer_phi_batch(
    inference: InferenceNet, train_summary: np.ndarray, test_embeds: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """(mu, log_std) rows for a batch of test embeddings, shared summary."""
    test_embeds = np.atleast_2d(np.asarray(test_embeds, dtype=np.float64))
    tiled = np.broadcast_to(train_summary, test_embeds.shape)
    raw = inference.net.forward(np.concatenate([tiled, test_embeds], axis=1))
    return split_outputs(raw, inference.head_dim)


def sample_theta(phi: VariationalParams, eps: np.ndarray) -> np.ndarray:
    """Reparametrized draw: theta = mu + std * eps."""
    eps = np.asarray(eps, dtype=np.float64)
    return phi.mu + phi.std * eps


def log_q(theta: np.ndarray, phi: VariationalParams) -> float:
    """Log-density of the diagonal Gaussian at theta."""
    z = (np.asarray(theta, dtype=np.float64) - phi.mu) * np.exp(-phi.log_std)
    return float(np.sum(-_HALF_LOG_TWO_PI - phi.log_std - 0.5 * np.square(z)))


def gaussian_entropy(log_std: np.ndarray) -> float:
    """Entropy of the diagonal Gaussian: sum_c 0.5 log(2 pi e) + log_std_c."""
    log_std = np.asarray(log_std, dtype=np.float64)
    return float(np.sum(0.5 * np.log(2.0 * np.pi * np.e) + log_std))


def elbo_single(
    inference: InferenceNet,
    train_embeds: np.ndarray,
    train_y: np.ndarray,
    test_embed: np.ndarray,
    prior_cfg: PriorConfig,
    kl_penalty: float,
    rng: SeedTree,
    analytic_entropy: bool = False,
) -> float:
    """Single-sample ELBO for one test covariate.

    sum_i log p(y_i | x_i, theta) - kl_penalty * (log q(theta) - log prior(theta)),
    theta drawn once by reparametrization from the rng's "eps" stream;
    regression prior draws come from its "prior" stream.  With
    analytic_entropy the sampled log q is replaced by -H(q).
    """
    train_embeds = np.atleast_2d(np.asarray(train_embeds, dtype=np.float64))
    phi = infer_phi(inference, aggregate(train_embeds), test_embed)
    eps = rng.child("eps").generator().standard_normal(phi.mu.shape[0])
    theta = sample_theta(phi, eps)

    preds = head_inputs(train_embeds) @ theta
    lik = float(np.sum(log_lik(train_y, preds, prior_cfg.task)))

    draws = None
    if prior_cfg.task == TASK_REGRESSION:
        draws = rng.child("prior").generator().uniform(
            prior_cfg.y_min, prior_cfg.y_max, prior_cfg.mc_samples
        )
    log_p = energy(theta, train_embeds, test_embed, prior_cfg, draws=draws)

    if analytic_entropy:
        kl_est = -gaussian_entropy(phi.log_std) - log_p
    else:
        kl_est = log_q(theta, phi) - log_p
    return lik - kl_penalty * kl_est


def elbo_sum(
    inference: InferenceNet,
    train_embeds: np.ndarray,
    train_y: np.ndarray,
    test_embeds: np.ndarray,
    prior_cfg: PriorConfig,
    kl_penalty: float,
    rng: SeedTree,
    keys=None,
    analytic_entropy: bool = False,
) -> float:
    """Sum of single-point ELBOs over a batch of test covariates.

    Each point's noise comes from the substream at its key (default: its
    position), so reordering points and keys together leaves the total
    unchanged, and duplicated points given equal keys contribute equally.
    """
    test_embeds = np.atleast_2d(np.asarray(test_embeds, dtype=np.float64))
    if keys is None:
        keys = range(test_embeds.shape[0])
    keys = list(keys)
    if len(keys) != test_embeds.shape[0]:
        raise ValueError("one key per test point required")
    total = 0.0
    for key, embed in zip(keys, test_embeds):
        total += elbo_single(
            inference,
            train_embeds,
            train_y,
            embed,
            prior_cfg,
            kl_penalty,
            rng.child(key),
            analytic_entropy=analytic_entropy,
        )
    return total
