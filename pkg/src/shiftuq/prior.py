"""Covariate-adaptive prior over head parameters.

The prior's unnormalized log-density at head theta is an "energy": the total
log-likelihood mass theta assigns across every covariate in sight (train and
test alike), with the unknown targets integrated out.  Heads that cannot
explain any plausible labelling of the pooled covariates get low energy.
The normalizer depends only on the covariates, never on theta or on the
inference parameters, so ELBO gradients can use the energy directly.

Classification integrates the label exactly (sum over {0,1}).  Regression
integrates y over a finite range by Monte Carlo with fresh uniform draws.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .model import TASK_CLASSIFICATION, TASK_REGRESSION, TASKS, FEATURE_SCALE, head_inputs

_HALF_LOG_TWO_PI = 0.5 * np.log(2.0 * np.pi)


@dataclass
class PriorConfig:
    task: str
    y_min: float = 0.0
    y_max: float = 1.0
    mc_samples: int = 64

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}")
        if self.task == TASK_REGRESSION:
            if not self.y_max > self.y_min:
                raise ValueError("regression prior needs y_max > y_min")
            if self.mc_samples < 1:
                raise ValueError("mc_samples must be >= 1")

    @property
    def y_range(self) -> float:
        return self.y_max - self.y_min


def default_prior_config(y: np.ndarray, task: str, pad: float = 3.0, mc_samples: int = 64) -> PriorConfig:
    """Integration range = observed target range padded by +-pad."""
    if task == TASK_CLASSIFICATION:
        return PriorConfig(task)
    y = np.asarray(y, dtype=np.float64)
    return PriorConfig(task, float(y.min() - pad), float(y.max() + pad), mc_samples)


def label_marginal_log_lik(logits):
    """sum_{y in {0,1}} log p(y | logit), elementwise; array or graph node.

    Equals -softplus(l) - softplus(-l); at l = 0 this is 2 log(1/2).
    """
    return -ad.softplus(logits) - ad.softplus(-logits)


def uniform_scan_log_lik(mu_sum, mu_sq_sum, count, draws):
    """sum_s sum_i log N(y_s; mu_i, 1) given first two moments of the mu_i.

    draws is a constant array of y samples.  mu_sum / mu_sq_sum may be graph
    nodes (scalars or aligned vectors); broadcasting follows numpy rules.
    """
    draws = np.asarray(draws, dtype=np.float64)
    n_draws = draws.size
    draw_sum = float(draws.sum())
    draw_sq_sum = float(np.square(draws).sum())
    quad = count * draw_sq_sum - 2.0 * draw_sum * mu_sum + n_draws * mu_sq_sum
    return -(n_draws * count) * _HALF_LOG_TWO_PI - 0.5 * quad


def energy(
    head: np.ndarray,
    train_embeds: np.ndarray,
    test_embeds: np.ndarray | None,
    cfg: PriorConfig,
    rng: np.random.Generator | None = None,
    draws: np.ndarray | None = None,
) -> float:
    """Unnormalized log prior density of a head given pooled covariates.

    test_embeds may be a single embedding (k,), a batch (M, k), or None.
    Regression needs either explicit y draws or an rng to sample them.
    """
    head = np.asarray(head, dtype=np.float64)
    parts = [np.atleast_2d(np.asarray(train_embeds, dtype=np.float64))]
    if test_embeds is not None:
        parts.append(np.atleast_2d(np.asarray(test_embeds, dtype=np.float64)))
    pooled = np.concatenate(parts, axis=0)
    preds = head_inputs(pooled) @ head

    if cfg.task == TASK_CLASSIFICATION:
        return float(np.sum(label_marginal_log_lik(preds)))

    if draws is None:
        if rng is None:
            raise ValueError("regression energy needs rng or explicit draws")
        draws = rng.uniform(cfg.y_min, cfg.y_max, cfg.mc_samples)
    draws = np.asarray(draws, dtype=np.float64)
    total = uniform_scan_log_lik(float(preds.sum()), float(np.square(preds).sum()), preds.size, draws)
    return float(cfg.y_range / draws.size * total)


def log_prior_unnorm(head, train_embeds, test_embeds, cfg, rng=None, draws=None) -> float:
    """Alias for energy(): the normalizer is constant in everything we tune."""
    return energy(head, train_embeds, test_embeds, cfg, rng=rng, draws=draws)


def logistic_grid(
    train_x: np.ndarray,
    test_x: np.ndarray | None,
    intercepts: np.ndarray,
    second_coefs: np.ndarray,
    first_coef: float = 1.0,
) -> np.ndarray:
    """Classification energy surface over (intercept, second coefficient).

    Works on raw 2-d covariates with a plain logistic model
    logit = intercept + first_coef * x1 + coef2 * x2.  Returns energies with
    shape (len(intercepts), len(second_coefs)).
    """
    train_x = np.asarray(train_x, dtype=np.float64)
    if train_x.ndim != 2 or train_x.shape[1] != 2:
        raise ValueError("logistic_grid expects (N, 2) covariates")
    cfg = PriorConfig(TASK_CLASSIFICATION)
    out = np.empty((len(intercepts), len(second_coefs)))
    for i, b0 in enumerate(intercepts):
        for j, b2 in enumerate(second_coefs):
            # intercept rides the constant head feature, hence the rescale
            head = np.array([first_coef, b2, b0 / FEATURE_SCALE])
            out[i, j] = energy(head, train_x, test_x, cfg)
    return out
