"""Synthetic environments and the cross-environment training loop.

Each environment is a bootstrap resample of the training data split into a
conditioning part and a pseudo-test part.  The trainer ascends the summed
per-environment ELBO plus a variance penalty that discourages solutions
whose quality swings across environments.  Targets of the pseudo-test points
are never read: conditioning is on covariates only, which is what lets the
same machinery run when the real test covariates are available instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .model import (
    TASK_CLASSIFICATION,
    TASK_REGRESSION,
    Dataset,
    EmbeddingModel,
    aggregate,
    head_inputs,
    log_lik,
)
from .nn import NetGraph, sgd_step, value_and_grad
from .posterior import (
    InferenceNet,
    build_inference_net,
    elbo_sum,
    infer_phi_batch,
    split_outputs,
)
from .prior import PriorConfig, default_prior_config, label_marginal_log_lik
from .rngs import SeedTree

_HALF_LOG_TWO_PI = 0.5 * np.log(2.0 * np.pi)


@dataclass
class Environment:
    """Index sets into a source dataset; drawn with replacement."""

    train_idx: np.ndarray
    test_idx: np.ndarray

    def __post_init__(self):
        self.train_idx = np.asarray(self.train_idx, dtype=np.int64)
        self.test_idx = np.asarray(self.test_idx, dtype=np.int64)
        if self.train_idx.ndim != 1 or self.test_idx.ndim != 1:
            raise ValueError("environment index sets must be 1-d")
        if self.train_idx.size == 0 or self.test_idx.size == 0:
            raise ValueError("environment parts must be nonempty")


def sample_environment(
    n_data: int, env_train_size: int, env_test_size: int, rng: np.random.Generator
) -> Environment:
    """Bootstrap an environment: both parts sampled with replacement."""
    if n_data < 1:
        raise ValueError("need data to sample from")
    train_idx = rng.integers(0, n_data, env_train_size)
    test_idx = rng.integers(0, n_data, env_test_size)
    return Environment(train_idx, test_idx)


@dataclass
class TrainConfig:
    num_envs: int = 30
    env_test_size: int = 20
    env_train_size: int = 500
    var_penalty: float = 0.001
    kl_penalty: float = 0.005
    learning_rate: float = 1e-2
    steps: int = 30
    posterior_samples: int = 1000
    seed: int = 0
    fixed_envs: bool = False
    analytic_entropy: bool = False
    inference_hidden: tuple | None = None
    log_std_init: float = -1.0

    def __post_init__(self):
        if self.num_envs < 1 or self.env_test_size < 1 or self.env_train_size < 1:
            raise ValueError("environment counts and sizes must be positive")
        if self.var_penalty < 0 or self.kl_penalty < 0:
            raise ValueError("penalties must be nonnegative")
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")
        if self.posterior_samples < 1:
            raise ValueError("posterior_samples must be positive")


def env_loss(
    inference: InferenceNet,
    env: Environment,
    data: Dataset,
    embeds: np.ndarray,
    prior_cfg: PriorConfig,
    kl_penalty: float,
    rng: SeedTree,
    analytic_entropy: bool = False,
) -> float:
    """One environment's contribution: summed ELBO over its pseudo-test part.

    Only the pseudo-test covariates are consumed; their targets stay unused.
    """
    train_embeds = embeds[env.train_idx]
    train_y = data.y[env.train_idx]
    test_embeds = embeds[env.test_idx]
    return elbo_sum(
        inference,
        train_embeds,
        train_y,
        test_embeds,
        prior_cfg,
        kl_penalty,
        rng,
        analytic_entropy=analytic_entropy,
    )


def cross_env_objective(losses, var_penalty: float) -> tuple[float, float]:
    """(sum + penalty * population variance, the penalty term itself)."""
    losses = np.asarray(losses, dtype=np.float64)
    if losses.size == 0:
        raise ValueError("need at least one environment loss")
    var_term = float(var_penalty * np.var(losses)) if losses.size > 1 else 0.0
    return float(losses.sum() + var_term), var_term


@dataclass
class TraceRow:
    iteration: int
    objective: float
    var_penalty_term: float
    env_loss_min: float
    env_loss_max: float


# objectives of sane runs sit many orders below this; beyond it the float
# arithmetic (variance-of-identical-losses cancellation in particular) is
# meaningless even while still finite
OBJECTIVE_SANE_LIMIT = 1e18


class TrainingDiverged(RuntimeError):
    def __init__(self, iteration: int, value: float, trace: list):
        super().__init__(
            f"objective diverged at iteration {iteration} ({value!r}); lower the learning rate"
        )
        self.iteration = iteration
        self.trace = trace


@dataclass
class FitResult:
    inference: InferenceNet
    trace: list = field(default_factory=list)


@dataclass
class _Pair:
    """Constants for one (environment, pseudo-test point) objective term."""

    env_index: int
    inputs_row: np.ndarray  # (2k,) summary ++ test embed
    test_inputs: np.ndarray  # (k+1,) head inputs of the test embed
    eps: np.ndarray  # (k+1,)
    draw_sum: float = 0.0
    draw_sq_sum: float = 0.0


@dataclass
class _EnvBatch:
    train_inputs: np.ndarray  # (n, k+1) head inputs of the conditioning part
    train_y: np.ndarray  # (n,)
    pairs: list


def _prepare_envbatch(
    env_index: int,
    train_embeds: np.ndarray,
    train_y: np.ndarray,
    test_embeds: np.ndarray,
    prior_cfg: PriorConfig,
    env_rng: SeedTree,
) -> _EnvBatch:
    summary = aggregate(train_embeds)
    pairs = []
    for j, test_embed in enumerate(np.atleast_2d(test_embeds)):
        pair_rng = env_rng.child(j)
        eps = pair_rng.child("eps").generator().standard_normal(train_embeds.shape[1] + 1)
        pair = _Pair(
            env_index,
            np.concatenate([summary, test_embed]),
            head_inputs(test_embed),
            eps,
        )
        if prior_cfg.task == TASK_REGRESSION:
            draws = pair_rng.child("prior").generator().uniform(
                prior_cfg.y_min, prior_cfg.y_max, prior_cfg.mc_samples
            )
            pair.draw_sum = float(draws.sum())
            pair.draw_sq_sum = float(np.square(draws).sum())
        pairs.append(pair)
    return _EnvBatch(head_inputs(train_embeds), train_y, pairs)


def _objective_graph(
    graph: NetGraph,
    batches: list,
    head_dim: int,
    prior_cfg: PriorConfig,
    kl_penalty: float,
    var_penalty: float,
    analytic_entropy: bool,
):
    """Build the cross-environment objective as a graph node.

    Returns (objective, env loss values, variance term value).  All pairs
    share one batched forward pass through the inference net.
    """
    inputs = np.stack([p.inputs_row for b in batches for p in b.pairs])
    eps = np.stack([p.eps for b in batches for p in b.pairs])
    raw = graph.forward(inputs)
    mu, log_std = split_outputs(raw, head_dim)
    sigma = ad.exp(log_std)
    theta = mu + sigma * eps

    if analytic_entropy:
        # expected log q under q itself: the negated Gaussian entropy
        log_q_rows = ad.vsum(-_HALF_LOG_TWO_PI - 0.5 - log_std, axis=1)
    else:
        # log q at the sample, written literally so its value matches log_q()
        z = (theta - mu) / sigma
        log_q_rows = ad.vsum(-_HALF_LOG_TWO_PI - log_std - 0.5 * ad.square(z), axis=1)

    loss_nodes = []
    offset = 0
    for batch in batches:
        m = len(batch.pairs)
        theta_env = theta[offset : offset + m]
        test_inputs = np.stack([p.test_inputs for p in batch.pairs])
        preds_train = ad.matmul(theta_env, ad.constant(batch.train_inputs.T))  # (m, n)
        preds_test = ad.vsum(theta_env * test_inputs, axis=1)  # (m,)
        lik = ad.vsum(log_lik(batch.train_y, preds_train, prior_cfg.task), axis=1)

        if prior_cfg.task == TASK_CLASSIFICATION:
            log_prior = ad.vsum(label_marginal_log_lik(preds_train), axis=1)
            log_prior = log_prior + label_marginal_log_lik(preds_test)
        else:
            count = batch.train_y.size + 1
            n_draws = prior_cfg.mc_samples
            mu_sum = ad.vsum(preds_train, axis=1) + preds_test
            mu_sq_sum = ad.vsum(ad.square(preds_train), axis=1) + ad.square(preds_test)
            draw_sum = np.array([p.draw_sum for p in batch.pairs])
            draw_sq_sum = np.array([p.draw_sq_sum for p in batch.pairs])
            quad = count * draw_sq_sum - 2.0 * draw_sum * mu_sum + n_draws * mu_sq_sum
            log_prior = (prior_cfg.y_range / n_draws) * (
                -(n_draws * count) * _HALF_LOG_TWO_PI - 0.5 * quad
            )

        env_logq = log_q_rows[offset : offset + m]
        loss_nodes.append(ad.vsum(lik - kl_penalty * (env_logq - log_prior)))
        offset += m

    total = loss_nodes[0]
    for node in loss_nodes[1:]:
        total = total + node
    var_value = 0.0
    objective = total
    if var_penalty > 0 and len(loss_nodes) > 1:
        n_envs = len(loss_nodes)
        mean = total * (1.0 / n_envs)
        var = None
        for node in loss_nodes:
            term = ad.square(node - mean)
            var = term if var is None else var + term
        var = var * (1.0 / n_envs)
        objective = total + var_penalty * var
        var_value = float(var_penalty * var.item())
    return objective, [float(n.item()) for n in loss_nodes], var_value


def fit(
    data: Dataset,
    embedding: EmbeddingModel,
    cfg: TrainConfig,
    head_init: np.ndarray | None = None,
    prior_cfg: PriorConfig | None = None,
    rng: SeedTree | None = None,
    test_x: np.ndarray | None = None,
    envs: list | None = None,
) -> FitResult:
    """Train the inference net across synthetic environments.

    By default every iteration resamples cfg.num_envs bootstrap environments.
    cfg.fixed_envs samples them once; envs overrides them entirely; test_x
    switches to the single-environment mode that conditions on the actual
    test covariates (full data as conditioning part, variance penalty moot).

    The step size applies to the per-likelihood-term mean gradient:
    parameters move by learning_rate * grad(objective) / T where T counts
    one term per conditioning point plus one per pseudo-test point.  The
    objective itself stays a sum, so traces remain comparable across sizes.
    """
    if embedding.in_width != data.width:
        raise ValueError("embedding input width does not match data")
    k = embedding.embed_dim
    if head_init is None:
        head_init = np.zeros(k + 1)
    if prior_cfg is None:
        prior_cfg = default_prior_config(data.y, data.task)
    if prior_cfg.task != data.task:
        raise ValueError("prior task does not match data task")
    root = rng if rng is not None else SeedTree(cfg.seed)

    inference = build_inference_net(
        k,
        cfg.inference_hidden,
        root.child("init").generator(),
        head_init,
        cfg.log_std_init,
    )
    net = inference.net
    embeds_all = embedding.embed(data.x)

    alg1 = test_x is not None
    if alg1:
        test_x = np.atleast_2d(np.asarray(test_x, dtype=np.float64))
        if test_x.shape[1] != data.width:
            raise ValueError("test covariate width does not match data")
        test_embeds_given = embedding.embed(test_x)
    if envs is not None:
        for env in envs:
            if env.train_idx.max() >= data.n or env.test_idx.max() >= data.n:
                raise ValueError("environment indices out of range")
    preset = envs
    if not alg1 and preset is None and cfg.fixed_envs:
        preset = [
            sample_environment(
                data.n, cfg.env_train_size, cfg.env_test_size, root.child("envs", 0, i).generator()
            )
            for i in range(cfg.num_envs)
        ]

    trace = []
    for it in range(cfg.steps):
        iter_rng = root.child("train", it)
        if alg1:
            batches = [
                _prepare_envbatch(
                    0, embeds_all, data.y, test_embeds_given, prior_cfg, iter_rng.child(0)
                )
            ]
            var_penalty = 0.0
        else:
            if preset is not None:
                current = preset
            else:
                current = [
                    sample_environment(
                        data.n,
                        cfg.env_train_size,
                        cfg.env_test_size,
                        root.child("envs", it, i).generator(),
                    )
                    for i in range(cfg.num_envs)
                ]
            batches = [
                _prepare_envbatch(
                    i,
                    embeds_all[env.train_idx],
                    data.y[env.train_idx],
                    embeds_all[env.test_idx],
                    prior_cfg,
                    iter_rng.child(i),
                )
                for i, env in enumerate(current)
            ]
            var_penalty = cfg.var_penalty

        captured = {}

        def objective(graph: NetGraph) -> ad.Node:
            node, losses, var_value = _objective_graph(
                graph,
                batches,
                k + 1,
                prior_cfg,
                cfg.kl_penalty,
                var_penalty,
                cfg.analytic_entropy,
            )
            captured["losses"] = losses
            captured["var"] = var_value
            return node

        value, tape = value_and_grad(net, objective)
        losses = captured["losses"]
        trace.append(TraceRow(it, value, captured["var"], min(losses), max(losses)))
        if not np.isfinite(value) or abs(value) > OBJECTIVE_SANE_LIMIT:
            raise TrainingDiverged(it, value, trace)
        n_terms = sum(len(b.pairs) * (len(b.train_y) + 1) for b in batches)
        net = sgd_step(net, tape, cfg.learning_rate / n_terms, "ascent")

    return FitResult(InferenceNet(net), trace)


@dataclass
class Prediction:
    mean: np.ndarray  # (M,)
    std: np.ndarray  # (M,)
    samples: np.ndarray  # (M, S)
    mu: np.ndarray  # (M, k+1) variational means
    log_std: np.ndarray  # (M, k+1)


def predict(
    inference: InferenceNet,
    embedding: EmbeddingModel,
    data: Dataset,
    x_star: np.ndarray,
    rng: SeedTree,
    n_samples: int = 1000,
) -> Prediction:
    """Posterior-predictive draws at new covariates.

    Regression: samples of the predictive mean.  Classification: samples of
    the class-1 probability.  mean/std are over the n_samples draws
    (population std; a single draw reports std 0).
    """
    x_star = np.asarray(x_star, dtype=np.float64)
    if x_star.ndim == 1:
        # 1-d input is a batch for univariate data, a single point otherwise
        x_star = x_star[:, None] if data.width == 1 else x_star[None, :]
    if x_star.shape[1] != data.width:
        raise ValueError("x_star width does not match training data")
    summary = aggregate(embedding.embed(data.x))
    test_embeds = embedding.embed(x_star)
    mu, log_std = infer_phi_batch(inference, summary, test_embeds)
    std = np.exp(log_std)

    outputs = np.empty((x_star.shape[0], n_samples))
    for i in range(x_star.shape[0]):
        gen = rng.child(i).generator()
        eps = gen.standard_normal((n_samples, mu.shape[1]))
        thetas = mu[i] + std[i] * eps
        outputs[i] = thetas @ head_inputs(test_embeds[i])
    if data.task == TASK_CLASSIFICATION:
        outputs = 1.0 / (1.0 + np.exp(-np.clip(outputs, -700, 700)))
    return Prediction(outputs.mean(axis=1), outputs.std(axis=1), outputs, mu, log_std)
