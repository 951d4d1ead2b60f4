"""Base predictive model: datasets, likelihoods, embeddings, pretraining.

The predictor is a linear head over a learned embedding.  Pretraining fits
embedding and head jointly by maximum likelihood, then rescales every
embedding coordinate to a common rms (folded exactly into the last embedding
layer via relu positive-homogeneity, head inversely scaled) so predictions
are unchanged while the head's per-example curvature is uniform across
coordinates.  The constant head feature shares that scale, which is why one
learning rate works for the intercept too.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .nn import DenseNet, NetGraph, sgd_step

TASK_REGRESSION = "regression"
TASK_CLASSIFICATION = "classification"
TASKS = (TASK_REGRESSION, TASK_CLASSIFICATION)

# common rms for embedding coordinates and the constant head feature
FEATURE_SCALE = 0.3

_HALF_LOG_TWO_PI = 0.5 * np.log(2.0 * np.pi)


@dataclass
class Dataset:
    """Covariates x (N, d), targets y (N,), and a task tag.

    y_mean optionally carries the noiseless conditional mean when the
    generating process is known; evaluation can then score predictions
    against the signal instead of the noise.
    """

    x: np.ndarray
    y: np.ndarray
    task: str
    y_mean: np.ndarray | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.x.ndim == 1:
            self.x = self.x[:, None]
        if self.x.ndim != 2:
            raise ValueError("x must be (N, d)")
        if self.y.shape != (self.x.shape[0],):
            raise ValueError(f"y shape {self.y.shape} does not match x rows {self.x.shape[0]}")
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.task == TASK_CLASSIFICATION and not np.all(np.isin(self.y, (0.0, 1.0))):
            raise ValueError("classification targets must be 0/1")
        if self.y_mean is not None:
            self.y_mean = np.asarray(self.y_mean, dtype=np.float64)
            if self.y_mean.shape != self.y.shape:
                raise ValueError("y_mean must match y shape")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def width(self) -> int:
        return self.x.shape[1]

    def subset(self, idx) -> "Dataset":
        ym = self.y_mean[idx] if self.y_mean is not None else None
        return Dataset(self.x[idx], self.y[idx], self.task, ym)


def gaussian_log_lik(y, mu):
    """log N(y; mu, 1), elementwise; works on arrays or graph nodes."""
    return -_HALF_LOG_TWO_PI - 0.5 * ad.square(y - mu)


def bernoulli_log_lik(labels, logits):
    """log p(label | logit) for label in {0,1}, stable for any logit size.

    y log sigma(l) + (1-y) log(1-sigma(l)) = -softplus(-l) - (1-y) l.
    """
    return -ad.softplus(-logits) - (1.0 - labels) * logits


def log_lik(y, prediction, task: str):
    """Pointwise log-likelihood given the head output (mean or logit)."""
    if task == TASK_REGRESSION:
        return gaussian_log_lik(y, prediction)
    if task == TASK_CLASSIFICATION:
        return bernoulli_log_lik(y, prediction)
    raise ValueError(f"unknown task {task!r}")


def head_inputs(embeds: np.ndarray) -> np.ndarray:
    """Append the constant feature column: (B, k) -> (B, k+1)."""
    embeds = np.asarray(embeds, dtype=np.float64)
    single = embeds.ndim == 1
    if single:
        embeds = embeds[None, :]
    col = np.full((embeds.shape[0], 1), FEATURE_SCALE)
    out = np.concatenate([embeds, col], axis=1)
    return out[0] if single else out


def head_predict(head: np.ndarray, embeds: np.ndarray):
    """Linear head on embeddings: returns mean (regression) or logit."""
    head = np.asarray(head, dtype=np.float64)
    inputs = head_inputs(embeds)
    return inputs @ head


@dataclass
class EmbeddingModel:
    """Covariate embedding g: R^d -> R^k."""

    net: DenseNet

    @property
    def embed_dim(self) -> int:
        return self.net.out_width

    @property
    def in_width(self) -> int:
        return self.net.in_width

    def embed(self, x: np.ndarray) -> np.ndarray:
        return self.net.forward(x)


def aggregate(embeds: np.ndarray) -> np.ndarray:
    """Mean of embedding rows, exactly invariant to row order.

    Rows are summed in canonical (lexicographic) order so any permutation of
    the input produces bit-identical output.
    """
    embeds = np.asarray(embeds, dtype=np.float64)
    if embeds.ndim != 2 or embeds.shape[0] == 0:
        raise ValueError("aggregate expects a nonempty (N, k) array")
    order = np.lexsort(embeds.T[::-1])
    return embeds[order].sum(axis=0) / embeds.shape[0]


class PretrainDiverged(RuntimeError):
    def __init__(self, step: int, value: float):
        super().__init__(f"pretraining diverged at step {step} (objective {value!r}); lower the learning rate")
        self.step = step
        self.value = value


@dataclass
class PretrainResult:
    embedding: EmbeddingModel
    head: np.ndarray  # (k+1,), last coordinate pairs with the constant feature
    trace: list = field(default_factory=list)  # mean log-likelihood per step


def pretrain_embedding(
    data: Dataset,
    embed_dim: int = 8,
    hidden: tuple = (),
    steps: int = 1500,
    lr: float = 0.1,
    rng: np.random.Generator | None = None,
) -> PretrainResult:
    """Fit embedding + head by full-batch maximum likelihood, then normalize.

    lr applies to the mean per-point log-likelihood.  After training the
    embedding output is rescaled by one shared factor so its pooled rms on
    the training set equals FEATURE_SCALE; the head absorbs the inverse so
    predictions are unchanged.  The factor is shared across coordinates on
    purpose: per-coordinate scaling would blow up units that are barely
    active on the training inputs but active off-support.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    widths = [data.width, *hidden, embed_dim, 1]
    acts = ["relu"] * (len(widths) - 2) + ["identity"]
    net = DenseNet.create(widths, acts, rng)

    x = data.x
    y = data.y

    def objective(graph: NetGraph) -> ad.Node:
        pred = graph.forward(x)[:, 0]
        return ad.vmean(log_lik(y, pred, data.task))

    trace = []
    for step in range(steps):
        graph = NetGraph(net)
        out = objective(graph)
        value = out.item()
        if not np.isfinite(value):
            raise PretrainDiverged(step, value)
        trace.append(value)
        out.backward()
        net = sgd_step(net, graph.tape(), lr, "ascent")

    embed_net = DenseNet([l for l in net.layers[:-1]])
    head_layer = net.layers[-1]

    raw = embed_net.forward(x)
    rms = float(np.sqrt(np.mean(np.square(raw))))
    scale = FEATURE_SCALE / rms if rms > 1e-12 else 1.0
    last = embed_net.layers[-1]
    last.weights *= scale
    last.bias *= scale

    head = np.empty(embed_dim + 1)
    head[:embed_dim] = head_layer.weights[0] / scale
    head[embed_dim] = head_layer.bias[0] / FEATURE_SCALE
    return PretrainResult(EmbeddingModel(embed_net), head, trace)
