"""Experiment configuration: typed schema, INI loading, canonical hashing.

One config file drives every pipeline stage.  Flat sections map onto the
models below; unknown keys anywhere are errors so a typo cannot silently
fall back to a default.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from typing import Literal, Optional, Union

from pydantic import BaseModel, Field, field_validator, model_validator

from .environments import TrainConfig
from .model import TASK_CLASSIFICATION, TASK_REGRESSION
from .prior import PriorConfig, default_prior_config


class _Strict(BaseModel):
    model_config = {"extra": "forbid"}


def _split_ints(value):
    if isinstance(value, str):
        return [int(tok) for tok in value.replace(",", " ").split()]
    return value


class HeteroLinearTask(_Strict):
    kind: Literal["hetero_linear"] = "hetero_linear"
    a: float = 0.5
    b: float = 1.0
    slope: float = 1.0
    n_train: int = Field(default=500, ge=1)
    n_test: int = Field(default=500, ge=1)

    @model_validator(mode="after")
    def _ranges(self):
        if not 0.0 < self.a < self.b:
            raise ValueError(f"need 0 < a < b, got a={self.a}, b={self.b}")
        return self

    @property
    def task(self) -> str:
        return TASK_REGRESSION


class LogisticGapTask(_Strict):
    kind: Literal["logistic_gap"] = "logistic_gap"
    gap: float = 0.3
    n_train: int = Field(default=500, ge=1)
    n_test: int = Field(default=500, ge=1)

    @model_validator(mode="after")
    def _ranges(self):
        if not 0.0 < self.gap < 0.5:
            raise ValueError(f"gap must lie in (0, 0.5), got {self.gap}")
        return self

    @property
    def task(self) -> str:
        return TASK_CLASSIFICATION


class CsvTask(_Strict):
    kind: Literal["csv"] = "csv"
    path: str
    target: str
    task: Literal["regression", "classification"] = "regression"
    n_clusters: int = Field(default=2, ge=2)
    train_majority_ratio: float = Field(default=0.9, gt=0.5, le=1.0)
    standardize: bool = True


TaskSpec = Union[HeteroLinearTask, LogisticGapTask, CsvTask]


class ModelSpec(_Strict):
    embed_hidden: tuple[int, ...] = ()
    embed_dim: int = Field(default=8, ge=1)
    pretrain_steps: int = Field(default=1500, ge=0)
    pretrain_lr: float = Field(default=0.1, gt=0)
    inference_hidden: Optional[tuple[int, ...]] = None  # None: scaled ladder from embed_dim
    log_std_init: float = -1.0

    @field_validator("embed_hidden", mode="before")
    @classmethod
    def _parse_embed(cls, value):
        if isinstance(value, str):
            return tuple(int(tok) for tok in value.replace(",", " ").split())
        return value

    @field_validator("inference_hidden", mode="before")
    @classmethod
    def _parse_inference(cls, value):
        if isinstance(value, str):
            toks = value.replace(",", " ").split()
            return tuple(int(tok) for tok in toks) if toks else None
        return value


class TrainSpec(_Strict):
    num_envs: int = Field(default=30, ge=1)
    env_test_size: int = Field(default=20, ge=1)
    env_train_size: int = Field(default=500, ge=1)
    var_penalty: float = Field(default=0.001, ge=0)
    kl_penalty: float = Field(default=0.005, ge=0)
    learning_rate: float = Field(default=0.01, gt=0)
    steps: int = Field(default=30, ge=0)
    posterior_samples: int = Field(default=1000, ge=1)
    fixed_envs: bool = False
    analytic_entropy: bool = False
    condition_on_test: bool = False  # single-env mode on the real test covariates

    def to_train_config(self, seed: int, inference_hidden=None, log_std_init=-1.0) -> TrainConfig:
        return TrainConfig(
            num_envs=self.num_envs,
            env_test_size=self.env_test_size,
            env_train_size=self.env_train_size,
            var_penalty=self.var_penalty,
            kl_penalty=self.kl_penalty,
            learning_rate=self.learning_rate,
            steps=self.steps,
            posterior_samples=self.posterior_samples,
            seed=seed,
            fixed_envs=self.fixed_envs,
            analytic_entropy=self.analytic_entropy,
            inference_hidden=inference_hidden,
            log_std_init=log_std_init,
        )


class PriorSpec(_Strict):
    mc_samples: int = Field(default=64, ge=1)
    pad: float = Field(default=3.0, ge=0)
    y_min: Optional[float] = None
    y_max: Optional[float] = None

    def to_prior_config(self, train_y, task: str) -> PriorConfig:
        if self.y_min is not None and self.y_max is not None:
            return PriorConfig(task=task, y_min=self.y_min, y_max=self.y_max, mc_samples=self.mc_samples)
        if (self.y_min is None) != (self.y_max is None):
            raise ValueError("give both y_min and y_max or neither")
        return default_prior_config(train_y, task, pad=self.pad, mc_samples=self.mc_samples)


class MetricsSpec(_Strict):
    ace_bins: int = Field(default=10, ge=1)


class EnvcheckSpec(_Strict):
    """Inputs for the environment-coverage calculator."""

    p: list[float]
    p_star: list[float]
    epsilon: float = Field(default=0.5, gt=0)
    alpha: float = Field(default=0.05, gt=0, lt=1)
    trials: int = Field(default=10000, ge=1)

    @field_validator("p", "p_star", mode="before")
    @classmethod
    def _parse_probs(cls, value):
        if isinstance(value, str):
            return [float(tok) for tok in value.replace(",", " ").split()]
        return value

    @model_validator(mode="after")
    def _same_length(self):
        if len(self.p) != len(self.p_star):
            raise ValueError("p and p_star need the same number of bins")
        return self


class PriorGridSpec(_Strict):
    """Demonstration surface: energy of a 2-feature logistic head over a grid.

    The pool fixes the second covariate at x2_train; the optional test point
    shifts it to x2_test.  Grid axes are (intercept, second coefficient) with
    the first coefficient frozen.
    """

    n_pool: int = Field(default=50, ge=1)
    x1_mean: float = 1.0
    x1_std: float = Field(default=1.0, gt=0)
    x2_train: float = 0.5
    x1_test: float = 1.0
    x2_test: float = 1.5
    first_coef: float = 1.0
    intercept_min: float = -3.0
    intercept_max: float = 3.0
    intercept_steps: int = Field(default=13, ge=1)
    coef_min: float = -6.0
    coef_max: float = 6.0
    coef_steps: int = Field(default=13, ge=1)


class RunSpec(_Strict):
    seeds: list[int] = [0]
    out_dir: str = "runs/experiment"

    @field_validator("seeds", mode="before")
    @classmethod
    def _parse_seeds(cls, value):
        return _split_ints(value)

    @model_validator(mode="after")
    def _nonempty(self):
        if not self.seeds:
            raise ValueError("need at least one seed")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct")
        return self


class ExperimentConfig(_Strict):
    task: TaskSpec = Field(discriminator="kind")
    model: ModelSpec = ModelSpec()
    train: TrainSpec = TrainSpec()
    prior: PriorSpec = PriorSpec()
    metrics: MetricsSpec = MetricsSpec()
    run: RunSpec = RunSpec()
    envcheck: Optional[EnvcheckSpec] = None
    prior_grid: PriorGridSpec = PriorGridSpec()


def load_config(path) -> ExperimentConfig:
    """Parse an INI-style config file into a validated ExperimentConfig."""
    parser = configparser.ConfigParser()
    read = parser.read(path, encoding="utf-8")
    if not read:
        raise FileNotFoundError(f"config file not found: {path}")
    sections = {name: dict(parser[name]) for name in parser.sections()}
    if "task" in sections and "kind" not in sections["task"]:
        raise ValueError("[task] section needs a 'kind' key")
    return ExperimentConfig.model_validate(sections)


def config_hash(cfg: ExperimentConfig) -> str:
    """Stable digest of the full config; identical configs hash identically."""
    payload = json.dumps(cfg.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()
