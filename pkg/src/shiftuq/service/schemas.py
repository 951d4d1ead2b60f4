"""Request and response bodies for the pipeline service."""

from __future__ import annotations

from typing import Any, Optional

from pydantic import BaseModel, Field

from ..config import ExperimentConfig


class StageRequest(BaseModel):
    """One stage invocation: full config plus an optional seed override.

    Without a seed the stage runs on the first configured seed; stages that
    sweep seeds (eval) read the config's whole list.
    """

    model_config = {"extra": "forbid"}

    config: ExperimentConfig
    seed: Optional[int] = None

    def resolved_seed(self) -> int:
        return self.config.run.seeds[0] if self.seed is None else self.seed


class EvalRequest(BaseModel):
    model_config = {"extra": "forbid"}

    config: ExperimentConfig
    seeds: Optional[list[int]] = Field(default=None, min_length=1)


class StageResponse(BaseModel):
    stage: str
    seed: Optional[int]
    outputs: dict[str, str]
    values: dict[str, Any]


class HealthResponse(BaseModel):
    status: str
    version: str
