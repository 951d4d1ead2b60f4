"""HTTP front for the pipeline stages.

Every stage is a POST taking the full experiment config in the body, so the
service holds no state between calls; artifacts land on the filesystem the
service process sees.  Failures a caller can act on (missing prerequisites,
bad inputs, diverged training) come back as 400 with a one-line error.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import stages
from ..environments import TrainingDiverged
from ..model import PretrainDiverged
from ..stages import StageError, StageResult
from .schemas import EvalRequest, HealthResponse, StageRequest, StageResponse

_SEEDED_STAGES = {
    "gen-data": stages.gen_data,
    "pretrain": stages.pretrain,
    "fit": stages.fit,
    "predict": stages.predict,
    "envcheck": stages.envcheck,
    "prior-grid": stages.prior_grid,
}


def _response(result: StageResult) -> StageResponse:
    return StageResponse(stage=result.stage, seed=result.seed, outputs=result.outputs, values=result.values)


def create_app() -> FastAPI:
    from .. import __version__

    app = FastAPI(title="shiftuq pipeline", version=__version__)

    @app.exception_handler(StageError)
    @app.exception_handler(TrainingDiverged)
    @app.exception_handler(PretrainDiverged)
    @app.exception_handler(ValueError)
    async def _actionable(request: Request, exc: Exception):
        return JSONResponse(status_code=400, content={"error": str(exc).replace("\n", " ")})

    @app.get("/health", response_model=HealthResponse)
    async def health():
        return HealthResponse(status="ok", version=app.version)

    def register(name: str, fn):
        @app.post(f"/stages/{name}", response_model=StageResponse, name=name)
        async def run_stage(body: StageRequest):
            return _response(fn(body.config, body.resolved_seed()))

    for name, fn in _SEEDED_STAGES.items():
        register(name, fn)

    @app.post("/stages/eval", response_model=StageResponse)
    async def run_eval(body: EvalRequest):
        return _response(stages.evaluate(body.config, seeds=body.seeds))

    return app
