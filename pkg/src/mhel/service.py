"""HTTP service exposing the linking workflow.

Thin wrapper: every endpoint validates a request model, calls the matching
run function, and returns its result. Paths in requests are resolved on the
machine running the service. Hard errors map to status 400 with a
machine-readable ``{"error": {"code", "message"}}`` body.
"""

from __future__ import annotations

import json
from typing import Optional

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from . import __version__, corpus, runs
from .errors import MhelError


class HealthResponse(BaseModel):
    status: str
    version: str


class ImportKbRequest(BaseModel):
    jsonl: str
    out: str


class ImportKbResponse(BaseModel):
    store: str
    entities: int


class BuildIndexRequest(BaseModel):
    vectors: str
    ids: str
    check: bool = False
    sample: int = 8
    k: int = 10


class BuildIndexResponse(BaseModel):
    count: int
    dim: int
    checked_queries: int


class CalibrateRequest(BaseModel):
    dev: str
    k_steps: list[int] = [10, 20, 30, 40, 50]
    epsilon: float = 0.01


class CalibrateResponse(BaseModel):
    theta: float
    k: int
    curve: list[tuple[int, float]]
    records: int


class LinkRequest(BaseModel):
    corpus: str
    out: str
    config_path: Optional[str] = None
    overrides: dict = {}


class LinkResponse(BaseModel):
    out: str
    manifest: str
    mentions: int
    stats: dict


class EvaluateRequest(BaseModel):
    pred: str
    gold: Optional[str] = None
    nil: bool = False
    report: Optional[str] = None


class CorrelateRequest(BaseModel):
    pred: str
    gold: Optional[str] = None


class TallyRequest(BaseModel):
    annotations: str


def _load_config_file(path: Optional[str]) -> Optional[dict]:
    if path is None:
        return None
    with open(path, "r", encoding="utf-8") as handle:
        try:
            config = json.load(handle)
        except ValueError as exc:
            raise MhelError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(config, dict):
        raise MhelError(f"{path}: config must be a JSON object")
    return config


def create_app() -> FastAPI:
    app = FastAPI(title="mhel", version=__version__)

    @app.exception_handler(MhelError)
    async def _mhel_error(request: Request, exc: MhelError) -> JSONResponse:
        message = " ".join(str(exc).split())
        return JSONResponse(
            status_code=400, content={"error": {"code": exc.code, "message": message}}
        )

    @app.exception_handler(OSError)
    async def _os_error(request: Request, exc: OSError) -> JSONResponse:
        message = " ".join(str(exc).split())
        return JSONResponse(
            status_code=400, content={"error": {"code": "io", "message": message}}
        )

    @app.get("/health", response_model=HealthResponse)
    async def health() -> HealthResponse:
        return HealthResponse(status="ok", version=__version__)

    @app.post("/kb/import", response_model=ImportKbResponse)
    def import_kb(req: ImportKbRequest) -> ImportKbResponse:
        return ImportKbResponse(**runs.run_import_kb(req.jsonl, req.out))

    @app.post("/index/build", response_model=BuildIndexResponse)
    def build_index(req: BuildIndexRequest) -> BuildIndexResponse:
        info = runs.run_build_index(
            req.vectors, req.ids, check=req.check, sample=req.sample, k=req.k
        )
        return BuildIndexResponse(**info)

    @app.post("/calibrate", response_model=CalibrateResponse)
    def calibrate(req: CalibrateRequest) -> CalibrateResponse:
        report = runs.run_calibrate(req.dev, k_steps=req.k_steps, epsilon=req.epsilon)
        return CalibrateResponse(**report)

    @app.post("/link", response_model=LinkResponse)
    def link(req: LinkRequest) -> LinkResponse:
        summary = runs.run_link(
            req.corpus,
            req.out,
            file_config=_load_config_file(req.config_path),
            overrides=req.overrides,
        )
        return LinkResponse(**summary)

    @app.post("/evaluate")
    def evaluate(req: EvaluateRequest) -> dict:
        report = runs.run_evaluate(req.pred, req.gold, nil=req.nil)
        if req.report is not None:
            corpus.write_report(req.report, report)
        return report

    @app.post("/correlate")
    def correlate(req: CorrelateRequest) -> dict:
        return runs._json_safe(runs.run_correlate(req.pred, req.gold))

    @app.post("/tally-errors")
    def tally_errors(req: TallyRequest) -> dict:
        return runs.run_tally(req.annotations)

    return app


app = create_app()
