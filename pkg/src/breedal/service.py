"""HTTP service around the run, study, validation and analysis operations.

Runs execute one at a time on a background worker; clients submit a config,
then poll the run resource for status and metrics.
"""
from __future__ import annotations

import threading
import traceback
import uuid
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Literal, Optional

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import __version__
from .errors import BreedalError
from .harness import analysis, study as study_mod
from .harness.config import RunConfig
from .harness.metrics import read_csv
from .harness.validation import gen_validation, save_validation
from .orchestrator.server import run as run_experiment


class RunRequest(BaseModel):
    config: RunConfig = Field(default_factory=RunConfig)


class RunStatus(BaseModel):
    run_id: str
    status: Literal["queued", "running", "done", "failed"]
    output_dir: str
    summary: Optional[dict[str, Any]] = None
    error: Optional[str] = None


class MetricsResponse(BaseModel):
    run_id: str
    rows: list[dict[str, str]]


class ValidationRequest(BaseModel):
    config: RunConfig = Field(default_factory=RunConfig)
    path: Optional[str] = None


class ValidationResponse(BaseModel):
    path: str
    n: int
    M: int
    T_steps: int


class AnalyzeRequest(BaseModel):
    run_dir: str
    other_dir: Optional[str] = None
    out_dir: Optional[str] = None


class AnalyzeResponse(BaseModel):
    files: dict[str, str]


class StudyRequest(BaseModel):
    grid_path: str


class StudyResponse(BaseModel):
    planned: int
    directories: list[str]


class _Registry:
    def __init__(self):
        self.lock = threading.Lock()
        self.runs: dict[str, RunStatus] = {}
        self.pool = ThreadPoolExecutor(max_workers=1, thread_name_prefix="breedal-run")

    def submit(self, cfg: RunConfig) -> RunStatus:
        run_id = uuid.uuid4().hex[:12]
        status = RunStatus(run_id=run_id, status="queued", output_dir=cfg.output_dir)
        with self.lock:
            self.runs[run_id] = status
        self.pool.submit(self._execute, run_id, cfg)
        return status

    def _update(self, run_id: str, **changes) -> None:
        with self.lock:
            self.runs[run_id] = self.runs[run_id].model_copy(update=changes)

    def _execute(self, run_id: str, cfg: RunConfig) -> None:
        self._update(run_id, status="running")
        try:
            summary = run_experiment(cfg)
        except Exception as exc:  # reported through the status resource
            traceback.print_exc()
            self._update(run_id, status="failed", error=f"{type(exc).__name__}: {exc}")
            return
        self._update(run_id, status="done", summary=summary.__dict__)

    def get(self, run_id: str) -> RunStatus:
        with self.lock:
            if run_id not in self.runs:
                raise HTTPException(status_code=404, detail=f"unknown run {run_id}")
            return self.runs[run_id]


def create_app() -> FastAPI:
    app = FastAPI(title="breedal", version=__version__)
    registry = _Registry()
    app.state.registry = registry

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.post("/runs", response_model=RunStatus, status_code=202)
    def create_run(req: RunRequest):
        return registry.submit(req.config)

    @app.get("/runs", response_model=list[RunStatus])
    def list_runs():
        with registry.lock:
            return list(registry.runs.values())

    @app.get("/runs/{run_id}", response_model=RunStatus)
    def get_run(run_id: str):
        return registry.get(run_id)

    @app.get("/runs/{run_id}/metrics", response_model=MetricsResponse)
    def get_metrics(run_id: str, since: int = 0):
        status = registry.get(run_id)
        path = Path(status.output_dir) / "metrics.csv"
        if status.status not in ("done", "failed") or not path.is_file():
            raise HTTPException(status_code=409, detail=f"run {run_id} is {status.status}")
        rows = [r for r in read_csv(path) if int(r["iteration"]) > since]
        return MetricsResponse(run_id=run_id, rows=rows)

    @app.post("/validation", response_model=ValidationResponse)
    def create_validation(req: ValidationRequest):
        cfg = req.config
        path = Path(req.path or cfg.validation_path or Path(cfg.output_dir) / "validation.bin")
        path.parent.mkdir(parents=True, exist_ok=True)
        vs = gen_validation(cfg.validation_size, cfg.bounds, cfg.solver_config())
        save_validation(vs, path)
        return ValidationResponse(path=str(path), n=vs.n, M=vs.M, T_steps=vs.T_steps)

    @app.post("/analyze", response_model=AnalyzeResponse)
    def run_analysis(req: AnalyzeRequest):
        try:
            files = analysis.analyze(req.run_dir, req.other_dir, req.out_dir)
        except BreedalError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from None
        return AnalyzeResponse(files={k: str(v) for k, v in files.items()})

    @app.post("/studies", response_model=StudyResponse)
    def run_study(req: StudyRequest):
        try:
            planned = study_mod.plan_study(Path(req.grid_path).read_text(), req.grid_path)
            dirs = study_mod.study(req.grid_path)
        except (BreedalError, OSError) as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from None
        return StudyResponse(planned=len(planned), directories=[str(d) for d in dirs])

    return app


app = create_app()
