"""HTTP service wrapping the package's commands.

One POST endpoint per command, each taking the same resolved-config
document the CLI uses, so a CLI run against the service produces
byte-identical artifacts to a local run.  Run with:

    uvicorn qetlab.service:app
"""

from __future__ import annotations

from typing import Literal, Optional

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ConfigDict, Field

from ._version import __version__
from .errors import ConfigError, DegenerateProtocolError, NumericalError
from .runconfig import (
    DEFAULT_DISTANCES,
    RunConfig,
    analytic_csv_texts,
    run_analytic_job,
    run_cooling_job,
    run_dump_state_job,
    run_netsim_job,
    run_qed_job,
    run_qet_job,
    run_validate_job,
)

app = FastAPI(
    title="qetlab",
    version=__version__,
    description="Energy teleportation and distribution on transverse-field Ising chains.",
)


class RunConfigModel(BaseModel):
    """Wire form of RunConfig; the endpoint fixes the command."""

    model_config = ConfigDict(populate_by_name=True, extra="forbid")

    command: Optional[str] = None
    n_sites: Optional[int] = None
    h: float = 1.0
    lam: Optional[float] = Field(None, alias="lambda")
    j: Optional[float] = None
    boundary: Literal["periodic", "open"] = "periodic"
    supplier_site: int = 0
    consumer_sites: list = []
    distance: int = 5
    distances: list = list(DEFAULT_DISTANCES)
    n_min: int = 0
    n_max: int = 30
    family: Literal["unitary", "two-element"] = "unitary"
    grid_points: int = 5
    refine_seeds: int = 3
    f_tol: float = 1e-8
    max_iter: int = 400
    scenario_file: Optional[str] = None
    seed: Optional[int] = None
    only: Optional[str] = None
    tolerances: Optional[dict] = None
    output: Optional[str] = None
    format: Optional[str] = None

    def to_run_config(self, command: str) -> RunConfig:
        if self.command is not None and self.command != command:
            raise ConfigError(f"config is for command {self.command!r}, not {command!r}")
        doc = self.model_dump(by_alias=True)
        doc["command"] = command
        return RunConfig.from_doc(doc)


class JobRequest(BaseModel):
    config: RunConfigModel = RunConfigModel()


class NetsimRequest(BaseModel):
    scenario: dict


class JobResponse(BaseModel):
    version: str
    config: dict
    result: dict


class AnalyticResponse(JobResponse):
    csv: Optional[dict] = None


class CoolingResponse(JobResponse):
    converged: bool
    partial: Optional[bool] = None


class ValidateResponse(JobResponse):
    text: str


class NetsimResponse(BaseModel):
    version: str
    config: dict
    jsonl: str


class HealthResponse(BaseModel):
    status: str
    version: str


@app.exception_handler(ConfigError)
async def _config_error(request: Request, exc: ConfigError) -> JSONResponse:
    return JSONResponse(status_code=400, content={"detail": str(exc), "kind": "config"})


@app.exception_handler(NumericalError)
async def _numerical_error(request: Request, exc: NumericalError) -> JSONResponse:
    return JSONResponse(status_code=500, content={"detail": str(exc), "kind": "numerical"})


@app.exception_handler(DegenerateProtocolError)
async def _degenerate_error(request: Request, exc: DegenerateProtocolError) -> JSONResponse:
    return JSONResponse(status_code=500, content={"detail": str(exc), "kind": "numerical"})


@app.get("/health", response_model=HealthResponse)
def health() -> HealthResponse:
    return HealthResponse(status="ok", version=__version__)


@app.post("/analytic", response_model=AnalyticResponse, response_model_exclude_none=True)
def analytic(request: JobRequest) -> AnalyticResponse:
    cfg = request.config.to_run_config("analytic")
    doc = run_analytic_job(cfg)
    csv = analytic_csv_texts(cfg) if cfg.resolved().format == "csv" else None
    return AnalyticResponse(**doc, csv=csv)


@app.post("/qet", response_model=JobResponse)
def qet(request: JobRequest) -> JobResponse:
    return JobResponse(**run_qet_job(request.config.to_run_config("qet")))


@app.post("/qed", response_model=JobResponse)
def qed(request: JobRequest) -> JobResponse:
    return JobResponse(**run_qed_job(request.config.to_run_config("qed")))


@app.post("/cooling", response_model=CoolingResponse, response_model_exclude_none=True)
def cooling(request: JobRequest) -> CoolingResponse:
    return CoolingResponse(**run_cooling_job(request.config.to_run_config("cooling")))


@app.post("/netsim", response_model=NetsimResponse)
def netsim(request: NetsimRequest) -> NetsimResponse:
    log = run_netsim_job(request.scenario)
    return NetsimResponse(version=__version__, config=log.config, jsonl=log.to_json_lines())


@app.post("/validate", response_model=ValidateResponse)
def validate(request: JobRequest) -> ValidateResponse:
    doc, text, _ = run_validate_job(request.config.to_run_config("validate"))
    return ValidateResponse(**doc, text=text)


@app.post("/dump-state", response_model=JobResponse)
def dump_state(request: JobRequest) -> JobResponse:
    return JobResponse(**run_dump_state_job(request.config.to_run_config("dump-state")))
