"""HTTP service exposing evaluation, sweeps, store generation and validation.

The service owns request/response schemas (pydantic) and maps the package's
error hierarchy onto a stable JSON envelope:

    400 {"error": {"kind": "store" | "invalid" | "evaluation", "message": ...}}

"store" covers file and store-compatibility failures, "invalid" covers
argument domain errors that survive schema validation, and "evaluation"
covers aborted fits/evaluations. Schema violations remain FastAPI's own 422.
The CLI is a thin client of this app and relies on exactly this contract.
"""
from __future__ import annotations

from typing import Literal

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ConfigDict, Field, model_validator

from . import __version__
from .classifier import AnchorInit, ClassifierConfig, WeightFn, WeightInit
from .errors import (
    InsufficientData,
    OMError,
    OutOfRange,
    ShapeMismatch,
    StoreCompatError,
    StoreFormatError,
)
from .geometry import GeometryMode
from .harness import EvalReport, Protocol, SweepAxes, evaluate, sweep
from .store import read_store, synth_store, validate_store, write_store


class ProtocolModel(BaseModel):
    ways: int = Field(5, ge=1)
    shots: int = Field(5, ge=1)
    queries: int = Field(15, ge=1)

    def to_protocol(self) -> Protocol:
        return Protocol(self.ways, self.shots, self.queries)


class ConfigModel(BaseModel):
    """Wire form of ClassifierConfig; `lambda` is accepted for the CE weight."""

    model_config = ConfigDict(populate_by_name=True)

    tau: int = Field(14, ge=0)
    pyramid: int = Field(11, ge=1)
    gamma: float = Field(7.5, gt=0)
    alpha: float = Field(0.1, ge=0)
    lam: float = Field(0.1, ge=0, alias="lambda")
    lr: float = Field(0.1, gt=0)
    iterations: int = Field(100, ge=1)
    geometry: Literal["exact", "paper"] = "exact"
    weight_fn: Literal["paper", "uniform", "linear", "quadratic"] = "paper"
    anchor_init: Literal["pseudokm", "random"] = "pseudokm"
    weight_init: Literal["prototype", "random"] = "prototype"
    inductive: bool = False
    seed: int = Field(0, ge=0, lt=2**64)

    def to_config(self) -> ClassifierConfig:
        return ClassifierConfig(
            tau=self.tau,
            pyramid=self.pyramid,
            gamma=self.gamma,
            alpha=self.alpha,
            lam=self.lam,
            lr=self.lr,
            iterations=self.iterations,
            geometry=GeometryMode(self.geometry),
            weight_fn=WeightFn(self.weight_fn),
            anchor_init=AnchorInit(self.anchor_init),
            weight_init=WeightInit(self.weight_init),
            pure_inductive=self.inductive,
            seed=self.seed,
        )


class SynthSpec(BaseModel):
    """Synthetic-store shape; noise spread is 1/separation."""

    classes: int = Field(10, ge=1)
    per_class: int = Field(40, ge=1)
    dim: int = Field(16, ge=1)
    pyramid: int | None = Field(None, ge=1)
    separation: float = Field(6.0, gt=0)
    shift: float = Field(0.0, ge=0)


class RunRequest(BaseModel):
    features: str | None = None
    synth: SynthSpec | None = None
    config: ConfigModel = ConfigModel()
    protocol: ProtocolModel = ProtocolModel()
    episodes: int = Field(100, ge=1)
    threads: int = Field(1, ge=1)

    @model_validator(mode="after")
    def _one_source(self) -> "RunRequest":
        if (self.features is None) == (self.synth is None):
            raise ValueError("exactly one of `features` and `synth` is required")
        return self


class AxesModel(BaseModel):
    tau: list[int] | None = None
    pyramid: list[int] | None = None
    weight_fn: list[Literal["paper", "uniform", "linear", "quadratic"]] | None = None
    anchor_init: list[Literal["pseudokm", "random"]] | None = None
    weight_init: list[Literal["prototype", "random"]] | None = None

    def to_axes(self) -> SweepAxes:
        return SweepAxes(
            tau=tuple(self.tau) if self.tau else None,
            pyramid=tuple(self.pyramid) if self.pyramid else None,
            weight_fn=tuple(WeightFn(v) for v in self.weight_fn) if self.weight_fn else None,
            anchor_init=tuple(AnchorInit(v) for v in self.anchor_init) if self.anchor_init else None,
            weight_init=tuple(WeightInit(v) for v in self.weight_init) if self.weight_init else None,
        )


class SweepRequest(RunRequest):
    axes: AxesModel = AxesModel()


class ReportModel(BaseModel):
    config: dict
    episodes: int
    mean_accuracy: float
    ci95: float
    per_episode: list[float]
    seed: int
    failures: int
    duration_s: float


class SweepResponse(BaseModel):
    reports: list[ReportModel]


class SynthRequest(BaseModel):
    output: str
    classes: int = Field(10, ge=1)
    per_class: int = Field(40, ge=1)
    dim: int = Field(16, ge=1)
    pyramid: int = Field(11, ge=1)
    separation: float = Field(6.0, gt=0)
    shift: float = Field(0.0, ge=0)
    seed: int = Field(0, ge=0, lt=2**64)


class SynthResponse(BaseModel):
    path: str
    classes: int
    per_class: int
    n: int
    p: int


class ValidateRequest(BaseModel):
    path: str


class ValidateResponse(BaseModel):
    valid: bool
    error: str | None = None
    summary: dict | None = None


app = FastAPI(title="oblique-fewshot", version=__version__)


@app.exception_handler(OMError)
async def _om_error_handler(request: Request, err: OMError) -> JSONResponse:
    if isinstance(err, (StoreFormatError, StoreCompatError, InsufficientData)):
        kind = "store"
    elif isinstance(err, (OutOfRange, ShapeMismatch)):
        kind = "invalid"
    else:
        kind = "evaluation"
    return JSONResponse(
        status_code=400,
        content={"error": {"kind": kind, "message": str(err)}},
    )


def _load_store(req: RunRequest):
    if req.features is not None:
        return read_store(req.features)
    spec = req.synth
    return synth_store(
        classes=spec.classes,
        per_class=spec.per_class,
        n=spec.dim,
        p=spec.pyramid if spec.pyramid is not None else req.config.pyramid,
        separation=spec.separation,
        shift=spec.shift,
        seed=req.config.seed,
    )


def _report_payload(report: EvalReport) -> dict:
    return report.to_dict()


@app.get("/health")
def health() -> dict:
    return {"status": "ok", "version": __version__}


@app.post("/run", response_model=ReportModel)
def run(req: RunRequest) -> dict:
    store = _load_store(req)
    report = evaluate(
        store, req.config.to_config(), req.episodes, req.protocol.to_protocol(),
        threads=req.threads,
    )
    return _report_payload(report)


@app.post("/sweep", response_model=SweepResponse)
def run_sweep(req: SweepRequest) -> dict:
    store = _load_store(req)
    reports = sweep(
        store, req.config.to_config(), req.axes.to_axes(), req.episodes,
        req.protocol.to_protocol(), threads=req.threads,
    )
    return {"reports": [_report_payload(r) for r in reports]}


@app.post("/synth", response_model=SynthResponse)
def make_synth(req: SynthRequest) -> dict:
    store = synth_store(
        classes=req.classes, per_class=req.per_class, n=req.dim, p=req.pyramid,
        separation=req.separation, shift=req.shift, seed=req.seed,
    )
    try:
        write_store(store, req.output)
    except OSError as err:
        raise StoreFormatError(f"cannot write store: {err}") from err
    return {
        "path": req.output,
        "classes": req.classes,
        "per_class": req.per_class,
        "n": req.dim,
        "p": req.pyramid,
    }


@app.post("/validate", response_model=ValidateResponse)
def validate(req: ValidateRequest) -> dict:
    try:
        summary = validate_store(req.path)
    except StoreFormatError as err:
        return {"valid": False, "error": str(err), "summary": None}
    return {"valid": True, "error": None, "summary": summary}
