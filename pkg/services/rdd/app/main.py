"""
RD Analysis Service
Runs posterior RD analyses over HTTP and exposes Prometheus metrics
"""

from contextlib import asynccontextmanager
from typing import Dict, List, Optional

import numpy as np
import structlog
from fastapi import FastAPI, HTTPException
from fastapi.concurrency import run_in_threadpool
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import __version__
from .config import (
    ConfounderSection,
    DataSection,
    InferenceSection,
    PriorSection,
    RunConfig,
    settings,
)
from .errors import MissingColumn, NumericalError, RDDError
from .metrics import metrics_endpoint
from .models import ChainConfig, DesignMode, PosteriorReport, Subject
from .pipeline import RawInput, run_analysis
from .utils.logging import setup_logging

logger = structlog.get_logger(__name__)


class SubjectIn(BaseModel):
    id: Optional[str] = None
    r: float
    y: float
    t: Optional[int] = None
    x: float = 0.0
    covariates: Dict[str, float] = {}

    @field_validator("t")
    @classmethod
    def _binary_treatment(cls, v):
        if v is not None and v not in (0, 1):
            raise ValueError("treatment must be 0 or 1")
        return v


class ChainRequest(BaseModel):
    """Chain settings a client may set; trace files and debug checks stay server-side"""
    model_config = ConfigDict(extra="forbid")

    iterations: int = ChainConfig.model_fields["iterations"].default
    burn_in: int = ChainConfig.model_fields["burn_in"].default
    thin: int = 1
    seed: int = ChainConfig.model_fields["seed"].default
    initial_blocks: int = ChainConfig.model_fields["initial_blocks"].default
    enable_shift_move: bool = False
    chains: int = 1
    workers: int = Field(default=1, gt=0)

    @field_validator("workers")
    @classmethod
    def _bounded_workers(cls, v):
        if v > settings.max_workers:
            raise ValueError(f"workers is limited to {settings.max_workers}")
        return v

    @model_validator(mode="after")
    def _valid_chain(self):
        try:
            self.chain_config()
        except ValidationError as e:
            raise ValueError(str(e))
        return self

    def chain_config(self) -> ChainConfig:
        return ChainConfig(**self.model_dump())


class AnalysisRequest(BaseModel):
    """One dataset plus the run settings the cli reads from TOML"""
    subjects: List[SubjectIn] = Field(min_length=1)
    cutoff: float = 0.0
    mode: DesignMode = DesignMode.SHARP
    confounder: ConfounderSection = ConfounderSection()
    prior: PriorSection = PriorSection()
    chain: ChainRequest = ChainRequest()
    inference: InferenceSection = InferenceSection()

    def run_config(self) -> RunConfig:
        return RunConfig(
            data=DataSection(cutoff=self.cutoff, mode=self.mode),
            confounder=self.confounder,
            prior=self.prior,
            chain=self.chain.chain_config(),
            inference=self.inference,
        )

    def raw_input(self) -> RawInput:
        names = list(self.confounder.covariates)
        regress = self.prior.regress_column
        if regress and regress != self.confounder.column and regress not in names:
            names.append(regress)

        rows = []
        for i, s in enumerate(self.subjects):
            missing = [name for name in names if name not in s.covariates]
            if missing:
                raise MissingColumn(missing[0], module="main")
            rows.append([s.covariates[name] for name in names])

        subjects = [
            Subject(id=s.id if s.id is not None else str(i + 1), r=s.r, x=s.x, y=s.y, t=s.t)
            for i, s in enumerate(self.subjects)
        ]
        covariates = np.array(rows, dtype=float) if names else None
        return RawInput(subjects=subjects, covariates=covariates, covariate_names=tuple(names))


@asynccontextmanager
async def lifespan(app: FastAPI):
    """Application lifespan manager"""
    setup_logging()
    logger.info("Starting RD Analysis Service", version=__version__, port=settings.port)
    yield
    logger.info("Shutting down RD Analysis Service")


app = FastAPI(
    title="RD Analysis Service",
    description="Bayesian nonparametric regression discontinuity analysis",
    version=__version__,
    lifespan=lifespan,
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


@app.post("/analyses", response_model=PosteriorReport)
async def create_analysis(request: AnalysisRequest):
    """Run an analysis and return its posterior report"""
    try:
        config = request.run_config()
        raw = request.raw_input()
        return await run_in_threadpool(run_analysis, config, raw)
    except NumericalError as e:
        logger.error("Analysis failed", error=str(e))
        raise HTTPException(status_code=500, detail=str(e))
    except RDDError as e:
        logger.warning("Analysis rejected", error=str(e))
        raise HTTPException(status_code=422, detail=str(e))


@app.get("/metrics")
async def get_metrics():
    """Prometheus metrics"""
    if not settings.metrics_enabled:
        raise HTTPException(status_code=404, detail="Metrics disabled")
    return await metrics_endpoint()


@app.get("/health")
async def health_check():
    """Health check endpoint"""
    return {"status": "healthy", "service": "rdd", "version": __version__}


if __name__ == "__main__":
    import uvicorn
    uvicorn.run(app, host="0.0.0.0", port=settings.port)
