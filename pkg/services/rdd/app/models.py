"""Data models for the RD analysis service"""

import math
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class DesignMode(str, Enum):
    """RD design type"""
    SHARP = "sharp"
    FUZZY = "fuzzy"


class BasisKind(str, Enum):
    """Covariate basis expansion"""
    LINEAR = "linear"
    POLYNOMIAL = "polynomial"


class ReportFormat(str, Enum):
    JSON = "json"
    CSV = "csv"


class PriorVariant(str, Enum):
    """How the cluster-count factor of the partition prior is read"""
    STANDARD = "standard"  # alpha ** k
    LITERAL = "literal"    # alpha * k


class MoveType(str, Enum):
    SPLIT = "split"
    MERGE = "merge"
    SHIFT = "shift"


class Subject(BaseModel):
    """One subject of an RD design"""
    model_config = ConfigDict(frozen=True)

    id: str
    r: float
    x: float = 0.0
    y: float
    t: Optional[int] = None

    @field_validator("t")
    @classmethod
    def _binary_treatment(cls, v):
        if v is not None and v not in (0, 1):
            raise ValueError("treatment must be 0 or 1")
        return v


class Hyperparameters(BaseModel):
    """rDP precision and normal-inverse-gamma base measure"""
    model_config = ConfigDict(frozen=True)

    alpha: float = Field(default=1.0, gt=0)
    beta0: Tuple[float, float] = (0.0, 0.0)
    C: Tuple[Tuple[float, float], Tuple[float, float]] = ((1000.0, 0.0), (0.0, 10.0))
    a: float = Field(default=1.0, gt=0)
    b: float = Field(default=1.0, gt=0)
    prior_variant: PriorVariant = PriorVariant.STANDARD

    @field_validator("C")
    @classmethod
    def _symmetric_positive_definite(cls, v):
        (c11, c12), (c21, c22) = v
        if not all(math.isfinite(c) for c in (c11, c12, c21, c22)):
            raise ValueError("C must be finite")
        if c12 != c21:
            raise ValueError("C must be symmetric")
        if c11 <= 0 or c11 * c22 - c12 * c12 <= 0:
            raise ValueError("C must be positive definite")
        return v

    @property
    def precision(self) -> np.ndarray:
        return np.array(self.C, dtype=float)

    @property
    def mean(self) -> np.ndarray:
        return np.array(self.beta0, dtype=float)


class BasisSpec(BaseModel):
    """Coordinate-wise basis B(x) applied to a covariate vector"""
    model_config = ConfigDict(frozen=True)

    kind: BasisKind = BasisKind.LINEAR
    degree: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def _linear_has_degree_one(self):
        if self.kind == BasisKind.LINEAR and self.degree != 1:
            raise ValueError("linear basis has degree 1")
        return self

    def output_dim(self, p: int) -> int:
        return p * self.degree


class ChainConfig(BaseModel):
    """MCMC run settings"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    iterations: int = Field(default=200_000, gt=0)
    burn_in: int = Field(default=20_000, ge=0)
    thin: int = Field(default=1, gt=0)
    seed: int = Field(default=20140207, ge=0, lt=2**64)
    initial_blocks: int = Field(default=10, gt=0)
    enable_shift_move: bool = False
    chains: int = Field(default=1, gt=0)
    workers: int = Field(default=1, gt=0)
    # 0 disables the periodic from-scratch kernel check
    debug_check_every: int = Field(default=0, ge=0)
    trace_dir: Optional[str] = None

    @model_validator(mode="after")
    def _burn_in_below_iterations(self):
        if self.burn_in >= self.iterations:
            raise ValueError("burn_in must be smaller than iterations")
        return self

    @property
    def retained_per_chain(self) -> int:
        return len(range(self.burn_in, self.iterations, self.thin))


class SynthConfig(BaseModel):
    """Generative settings for a synthetic RD dataset"""
    model_config = ConfigDict(frozen=True)

    n: int = Field(gt=1)
    cutoff: float = 0.0
    r_range: Tuple[float, float] = (-1.0, 1.0)
    jitter: float = Field(default=0.25, ge=0, lt=0.5)  # fraction of the grid spacing
    block_sizes: List[int]
    block_coefficients: List[Tuple[float, float]]
    block_variances: List[float]
    outcome_intercept: float = 0.0
    slope_left: float = 0.0
    slope_right: float = 0.0
    jump: float = 1.0
    noise_sd: float = Field(default=0.5, ge=0)
    compliance_right: float = Field(default=1.0, ge=0, le=1)
    compliance_left: float = Field(default=0.0, ge=0, le=1)
    seed: int = Field(default=0, ge=0)


class StatisticSummary(BaseModel):
    """Posterior summary of one draw-level statistic"""
    mean: Optional[float] = None
    lo: Optional[float] = None
    median: Optional[float] = None
    hi: Optional[float] = None
    computable_fraction: float = 0.0
    mc_half_width: Optional[float] = None


class TraceSummary(BaseModel):
    """MC accuracy of one scalar trace"""
    mean: float
    mcse: float
    half_width: float
    ess: float
    rhat: Optional[float] = None


class DiagnosticsReport(BaseModel):
    """Sampler diagnostics carried in the report"""
    chains: int
    retained_draws: int
    proposals: Dict[str, int]
    accepted: Dict[str, int]
    acceptance_rates: Dict[str, float]
    num_clusters: Optional[TraceSummary] = None
    log_kernel: Optional[TraceSummary] = None


class ClusterReport(BaseModel):
    """Posterior description of the local cluster around the cutoff"""
    anchor_id: str
    anchor_r: float
    inclusion_probability: Dict[str, float]
    size: StatisticSummary
    r_lower: StatisticSummary
    r_upper: StatisticSummary
    num_clusters: StatisticSummary
    draws_dropped_min_side: int = 0
    weak_instrument_draws: int = 0


class ConfounderReport(BaseModel):
    """How the confounder column was obtained"""
    source: str
    column: Optional[str] = None
    v: Optional[float] = None
    basis: Optional[BasisSpec] = None
    kept_columns: List[str] = []
    dropped_columns: List[str] = []
    coefficients: List[float] = []


class RunMetadata(BaseModel):
    """Everything needed to reproduce a report"""
    software_version: str
    rng_algorithm: str
    seed: int
    n: int
    cutoff: float
    mode: DesignMode
    hyperparameters: Hyperparameters
    chain: ChainConfig
    data_digest: str
    config_digest: str


class PosteriorReport(BaseModel):
    """Table-style posterior report"""
    level: float = 0.95
    statistics: Dict[str, StatisticSummary]
    diagnostics: Optional[DiagnosticsReport] = None
    cluster: Optional[ClusterReport] = None
    confounder: Optional[ConfounderReport] = None
    metadata: Optional[RunMetadata] = None
    config: Dict[str, Any] = {}
    notes: List[str] = []
