"""Configuration settings for the RD analysis service"""

import hashlib
import json
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from .errors import InvalidConfig
from .models import BasisSpec, ChainConfig, DesignMode, Hyperparameters, ReportFormat


class Settings(BaseSettings):
    """Application settings"""

    # Server
    port: int = 8008
    debug: bool = False

    # Logging
    log_level: str = "INFO"
    json_logs: bool = True

    # Reports; RDD_REPORT_DIR overrides the directory of relative report paths
    report_dir: Optional[str] = None

    # Monitoring
    metrics_enabled: bool = True

    # Upper bound on chain worker processes an HTTP request may ask for
    max_workers: int = 4

    model_config = SettingsConfigDict(
        env_file=".env",
        env_prefix="RDD_",
        case_sensitive=False,
    )


settings = Settings()


class Section(BaseModel):
    """Run config section; unknown keys are rejected"""
    model_config = ConfigDict(extra="forbid")


class DataSection(Section):
    path: Optional[str] = None
    cutoff: float = 0.0
    mode: DesignMode = DesignMode.SHARP
    id_column: str = "id"
    assignment_column: str = "r"
    outcome_column: str = "y"
    treatment_column: str = "t"


class AssignmentSection(Section):
    """Reduce several assignment columns to r = (min(columns) - offset) / scale"""
    columns: List[str] = []
    offset: float = 0.0
    scale: float = Field(default=1.0, gt=0)


class ConfounderSection(Section):
    source: Literal["column", "score"] = "column"
    column: str = "x"
    covariates: List[str] = []
    v: float = 1000.0
    basis: BasisSpec = BasisSpec()
    standardize: bool = True

    @model_validator(mode="after")
    def _one_source(self):
        if self.source == "score" and not self.covariates:
            raise ValueError("confounder score needs at least one covariate column")
        if self.source == "column" and self.covariates:
            raise ValueError("covariates are only used with source = 'score'")
        return self


class PriorSection(Hyperparameters):
    model_config = ConfigDict(frozen=True, extra="forbid")

    # Column regressed on r by the partition model; defaults to the confounder
    regress_column: Optional[str] = None

    def hyperparameters(self) -> Hyperparameters:
        return Hyperparameters(**self.model_dump(exclude={"regress_column"}))


class InferenceSection(Section):
    min_side: int = Field(default=1, ge=0)
    fuzzy_tol: float = Field(default=0.05, gt=0)
    level: float = Field(default=0.95, gt=0, lt=1)
    exact_ks: bool = False
    # C(20, 10) label assignments is the largest exact KS enumeration allowed
    exact_ks_max_side: int = Field(default=10, ge=1, le=10)


class ReportSection(Section):
    path: str = "report.json"
    format: ReportFormat = ReportFormat.JSON


class DebugSection(Section):
    traces: bool = False
    trace_dir: str = "traces"
    check_every: int = Field(default=0, ge=0)


class RunConfig(Section):
    """Complete configuration of one analysis run"""
    data: DataSection = DataSection()
    assignment: AssignmentSection = AssignmentSection()
    confounder: ConfounderSection = ConfounderSection()
    prior: PriorSection = PriorSection()
    chain: ChainConfig = ChainConfig()
    inference: InferenceSection = InferenceSection()
    report: ReportSection = ReportSection()
    debug: DebugSection = DebugSection()

    def chain_config(self) -> ChainConfig:
        """Chain settings with the debug section folded in"""
        update = {"debug_check_every": self.debug.check_every}
        if self.debug.traces:
            update["trace_dir"] = self.debug.trace_dir
        return self.chain.model_copy(update=update)

    def report_path(self) -> Path:
        path = Path(self.report.path)
        if settings.report_dir and not path.is_absolute():
            return Path(settings.report_dir) / path
        return path

    def digest(self) -> str:
        canonical = json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()


def load_run_config(path: str) -> RunConfig:
    """Load and validate a TOML run configuration"""
    config_path = Path(path)
    try:
        with open(config_path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise InvalidConfig(f"Config file not found: {path}", module="config")
    except tomllib.TOMLDecodeError as e:
        raise InvalidConfig(f"Config file is not valid TOML: {e}", module="config")

    try:
        config = RunConfig.model_validate(raw)
    except ValidationError as e:
        raise InvalidConfig(str(e), module="config")

    # Data paths are relative to the config file
    data_path = config.data.path
    if data_path and not Path(data_path).is_absolute():
        resolved = str((config_path.parent / data_path).resolve())
        config = config.model_copy(update={"data": config.data.model_copy(update={"path": resolved})})
    return config
