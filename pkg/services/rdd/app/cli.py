"""Command line entry point: `python -m app.cli run --config analysis.toml`"""

import argparse
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
import structlog
from pydantic import ValidationError

from . import __version__
from .config import RunConfig, load_run_config, settings
from .dataset import reduce_assignment
from .errors import DuplicateId, EmptyInput, InvalidConfig, MissingColumn, ParseError, RDDError, ReportWriteError
from .local_inference import CROSS_STATISTICS, EXTENSION_STATISTICS, GROUP_STATISTICS
from .models import PosteriorReport, ReportFormat, StatisticSummary, Subject
from .pipeline import RawInput, run_analysis
from .synthgen import generate, recovery_config, write_csv
from .utils.logging import setup_logging

logger = structlog.get_logger(__name__)

# Data rows start on line 2, after the header
_FIRST_DATA_LINE = 2


def _parse_cell(text: str) -> Optional[float]:
    try:
        return float(text)
    except ValueError:
        return None


def _numeric(frame: pd.DataFrame, column: str) -> np.ndarray:
    # float() rounds correctly: 17 significant digits read back bit for bit.
    # "nan" parses, and is rejected later as a non-finite value
    values = frame[column].map(_parse_cell)
    bad = values.isna() & (frame[column].str.strip().str.lower() != "nan")
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        raise ParseError(row + _FIRST_DATA_LINE, column, frame[column].iloc[row], module="cli")
    return values.to_numpy(dtype=float)


def load_csv(path: str, config: Optional[RunConfig] = None, require_confounder: bool = False) -> RawInput:
    """Read subjects from a UTF-8 CSV with a header row.

    Required columns are r (or the listed assignment columns) and y; id and
    t are optional.  Covariate and regression columns named in the config
    are parsed as well.  The confounder column is read when present and is
    mandatory only with `require_confounder`.
    """
    config = config or RunConfig()
    data = config.data
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except FileNotFoundError:
        raise InvalidConfig(f"data file not found: {path}", module="cli")
    except pd.errors.EmptyDataError:
        raise EmptyInput(f"data file is empty: {path}", module="cli")
    frame.columns = [c.strip() for c in frame.columns]

    def require(column: str):
        if column not in frame.columns:
            raise MissingColumn(column, module="cli")

    assignment = config.assignment
    if assignment.columns:
        for column in assignment.columns:
            require(column)
        r = reduce_assignment(np.column_stack([_numeric(frame, c) for c in assignment.columns]),
                              assignment.offset, assignment.scale)
    else:
        require(data.assignment_column)
        r = _numeric(frame, data.assignment_column)

    require(data.outcome_column)
    y = _numeric(frame, data.outcome_column)

    n = len(frame)
    x = np.zeros(n)
    if config.confounder.source == "column":
        if require_confounder:
            require(config.confounder.column)
        if config.confounder.column in frame.columns:
            x = _numeric(frame, config.confounder.column)

    t: List[Optional[int]] = [None] * n
    if data.treatment_column in frame.columns:
        values = _numeric(frame, data.treatment_column)
        for row, value in enumerate(values):
            if value not in (0.0, 1.0):
                raise ParseError(row + _FIRST_DATA_LINE, data.treatment_column,
                                 frame[data.treatment_column].iloc[row], module="cli")
        t = [int(v) for v in values]

    if data.id_column in frame.columns:
        ids = [value.strip() for value in frame[data.id_column]]
    else:
        ids = [str(row + 1) for row in range(n)]
    duplicated = pd.Series(ids).duplicated()
    if duplicated.any():
        raise DuplicateId(f"duplicate subject id {ids[int(np.flatnonzero(duplicated)[0])]!r}", module="cli")

    extra = list(config.confounder.covariates)
    regress = config.prior.regress_column
    if regress and regress != config.confounder.column and regress not in extra:
        extra.append(regress)
    covariates = None
    if extra:
        for column in extra:
            require(column)
        covariates = np.column_stack([_numeric(frame, c) for c in extra])

    subjects = [Subject(id=ids[i], r=r[i], x=x[i], y=y[i], t=t[i]) for i in range(n)]
    logger.info("Data loaded", path=str(path), n=n, covariates=extra)
    return RawInput(subjects=subjects, covariates=covariates, covariate_names=tuple(extra))


def _cell(summary: Optional[StatisticSummary]) -> str:
    if summary is None or summary.mean is None:
        return "NA"
    return f"{summary.mean:.2f} ({summary.lo:.2f}, {summary.hi:.2f})"


def report_table(report: PosteriorReport) -> pd.DataFrame:
    """Table layout: one row per statistic, group columns then a cross-group column"""
    stats = report.statistics
    rows: List[Dict[str, str]] = []
    for name in GROUP_STATISTICS + ("compliance",):
        rows.append({
            "statistic": name,
            "non_treatment": _cell(stats.get(f"control.{name}")),
            "treatment": _cell(stats.get(f"treatment.{name}")),
            "cross_group": "",
        })
    for name in CROSS_STATISTICS + EXTENSION_STATISTICS:
        if name.endswith(".compliance"):
            continue
        rows.append({"statistic": name, "non_treatment": "", "treatment": "", "cross_group": _cell(stats.get(name))})
    return pd.DataFrame(rows, columns=["statistic", "non_treatment", "treatment", "cross_group"])


def write_report(report: PosteriorReport, path: Path, fmt: ReportFormat = ReportFormat.JSON):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if fmt == ReportFormat.JSON:
            path.write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")
        else:
            report_table(report).to_csv(path, index=False)
    except OSError as e:
        raise ReportWriteError(f"cannot write report to {path}: {e}", module="cli")
    logger.info("Report written", path=str(path), format=fmt.value)


def run(config: RunConfig) -> PosteriorReport:
    if not config.data.path:
        raise InvalidConfig("data.path is required", module="cli")
    raw = load_csv(config.data.path, config, require_confounder=True)
    report = run_analysis(config, raw)
    write_report(report, config.report_path(), config.report.format)
    return report


def synth(args: argparse.Namespace):
    try:
        config = recovery_config(
            n=args.n,
            seed=args.seed,
            jump=args.jump,
            noise_sd=args.noise_sd,
            compliance=(args.compliance_right, args.compliance_left),
        )
    except ValidationError as e:
        raise InvalidConfig(str(e), module="synthgen")
    data, _ = generate(config)
    write_csv(data, args.out)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rdd", description="Bayesian nonparametric regression discontinuity analysis")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    run_parser = sub.add_parser("run", help="analyse a CSV dataset")
    run_parser.add_argument("--config", required=True, help="TOML run configuration")
    run_parser.add_argument("--report", help="override report.path")
    run_parser.add_argument("--format", choices=[f.value for f in ReportFormat], help="override report.format")
    run_parser.add_argument("--seed", type=int, help="override chain.seed")

    synth_parser = sub.add_parser("synth", help="write a synthetic RD dataset")
    synth_parser.add_argument("--out", required=True)
    synth_parser.add_argument("--n", type=int, default=200)
    synth_parser.add_argument("--seed", type=int, default=0)
    synth_parser.add_argument("--jump", type=float, default=1.0)
    synth_parser.add_argument("--noise-sd", type=float, default=0.5)
    synth_parser.add_argument("--compliance-right", type=float, default=1.0)
    synth_parser.add_argument("--compliance-left", type=float, default=0.0)
    return parser


def _with_overrides(config: RunConfig, args: argparse.Namespace) -> RunConfig:
    report = config.report.model_copy(update={
        k: v for k, v in (("path", args.report), ("format", args.format and ReportFormat(args.format))) if v
    })
    chain = config.chain if args.seed is None else config.chain.model_copy(update={"seed": args.seed})
    return config.model_copy(update={"report": report, "chain": chain})


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging("DEBUG" if args.verbose else settings.log_level)
    try:
        if args.command == "synth":
            synth(args)
        else:
            run(_with_overrides(load_run_config(args.config), args))
    except RDDError as e:
        logger.error("Run failed", error=e.message, module=e.module, exit_code=e.exit_code)
        return e.exit_code
    except Exception as e:
        logger.exception("Unexpected failure", error=str(e))
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
