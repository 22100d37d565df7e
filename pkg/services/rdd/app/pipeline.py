"""End-to-end analysis shared by the cli and the HTTP service"""

import time
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import structlog

from . import __version__
from .config import RunConfig
from .confounder_score import fit_confounder_score
from .dataset import RDDataset, validate_and_sort
from .errors import MissingColumn, NoDraws, RDDError
from .local_inference import analyze_draws, summarize_frame
from .metrics import record_analysis
from .models import (
    ClusterReport,
    ConfounderReport,
    DiagnosticsReport,
    PosteriorReport,
    RunMetadata,
    Subject,
)
from .sampler import RNG_ALGORITHM, ChainResult, run_chains
from .utils.logging import run_context

logger = structlog.get_logger(__name__)


@dataclass(frozen=True, eq=False)
class RawInput:
    """Subjects in input order plus any extra numeric columns"""

    subjects: List[Subject]
    covariates: Optional[np.ndarray] = None
    covariate_names: Tuple[str, ...] = ()


def _columns(data: RDDataset, names: Sequence[str]) -> np.ndarray:
    for name in names:
        if name not in data.covariate_names:
            raise MissingColumn(name, module="pipeline")
    index = [data.covariate_names.index(name) for name in names]
    return data.covariates[:, index]


def prepare_dataset(config: RunConfig, raw: RawInput) -> Tuple[RDDataset, ConfounderReport]:
    """Validate, sort and, when configured, replace x by the fitted confounder score"""
    data = validate_and_sort(
        raw.subjects,
        config.data.cutoff,
        mode=config.data.mode,
        covariates=raw.covariates,
        covariate_names=raw.covariate_names,
    )
    section = config.confounder
    if section.source == "column":
        return data, ConfounderReport(source="column", column=section.column)

    result = fit_confounder_score(
        _columns(data, section.covariates),
        section.covariates,
        data.r,
        data.cutoff,
        data.y,
        v=section.v,
        basis=section.basis,
        standardize=section.standardize,
    )
    report = ConfounderReport(
        source="score",
        v=section.v,
        basis=section.basis,
        kept_columns=list(result.kept_columns),
        dropped_columns=list(result.dropped_columns),
        coefficients=[float(c) for c in result.fit.coefficients],
    )
    return data.with_x(result.scores), report


def dependent_values(config: RunConfig, data: RDDataset) -> Optional[np.ndarray]:
    """Column the partition model regresses on r; None means the confounder x"""
    column = config.prior.regress_column
    if column is None or column == config.confounder.column:
        return None
    return _columns(data, [column])[:, 0]


def _diagnostics(result: ChainResult, chains: int) -> DiagnosticsReport:
    d = result.diagnostics
    return DiagnosticsReport(
        chains=chains,
        retained_draws=len(result.draws),
        proposals=d.proposals,
        accepted=d.accepted,
        acceptance_rates=d.acceptance_rates,
        num_clusters=d.num_clusters_summary(),
        log_kernel=d.log_kernel_summary(),
    )


def _run(config: RunConfig, raw: RawInput) -> PosteriorReport:
    data, confounder = prepare_dataset(config, raw)
    hyper = config.prior.hyperparameters()
    chain = config.chain_config()
    inference = config.inference

    result = run_chains(data, hyper, chain, dependent=dependent_values(config, data))
    analysis = analyze_draws(
        result.draws,
        data,
        mode=config.data.mode,
        min_side=inference.min_side,
        fuzzy_tol=inference.fuzzy_tol,
        exact_ks=inference.exact_ks,
        exact_ks_max_side=inference.exact_ks_max_side,
    )
    if len(analysis.comparisons) == 0:
        raise NoDraws(
            f"all {len(result.draws)} draws have fewer than min_side={inference.min_side} subjects on a side",
            module="local_inference",
        )

    cluster_stats = summarize_frame(analysis.cluster_trace, inference.level)
    cluster = ClusterReport(
        anchor_id=data.ids[analysis.anchor],
        anchor_r=float(data.r[analysis.anchor]),
        inclusion_probability={
            data.ids[i]: float(p) for i, p in enumerate(analysis.inclusion_probability) if p > 0
        },
        size=cluster_stats["cluster.size"],
        r_lower=cluster_stats["cluster.r_lower"],
        r_upper=cluster_stats["cluster.r_upper"],
        num_clusters=cluster_stats["num_clusters"],
        draws_dropped_min_side=analysis.dropped_min_side,
        weak_instrument_draws=analysis.weak_instrument_draws,
    )

    notes = []
    if analysis.dropped_min_side:
        notes.append(f"{analysis.dropped_min_side} draws dropped: a cluster side had fewer than {inference.min_side} subjects")
    if analysis.weak_instrument_draws:
        notes.append(f"{analysis.weak_instrument_draws} draws flagged as weak instrument (|compliance difference| < {inference.fuzzy_tol})")
    if confounder.dropped_columns:
        notes.append(f"constant covariates dropped from the confounder score: {', '.join(confounder.dropped_columns)}")

    return PosteriorReport(
        level=inference.level,
        statistics=summarize_frame(analysis.comparisons, inference.level),
        diagnostics=_diagnostics(result, chain.chains),
        cluster=cluster,
        confounder=confounder,
        metadata=RunMetadata(
            software_version=__version__,
            rng_algorithm=RNG_ALGORITHM,
            seed=chain.seed,
            n=data.n,
            cutoff=data.cutoff,
            mode=config.data.mode,
            hyperparameters=hyper,
            chain=chain,
            data_digest=data.digest(),
            config_digest=config.digest(),
        ),
        config=config.model_dump(mode="json"),
        notes=notes,
    )


def run_analysis(config: RunConfig, raw: RawInput) -> PosteriorReport:
    """Confounder scoring, chains, local inference and summaries for one dataset"""
    started = time.perf_counter()
    with run_context(seed=config.chain.seed, config_digest=config.digest()[:12]):
        logger.info("Analysis started", n=len(raw.subjects), mode=config.data.mode.value,
                    chains=config.chain.chains, iterations=config.chain.iterations)
        try:
            report = _run(config, raw)
        except RDDError as e:
            record_analysis("failed", time.perf_counter() - started)
            logger.error("Analysis failed", error=str(e), module=e.module, exit_code=e.exit_code)
            raise
        duration = time.perf_counter() - started
        record_analysis("succeeded", duration)
        logger.info("Analysis finished", seconds=round(duration, 3), retained_draws=report.diagnostics.retained_draws)
    return report
