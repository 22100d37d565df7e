"""Local cluster extraction, two-group comparisons and posterior summaries.

Each posterior partition draw yields the block holding the anchor subject
(the one nearest the cutoff).  Within that block, treated-side outcomes
(r >= r0) are compared with control-side outcomes (r < r0), and the
draw-level statistics are summarized over the posterior.
"""

from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import structlog

from .dataset import RDDataset
from .errors import NoDraws
from .metrics import record_draws
from .models import DesignMode, PosteriorReport, StatisticSummary
from .partition_model import OrderedPartition
from .sampler import batch_means_mcse
from .special_fn import (
    f_p_two_sided,
    ks_asymptotic_p,
    ks_exact_permutation_p,
    ks_statistic,
    t_p_two_sided,
)

logger = structlog.get_logger(__name__)

QUANTILE_LEVELS = (1, 10, 25, 50, 75, 90, 99)
GROUP_STATISTICS = ("size", "mean", "variance", "iqr", "skewness", "kurtosis") + tuple(
    f"q{level:02d}" for level in QUANTILE_LEVELS
)
CROSS_STATISTICS = (
    "t_statistic",
    "t_pvalue",
    "f_statistic",
    "f_pvalue",
    "prob_treatment_ge_control",
    "prob_treatment_le_control",
    "ks_statistic",
    "ks_pvalue",
)
EXTENSION_STATISTICS = (
    "t_df",
    "tie_probability",
    "mean_difference",
    "fuzzy_effect",
    "control.compliance",
    "treatment.compliance",
)
# Table order first (control column before treatment), extensions after
STATISTIC_ORDER: Tuple[str, ...] = (
    tuple(f"{side}.{stat}" for stat in GROUP_STATISTICS for side in ("control", "treatment"))
    + CROSS_STATISTICS
    + EXTENSION_STATISTICS
)
CLUSTER_STATISTICS = ("cluster.size", "cluster.r_lower", "cluster.r_upper", "num_clusters")


@dataclass(frozen=True)
class LocalCluster:
    """Block of the partition holding the anchor subject"""

    start: int
    length: int
    control: np.ndarray
    treated: np.ndarray

    @property
    def members(self) -> np.ndarray:
        return np.arange(self.start, self.start + self.length)


@dataclass(frozen=True)
class WeakInstrument:
    """Compliance difference too small to divide by"""

    denominator: float


@dataclass(frozen=True)
class GroupSummary:
    size: int
    mean: Optional[float] = None
    variance: Optional[float] = None
    iqr: Optional[float] = None
    skewness: Optional[float] = None
    kurtosis: Optional[float] = None
    quantiles: Dict[int, Optional[float]] = field(default_factory=dict)
    compliance: Optional[float] = None


@dataclass(frozen=True)
class ComparisonDraw:
    """All two-group statistics of one local cluster; None marks non-computable"""

    treatment: GroupSummary
    control: GroupSummary
    t_statistic: Optional[float] = None
    t_df: Optional[float] = None
    t_pvalue: Optional[float] = None
    f_statistic: Optional[float] = None
    f_pvalue: Optional[float] = None
    ks_statistic: Optional[float] = None
    ks_pvalue: Optional[float] = None
    prob_treatment_ge_control: Optional[float] = None
    prob_treatment_le_control: Optional[float] = None
    tie_probability: Optional[float] = None
    mean_difference: Optional[float] = None
    fuzzy_effect: Optional[float] = None
    weak_instrument: bool = False

    def statistics(self) -> Dict[str, Optional[float]]:
        """Flat view in STATISTIC_ORDER"""
        values: Dict[str, Optional[float]] = {}
        for side, group in (("control", self.control), ("treatment", self.treatment)):
            values[f"{side}.size"] = float(group.size)
            for stat in ("mean", "variance", "iqr", "skewness", "kurtosis"):
                values[f"{side}.{stat}"] = getattr(group, stat)
            for level in QUANTILE_LEVELS:
                values[f"{side}.q{level:02d}"] = group.quantiles.get(level)
            values[f"{side}.compliance"] = group.compliance
        for name in CROSS_STATISTICS + EXTENSION_STATISTICS:
            if name not in values:
                values[name] = getattr(self, name)
        return {name: values[name] for name in STATISTIC_ORDER}


def anchor_index(data: RDDataset, r0: Optional[float] = None) -> int:
    """Index of the subject nearest the cutoff; ties go to the treated side, then the smallest index"""
    r0 = data.cutoff if r0 is None else r0
    distance = np.abs(data.r - r0)
    nearest = np.flatnonzero(distance == distance.min())
    treated = nearest[data.r[nearest] >= r0]
    return int(treated[0] if treated.size else nearest[0])


def extract_cluster(partition: OrderedPartition, i0: int, data: RDDataset) -> LocalCluster:
    """The block containing i0, split by r >= r0"""
    if partition.n != data.n:
        raise ValueError(f"partition covers {partition.n} subjects, data has {data.n}")
    start, length = partition.block_containing(i0)
    return cluster_from_block(start, length, data)


def cluster_from_block(start: int, length: int, data: RDDataset) -> LocalCluster:
    members = np.arange(start, start + length)
    treated_mask = data.r[members] >= data.cutoff
    return LocalCluster(start=start, length=length, control=members[~treated_mask], treated=members[treated_mask])


def _group_summary(y: np.ndarray, t: np.ndarray) -> GroupSummary:
    m = y.size
    if m == 0:
        return GroupSummary(size=0)
    mean = float(y.mean())
    compliance = float(t.mean()) if t.size else None
    if m < 2:
        return GroupSummary(size=m, mean=mean, compliance=compliance)

    ordered = np.sort(y)
    quantiles = {level: float(np.quantile(ordered, level / 100.0, method="linear")) for level in QUANTILE_LEVELS}
    centred = y - mean
    m2 = float(np.mean(centred ** 2))
    skewness = kurtosis = None
    if m2 > 0:
        skewness = float(np.mean(centred ** 3) / m2 ** 1.5)
        kurtosis = float(np.mean(centred ** 4) / m2 ** 2)
    return GroupSummary(
        size=m,
        mean=mean,
        variance=float(np.var(y, ddof=1)),
        iqr=quantiles[75] - quantiles[25],
        skewness=skewness,
        kurtosis=kurtosis,
        quantiles=quantiles,
        compliance=compliance,
    )


def fuzzy_scale(mean_diff: float, tbar_right: float, tbar_left: float, tol: float = 0.05) -> Union[float, WeakInstrument]:
    """Instrumental-variables ratio mean_diff / (tbar_right - tbar_left)"""
    denominator = tbar_right - tbar_left
    if abs(denominator) < tol:
        return WeakInstrument(denominator=denominator)
    return mean_diff / denominator


def _welch(treat: GroupSummary, control: GroupSummary) -> Tuple[Optional[float], Optional[float], Optional[float]]:
    v1 = treat.variance / treat.size
    v0 = control.variance / control.size
    se2 = v1 + v0
    if se2 <= 0:
        return None, None, None
    t = (control.mean - treat.mean) / np.sqrt(se2)
    df = se2 ** 2 / (v1 ** 2 / (treat.size - 1) + v0 ** 2 / (control.size - 1))
    return float(t), float(df), t_p_two_sided(float(t), float(df))


def _variance_ratio(treat: GroupSummary, control: GroupSummary) -> Tuple[Optional[float], Optional[float]]:
    if treat.variance <= 0:
        return None, None
    f = control.variance / treat.variance
    if f == 0:
        return 0.0, 0.0
    return f, f_p_two_sided(f, control.size - 1, treat.size - 1)


def compare_groups(
    y_treat: Sequence[float],
    y_control: Sequence[float],
    t_treat: Sequence[int],
    t_control: Sequence[int],
    mode: DesignMode = DesignMode.SHARP,
    fuzzy_tol: float = 0.05,
    exact_ks: bool = False,
    exact_ks_max_side: int = 10,
) -> ComparisonDraw:
    """Two-group statistics of treated-side versus control-side outcomes"""
    y1 = np.asarray(y_treat, dtype=float)
    y0 = np.asarray(y_control, dtype=float)
    treat = _group_summary(y1, np.asarray(t_treat, dtype=float))
    control = _group_summary(y0, np.asarray(t_control, dtype=float))

    cross: Dict[str, Optional[float]] = {}
    weak = False
    if y1.size >= 1 and y0.size >= 1:
        ge = int(np.count_nonzero(y1[:, None] >= y0[None, :]))
        le = int(np.count_nonzero(y1[:, None] <= y0[None, :]))
        pairs = y1.size * y0.size
        # tie count = ge + le - pairs, so Pr>= + Pr<= - Pr= = 1 holds by construction
        cross["prob_treatment_ge_control"] = ge / pairs
        cross["prob_treatment_le_control"] = le / pairs
        cross["tie_probability"] = (ge + le - pairs) / pairs
        cross["mean_difference"] = treat.mean - control.mean

        if mode == DesignMode.FUZZY:
            scaled = fuzzy_scale(cross["mean_difference"], treat.compliance, control.compliance, fuzzy_tol)
            if isinstance(scaled, WeakInstrument):
                weak = True
            else:
                cross["fuzzy_effect"] = scaled

    if y1.size >= 2 and y0.size >= 2:
        cross["t_statistic"], cross["t_df"], cross["t_pvalue"] = _welch(treat, control)
        cross["f_statistic"], cross["f_pvalue"] = _variance_ratio(treat, control)
        d = ks_statistic(y1, y0)
        cross["ks_statistic"] = d
        if exact_ks and y1.size <= exact_ks_max_side and y0.size <= exact_ks_max_side:
            cross["ks_pvalue"] = ks_exact_permutation_p(y1, y0)
        else:
            cross["ks_pvalue"] = ks_asymptotic_p(d, y1.size, y0.size)

    return ComparisonDraw(treatment=treat, control=control, weak_instrument=weak, **cross)


def compare_cluster(cluster: LocalCluster, data: RDDataset, mode: DesignMode = DesignMode.SHARP,
                    **options) -> ComparisonDraw:
    return compare_groups(
        data.y[cluster.treated], data.y[cluster.control],
        data.t[cluster.treated], data.t[cluster.control],
        mode=mode, **options,
    )


def _summarize_column(values: np.ndarray, total: int, level: float) -> StatisticSummary:
    """values: the computable draws of one statistic, in draw order"""
    if values.size == 0:
        return StatisticSummary(computable_fraction=0.0)
    tail = (1.0 - level) / 2.0
    lo, median, hi = np.quantile(values, [tail, 0.5, 1.0 - tail], method="linear")
    half_width = batch_means_mcse(values).half_width if values.size >= 100 else None
    return StatisticSummary(
        mean=float(values.mean()),
        lo=float(lo),
        median=float(median),
        hi=float(hi),
        computable_fraction=values.size / total,
        mc_half_width=half_width,
    )


def summarize_frame(frame: pd.DataFrame, level: float = 0.95) -> Dict[str, StatisticSummary]:
    """Per-column summaries; NaN cells are non-computable draws"""
    if len(frame) == 0:
        raise NoDraws("no posterior draws to summarize", module="local_inference")
    total = len(frame)
    return {
        name: _summarize_column(frame[name].dropna().to_numpy(dtype=float), total, level)
        for name in frame.columns
    }


def draws_frame(draws: Sequence[ComparisonDraw]) -> pd.DataFrame:
    records = [draw.statistics() for draw in draws]
    return pd.DataFrame.from_records(records, columns=list(STATISTIC_ORDER)).astype(float)


def summarize(draws: Sequence[ComparisonDraw], level: float = 0.95) -> PosteriorReport:
    """Posterior mean, equal-tail interval and computable fraction per statistic"""
    if not draws:
        raise NoDraws("no posterior draws to summarize", module="local_inference")
    return PosteriorReport(level=level, statistics=summarize_frame(draws_frame(draws), level))


@dataclass
class DrawAnalysis:
    """Per-draw comparisons of a posterior sample plus cluster-level traces"""

    anchor: int
    comparisons: pd.DataFrame
    cluster_trace: pd.DataFrame
    inclusion_probability: np.ndarray
    dropped_min_side: int
    weak_instrument_draws: int
    distinct_clusters: int


def analyze_draws(
    draws: Sequence[OrderedPartition],
    data: RDDataset,
    mode: DesignMode = DesignMode.SHARP,
    min_side: int = 1,
    fuzzy_tol: float = 0.05,
    exact_ks: bool = False,
    exact_ks_max_side: int = 10,
) -> DrawAnalysis:
    """Compare groups in the anchor cluster of every draw.

    Draw statistics depend only on the anchor block, so each distinct
    block is compared once and reused.
    """
    if not draws:
        raise NoDraws("the chain produced no retained draws", module="local_inference")
    i0 = anchor_index(data)

    blocks = [draw.block_containing(i0) for draw in draws]
    block_counts = Counter(blocks)
    distinct = sorted(block_counts)
    index = {block: row for row, block in enumerate(distinct)}

    table = np.full((len(distinct), len(STATISTIC_ORDER)), np.nan)
    sides_ok = np.zeros(len(distinct), dtype=bool)
    weak = np.zeros(len(distinct), dtype=bool)
    for row, (start, length) in enumerate(distinct):
        cluster = cluster_from_block(start, length, data)
        sides_ok[row] = min(cluster.treated.size, cluster.control.size) >= min_side
        comparison = compare_cluster(cluster, data, mode, fuzzy_tol=fuzzy_tol,
                                     exact_ks=exact_ks, exact_ks_max_side=exact_ks_max_side)
        weak[row] = comparison.weak_instrument
        table[row] = [np.nan if v is None else v for v in comparison.statistics().values()]

    rows = np.array([index[block] for block in blocks])
    keep = sides_ok[rows]
    comparisons = pd.DataFrame(table[rows[keep]], columns=list(STATISTIC_ORDER))

    starts = np.array([b[0] for b in blocks])
    lengths = np.array([b[1] for b in blocks])
    cluster_trace = pd.DataFrame({
        "cluster.size": lengths.astype(float),
        "cluster.r_lower": data.r[starts],
        "cluster.r_upper": data.r[starts + lengths - 1],
        "num_clusters": np.array([draw.k for draw in draws], dtype=float),
    })

    # Difference array over block ranges gives per-subject membership counts
    coverage = np.zeros(data.n + 1)
    for (start, length), count in block_counts.items():
        coverage[start] += count
        coverage[start + length] -= count
    inclusion = np.cumsum(coverage[:-1]) / len(draws)

    dropped = int(np.count_nonzero(~keep))
    weak_draws = int(np.count_nonzero(weak[rows[keep]]))
    record_draws(len(draws), len(distinct))
    logger.info("Draws analyzed", draws=len(draws), distinct_clusters=len(distinct),
                dropped_min_side=dropped, weak_instrument_draws=weak_draws, anchor=data.ids[i0])
    return DrawAnalysis(
        anchor=i0,
        comparisons=comparisons,
        cluster_trace=cluster_trace,
        inclusion_probability=inclusion,
        dropped_min_side=dropped,
        weak_instrument_draws=weak_draws,
        distinct_clusters=len(distinct),
    )
