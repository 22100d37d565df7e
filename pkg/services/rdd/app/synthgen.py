"""Synthetic RD datasets with known ground truth.

x follows a piecewise linear regression on r with one normal error variance
per block of the true partition.  The outcome is a piecewise linear g(r) plus
a jump for treated subjects, and treatment follows the side's compliance rate.
"""

from typing import Tuple

import numpy as np
import pandas as pd
import structlog

from .dataset import RDDataset, validate_and_sort
from .errors import InvalidConfig
from .models import DesignMode, Subject, SynthConfig

logger = structlog.get_logger(__name__)

# Noiseless limit of the block variances
VARIANCE_FLOOR = 1e-12


def _check(config: SynthConfig):
    if sum(config.block_sizes) != config.n or any(s < 1 for s in config.block_sizes):
        raise InvalidConfig(f"block sizes {config.block_sizes} must be positive and sum to n={config.n}", module="synthgen")
    if not len(config.block_sizes) == len(config.block_coefficients) == len(config.block_variances):
        raise InvalidConfig("need one coefficient pair and one variance per block", module="synthgen")
    if any(v < 0 for v in config.block_variances):
        raise InvalidConfig("block variances must be non-negative", module="synthgen")
    lo, hi = config.r_range
    if not lo < hi:
        raise InvalidConfig(f"empty assignment range {config.r_range}", module="synthgen")


def design_mode(config: SynthConfig) -> DesignMode:
    sharp = config.compliance_right == 1.0 and config.compliance_left == 0.0
    return DesignMode.SHARP if sharp else DesignMode.FUZZY


def generate(config: SynthConfig) -> Tuple[RDDataset, SynthConfig]:
    """Draw one dataset; the same config and seed give identical values"""
    _check(config)
    rng = np.random.default_rng(config.seed)
    n = config.n
    lo, hi = config.r_range

    grid = np.linspace(lo, hi, n)
    spacing = (hi - lo) / (n - 1)
    r = np.sort(grid + rng.uniform(-config.jitter, config.jitter, size=n) * spacing)

    labels = np.repeat(np.arange(len(config.block_sizes)), config.block_sizes)
    coefficients = np.asarray(config.block_coefficients, dtype=float)[labels]
    sd = np.sqrt(np.maximum(np.asarray(config.block_variances, dtype=float), VARIANCE_FLOOR))[labels]
    x = coefficients[:, 0] + coefficients[:, 1] * r + sd * rng.standard_normal(n)

    right = r >= config.cutoff
    compliance = np.where(right, config.compliance_right, config.compliance_left)
    t = (rng.random(n) < compliance).astype(int)

    offset = r - config.cutoff
    g = config.outcome_intercept + np.where(right, config.slope_right, config.slope_left) * offset
    y = g + config.jump * t + config.noise_sd * rng.standard_normal(n)

    subjects = [
        Subject(id=f"s{i:04d}", r=float(r[i]), x=float(x[i]), y=float(y[i]), t=int(t[i]))
        for i in range(n)
    ]
    data = validate_and_sort(subjects, config.cutoff, mode=design_mode(config))
    logger.info("Synthetic dataset generated", n=n, blocks=len(config.block_sizes), seed=config.seed,
                treated=int(t.sum()), mode=design_mode(config).value)
    return data, config


def recovery_config(n: int = 200, seed: int = 0, jump: float = 1.0, noise_sd: float = 0.5,
                    compliance: Tuple[float, float] = (1.0, 0.0)) -> SynthConfig:
    """Three-block X-discontinuity design on r in [-1, 1] with cutoff 0.

    The middle block straddles the cutoff, so the anchor's cluster usually
    holds subjects from both sides.
    """
    outer = int(round(0.35 * n))
    middle = n - 2 * outer
    return SynthConfig(
        n=n,
        cutoff=0.0,
        r_range=(-1.0, 1.0),
        block_sizes=[outer, middle, outer],
        block_coefficients=[(-2.0, 0.5), (1.0, 0.5), (-2.0, 0.5)],
        block_variances=[0.05, 0.05, 0.05],
        outcome_intercept=0.0,
        slope_left=0.2,
        slope_right=0.2,
        jump=jump,
        noise_sd=noise_sd,
        compliance_right=compliance[0],
        compliance_left=compliance[1],
        seed=seed,
    )


def to_frame(data: RDDataset) -> pd.DataFrame:
    frame = pd.DataFrame({"id": list(data.ids), "r": data.r, "x": data.x, "y": data.y, "t": data.t.astype(int)})
    if data.covariates is not None:
        for j, name in enumerate(data.covariate_names):
            frame[name] = data.covariates[:, j]
    return frame


def write_csv(data: RDDataset, path: str):
    """CSV in the schema `run` reads (id, r, x, y, t)"""
    to_frame(data).to_csv(path, index=False, float_format="%.17g")
    logger.info("Synthetic dataset written", path=path, n=data.n)
