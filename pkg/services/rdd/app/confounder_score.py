"""Multivariate confounder score from a ridge-type Bayesian linear fit.

The outcome is regressed on (1, B(x), 1(r >= r0)); the score of a subject is
the fitted predictor without the treatment term.
"""

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import structlog
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import BasisMismatch, NonFiniteValue, NonPositiveV, RaggedCovariates, SolveFailure
from .models import BasisSpec

logger = structlog.get_logger(__name__)


@dataclass(frozen=True, eq=False)
class ScoreFit:
    """Coefficients laid out as (beta_0, beta_x..., beta_R)"""

    coefficients: np.ndarray
    v: float
    basis: Optional[BasisSpec] = None
    n_covariates: Optional[int] = None

    @property
    def q(self) -> int:
        return self.coefficients.size

    @property
    def intercept(self) -> float:
        return float(self.coefficients[0])

    @property
    def covariate_coefficients(self) -> np.ndarray:
        return self.coefficients[1:-1]

    @property
    def treatment_coefficient(self) -> float:
        return float(self.coefficients[-1])


@dataclass(frozen=True, eq=False)
class ConfounderScoreResult:
    scores: np.ndarray
    fit: ScoreFit
    kept_columns: Tuple[str, ...]
    dropped_columns: Tuple[str, ...]


def _as_matrix(covariates) -> np.ndarray:
    rows = [list(np.atleast_1d(row)) for row in covariates]
    if not rows:
        raise RaggedCovariates("no covariate rows", module="confounder_score")
    if len({len(row) for row in rows}) > 1:
        raise RaggedCovariates("covariate rows differ in dimension", module="confounder_score")
    matrix = np.array(rows, dtype=float)
    bad = np.argwhere(~np.isfinite(matrix))
    if bad.size:
        i, j = bad[0]
        raise NonFiniteValue(str(i), f"covariate[{j}]", module="confounder_score")
    return matrix


def expand_basis(covariates, basis: BasisSpec) -> np.ndarray:
    """B(x) row-wise: all coordinates to power 1, then power 2, ..."""
    matrix = _as_matrix(covariates)
    return np.hstack([matrix ** power for power in range(1, basis.degree + 1)])


def build_design(covariates, r: Sequence[float], r0: float, basis: BasisSpec) -> np.ndarray:
    """Basis matrix with rows (1, B(x_i), 1(r_i >= r0))"""
    expanded = expand_basis(covariates, basis)
    r = np.asarray(r, dtype=float)
    if r.shape != (expanded.shape[0],):
        raise RaggedCovariates(f"{expanded.shape[0]} covariate rows for {r.size} assignment values", module="confounder_score")
    if not np.all(np.isfinite(r)):
        raise NonFiniteValue(str(int(np.flatnonzero(~np.isfinite(r))[0])), "r", module="confounder_score")
    n = expanded.shape[0]
    return np.hstack([np.ones((n, 1)), expanded, (r >= r0).astype(float)[:, None]])


def ridge_fit(B: np.ndarray, y: Sequence[float], v: float, basis: Optional[BasisSpec] = None,
              n_covariates: Optional[int] = None) -> ScoreFit:
    """beta = (I/v + B'B)^-1 B'y through a Cholesky solve"""
    if not v > 0:
        raise NonPositiveV(f"ridge parameter v must be positive, got {v}", module="confounder_score")
    B = np.atleast_2d(np.asarray(B, dtype=float))
    y = np.asarray(y, dtype=float)
    q = B.shape[1]

    system = np.eye(q) / v + B.T @ B
    rhs = B.T @ y
    try:
        factor = cho_factor(system, lower=True)
        beta = cho_solve(factor, rhs)
    except (LinAlgError, ValueError) as e:
        raise SolveFailure(f"ridge system is not positive definite: {e}", module="confounder_score")

    residual = np.max(np.abs(system @ beta - rhs)) if q else 0.0
    if not np.all(np.isfinite(beta)) or residual > 1e-8 * (1.0 + np.max(np.abs(rhs), initial=0.0)):
        raise SolveFailure(f"ridge solve residual {residual:.3e} too large", module="confounder_score")

    return ScoreFit(coefficients=beta, v=float(v), basis=basis, n_covariates=n_covariates)


def confounder_scores(fit: ScoreFit, covariates, basis: BasisSpec) -> np.ndarray:
    """x_i = beta_0 + beta_x . B(x_i); the treatment term is left out"""
    if fit.basis is not None and fit.basis != basis:
        raise BasisMismatch(f"fit used {fit.basis}, scores requested with {basis}", module="confounder_score")
    expanded = expand_basis(covariates, basis)
    if fit.q != expanded.shape[1] + 2:
        raise BasisMismatch(
            f"fit has {fit.q} coefficients but the basis yields {expanded.shape[1]} columns", module="confounder_score"
        )
    return fit.intercept + expanded @ fit.covariate_coefficients


def standardize_covariates(covariates, names: Sequence[str]) -> Tuple[np.ndarray, List[str], List[str]]:
    """Centre and scale each column; constant columns are dropped"""
    matrix = _as_matrix(covariates)
    sd = matrix.std(axis=0)
    keep = sd > 0
    kept = [name for name, k in zip(names, keep) if k]
    dropped = [name for name, k in zip(names, keep) if not k]
    z = (matrix[:, keep] - matrix[:, keep].mean(axis=0)) / sd[keep]
    return z, kept, dropped


def fit_confounder_score(
    covariates,
    names: Sequence[str],
    r: Sequence[float],
    r0: float,
    y: Sequence[float],
    v: float = 1000.0,
    basis: BasisSpec = BasisSpec(),
    standardize: bool = True,
) -> ConfounderScoreResult:
    """Standardize, fit, and score in one go"""
    if standardize:
        matrix, kept, dropped = standardize_covariates(covariates, names)
    else:
        matrix, kept, dropped = _as_matrix(covariates), list(names), []
    if dropped:
        logger.warning("Dropped constant covariates", columns=dropped)
    if matrix.shape[1] == 0:
        raise RaggedCovariates("no non-constant covariates left", module="confounder_score")

    B = build_design(matrix, r, r0, basis)
    fit = ridge_fit(B, y, v, basis=basis, n_covariates=matrix.shape[1])
    scores = confounder_scores(fit, matrix, basis)
    logger.info("Confounder score fitted", q=fit.q, v=v, treatment_coefficient=fit.treatment_coefficient)
    return ConfounderScoreResult(scores=scores, fit=fit, kept_columns=tuple(kept), dropped_columns=tuple(dropped))
