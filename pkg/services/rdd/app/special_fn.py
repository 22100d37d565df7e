"""Special functions and distribution tails for p-values and marginal likelihoods.

Thin, domain-checked wrappers over scipy.special plus the two-sample KS
statistic and the interpolated sample quantile.  All results are
deterministic and table-free.
"""

import math
from itertools import combinations
from typing import Sequence, Tuple

import numpy as np
from scipy.special import betainc, gammaln, kolmogorov

from .errors import DomainError, EmptySample

# Below this sample-size product the exact permutation KS p-value is tractable
_EXACT_KS_MAX_COMBINATIONS = 200_000


def log_gamma(z: float) -> float:
    """log Gamma(z) for z > 0"""
    if not z > 0 or not math.isfinite(z):
        raise DomainError(f"log_gamma requires a finite z > 0, got {z}", module="special_fn")
    return float(gammaln(z))


def reg_inc_beta(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)"""
    if not (a > 0 and b > 0):
        raise DomainError(f"reg_inc_beta requires a, b > 0, got a={a}, b={b}", module="special_fn")
    if not 0.0 <= x <= 1.0:
        raise DomainError(f"reg_inc_beta requires x in [0, 1], got {x}", module="special_fn")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    # scipy switches to the 1 - I_{1-x}(b, a) branch internally
    return min(1.0, max(0.0, float(betainc(a, b, x))))


def t_p_two_sided(t: float, df: float) -> float:
    """Two-sided Student-t p-value"""
    if not df > 0:
        raise DomainError(f"t_p_two_sided requires df > 0, got {df}", module="special_fn")
    if not math.isfinite(t):
        return 0.0
    return reg_inc_beta(df / 2.0, 0.5, df / (df + t * t))


def f_cdf(f: float, d1: float, d2: float) -> float:
    if not (f > 0 and d1 > 0 and d2 > 0):
        raise DomainError(f"F distribution requires f, d1, d2 > 0, got {f}, {d1}, {d2}", module="special_fn")
    return reg_inc_beta(d1 / 2.0, d2 / 2.0, d1 * f / (d1 * f + d2))


def f_p_two_sided(f: float, d1: float, d2: float) -> float:
    """Two-sided F-test p-value, 2 * min(cdf, 1 - cdf) capped at 1"""
    lower = f_cdf(f, d1, d2)
    # Upper tail through the reciprocal keeps p(f, d1, d2) == p(1/f, d2, d1)
    upper = f_cdf(1.0 / f, d2, d1)
    return min(1.0, 2.0 * min(lower, upper))


def ks_statistic(sample1: Sequence[float], sample2: Sequence[float]) -> float:
    """sup |ECDF1 - ECDF2| over the merged sample"""
    data1 = np.sort(np.asarray(sample1, dtype=float))
    data2 = np.sort(np.asarray(sample2, dtype=float))
    if data1.size == 0 or data2.size == 0:
        raise EmptySample("KS statistic needs two non-empty samples", module="special_fn")
    data_all = np.concatenate([data1, data2])
    cdf1 = np.searchsorted(data1, data_all, side="right") / data1.size
    cdf2 = np.searchsorted(data2, data_all, side="right") / data2.size
    return float(np.max(np.abs(cdf1 - cdf2)))


def ks_asymptotic_p(d: float, n1: int, n2: int) -> float:
    """Asymptotic KS p-value with the effective-size correction"""
    en = math.sqrt(n1 * n2 / (n1 + n2))
    return min(1.0, max(0.0, float(kolmogorov((en + 0.12 + 0.11 / en) * d))))


def ks_two_sample(sample1: Sequence[float], sample2: Sequence[float]) -> Tuple[float, float]:
    """Two-sample KS statistic and asymptotic p-value.

    The p-value is NaN-free but only meaningful when both samples have at
    least two observations; callers enforce that minimum.
    """
    d = ks_statistic(sample1, sample2)
    return d, ks_asymptotic_p(d, len(sample1), len(sample2))


def ks_exact_permutation_p(sample1: Sequence[float], sample2: Sequence[float]) -> float:
    """Permutation p-value of the KS statistic over all label assignments"""
    x1 = np.asarray(sample1, dtype=float)
    x2 = np.asarray(sample2, dtype=float)
    n1, n2 = x1.size, x2.size
    if n1 == 0 or n2 == 0:
        raise EmptySample("KS statistic needs two non-empty samples", module="special_fn")
    if math.comb(n1 + n2, n1) > _EXACT_KS_MAX_COMBINATIONS:
        raise DomainError(f"exact KS is limited to {_EXACT_KS_MAX_COMBINATIONS} label assignments", module="special_fn")

    pooled = np.concatenate([x1, x2])
    order = np.argsort(pooled, kind="stable")
    values = pooled[order]
    # ECDFs are only compared at the last position of each run of tied values
    ends = np.flatnonzero(np.append(values[1:] != values[:-1], True))

    members = np.zeros((math.comb(n1 + n2, n1), n1 + n2), dtype=bool)
    for row, idx in enumerate(combinations(range(n1 + n2), n1)):
        members[row, list(idx)] = True
    c1 = np.cumsum(members, axis=1)[:, ends]
    c2 = (ends + 1)[None, :] - c1
    d_all = np.max(np.abs(c1 / n1 - c2 / n2), axis=1)

    observed = ks_statistic(x1, x2)
    return float(np.mean(d_all >= observed - 1e-12))


def sample_quantile(sorted_values: Sequence[float], p: float) -> float:
    """Linear interpolation of order statistics, h = (m - 1) p + 1"""
    values = np.asarray(sorted_values, dtype=float)
    if values.size == 0:
        raise EmptySample("quantile of an empty sample", module="special_fn")
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"quantile probability must be in [0, 1], got {p}", module="special_fn")
    return float(np.quantile(values, p, method="linear"))
