"""Order-constrained partition prior, conjugate block marginals and the posterior kernel.

Subjects are in r-sorted order, so a partition with non-decreasing labels is a
composition of n into contiguous blocks.  Everything is evaluated in log space.
"""

import math
from dataclasses import dataclass
from typing import Dict, Iterator, Optional, Sequence, Tuple

import numpy as np

from .dataset import RDDataset
from .errors import DomainError, NumericalBreakdown
from .models import Hyperparameters, PriorVariant
from .special_fn import log_gamma

_LOG_2PI = math.log(2.0 * math.pi)
# V^2 below -tol * (1 + e'e) is a breakdown, anything above is clamped to 0
_V2_TOLERANCE = 1e-10


@dataclass(frozen=True)
class OrderedPartition:
    """Composition (n_1, ..., n_k) of n; block j holds a contiguous run of subjects"""

    block_sizes: Tuple[int, ...]

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.block_sizes)
        if not sizes or any(s < 1 for s in sizes):
            raise ValueError(f"block sizes must be positive, got {self.block_sizes}")
        object.__setattr__(self, "block_sizes", sizes)

    @classmethod
    def from_labels(cls, labels: Sequence[int]) -> "OrderedPartition":
        """Build from non-decreasing labels that take every value 0..k-1"""
        labels = list(labels)
        if not labels:
            raise ValueError("empty label sequence")
        sizes = [1]
        for prev, cur in zip(labels, labels[1:]):
            if cur == prev:
                sizes[-1] += 1
            elif cur == prev + 1:
                sizes.append(1)
            else:
                raise ValueError("labels must be non-decreasing and surjective")
        if labels[0] != 0:
            raise ValueError("labels must start at 0")
        return cls(tuple(sizes))

    @classmethod
    def equal_blocks(cls, n: int, k: int) -> "OrderedPartition":
        """k contiguous blocks whose sizes differ by at most one"""
        if not 1 <= k <= n:
            raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
        base, extra = divmod(n, k)
        return cls(tuple(base + 1 if j < extra else base for j in range(k)))

    @property
    def n(self) -> int:
        return sum(self.block_sizes)

    @property
    def k(self) -> int:
        return len(self.block_sizes)

    @property
    def labels(self) -> np.ndarray:
        return np.repeat(np.arange(self.k), self.block_sizes)

    @property
    def starts(self) -> Tuple[int, ...]:
        out, acc = [], 0
        for size in self.block_sizes:
            out.append(acc)
            acc += size
        return tuple(out)

    def blocks(self) -> Iterator[Tuple[int, int]]:
        """(start, length) of every block"""
        start = 0
        for size in self.block_sizes:
            yield start, size
            start += size

    def block_containing(self, i: int) -> Tuple[int, int]:
        """(start, length) of the block holding subject i"""
        if not 0 <= i < self.n:
            raise IndexError(f"subject {i} outside 0..{self.n - 1}")
        for start, size in self.blocks():
            if i < start + size:
                return start, size
        raise AssertionError("unreachable")


def log_rising_factorial(alpha: float, n: int) -> float:
    """log alpha^[n] = log alpha (alpha + 1) ... (alpha + n - 1)"""
    return log_gamma(alpha + n) - log_gamma(alpha)


def cluster_count_term(k: int, alpha: float, variant: PriorVariant = PriorVariant.STANDARD) -> float:
    """Part of the log prior depending on k only: log(alpha^k / k!) or log(alpha k / k!)"""
    if variant == PriorVariant.LITERAL:
        return math.log(alpha * k) - log_gamma(k + 1)
    return k * math.log(alpha) - log_gamma(k + 1)


def log_prior(
    partition: OrderedPartition,
    alpha: float,
    variant: PriorVariant = PriorVariant.STANDARD,
    printed_constant: bool = False,
) -> float:
    """log[ alpha^k / alpha^[n] * n!/k! * prod 1/n_j ].

    `printed_constant` uses n in place of n!; the two differ by a constant,
    so posterior ratios are unchanged.
    """
    if not alpha > 0:
        raise DomainError(f"alpha must be positive, got {alpha}", module="partition_model")
    n = partition.n
    constant = math.log(n) if printed_constant else log_gamma(n + 1)
    return (
        cluster_count_term(partition.k, alpha, variant)
        + constant
        - log_rising_factorial(alpha, n)
        - sum(math.log(size) for size in partition.block_sizes)
    )


def _block_terms(x_block, r_block, hyper: Hyperparameters) -> Tuple[float, float, int]:
    """(V^2, log|C| - log|C + R'R|, m) via the 2x2 solve"""
    x = np.asarray(x_block, dtype=float)
    r = np.asarray(r_block, dtype=float)
    m = x.size
    if m < 1 or r.shape != x.shape:
        raise DomainError(f"block needs matching non-empty x and r, got {x.shape} and {r.shape}", module="partition_model")

    (c11, c12), (_, c22) = hyper.C
    b0, b1 = hyper.beta0
    e = x - b0 - b1 * r
    ee = float(e @ e)
    u0 = float(e.sum())
    u1 = float(r @ e)

    a11 = c11 + m
    a12 = c12 + float(r.sum())
    a22 = c22 + float(r @ r)
    det_a = a11 * a22 - a12 * a12
    if not (a11 > 0 and det_a > 0 and math.isfinite(det_a)):
        raise NumericalBreakdown(f"C + R'R is not positive definite (det={det_a})", module="partition_model")

    quad = (a22 * u0 * u0 - 2.0 * a12 * u0 * u1 + a11 * u1 * u1) / det_a
    v2 = ee - quad
    if v2 < 0.0:
        if v2 < -_V2_TOLERANCE * (1.0 + ee):
            raise NumericalBreakdown(f"negative quadratic form V^2={v2}", module="partition_model")
        v2 = 0.0

    det_c = c11 * c22 - c12 * c12
    return v2, math.log(det_c) - math.log(det_a), m


def block_v2(x_block, r_block, hyper: Hyperparameters) -> float:
    """(x - R beta0)' [I - R (C + R'R)^-1 R'] (x - R beta0)"""
    return _block_terms(x_block, r_block, hyper)[0]


def block_log_marginal(x_block, r_block, hyper: Hyperparameters) -> float:
    """Log marginal density of one block's x under the normal-inverse-gamma linear model"""
    v2, logdet_ratio, m = _block_terms(x_block, r_block, hyper)
    shape = hyper.a + 0.5 * m
    return (
        -0.5 * m * _LOG_2PI
        + 0.5 * logdet_ratio
        + hyper.a * math.log(hyper.b)
        + log_gamma(shape)
        - log_gamma(hyper.a)
        - shape * math.log(hyper.b + 0.5 * v2)
    )


class BlockCache:
    """Log marginals keyed by (start, length).

    Valid for one dataset and one set of hyperparameters; entries never
    change.  Confine each cache to a single chain.
    """

    def __init__(self):
        self._values: Dict[Tuple[int, int], float] = {}
        self.hits = 0
        self.misses = 0

    def get(self, key: Tuple[int, int]) -> Optional[float]:
        value = self._values.get(key)
        if value is None:
            self.misses += 1
        else:
            self.hits += 1
        return value

    def put(self, key: Tuple[int, int], value: float):
        self._values[key] = value

    def __len__(self) -> int:
        return len(self._values)

    def __contains__(self, key) -> bool:
        return key in self._values


class PartitionModel:
    """Posterior kernel over partitions of one dataset"""

    def __init__(self, data: RDDataset, hyper: Hyperparameters, dependent: Optional[Sequence[float]] = None,
                 cache: Optional[BlockCache] = None):
        self.data = data
        self.hyper = hyper
        self.r = np.asarray(data.r, dtype=float)
        # Regressed on r; the confounder unless a sensitivity column is given
        self.z = np.asarray(data.x if dependent is None else dependent, dtype=float)
        if self.z.shape != self.r.shape:
            raise DomainError("dependent column must have one value per subject", module="partition_model")
        self.cache = BlockCache() if cache is None else cache
        self.n = data.n
        self._log_constant = log_gamma(self.n + 1) - log_rising_factorial(hyper.alpha, self.n)

    def block_term(self, start: int, length: int) -> float:
        key = (start, length)
        value = self.cache.get(key)
        if value is None:
            value = block_log_marginal(self.z[start:start + length], self.r[start:start + length], self.hyper)
            self.cache.put(key, value)
        return value

    def block_term_uncached(self, start: int, length: int) -> float:
        return block_log_marginal(self.z[start:start + length], self.r[start:start + length], self.hyper)

    def count_term(self, k: int) -> float:
        return cluster_count_term(k, self.hyper.alpha, self.hyper.prior_variant)

    def log_prior(self, partition: OrderedPartition) -> float:
        return log_prior(partition, self.hyper.alpha, self.hyper.prior_variant)

    def log_kernel(self, partition: OrderedPartition, use_cache: bool = True) -> float:
        if partition.n != self.n:
            raise DomainError(f"partition covers {partition.n} subjects, data has {self.n}", module="partition_model")
        term = self.block_term if use_cache else self.block_term_uncached
        return self.log_prior(partition) + sum(term(start, size) for start, size in partition.blocks())

    def log_kernel_sizes(self, sizes: Sequence[int]) -> float:
        """Kernel of a composition given as a plain size list (sampler hot path)"""
        total = self.count_term(len(sizes)) + self._log_constant
        start = 0
        for size in sizes:
            total += self.block_term(start, size) - math.log(size)
            start += size
        return total


def log_posterior_kernel(
    partition: OrderedPartition,
    data: RDDataset,
    hyper: Hyperparameters,
    cache: Optional[BlockCache] = None,
    dependent: Optional[Sequence[float]] = None,
) -> float:
    """log prior + sum of block log marginals; cache consulted per block"""
    return PartitionModel(data, hyper, dependent=dependent, cache=cache).log_kernel(partition)
