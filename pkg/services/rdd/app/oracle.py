"""Exact posterior over every ordered partition, for small datasets.

Ordered partitions of n subjects are compositions of n, one per subset of the
n - 1 gaps between neighbours, so the support has 2^(n-1) members.
"""

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import structlog
from scipy.special import logsumexp

from .dataset import RDDataset
from .errors import TooLarge
from .models import Hyperparameters
from .partition_model import BlockCache, OrderedPartition, PartitionModel

logger = structlog.get_logger(__name__)

MAX_ENUMERATION_N = 20
MAX_ROUTINE_N = 14

Composition = Tuple[int, ...]


def _composition_from_mask(mask: int, n: int) -> Composition:
    # bit g set: a block boundary sits between subjects g and g + 1
    sizes, run = [], 1
    for gap in range(n - 1):
        if mask >> gap & 1:
            sizes.append(run)
            run = 1
        else:
            run += 1
    sizes.append(run)
    return tuple(sizes)


def enumerate_compositions(n: int) -> List[Composition]:
    """All 2^(n-1) compositions of n, ordered by gap mask"""
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    if n > MAX_ENUMERATION_N:
        raise TooLarge(f"refusing to enumerate 2^{n - 1} compositions (n > {MAX_ENUMERATION_N})", module="oracle")
    return [_composition_from_mask(mask, n) for mask in range(1 << (n - 1))]


@dataclass(frozen=True)
class ExactPosterior:
    """Composition -> posterior probability, plus the log normalizing constant"""

    probabilities: Dict[Composition, float]
    log_normalizer: float

    def __len__(self) -> int:
        return len(self.probabilities)

    def expectation(self, f: Callable[[OrderedPartition], float]) -> float:
        return float(sum(p * f(OrderedPartition(c)) for c, p in self.probabilities.items()))

    def coclustering(self) -> np.ndarray:
        """P(s_i = s_j) for every pair of subjects"""
        n = sum(next(iter(self.probabilities)))
        out = np.zeros((n, n))
        for composition, p in self.probabilities.items():
            start = 0
            for size in composition:
                out[start:start + size, start:start + size] += p
                start += size
        return out

    def num_clusters_distribution(self) -> Dict[int, float]:
        dist: Dict[int, float] = {}
        for composition, p in self.probabilities.items():
            dist[len(composition)] = dist.get(len(composition), 0.0) + p
        return dict(sorted(dist.items()))


def exact_posterior(
    data: RDDataset,
    hyper: Hyperparameters,
    prior_only: bool = False,
    dependent: Optional[Sequence[float]] = None,
    max_n: int = MAX_ROUTINE_N,
) -> ExactPosterior:
    """Normalize exp(log_posterior_kernel) over the full support.

    `prior_only` drops the block likelihoods, leaving the partition prior.
    """
    if data.n > max_n:
        raise TooLarge(f"exact posterior limited to n <= {max_n}, got {data.n}", module="oracle")

    compositions = enumerate_compositions(data.n)
    model = PartitionModel(data, hyper, dependent=dependent, cache=BlockCache())
    if prior_only:
        log_kernels = np.array([model.log_prior(OrderedPartition(c)) for c in compositions])
    else:
        log_kernels = np.array([model.log_kernel(OrderedPartition(c)) for c in compositions])

    log_z = float(logsumexp(log_kernels))
    probabilities = np.exp(log_kernels - log_z)
    logger.debug("Exact posterior computed", n=data.n, support=len(compositions), log_normalizer=log_z,
                 prior_only=prior_only)
    return ExactPosterior(
        probabilities={c: float(p) for c, p in zip(compositions, probabilities)},
        log_normalizer=log_z,
    )


def exact_functional(
    data: RDDataset,
    hyper: Hyperparameters,
    f: Callable[[OrderedPartition], float],
    prior_only: bool = False,
) -> float:
    """E[f(partition) | data] by summation over the support"""
    return exact_posterior(data, hyper, prior_only=prior_only).expectation(f)


def dump_table(posterior: ExactPosterior, path: str):
    """Tab-separated table: composition, probability (17 significant digits)"""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# log_normalizer\t{posterior.log_normalizer!r}\n")
        fh.write("composition\tprobability\n")
        for composition, p in posterior.probabilities.items():
            fh.write(f"{','.join(str(s) for s in composition)}\t{p!r}\n")
