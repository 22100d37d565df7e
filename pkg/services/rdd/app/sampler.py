"""Split/merge Metropolis-Hastings over ordered partitions.

Block parameters are integrated out, so the chain moves on the discrete
space of compositions and every move is a plain MH step with the Hastings
correction for the asymmetric split/merge kernel.
"""

import math
import os
import time
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import structlog

from .dataset import RDDataset
from .errors import ChainInconsistency, InvalidConfig, TraceTooShort
from .metrics import record_chain
from .models import ChainConfig, Hyperparameters, MoveType, TraceSummary
from .partition_model import BlockCache, OrderedPartition, PartitionModel

logger = structlog.get_logger(__name__)

RNG_ALGORITHM = "numpy PCG64 (SeedSequence.spawn per chain)"
_MIN_TRACE = 100
# The incrementally updated kernel is re-summed from cached terms this often
_RESYNC_EVERY = 1000
_CHECK_TOLERANCE = 1e-8

Block = Tuple[int, int]


@dataclass
class ChainState:
    """Current composition plus its cached log kernel and move counters"""

    sizes: List[int]
    log_kernel: float
    proposed: Counter = field(default_factory=Counter)
    accepted: Counter = field(default_factory=Counter)

    @property
    def partition(self) -> OrderedPartition:
        return OrderedPartition(tuple(self.sizes))

    @property
    def k(self) -> int:
        return len(self.sizes)


@dataclass(frozen=True)
class Proposal:
    candidate: Tuple[int, ...]
    log_proposal_ratio: float
    move: MoveType
    removed: Tuple[Block, ...]
    added: Tuple[Block, ...]

    @property
    def partition(self) -> OrderedPartition:
        return OrderedPartition(self.candidate)


def split_merge_probabilities(k: int, splittable: int) -> Tuple[float, float]:
    """(P(split), P(merge)) from a state with k blocks, `splittable` of size >= 2"""
    if k == 1:
        return (1.0, 0.0) if splittable else (0.0, 0.0)
    if splittable == 0:
        return 0.0, 1.0
    return 0.5, 0.5


def _pick(u: float, count: int) -> int:
    return min(int(u * count), count - 1)


def _start_of(sizes: Sequence[int], j: int) -> int:
    return sum(sizes[:j])


def propose(state: ChainState, rng: np.random.Generator) -> Optional[Proposal]:
    """Draw a split or merge; None when no move exists (n = 1)"""
    sizes = state.sizes
    k = len(sizes)
    splittable_idx = [j for j, s in enumerate(sizes) if s >= 2]
    n_split = len(splittable_idx)
    p_split, p_merge = split_merge_probabilities(k, n_split)
    if p_split == 0.0 and p_merge == 0.0:
        return None

    if rng.random() < p_split:
        j = splittable_idx[_pick(rng.random(), n_split)]
        size = sizes[j]
        left = 1 + _pick(rng.random(), size - 1)
        right = size - left
        candidate = tuple(sizes[:j]) + (left, right) + tuple(sizes[j + 1:])
        start = _start_of(sizes, j)

        log_forward = math.log(p_split) - math.log(n_split) - math.log(size - 1)
        splittable_after = n_split - 1 + (left >= 2) + (right >= 2)
        _, p_merge_after = split_merge_probabilities(k + 1, splittable_after)
        log_reverse = math.log(p_merge_after) - math.log(k)
        return Proposal(
            candidate=candidate,
            log_proposal_ratio=log_reverse - log_forward,
            move=MoveType.SPLIT,
            removed=((start, size),),
            added=((start, left), (start + left, right)),
        )

    j = _pick(rng.random(), k - 1)
    left, right = sizes[j], sizes[j + 1]
    merged = left + right
    candidate = tuple(sizes[:j]) + (merged,) + tuple(sizes[j + 2:])
    start = _start_of(sizes, j)

    log_forward = math.log(p_merge) - math.log(k - 1)
    splittable_after = n_split - (left >= 2) - (right >= 2) + 1
    p_split_after, _ = split_merge_probabilities(k - 1, splittable_after)
    log_reverse = math.log(p_split_after) - math.log(splittable_after) - math.log(merged - 1)
    return Proposal(
        candidate=candidate,
        log_proposal_ratio=log_reverse - log_forward,
        move=MoveType.MERGE,
        removed=((start, left), (start + left, right)),
        added=((start, merged),),
    )


def propose_shift(state: ChainState, rng: np.random.Generator) -> Optional[Proposal]:
    """Move one subject across a uniformly chosen block boundary.

    The reverse move (same boundary, opposite direction) has the same
    probability, so the proposal ratio is zero.  Returns None when the
    donor block would become empty or no boundary exists.
    """
    sizes = state.sizes
    k = len(sizes)
    if k < 2:
        return None
    b = _pick(rng.random(), k - 1)
    to_right = rng.random() < 0.5
    left, right = sizes[b], sizes[b + 1]
    donor = left if to_right else right
    if donor < 2:
        return None
    new_left, new_right = (left - 1, right + 1) if to_right else (left + 1, right - 1)
    start = _start_of(sizes, b)
    return Proposal(
        candidate=tuple(sizes[:b]) + (new_left, new_right) + tuple(sizes[b + 2:]),
        log_proposal_ratio=0.0,
        move=MoveType.SHIFT,
        removed=((start, left), (start + left, right)),
        added=((start, new_left), (start + new_left, new_right)),
    )


def kernel_delta(model: PartitionModel, k_before: int, proposal: Proposal) -> float:
    """Change of the log kernel using only the affected blocks"""
    k_after = len(proposal.candidate)
    delta = model.count_term(k_after) - model.count_term(k_before)
    for start, size in proposal.added:
        delta += model.block_term(start, size) - math.log(size)
    for start, size in proposal.removed:
        delta -= model.block_term(start, size) - math.log(size)
    return delta


def _metropolis(state: ChainState, model: PartitionModel, rng: np.random.Generator,
                proposal: Optional[Proposal], move: MoveType) -> bool:
    state.proposed[move.value] += 1
    if proposal is None:
        return False
    delta = kernel_delta(model, len(state.sizes), proposal)
    log_accept = delta + proposal.log_proposal_ratio
    if log_accept >= 0.0 or rng.random() < math.exp(log_accept):
        state.sizes = list(proposal.candidate)
        state.log_kernel += delta
        state.accepted[move.value] += 1
        return True
    return False


def mh_step(state: ChainState, model: PartitionModel, rng: np.random.Generator,
            enable_shift_move: bool = False) -> ChainState:
    """One split/merge MH step, optionally followed by a boundary-shift step.

    `model` bundles the dataset, hyperparameters and this chain's block cache.
    """
    proposal = propose(state, rng)
    if proposal is not None:
        _metropolis(state, model, rng, proposal, proposal.move)
    if enable_shift_move:
        _metropolis(state, model, rng, propose_shift(state, rng), MoveType.SHIFT)
    return state


@dataclass
class MCSE:
    mcse: float
    half_width: float


def batch_means_mcse(trace: Sequence[float]) -> MCSE:
    """Batch-means MC standard error with floor(sqrt(N)) batches"""
    values = np.asarray(trace, dtype=float)
    n = values.size
    if n < _MIN_TRACE:
        raise TraceTooShort(f"batch means need at least {_MIN_TRACE} values, got {n}", module="sampler")
    batches = int(math.isqrt(n))
    length = n // batches
    means = values[: batches * length].reshape(batches, length).mean(axis=1)
    spread = float(np.var(means, ddof=1))
    mcse = math.sqrt(max(spread, 0.0) / batches)
    return MCSE(mcse=mcse, half_width=1.96 * mcse)


def effective_sample_size(trace: Sequence[float], mcse: Optional[float] = None) -> float:
    """var(trace) / mcse^2, capped at the trace length"""
    values = np.asarray(trace, dtype=float)
    if mcse is None:
        mcse = batch_means_mcse(values).mcse
    if mcse == 0.0:
        return float(values.size)
    return float(min(values.size, np.var(values, ddof=1) / mcse ** 2))


def split_rhat(traces: Sequence[Sequence[float]]) -> Optional[float]:
    """Potential scale reduction factor over chains split in halves"""
    halves = []
    for trace in traces:
        values = np.asarray(trace, dtype=float)
        half = values.size // 2
        if half < 2:
            return None
        halves.extend([values[:half], values[half: 2 * half]])
    length = min(h.size for h in halves)
    chains = np.array([h[:length] for h in halves])

    within = float(np.mean(np.var(chains, axis=1, ddof=1)))
    if within == 0.0:
        return None
    between = length * float(np.var(chains.mean(axis=1), ddof=1))
    pooled = (length - 1) / length * within + between / length
    return math.sqrt(pooled / within)


def summarize_trace(traces: Sequence[Sequence[float]]) -> Optional[TraceSummary]:
    merged = np.concatenate([np.asarray(t, dtype=float) for t in traces]) if traces else np.array([])
    if merged.size < _MIN_TRACE:
        return None
    err = batch_means_mcse(merged)
    return TraceSummary(
        mean=float(merged.mean()),
        mcse=err.mcse,
        half_width=err.half_width,
        ess=effective_sample_size(merged, err.mcse),
        rhat=split_rhat(traces),
    )


@dataclass
class Diagnostics:
    """Move statistics and scalar traces of one or more chains"""

    proposals: Dict[str, int]
    accepted: Dict[str, int]
    k_traces: List[np.ndarray]
    log_kernel_traces: List[np.ndarray]
    cache_sizes: List[int] = field(default_factory=list)
    durations: List[float] = field(default_factory=list)

    @property
    def acceptance_rates(self) -> Dict[str, float]:
        return {
            move: (self.accepted.get(move, 0) / count if count else 0.0)
            for move, count in self.proposals.items()
        }

    @property
    def k_trace(self) -> np.ndarray:
        return np.concatenate(self.k_traces) if self.k_traces else np.array([], dtype=int)

    def num_clusters_summary(self) -> Optional[TraceSummary]:
        return summarize_trace(self.k_traces)

    def log_kernel_summary(self) -> Optional[TraceSummary]:
        return summarize_trace(self.log_kernel_traces)

    @classmethod
    def merge(cls, parts: Sequence["Diagnostics"]) -> "Diagnostics":
        proposals, accepted = Counter(), Counter()
        for part in parts:
            proposals.update(part.proposals)
            accepted.update(part.accepted)
        return cls(
            proposals=dict(sorted(proposals.items())),
            accepted={move: accepted.get(move, 0) for move in sorted(proposals)},
            k_traces=[t for part in parts for t in part.k_traces],
            log_kernel_traces=[t for part in parts for t in part.log_kernel_traces],
            cache_sizes=[c for part in parts for c in part.cache_sizes],
            durations=[d for part in parts for d in part.durations],
        )


@dataclass
class ChainResult:
    draws: List[OrderedPartition]
    diagnostics: Diagnostics


def check_kernel(state: ChainState, model: PartitionModel, step: int):
    """Compare the running log kernel with an uncached recomputation"""
    scratch = model.log_kernel(state.partition, use_cache=False)
    drift = abs(state.log_kernel - scratch)
    if drift > _CHECK_TOLERANCE * max(1.0, abs(scratch)):
        raise ChainInconsistency(
            f"incremental log kernel {state.log_kernel!r} differs from recomputation {scratch!r} at step {step}",
            module="sampler",
        )
    logger.debug("Kernel consistency check passed", step=step, drift=drift)


def initial_state(model: PartitionModel, initial_blocks: int) -> ChainState:
    if initial_blocks > model.n:
        raise InvalidConfig(f"initial_blocks={initial_blocks} exceeds n={model.n}", module="sampler")
    start = OrderedPartition.equal_blocks(model.n, initial_blocks)
    return ChainState(sizes=list(start.block_sizes), log_kernel=model.log_kernel_sizes(start.block_sizes))


def _write_traces(trace_dir: str, chain_index: int, k_trace: np.ndarray, lk_trace: np.ndarray):
    os.makedirs(trace_dir, exist_ok=True)
    np.savetxt(os.path.join(trace_dir, f"chain{chain_index}_num_clusters.txt"), k_trace, fmt="%d")
    np.savetxt(os.path.join(trace_dir, f"chain{chain_index}_log_kernel.txt"), lk_trace, fmt="%.17g")


def run_chain(
    data: RDDataset,
    hyper: Hyperparameters,
    config: ChainConfig,
    dependent: Optional[Sequence[float]] = None,
    chain_index: int = 0,
    seed_sequence: Optional[np.random.SeedSequence] = None,
) -> ChainResult:
    """Run one chain; draws are post-burn-in and thinned"""
    if seed_sequence is None:
        seed_sequence = np.random.SeedSequence(config.seed).spawn(chain_index + 1)[chain_index]
    rng = np.random.default_rng(seed_sequence)
    model = PartitionModel(data, hyper, dependent=dependent, cache=BlockCache())
    state = initial_state(model, config.initial_blocks)

    retained = config.retained_per_chain
    draws: List[OrderedPartition] = []
    k_trace = np.empty(retained, dtype=np.int64)
    lk_trace = np.empty(retained, dtype=float)

    logger.info("Chain started", chain=chain_index, n=data.n, iterations=config.iterations,
                burn_in=config.burn_in, thin=config.thin)
    started = time.perf_counter()
    current: Optional[OrderedPartition] = None
    check_every = config.debug_check_every
    shift = config.enable_shift_move

    for step in range(config.iterations):
        before = state.sizes
        mh_step(state, model, rng, enable_shift_move=shift)
        if state.sizes is not before:
            current = None

        if check_every and (step + 1) % check_every == 0:
            check_kernel(state, model, step + 1)
        if (step + 1) % _RESYNC_EVERY == 0:
            state.log_kernel = model.log_kernel_sizes(state.sizes)

        if step >= config.burn_in and (step - config.burn_in) % config.thin == 0:
            if current is None:
                current = OrderedPartition(tuple(state.sizes))
            idx = len(draws)
            draws.append(current)
            k_trace[idx] = len(state.sizes)
            lk_trace[idx] = state.log_kernel

    duration = time.perf_counter() - started
    moves = sorted(set(state.proposed) | {MoveType.SPLIT.value, MoveType.MERGE.value})
    diagnostics = Diagnostics(
        proposals={m: state.proposed.get(m, 0) for m in moves},
        accepted={m: state.accepted.get(m, 0) for m in moves},
        k_traces=[k_trace],
        log_kernel_traces=[lk_trace],
        cache_sizes=[len(model.cache)],
        durations=[duration],
    )
    if config.trace_dir:
        _write_traces(config.trace_dir, chain_index, k_trace, lk_trace)

    logger.info("Chain finished", chain=chain_index, draws=len(draws), seconds=round(duration, 3),
                steps_per_second=round(config.iterations / duration, 1) if duration > 0 else None,
                acceptance=diagnostics.acceptance_rates, cached_blocks=len(model.cache))
    return ChainResult(draws=draws, diagnostics=diagnostics)


def _run_chain_job(args) -> ChainResult:
    data, hyper, config, dependent, chain_index, seed_sequence = args
    return run_chain(data, hyper, config, dependent=dependent, chain_index=chain_index, seed_sequence=seed_sequence)


def run_chains(
    data: RDDataset,
    hyper: Hyperparameters,
    config: ChainConfig,
    dependent: Optional[Sequence[float]] = None,
) -> ChainResult:
    """Run config.chains independent chains and merge them in chain order"""
    seeds = np.random.SeedSequence(config.seed).spawn(config.chains)
    jobs = [(data, hyper, config, dependent, i, seeds[i]) for i in range(config.chains)]

    if config.workers > 1 and config.chains > 1:
        with ProcessPoolExecutor(max_workers=min(config.workers, config.chains)) as pool:
            results = list(pool.map(_run_chain_job, jobs))
    else:
        results = [_run_chain_job(job) for job in jobs]

    for result in results:
        d = result.diagnostics
        record_chain(d.proposals, d.accepted, sum(d.durations))

    return ChainResult(
        draws=[draw for result in results for draw in result.draws],
        diagnostics=Diagnostics.merge([result.diagnostics for result in results]),
    )
