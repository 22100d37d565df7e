import math

import numpy as np
import pytest
from scipy import stats

from app.errors import DomainError
from app.models import Hyperparameters, PriorVariant
from app.oracle import enumerate_compositions, exact_posterior
from app.partition_model import (
    BlockCache,
    OrderedPartition,
    PartitionModel,
    block_log_marginal,
    block_v2,
    cluster_count_term,
    log_posterior_kernel,
    log_prior,
    log_rising_factorial,
)


def random_hyper(rng):
    c11, c22 = rng.uniform(0.5, 5.0, size=2)
    c12 = 0.3 * math.sqrt(c11 * c22) * rng.uniform(-1.0, 1.0)
    return Hyperparameters(
        alpha=1.0,
        beta0=tuple(rng.normal(size=2)),
        C=((c11, c12), (c12, c22)),
        a=rng.uniform(0.5, 3.0),
        b=rng.uniform(0.5, 3.0),
    )


class TestOrderedPartition:
    def test_from_labels(self):
        p = OrderedPartition.from_labels([0, 0, 1, 1, 2])
        assert p.block_sizes == (2, 2, 1)
        assert p.n == 5 and p.k == 3
        assert list(p.labels) == [0, 0, 1, 1, 2]
        assert p.starts == (0, 2, 4)

    @pytest.mark.parametrize("labels", [[1, 1], [0, 2], [0, 1, 0], []])
    def test_from_labels_rejects_unordered(self, labels):
        with pytest.raises(ValueError):
            OrderedPartition.from_labels(labels)

    def test_equal_blocks(self):
        assert OrderedPartition.equal_blocks(10, 3).block_sizes == (4, 3, 3)
        assert OrderedPartition.equal_blocks(4, 4).block_sizes == (1, 1, 1, 1)
        with pytest.raises(ValueError):
            OrderedPartition.equal_blocks(3, 4)

    def test_block_containing(self):
        p = OrderedPartition((2, 2, 1))
        assert p.block_containing(0) == (0, 2)
        assert p.block_containing(3) == (2, 2)
        assert p.block_containing(4) == (4, 1)
        with pytest.raises(IndexError):
            p.block_containing(5)


class TestPrior:
    @pytest.mark.parametrize("alpha", [0.5, 1.0, 2.0])
    def test_normalizes_over_all_compositions(self, alpha):
        for n in range(1, 13):
            total = math.fsum(math.exp(log_prior(OrderedPartition(c), alpha)) for c in enumerate_compositions(n))
            assert total == pytest.approx(1.0, abs=1e-10)

    def test_three_subject_table(self):
        expected = {(3,): 1 / 3, (1, 2): 1 / 4, (2, 1): 1 / 4, (1, 1, 1): 1 / 6}
        for composition, p in expected.items():
            assert math.exp(log_prior(OrderedPartition(composition), 1.0)) == pytest.approx(p, abs=1e-12)

    def test_printed_constant_shifts_by_a_constant(self):
        shifts = {
            round(log_prior(OrderedPartition(c), 1.5, printed_constant=True) - log_prior(OrderedPartition(c), 1.5), 12)
            for c in enumerate_compositions(6)
        }
        assert shifts == {round(math.log(6) - math.lgamma(7), 12)}

    def test_literal_variant_count_term(self):
        assert cluster_count_term(3, 2.0, PriorVariant.LITERAL) == pytest.approx(math.log(6.0) - math.log(6.0))
        assert cluster_count_term(3, 2.0) == pytest.approx(3 * math.log(2.0) - math.log(6.0))

    def test_rising_factorial(self):
        assert log_rising_factorial(1.0, 4) == pytest.approx(math.log(24.0))
        assert log_rising_factorial(0.5, 2) == pytest.approx(math.log(0.5 * 1.5))

    def test_alpha_must_be_positive(self):
        with pytest.raises(DomainError):
            log_prior(OrderedPartition((2,)), 0.0)


class TestBlockMarginal:
    def test_single_observation_is_student_t(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            hyper = random_hyper(rng)
            r, x = rng.normal(), rng.normal(scale=2.0)
            design = np.array([1.0, r])
            location = design @ hyper.mean
            scale2 = hyper.b / hyper.a * (1.0 + design @ np.linalg.solve(hyper.precision, design))
            expected = stats.t.logpdf(x, df=2 * hyper.a, loc=location, scale=math.sqrt(scale2))
            assert block_log_marginal([x], [r], hyper) == pytest.approx(expected, abs=1e-11)

    def test_quadratic_form_matches_direct_evaluation(self):
        rng = np.random.default_rng(12)
        for _ in range(100):
            hyper = random_hyper(rng)
            m = int(rng.integers(1, 7))
            r = rng.normal(size=m)
            x = rng.normal(size=m)
            R = np.column_stack([np.ones(m), r])
            e = x - R @ hyper.mean
            direct = e @ np.linalg.solve(np.eye(m) + R @ np.linalg.solve(hyper.precision, R.T), e)
            assert block_v2(x, r, hyper) == pytest.approx(direct, rel=1e-8, abs=1e-12)

    def test_rejects_empty_block(self):
        with pytest.raises(DomainError):
            block_log_marginal([], [], Hyperparameters())


class TestPartitionModel:
    def test_kernel_is_prior_plus_block_terms(self, two_line_data, vague_hyper):
        p = OrderedPartition((3, 1, 4))
        expected = log_prior(p, vague_hyper.alpha) + sum(
            block_log_marginal(two_line_data.x[s:s + m], two_line_data.r[s:s + m], vague_hyper) for s, m in p.blocks()
        )
        assert log_posterior_kernel(p, two_line_data, vague_hyper) == pytest.approx(expected, abs=1e-10)

    def test_size_list_kernel_matches(self, two_line_data, vague_hyper):
        model = PartitionModel(two_line_data, vague_hyper)
        for c in enumerate_compositions(8)[:40]:
            assert model.log_kernel_sizes(c) == pytest.approx(model.log_kernel(OrderedPartition(c)), abs=1e-9)

    def test_cache_reuses_block_terms(self, two_line_data, vague_hyper):
        cache = BlockCache()
        model = PartitionModel(two_line_data, vague_hyper, cache=cache)
        p = OrderedPartition((4, 4))
        first = model.log_kernel(p)
        assert len(cache) == 2 and cache.misses == 2
        assert model.log_kernel(p) == first
        assert cache.hits == 2
        assert model.log_kernel(p, use_cache=False) == pytest.approx(first, abs=1e-12)

    def test_three_subject_normalization_matches_oracle(self, make_dataset):
        data = make_dataset([-1.0, 0.2, 0.9], x=[0.3, -1.2, 2.0])
        hyper = Hyperparameters()
        kernels = {c: log_posterior_kernel(OrderedPartition(c), data, hyper) for c in enumerate_compositions(3)}
        top = max(kernels.values())
        z = sum(math.exp(v - top) for v in kernels.values())
        exact = exact_posterior(data, hyper).probabilities
        for c, v in kernels.items():
            assert math.exp(v - top) / z == pytest.approx(exact[c], abs=1e-10)

    def test_dependent_column_replaces_x(self, two_line_data, vague_hyper):
        p = OrderedPartition((4, 4))
        swapped = PartitionModel(two_line_data, vague_hyper, dependent=two_line_data.y).log_kernel(p)
        expected = log_prior(p, 1.0) + sum(
            block_log_marginal(two_line_data.y[s:s + m], two_line_data.r[s:s + m], vague_hyper) for s, m in p.blocks()
        )
        assert swapped == pytest.approx(expected, abs=1e-10)
        with pytest.raises(DomainError):
            PartitionModel(two_line_data, vague_hyper, dependent=[1.0, 2.0])

    def test_partition_size_mismatch(self, two_line_data, vague_hyper):
        with pytest.raises(DomainError):
            PartitionModel(two_line_data, vague_hyper).log_kernel(OrderedPartition((3,)))
