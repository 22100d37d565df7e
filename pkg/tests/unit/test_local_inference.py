import numpy as np
import pandas as pd
import pytest
from scipy import stats

from app.errors import NoDraws
from app.local_inference import (
    STATISTIC_ORDER,
    WeakInstrument,
    analyze_draws,
    anchor_index,
    compare_cluster,
    compare_groups,
    extract_cluster,
    fuzzy_scale,
    summarize,
    summarize_frame,
)
from app.models import DesignMode
from app.partition_model import OrderedPartition


def groups(rng):
    m1, m0 = rng.integers(2, 16, size=2)
    return rng.normal(1.0, rng.uniform(0.5, 2.0), size=m1), rng.normal(0.0, rng.uniform(0.5, 2.0), size=m0)


def compare(y1, y0, **kwargs):
    return compare_groups(y1, y0, np.ones(len(y1)), np.zeros(len(y0)), **kwargs)


class TestAnchor:
    def test_nearest_subject(self, make_dataset):
        assert anchor_index(make_dataset([-2.0, -0.5, 0.3, 1.0])) == 2

    def test_tie_goes_to_treated_side(self, make_dataset):
        assert anchor_index(make_dataset([-1.0, 1.0])) == 1

    def test_subject_on_cutoff(self, make_dataset):
        assert anchor_index(make_dataset([-0.1, 0.0, 0.05])) == 1


class TestExtractCluster:
    def test_anchor_block(self, make_dataset):
        data = make_dataset([-2.0, -1.0, -0.5, 0.3, 1.0])
        cluster = extract_cluster(OrderedPartition.from_labels([0, 0, 1, 1, 2]), anchor_index(data), data)
        assert list(cluster.members) == [2, 3]
        assert list(cluster.control) == [2]
        assert list(cluster.treated) == [3]

    def test_single_block_holds_everyone(self, make_dataset):
        data = make_dataset([-2.0, -1.0, 0.5, 1.0])
        cluster = extract_cluster(OrderedPartition((4,)), anchor_index(data), data)
        assert list(cluster.members) == [0, 1, 2, 3]

    def test_one_sided_cluster_is_not_computable(self, make_dataset):
        data = make_dataset([-2.0, -0.1, 0.5, 1.0], y=[1.0, 2.0, 3.0, 4.0])
        # anchor is r = -0.1, its block ends before the cutoff
        cluster = extract_cluster(OrderedPartition((2, 2)), anchor_index(data), data)
        assert cluster.treated.size == 0
        draw = compare_cluster(cluster, data)
        assert draw.t_statistic is None
        assert draw.prob_treatment_ge_control is None
        assert draw.control.mean == 1.5


class TestCompareGroups:
    def test_identical_groups(self):
        draw = compare([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        assert draw.t_statistic == 0.0
        assert draw.ks_statistic == 0.0
        assert draw.prob_treatment_ge_control == 6 / 9
        assert draw.prob_treatment_le_control == 6 / 9
        assert draw.tie_probability == 3 / 9

    def test_pair_counts(self):
        draw = compare([2.0, 3.0], [1.0, 2.0])
        assert draw.prob_treatment_ge_control == 1.0
        assert draw.prob_treatment_le_control == 0.25
        assert draw.tie_probability == 0.25

    def test_separated_supports(self):
        assert compare([10.0, 11.0], [0.0, 1.0]).ks_statistic == 1.0

    def test_single_treated_subject(self):
        draw = compare([5.0], [1.0, 2.0, 3.0])
        assert draw.treatment.mean == 5.0
        assert draw.treatment.variance is None
        assert draw.t_statistic is None
        assert draw.f_statistic is None
        assert draw.ks_statistic is None
        assert draw.prob_treatment_ge_control == 1.0

    def test_empty_groups(self):
        draw = compare([], [])
        assert draw.treatment.size == 0
        assert all(v is None for k, v in draw.statistics().items() if not k.endswith(".size"))

    def test_welch_t_matches_scipy(self):
        rng = np.random.default_rng(21)
        for _ in range(50):
            y1, y0 = groups(rng)
            draw = compare(y1, y0)
            expected = stats.ttest_ind(y0, y1, equal_var=False)
            assert draw.t_statistic == pytest.approx(expected.statistic, abs=1e-9)
            assert draw.t_pvalue == pytest.approx(expected.pvalue, abs=1e-9)

    def test_f_test_matches_scipy(self):
        rng = np.random.default_rng(22)
        for _ in range(50):
            y1, y0 = groups(rng)
            draw = compare(y1, y0)
            f = np.var(y0, ddof=1) / np.var(y1, ddof=1)
            d0, d1 = len(y0) - 1, len(y1) - 1
            p = min(1.0, 2 * min(stats.f.cdf(f, d0, d1), stats.f.sf(f, d0, d1)))
            assert draw.f_statistic == pytest.approx(f, rel=1e-12)
            assert draw.f_pvalue == pytest.approx(p, abs=1e-9)

    def test_moments_and_quantiles(self):
        rng = np.random.default_rng(23)
        y1, y0 = groups(rng)
        draw = compare(y1, y0)
        assert draw.treatment.skewness == pytest.approx(stats.skew(y1, bias=True), abs=1e-9)
        assert draw.treatment.kurtosis == pytest.approx(stats.kurtosis(y1, fisher=False, bias=True), abs=1e-9)
        assert draw.control.quantiles[10] == pytest.approx(np.quantile(y0, 0.10), abs=1e-12)
        assert draw.control.iqr == pytest.approx(np.quantile(y0, 0.75) - np.quantile(y0, 0.25), abs=1e-12)

    def test_constant_group_has_no_shape_moments(self):
        draw = compare([2.0, 2.0, 2.0], [1.0, 2.0])
        assert draw.treatment.variance == 0.0
        assert draw.treatment.skewness is None
        assert draw.treatment.kurtosis is None
        assert draw.f_statistic is None

    def test_invariances_on_random_pairs(self):
        rng = np.random.default_rng(24)
        for _ in range(1000):
            y1, y0 = groups(rng)
            base = compare(y1, y0)
            shifted = compare(y1 + 3.7, y0 + 3.7)
            scaled = compare(2.5 * y1, 2.5 * y0)
            swapped = compare(y0, y1)

            assert base.prob_treatment_ge_control + base.prob_treatment_le_control - base.tie_probability == pytest.approx(1.0, abs=1e-12)
            assert shifted.treatment.mean == pytest.approx(base.treatment.mean + 3.7, abs=1e-9)
            assert shifted.control.quantiles[50] == pytest.approx(base.control.quantiles[50] + 3.7, abs=1e-9)
            for a, b in ((shifted, base), (scaled, base)):
                assert a.t_statistic == pytest.approx(b.t_statistic, rel=1e-9, abs=1e-9)
                assert a.f_statistic == pytest.approx(b.f_statistic, rel=1e-9)
                assert a.ks_statistic == b.ks_statistic
                assert a.prob_treatment_ge_control == b.prob_treatment_ge_control
            assert shifted.treatment.skewness == pytest.approx(base.treatment.skewness, abs=1e-8)
            assert scaled.treatment.variance == pytest.approx(6.25 * base.treatment.variance, rel=1e-9)

            assert swapped.t_statistic == pytest.approx(-base.t_statistic, rel=1e-9, abs=1e-12)
            assert swapped.f_statistic == pytest.approx(1.0 / base.f_statistic, rel=1e-9)
            assert swapped.prob_treatment_ge_control == base.prob_treatment_le_control
            assert swapped.ks_statistic == base.ks_statistic

    def test_exact_ks_option(self):
        draw = compare([10.0, 11.0], [0.0, 1.0], exact_ks=True)
        assert draw.ks_pvalue == pytest.approx(1.0 / 3.0)

    def test_statistics_order(self):
        values = compare([1.0, 2.0, 4.0], [0.0, 1.0]).statistics()
        assert tuple(values) == STATISTIC_ORDER
        assert STATISTIC_ORDER[:2] == ("control.size", "treatment.size")


class TestFuzzy:
    def test_scaling(self):
        assert fuzzy_scale(1.0, 0.8, 0.1) == pytest.approx(1.0 / 0.7)

    def test_sharp_denominator(self):
        assert fuzzy_scale(0.37, 1.0, 0.0) == 0.37

    def test_weak_instrument(self):
        assert isinstance(fuzzy_scale(1.0, 0.52, 0.50, tol=0.05), WeakInstrument)

    def test_fuzzy_mode_on_sharp_groups(self):
        draw = compare([1.0, 3.0], [0.0, 0.5], mode=DesignMode.FUZZY)
        assert draw.fuzzy_effect == draw.mean_difference

    def test_weak_draw_flagged(self):
        draw = compare_groups([1.0, 2.0], [0.0, 1.0], [1, 0], [0, 1], mode=DesignMode.FUZZY)
        assert draw.weak_instrument
        assert draw.fuzzy_effect is None


class TestSummarize:
    def test_constant_draws(self):
        draw = compare([1.0, 3.0], [0.0, 0.5])
        report = summarize([draw] * 50)
        mean_diff = report.statistics["mean_difference"]
        assert mean_diff.mean == mean_diff.lo == mean_diff.hi == draw.mean_difference
        assert mean_diff.computable_fraction == 1.0
        assert mean_diff.mc_half_width is None

    def test_interval_of_uniform_grid(self):
        frame = pd.DataFrame({"s": np.arange(1, 1001) / 1000.0})
        summary = summarize_frame(frame)["s"]
        assert summary.lo == pytest.approx(0.025975, abs=1e-12)
        assert summary.hi == pytest.approx(0.975025, abs=1e-12)
        assert summary.mean == pytest.approx(0.5005)
        assert summary.lo <= summary.median <= summary.hi
        assert summary.mc_half_width is not None

    def test_never_computable(self):
        report = summarize([compare([1.0], [2.0])] * 3)
        entry = report.statistics["t_statistic"]
        assert entry.mean is None and entry.lo is None
        assert entry.computable_fraction == 0.0

    def test_partial_fraction(self):
        report = summarize([compare([1.0], [2.0]), compare([1.0, 2.0], [2.0, 5.0])])
        assert report.statistics["t_statistic"].computable_fraction == 0.5

    def test_no_draws(self):
        with pytest.raises(NoDraws):
            summarize([])


class TestAnalyzeDraws:
    def test_memoised_matches_per_draw(self, two_line_data):
        draws = [OrderedPartition(c) for c in [(4, 4), (2, 4, 2), (4, 4), (8,), (3, 3, 2), (2, 4, 2)]]
        analysis = analyze_draws(draws, two_line_data, min_side=1)
        assert analysis.distinct_clusters == 4
        rows = []
        for draw in draws:
            cluster = extract_cluster(draw, analysis.anchor, two_line_data)
            if min(cluster.treated.size, cluster.control.size) >= 1:
                rows.append([np.nan if v is None else v for v in compare_cluster(cluster, two_line_data).statistics().values()])
        expected = pd.DataFrame(rows, columns=list(STATISTIC_ORDER))
        pd.testing.assert_frame_equal(analysis.comparisons.reset_index(drop=True), expected)
        assert analysis.dropped_min_side == len(draws) - len(rows)

    def test_inclusion_profile(self, make_dataset):
        data = make_dataset([-1.0, -0.7, -0.4, -0.2, 0.1, 0.4, 0.7, 1.0], y=np.arange(8.0))
        draws = [OrderedPartition((4, 4)), OrderedPartition((2, 4, 2))]
        analysis = analyze_draws(draws, data, min_side=0)
        assert analysis.anchor == 4
        assert analysis.inclusion_probability[4] == 1.0
        assert analysis.inclusion_probability[0] == 0.0
        assert analysis.inclusion_probability[2] == 0.5
        assert list(analysis.cluster_trace["num_clusters"]) == [2.0, 3.0]

    def test_no_draws(self, two_line_data):
        with pytest.raises(NoDraws):
            analyze_draws([], two_line_data)
