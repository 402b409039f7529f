# test_tally.py
import math

import numpy as np
import pytest

from lidarkit.errors import DomainError
from lidarkit.rng import RngStream, block_sizes
from lidarkit.tally import CATEGORIES, McTally, bin_index, order_ratios, score_block

LO = np.array([0.0, 10.0])
HI = np.array([10.0, 20.0])

# history, time, order, weight, in_d0
SAMPLE = (
    np.array([0, 0, 1, 2, 3]),
    np.array([5.0, 6.0, 15.0, 25.0, 12.0]),
    np.array([1, 2, 1, 3, 2]),
    np.array([1.0, 2.0, 3.0, 4.0, 5.0]),
    np.array([False, True, False, False, False]),
)


def random_tally(seed: int, n_histories: int = 50) -> McTally:
    rng = np.random.default_rng(seed)
    n = 200
    history = rng.integers(0, n_histories, n)
    time = rng.uniform(0.0, 22.0, n)
    order = rng.integers(1, 5, n)
    weight = rng.exponential(1e-3, n)
    in_d0 = rng.random(n) < 0.5
    return McTally.from_detections(LO, HI, n_histories, history, time, order, weight, in_d0)


# ---- rng ----


class TestRng:
    def test_same_stream_same_draws(self):
        a = RngStream(42, 3).generator().random(100)
        b = RngStream(42, 3).generator().random(100)
        assert np.array_equal(a, b)

    def test_streams_differ(self):
        a = RngStream(42, 3).generator().random(100)
        b = RngStream(42, 4).generator().random(100)
        c = RngStream(43, 3).generator().random(100)
        assert not np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_negative_seed(self):
        with pytest.raises(DomainError):
            RngStream(-1, 0)

    @pytest.mark.parametrize(("n", "blocks"), [(10, 3), (5, 8), (100, 1), (16, 16)])
    def test_block_sizes(self, n, blocks):
        sizes = block_sizes(n, blocks)
        assert sum(sizes) == n
        assert len(sizes) == min(n, blocks)
        assert max(sizes) - min(sizes) <= 1
        assert sizes == sorted(sizes, reverse=True)

    def test_block_sizes_rejects_empty(self):
        with pytest.raises(DomainError):
            block_sizes(0, 4)


# ---- binning ----


def test_bin_index_with_gaps():
    lo = np.array([0.0, 10.0, 22.0])
    hi = np.array([10.0, 20.0, 30.0])
    times = [-1.0, 0.0, 9.999, 10.0, 20.0, 25.0, 30.0]
    assert bin_index(times, lo, hi).tolist() == [-1, 0, 0, 1, -1, 2, -1]


# ---- McTally ----


class TestMcTally:
    def test_weight_sums_by_category(self):
        tally = McTally.from_detections(LO, HI, 4, *SAMPLE)
        assert tally.weight_sum("1").tolist() == [1.0, 3.0]
        assert tally.weight_sum("2").tolist() == [2.0, 5.0]
        assert tally.weight_sum("3+").tolist() == [0.0, 0.0]
        assert tally.weight_sum("2:D0").tolist() == [2.0, 0.0]
        assert tally.weight_sum("2:outside").tolist() == [0.0, 5.0]
        assert tally.weight_sum("total").tolist() == [3.0, 8.0]

    def test_counts(self):
        tally = McTally.from_detections(LO, HI, 4, *SAMPLE)
        assert tally.counts("total").tolist() == [2, 2]
        assert tally.counts("2").tolist() == [1, 1]
        assert tally.counts("3+").tolist() == [0, 0]

    def test_rate_per_history_per_time(self):
        tally = McTally.from_detections(LO, HI, 4, *SAMPLE)
        assert tally.rate("1") == pytest.approx([0.025, 0.075])
        assert tally.n_histories == 4
        assert tally.widths.tolist() == [10.0, 10.0]

    def test_stderr_uses_per_history_sums(self):
        tally = McTally.from_detections(LO, HI, 4, *SAMPLE)
        # history 0 scores 1 + 2 in the first bin's total
        assert tally.stderr("1")[0] == pytest.approx(math.sqrt((1.0 - 1.0 / 4.0) / 3.0 / 4.0) / 10.0)
        assert tally.stderr("total")[0] == pytest.approx(math.sqrt((9.0 - 9.0 / 4.0) / 3.0 / 4.0) / 10.0)

    def test_stderr_batch_means(self):
        first = McTally.from_detections(LO, HI, 4, *SAMPLE)
        second = random_tally(1, n_histories=6)
        merged = first.merge(second)
        s1, s2 = first.weight_sum("2")[1], second.weight_sum("2")[1]
        n, s = 10, s1 + s2
        spread = (s1 * s1 / 4 + s2 * s2 / 6 - s * s / n) / 1
        assert merged.stderr("2")[1] == pytest.approx(math.sqrt(max(spread, 0.0) / n) / 10.0)

    def test_total_is_sum_of_orders(self):
        tally = random_tally(3).merge(random_tally(4))
        orders = tally.rate("1") + tally.rate("2") + tally.rate("3+")
        assert np.array_equal(tally.rate("total"), orders)
        assert tally.rate("total") == pytest.approx(tally.weight_sum("total") / (tally.n_histories * tally.widths))

    def test_d0_split_covers_order_two(self):
        tally = random_tally(5)
        split = tally.weight_sum("2:D0") + tally.weight_sum("2:outside")
        assert split == pytest.approx(tally.weight_sum("2"), rel=1e-14)

    def test_merge_is_associative_and_commutative(self):
        a, b, c = random_tally(10), random_tally(11), random_tally(12)
        left = a.merge(b).merge(c)
        right = a.merge(b.merge(c))
        swapped = c.merge(a).merge(b)
        for category in CATEGORIES:
            assert np.array_equal(left.rate(category), right.rate(category))
            assert np.array_equal(left.rate(category), swapped.rate(category))
            assert np.array_equal(left.stderr(category), right.stderr(category))

    def test_merge_rejects_other_bins(self):
        other = McTally(np.array([0.0, 5.0]), np.array([5.0, 20.0]))
        with pytest.raises(DomainError):
            random_tally(1).merge(other)

    def test_empty_tally(self):
        tally = McTally(LO, HI)
        assert tally.rate("2").tolist() == [0.0, 0.0]
        assert tally.stderr("2").tolist() == [0.0, 0.0]

    def test_unknown_category(self):
        with pytest.raises(DomainError):
            random_tally(1).rate("4")

    @pytest.mark.parametrize(("lo", "hi"), [([0.0, 5.0], [6.0, 10.0]), ([0.0], [0.0]), ([], [])])
    def test_rejects_bad_bins(self, lo, hi):
        with pytest.raises(DomainError):
            McTally(np.array(lo), np.array(hi))

    def test_order_ratios(self):
        tally = McTally.from_detections(LO, HI, 4, *SAMPLE)
        ratios = order_ratios(tally)
        assert ratios["2/1"] == pytest.approx([2.0, 5.0 / 3.0])
        assert ratios["3+/2"].tolist() == [0.0, 0.0]

    def test_order_ratio_undefined_without_order_one(self):
        tally = McTally.from_detections(LO, HI, 2, [0], [5.0], [2], [1.0], [True])
        assert np.isnan(order_ratios(tally)["2/1"]).all()


def test_score_block_drops_out_of_range():
    block = score_block(LO, HI, 4, *SAMPLE)
    assert block.counts.sum() == 4 + 2 + 4  # orders, order-2 split, totals
    assert block.sum_w.shape == (len(CATEGORIES), 2)
