import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sbc.core import (
    Box,
    DomainError,
    FeatureSubset,
    LabeledDataset,
    axis_split_gain,
    box_contains,
    box_mask,
    gini,
    split_gain,
)

from oracles import (
    axis_split_gain_reference,
    box_filter_reference,
    gini_reference,
    split_gain_reference,
)

labels_strategy = st.lists(st.integers(0, 1), min_size=1, max_size=60)


class TestGini:
    def test_pure_set(self):
        assert gini([1, 1, 1]) == 0.0

    def test_half_half_is_maximal(self):
        assert gini([0, 1]) == 0.5

    def test_three_one_split(self):
        # hand evaluation: 2 * (3/4) * (1/4) = 0.375
        assert gini([0, 0, 0, 1]) == pytest.approx(0.375)

    def test_empty_rejected(self):
        with pytest.raises(DomainError):
            gini([])

    def test_nonbinary_rejected(self):
        with pytest.raises(DomainError):
            gini([0, 2])

    @given(labels_strategy)
    def test_matches_reference(self, labels):
        assert gini(labels) == pytest.approx(gini_reference(labels))

    @given(labels_strategy)
    def test_permutation_invariant(self, labels):
        assert gini(labels) == pytest.approx(gini(labels[::-1]))

    @given(labels_strategy)
    def test_label_flip_symmetric(self, labels):
        flipped = [1 - v for v in labels]
        assert gini(labels) == pytest.approx(gini(flipped))

    @given(labels_strategy)
    def test_range(self, labels):
        assert 0.0 <= gini(labels) <= 0.5


class TestSplitGain:
    def test_pure_parts(self):
        assert split_gain([1, 1], [0, 0]) == pytest.approx(0.5)

    def test_identical_composition_zero(self):
        assert split_gain([0, 1], [0, 1]) == pytest.approx(0.0)

    def test_uneven_parts(self):
        # frozen from the reference formula: Q(S)=0.5, Q(I)=0, Q(O)=4/9
        assert split_gain_reference([1], [0, 0, 1]) == pytest.approx(1 / 6)
        assert split_gain([1], [0, 0, 1]) == pytest.approx(1 / 6)

    def test_both_empty_rejected(self):
        with pytest.raises(DomainError):
            split_gain([], [])

    def test_one_empty_part_is_identity(self):
        assert split_gain([0, 1, 1], []) == pytest.approx(0.0)

    @given(labels_strategy, labels_strategy)
    def test_matches_reference(self, a, b):
        assert split_gain(a, b) == pytest.approx(split_gain_reference(a, b))

    @given(labels_strategy, labels_strategy)
    def test_any_partition_nonnegative(self, a, b):
        assert split_gain(a, b) >= -1e-12

    @given(st.lists(st.integers(0, 1), min_size=1, max_size=30))
    def test_pure_part_vs_rest(self, rest):
        assert split_gain([1, 1, 1], rest) >= -1e-12


class TestAxisSplitGain:
    def test_perfect_split(self):
        X = np.array([[0.0], [1.0]])
        assert axis_split_gain(X, [0, 1], 0, 0.5) == pytest.approx(0.5)

    def test_threshold_below_min_is_zero(self):
        X = np.array([[0.3], [0.9], [0.5]])
        assert axis_split_gain(X, [0, 1, 1], 0, 0.0) == pytest.approx(0.0)

    def test_random_points_match_filter_oracle(self):
        rng = np.random.default_rng(7)
        X = rng.random((12, 3))
        y = rng.integers(0, 2, 12)
        for dim in range(3):
            for theta in (0.2, 0.5, 0.8):
                assert axis_split_gain(X, y, dim, theta) == pytest.approx(
                    axis_split_gain_reference(X, y, dim, theta)
                )

    def test_empty_rejected(self):
        with pytest.raises(DomainError):
            axis_split_gain(np.empty((0, 2)), [], 0, 0.5)


class TestBox:
    def test_fully_unbounded_contains_anything(self):
        box = Box.unbounded(3)
        assert box_contains(box, [1e308, -1e308, 0.0])
        assert box.n_b == 0 and box.n_u == 3

    def test_lower_bound_is_open(self):
        box = Box(np.array([0.0]), np.array([1.0]))
        assert not box_contains(box, [0.0])

    def test_upper_bound_is_closed(self):
        box = Box(np.array([0.0]), np.array([1.0]))
        assert box_contains(box, [1.0])

    def test_dimension_mismatch_rejected(self):
        box = Box.unbounded(2)
        with pytest.raises(DomainError):
            box_contains(box, [1.0, 2.0, 3.0])

    def test_inverted_bounds_rejected(self):
        with pytest.raises(DomainError):
            Box(np.array([1.0]), np.array([0.0]))

    def test_empty_slab_allowed_and_empty(self):
        box = Box(np.array([0.5]), np.array([0.5]))
        assert not box_contains(box, [0.5])

    def test_bounded_dims_counts_half_bounded(self):
        box = Box(np.array([-np.inf, 0.0, -np.inf]), np.array([1.0, np.inf, np.inf]))
        assert sorted(box.bounded_dims()) == [0, 1]
        assert box.n_b == 2 and box.n_u == 1

    @settings(max_examples=60)
    @given(st.integers(0, 10_000))
    def test_mask_matches_interval_oracle(self, seed):
        rng = np.random.default_rng(seed)
        d = int(rng.integers(1, 5))
        lower = np.where(rng.random(d) < 0.3, -np.inf, rng.random(d) - 0.5)
        finite_lower = np.where(np.isfinite(lower), lower, 0.0)
        upper = np.where(rng.random(d) < 0.3, np.inf, finite_lower + rng.random(d))
        box = Box(lower, upper)
        X = rng.random((40, d))
        np.testing.assert_array_equal(
            box_mask(box, X), box_filter_reference(box.lower, box.upper, X)
        )


class TestLabeledDataset:
    def test_basic_invariants(self):
        ds = LabeledDataset(np.zeros((3, 2)), [0, 1, 0], [5, 6, 7])
        assert ds.n == 3 and ds.d == 2 and ds.has_labels

    def test_catalog_without_labels(self):
        ds = LabeledDataset.catalog(np.zeros((3, 2)), [5, 6, 7])
        assert not ds.has_labels

    def test_duplicate_ids_rejected(self):
        with pytest.raises(DomainError):
            LabeledDataset(np.zeros((2, 1)), [0, 1], [4, 4])

    def test_nonfinite_features_rejected(self):
        with pytest.raises(DomainError):
            LabeledDataset(np.array([[np.nan]]), [1], [0])
        with pytest.raises(DomainError):
            LabeledDataset(np.array([[np.inf]]), [1], [0])

    def test_multiclass_rejected(self):
        with pytest.raises(DomainError):
            LabeledDataset(np.zeros((2, 1)), [0, 2], [0, 1])

    def test_length_mismatch_rejected(self):
        with pytest.raises(DomainError):
            LabeledDataset(np.zeros((2, 1)), [0], [0, 1])


class TestFeatureSubset:
    def test_valid(self):
        s = FeatureSubset((4, 1, 9))
        assert s.D == 3

    def test_repeats_rejected(self):
        from sbc.core import ConfigError

        with pytest.raises(ConfigError):
            FeatureSubset((1, 1))

    def test_range_validation(self):
        from sbc.core import ConfigError

        with pytest.raises(ConfigError):
            FeatureSubset((0, 5)).validate_for(3)
