import numpy as np
import pytest

from sbc.core import DomainError, box_contains
from sbc.tree import (
    Internal,
    Leaf,
    TreeConfig,
    positive_leaf_boxes,
    top_down_construct,
    tree_from_records,
    tree_predict,
    tree_predict_batch,
    tree_to_records,
)

from oracles import enumerate_best_split_reference, tree_eval_reference


def full_cfg(d, **kw):
    return TreeConfig(feature_pool=tuple(range(d)), mu=kw.pop("mu", d), **kw)


class TestConstruct:
    def test_pure_set_yields_single_leaf(self):
        X = np.zeros((4, 2))
        X[:, 0] = [1, 2, 3, 4]
        root = top_down_construct(X, [1, 1, 1, 1], full_cfg(2))
        assert isinstance(root, Leaf) and root.label == 1

    def test_two_opposite_points_single_split(self):
        X = np.array([[0.0], [1.0]])
        root = top_down_construct(X, [0, 1], full_cfg(1))
        assert isinstance(root, Internal)
        assert root.dim == 0 and root.theta == pytest.approx(0.5)
        assert isinstance(root.left, Leaf) and root.left.label == 0
        assert isinstance(root.right, Leaf) and root.right.label == 1

    def test_distinct_rows_reach_train_accuracy_one(self):
        rng = np.random.default_rng(5)
        X = rng.random((30, 4))
        y = rng.integers(0, 2, 30).astype(np.uint8)
        root = top_down_construct(X, y, full_cfg(4))
        assert np.array_equal(tree_predict_batch(root, X), y)

    def test_empty_set_rejected(self):
        with pytest.raises(DomainError):
            top_down_construct(np.empty((0, 2)), [], full_cfg(2))

    def test_depth_cap(self):
        rng = np.random.default_rng(2)
        X = rng.random((50, 3))
        y = rng.integers(0, 2, 50)
        root = top_down_construct(X, y, full_cfg(3, max_depth=1))

        def depth(node):
            if isinstance(node, Leaf):
                return 0
            return 1 + max(depth(node.left), depth(node.right))

        assert depth(root) <= 1

    def test_determinism(self):
        rng = np.random.default_rng(8)
        X = rng.random((40, 5))
        y = rng.integers(0, 2, 40)
        cfg = full_cfg(5, mu=2, rng_seed=123)
        assert tree_to_records(top_down_construct(X, y, cfg)) == \
            tree_to_records(top_down_construct(X, y, cfg))

    def test_gain_optimality_at_root(self):
        # chosen split must attain the exhaustive-enumeration maximum
        rng = np.random.default_rng(3)
        for trial in range(10):
            X = rng.random((25, 3))
            y = rng.integers(0, 2, 25)
            if len(set(y)) < 2:
                continue
            root = top_down_construct(X, y, full_cfg(3, max_depth=1))
            best = enumerate_best_split_reference(X, y, range(3))
            if isinstance(root, Leaf):
                assert best == pytest.approx(0.0, abs=1e-12)
            else:
                from sbc.core import axis_split_gain

                got = axis_split_gain(X, y, root.dim, root.theta)
                assert got == pytest.approx(best)

    def test_random_threshold_variant(self):
        rng = np.random.default_rng(4)
        X = rng.random((60, 3))
        y = (X[:, 1] > 0.5).astype(np.uint8)
        cfg = full_cfg(3, random_thresholds=True, rng_seed=9)
        root = top_down_construct(X, y, cfg)
        acc = (tree_predict_batch(root, X) == y).mean()
        assert acc == 1.0  # fully grown, distinct rows

    def test_leaf_tie_breaks_to_zero(self):
        X = np.array([[0.0], [0.0]])
        root = top_down_construct(X, [0, 1], full_cfg(1))
        assert isinstance(root, Leaf) and root.label == 0


class TestPredict:
    def test_single_leaf_constant(self):
        root = Leaf(label=1, counts=(0, 3))
        for x in ([0.0], [123.0]):
            assert tree_predict(root, x) == 1

    def test_boundary_goes_left(self):
        root = Internal(dim=0, theta=0.5,
                        left=Leaf(0, (1, 0)), right=Leaf(1, (0, 1)))
        assert tree_predict(root, [0.5, 9.0]) == 0
        assert tree_predict(root, [0.50001, 9.0]) == 1

    def test_matches_reference_evaluator(self):
        rng = np.random.default_rng(11)
        X = rng.random((80, 4))
        y = rng.integers(0, 2, 80)
        root = top_down_construct(X, y, full_cfg(4, mu=2, rng_seed=0))
        probe = rng.random((100, 4))
        batch = tree_predict_batch(root, probe)
        for i, x in enumerate(probe):
            assert tree_predict(root, x) == batch[i] == tree_eval_reference(root, x)


class TestPositiveLeafBoxes:
    def test_single_positive_leaf_unbounded(self):
        boxes = positive_leaf_boxes(Leaf(1, (0, 1)), d=3)
        assert len(boxes) == 1 and boxes[0].n_u == 3

    def test_single_negative_leaf_empty(self):
        assert positive_leaf_boxes(Leaf(0, (1, 0)), d=3) == []

    def test_two_feature_tree_boxes_match_predictions(self):
        # two positive leaves over two features, scan-checked on a grid
        root = Internal(
            dim=0, theta=0.5,
            left=Internal(dim=1, theta=0.3,
                          left=Leaf(1, (0, 5)), right=Leaf(0, (5, 0))),
            right=Leaf(1, (1, 9)),
        )
        boxes = positive_leaf_boxes(root, d=2)
        assert len(boxes) == 2
        grid = np.stack(np.meshgrid(np.linspace(-1, 2, 21),
                                    np.linspace(-1, 2, 21)), -1).reshape(-1, 2)
        for x in grid:
            hits = [box_contains(b, x) for b in boxes]
            if tree_predict(root, x) == 1:
                assert sum(hits) == 1
            else:
                assert sum(hits) == 0

    def test_partition_property_random_trees(self):
        rng = np.random.default_rng(21)
        for trial in range(5):
            X = rng.random((60, 3))
            y = rng.integers(0, 2, 60)
            root = top_down_construct(X, y, full_cfg(3, mu=2, rng_seed=trial))
            boxes = positive_leaf_boxes(root, d=3)
            probe = rng.random((200, 3)) * 2 - 0.5
            for x in probe:
                hits = sum(box_contains(b, x) for b in boxes)
                assert hits == (1 if tree_predict(root, x) == 1 else 0)


class TestRecords:
    def test_round_trip(self):
        rng = np.random.default_rng(14)
        X = rng.random((50, 3))
        y = rng.integers(0, 2, 50)
        root = top_down_construct(X, y, full_cfg(3))
        records = tree_to_records(root)
        rebuilt = tree_from_records(records)
        assert tree_to_records(rebuilt) == records
        probe = rng.random((40, 3))
        np.testing.assert_array_equal(
            tree_predict_batch(root, probe), tree_predict_batch(rebuilt, probe)
        )

    def test_trailing_records_rejected(self):
        with pytest.raises(DomainError):
            tree_from_records([("L", 1, 0, 1), ("L", 0, 1, 0)])
