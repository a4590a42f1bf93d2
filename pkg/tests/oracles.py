"""Independent reference implementations the tests check against.

Everything here is deliberately simple and scan-based; none of it shares code
with the package paths under test.
"""

import numpy as np


def gini_reference(labels) -> float:
    labels = list(labels)
    n = len(labels)
    total = 0.0
    for c in (0, 1):
        p = sum(1 for v in labels if v == c) / n
        total += p * (1 - p)
    return total


def split_gain_reference(labels_in, labels_out) -> float:
    labels_in = list(labels_in)
    labels_out = list(labels_out)
    whole = labels_in + labels_out
    n = len(whole)
    gain = gini_reference(whole)
    if labels_in:
        gain -= len(labels_in) / n * gini_reference(labels_in)
    if labels_out:
        gain -= len(labels_out) / n * gini_reference(labels_out)
    return gain


def axis_split_gain_reference(X, y, dim, theta) -> float:
    X = np.asarray(X)
    y = np.asarray(y)
    left = [int(v) for v, x in zip(y, X[:, dim]) if x <= theta]
    right = [int(v) for v, x in zip(y, X[:, dim]) if x > theta]
    return split_gain_reference(left, right)


def point_in_box_reference(lower, upper, point) -> bool:
    return all(lo < x <= hi for lo, hi, x in zip(lower, upper, point))


def box_filter_reference(lower, upper, X) -> np.ndarray:
    return np.asarray([point_in_box_reference(lower, upper, row) for row in X])


def tree_eval_reference(node, x):
    """Recursive evaluator over the Leaf/Internal node structure."""
    from sbc.tree import Leaf

    if isinstance(node, Leaf):
        return node.label
    if x[node.dim] <= node.theta:
        return tree_eval_reference(node.left, x)
    return tree_eval_reference(node.right, x)


def enumerate_best_split_reference(X, y, dims):
    """Exhaustive search over midpoint thresholds of the given dims,
    returning the maximal axis gain."""
    X = np.asarray(X)
    best = 0.0
    for dim in dims:
        values = sorted(set(X[:, dim]))
        for a, b in zip(values, values[1:]):
            gain = axis_split_gain_reference(X, y, dim, (a + b) / 2)
            best = max(best, gain)
    return best


def knn_reference(points, q, k):
    """Brute-force k nearest row indices by (distance, index)."""
    points = np.asarray(points)
    q = np.asarray(q)
    dist = ((points - q) ** 2).sum(axis=1)
    order = sorted(range(len(points)), key=lambda i: (dist[i], i))
    return np.asarray(order[:k])


def model_scan_reference(model, X):
    """Per-row union-of-positive-branches evaluation."""
    from sbc.core import box_contains

    out = []
    for x in np.asarray(X):
        hit = 0
        for br in model.branches:
            if box_contains(br.box, x) and tree_eval_reference(br.branch, x) == 1:
                hit = 1
                break
        out.append(hit)
    return np.asarray(out, dtype=np.uint8)
