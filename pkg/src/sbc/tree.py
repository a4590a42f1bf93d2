"""Classical top-down decision tree plus extraction of positive-leaf boxes."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from sbc.core import Box, ConfigError, DomainError, split_gain_counts

__all__ = [
    "Leaf",
    "Internal",
    "TreeNode",
    "TreeConfig",
    "top_down_construct",
    "tree_predict",
    "tree_predict_batch",
    "positive_leaf_boxes",
    "tree_split_dims",
    "tree_to_records",
    "tree_from_records",
]


@dataclass(frozen=True)
class Leaf:
    label: int                 # argmax of counts, ties toward 0
    counts: tuple              # (n_neg, n_pos)


@dataclass(frozen=True)
class Internal:
    dim: int
    theta: float
    left: "TreeNode"
    right: "TreeNode"


TreeNode = Union[Leaf, Internal]


@dataclass(frozen=True)
class TreeConfig:
    """Construction parameters; ``mu`` features are tested per split."""

    feature_pool: tuple
    mu: int
    max_depth: Optional[int] = None
    min_samples_split: int = 2
    random_thresholds: bool = False  # extremely-randomized variant
    rng_seed: int = 0

    def __post_init__(self):
        pool = tuple(int(i) for i in self.feature_pool)
        if len(pool) != len(set(pool)):
            raise ConfigError(f"feature pool has repeated dims: {pool}")
        if not 1 <= self.mu <= len(pool):
            raise ConfigError(f"mu={self.mu} must be in [1, {len(pool)}]")
        if self.max_depth is not None and self.max_depth < 0:
            raise ConfigError("max_depth must be nonnegative")
        if self.min_samples_split < 2:
            raise ConfigError("min_samples_split must be >= 2")
        object.__setattr__(self, "feature_pool", pool)


def _make_leaf(y: np.ndarray) -> Leaf:
    n_pos = int(np.count_nonzero(y))
    n_neg = int(y.size - n_pos)
    return Leaf(label=1 if n_pos > n_neg else 0, counts=(n_neg, n_pos))


def _best_threshold_exact(col: np.ndarray, y: np.ndarray):
    """Best midpoint threshold for one feature; returns (gain, theta) or None.

    All candidate gains are evaluated with one cumulative sweep over the
    sorted column; ties within the column resolve to the smallest theta.
    """
    order = np.argsort(col, kind="stable")
    sv = col[order]
    sy = y[order]
    cut = np.flatnonzero(sv[:-1] != sv[1:])
    if cut.size == 0:
        return None
    n = y.size
    pos_total = int(np.count_nonzero(y))
    cum_pos = np.cumsum(sy, dtype=np.int64)
    left_n = (cut + 1).astype(np.float64)
    left_pos = cum_pos[cut].astype(np.float64)
    right_n = n - left_n
    right_pos = pos_total - left_pos
    q_parent = 2.0 * (pos_total / n) * (1.0 - pos_total / n)
    q_left = 2.0 * (left_pos / left_n) * (1.0 - left_pos / left_n)
    q_right = 2.0 * (right_pos / right_n) * (1.0 - right_pos / right_n)
    gains = q_parent - (left_n / n) * q_left - (right_n / n) * q_right
    best = int(np.argmax(gains))
    theta = 0.5 * (sv[cut[best]] + sv[cut[best] + 1])
    return float(gains[best]), float(theta)


def _split_candidates(X: np.ndarray, y: np.ndarray, dims: np.ndarray,
                      cfg: TreeConfig, rng: np.random.Generator):
    """Best (gain, dim, theta) over the sampled dims; None if no split exists."""
    best = None
    for dim in dims:
        col = X[:, dim]
        if cfg.random_thresholds:
            lo, hi = float(col.min()), float(col.max())
            if lo == hi:
                continue
            theta = rng.uniform(lo, hi)
            left = col <= theta
            n_left = int(np.count_nonzero(left))
            if n_left == 0 or n_left == y.size:
                continue
            lp = int(np.count_nonzero(y[left]))
            tp = int(np.count_nonzero(y))
            gain = split_gain_counts(n_left - lp, lp, (y.size - n_left) - (tp - lp), tp - lp)
            cand = (gain, float(theta))
        else:
            found = _best_threshold_exact(col, y)
            if found is None:
                continue
            cand = found
        gain, theta = cand
        if best is None or gain > best[0]:
            best = (gain, int(dim), theta)
    return best


def top_down_construct(features, labels, cfg: TreeConfig,
                       rng: Optional[np.random.Generator] = None) -> TreeNode:
    """Recursive top-down construction maximizing Gini gain at each node.

    At every node, ``cfg.mu`` features are sampled without replacement from the
    feature pool; candidate thresholds are midpoints between consecutive
    distinct sorted values. Recursion stops on purity, the depth cap, the
    minimum node size, or a best gain of zero.
    """
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.uint8)
    if y.size == 0:
        raise DomainError("cannot construct a tree over an empty set")
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed)
    pool = np.asarray(cfg.feature_pool, dtype=np.int64)

    def build(idx: np.ndarray, depth: int) -> TreeNode:
        ys = y[idx]
        n_pos = int(np.count_nonzero(ys))
        if n_pos == 0 or n_pos == ys.size:
            return _make_leaf(ys)
        if cfg.max_depth is not None and depth >= cfg.max_depth:
            return _make_leaf(ys)
        if ys.size < cfg.min_samples_split:
            return _make_leaf(ys)
        dims = rng.choice(pool, size=cfg.mu, replace=False)
        dims = np.sort(dims)  # lowest-dim tie-break across candidates
        best = _split_candidates(X[idx], ys, dims, cfg, rng)
        if best is None or best[0] <= 0.0:
            return _make_leaf(ys)
        _, dim, theta = best
        left_mask = X[idx, dim] <= theta
        left = build(idx[left_mask], depth + 1)
        right = build(idx[~left_mask], depth + 1)
        return Internal(dim=dim, theta=theta, left=left, right=right)

    return build(np.arange(y.size), 0)


def tree_predict(root: TreeNode, x) -> int:
    """Route a point top-down; x_dim <= theta goes left."""
    x = np.asarray(x, dtype=np.float64)
    node = root
    while isinstance(node, Internal):
        node = node.left if x[node.dim] <= node.theta else node.right
    return node.label


def tree_predict_batch(root: TreeNode, features) -> np.ndarray:
    """Vectorized tree_predict over the rows of ``features``."""
    X = np.asarray(features, dtype=np.float64)
    out = np.zeros(X.shape[0], dtype=np.uint8)

    def walk(node: TreeNode, idx: np.ndarray) -> None:
        if idx.size == 0:
            return
        if isinstance(node, Leaf):
            out[idx] = node.label
            return
        left = X[idx, node.dim] <= node.theta
        walk(node.left, idx[left])
        walk(node.right, idx[~left])

    walk(root, np.arange(X.shape[0]))
    return out


def positive_leaf_boxes(root: TreeNode, d: int) -> list:
    """One box per positive leaf, intersecting the root-to-leaf constraints.

    A dimension never split on the path stays unbounded. The returned boxes
    are pairwise disjoint because sibling subtrees partition space.
    """
    boxes = []

    def walk(node: TreeNode, lower: np.ndarray, upper: np.ndarray) -> None:
        if isinstance(node, Leaf):
            if node.label == 1:
                boxes.append(Box(lower.copy(), upper.copy()))
            return
        old = upper[node.dim]
        upper[node.dim] = min(old, node.theta)
        walk(node.left, lower, upper)
        upper[node.dim] = old
        old = lower[node.dim]
        lower[node.dim] = max(old, node.theta)
        walk(node.right, lower, upper)
        lower[node.dim] = old

    walk(root, np.full(d, -np.inf), np.full(d, np.inf))
    return boxes


def tree_split_dims(root: TreeNode) -> set:
    """Set of feature indices used by any internal node."""
    dims = set()
    stack = [root]
    while stack:
        node = stack.pop()
        if isinstance(node, Internal):
            dims.add(node.dim)
            stack.append(node.left)
            stack.append(node.right)
    return dims


def tree_to_records(root: TreeNode) -> list:
    """Preorder record stream: ('L', label, n_neg, n_pos) / ('I', dim, theta)."""
    records = []

    def walk(node: TreeNode) -> None:
        if isinstance(node, Leaf):
            records.append(("L", node.label, node.counts[0], node.counts[1]))
        else:
            records.append(("I", node.dim, node.theta))
            walk(node.left)
            walk(node.right)

    walk(root)
    return records


def tree_from_records(records) -> TreeNode:
    it = iter(records)

    def build() -> TreeNode:
        rec = next(it)
        if rec[0] == "L":
            return Leaf(label=int(rec[1]), counts=(int(rec[2]), int(rec[3])))
        if rec[0] == "I":
            dim, theta = int(rec[1]), float(rec[2])
            left = build()
            right = build()
            return Internal(dim=dim, theta=theta, left=left, right=right)
        raise DomainError(f"unknown tree record kind {rec[0]!r}")

    root = build()
    try:
        next(it)
    except StopIteration:
        return root
    raise DomainError("trailing records after tree reconstruction")
