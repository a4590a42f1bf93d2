"""Shared domain types and the impurity/gain math used by every construction scheme."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "DomainError",
    "ConfigError",
    "StorageError",
    "LabeledDataset",
    "Box",
    "FeatureSubset",
    "gini",
    "gini_counts",
    "split_gain",
    "split_gain_counts",
    "axis_split_gain",
    "box_contains",
    "box_mask",
]


class DomainError(ValueError):
    """Input violates an operation precondition."""


class ConfigError(ValueError):
    """Configuration values are inconsistent or out of range."""


class StorageError(OSError):
    """Reading or writing an on-disk artifact failed."""


def _as_features(features) -> np.ndarray:
    arr = np.ascontiguousarray(features, dtype=np.float64)
    if arr.ndim != 2:
        raise DomainError(f"features must be 2-D, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class LabeledDataset:
    """Feature matrix with binary labels and unique instance ids.

    A catalog is represented with an empty ``labels`` vector; query/training
    sets carry one label in {0, 1} per row.
    """

    features: np.ndarray  # (n, d) float64
    labels: np.ndarray    # (n,) uint8, or empty for catalogs
    ids: np.ndarray       # (n,) uint64

    def __post_init__(self):
        features = _as_features(self.features)
        labels = np.asarray(self.labels, dtype=np.uint8)
        ids = np.asarray(self.ids, dtype=np.uint64)
        n, d = features.shape
        if d < 1:
            raise DomainError("datasets need at least one feature dimension")
        if not np.all(np.isfinite(features)):
            raise DomainError("feature values must be finite")
        if labels.size and labels.shape != (n,):
            raise DomainError(f"labels length {labels.shape} does not match {n} rows")
        if labels.size and labels.max(initial=0) > 1:
            raise DomainError("labels must be binary (0/1)")
        if ids.shape != (n,):
            raise DomainError(f"ids length {ids.shape} does not match {n} rows")
        if np.unique(ids).size != n:
            raise DomainError("instance ids must be pairwise distinct")
        for arr, name in ((features, "features"), (labels, "labels"), (ids, "ids")):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def has_labels(self) -> bool:
        return self.labels.size > 0

    def positive_mask(self) -> np.ndarray:
        if not self.has_labels:
            raise DomainError("dataset carries no labels")
        return self.labels == 1

    def take(self, index) -> "LabeledDataset":
        labels = self.labels[index] if self.has_labels else self.labels
        return LabeledDataset(self.features[index], labels, self.ids[index])

    @staticmethod
    def catalog(features, ids) -> "LabeledDataset":
        features = _as_features(features)
        return LabeledDataset(features, np.empty(0, dtype=np.uint8), ids)


@dataclass(frozen=True)
class Box:
    """Axis-aligned half-open box (l_1, r_1] x ... x (l_d, r_d] with +-inf bounds."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=np.float64)
        upper = np.asarray(self.upper, dtype=np.float64)
        if lower.ndim != 1 or lower.shape != upper.shape:
            raise DomainError("box bounds must be 1-D arrays of equal length")
        if np.any(np.isnan(lower)) or np.any(np.isnan(upper)):
            raise DomainError("box bounds must not be NaN")
        if np.any(lower == np.inf) or np.any(upper == -np.inf):
            raise DomainError("lower bounds live in R u {-inf}, upper in R u {+inf}")
        if np.any(lower > upper):
            raise DomainError("box requires lower_i <= upper_i in every dimension")
        lower.setflags(write=False)
        upper.setflags(write=False)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def d(self) -> int:
        return self.lower.shape[0]

    def bounded_dims(self) -> np.ndarray:
        """Indices of (half-)bounded dimensions; their count is n_b."""
        return np.flatnonzero(np.isfinite(self.lower) | np.isfinite(self.upper))

    @property
    def n_b(self) -> int:
        return int(self.bounded_dims().size)

    @property
    def n_u(self) -> int:
        return self.d - self.n_b

    @staticmethod
    def unbounded(d: int) -> "Box":
        return Box(np.full(d, -np.inf), np.full(d, np.inf))

    def with_bounds(self, dim: int, lower: float, upper: float) -> "Box":
        lo = self.lower.copy()
        hi = self.upper.copy()
        lo[dim] = lower
        hi[dim] = upper
        return Box(lo, hi)

    def contains(self, point) -> bool:
        return box_contains(self, point)


@dataclass(frozen=True)
class FeatureSubset:
    """Ordered list of D distinct feature indices used by one index/box."""

    dims: tuple

    def __post_init__(self):
        dims = tuple(int(i) for i in self.dims)
        if len(dims) < 1:
            raise ConfigError("feature subset must contain at least one dimension")
        if len(set(dims)) != len(dims):
            raise ConfigError(f"feature subset has repeated dims: {dims}")
        if min(dims) < 0:
            raise ConfigError(f"feature indices must be nonnegative: {dims}")
        object.__setattr__(self, "dims", dims)

    @property
    def D(self) -> int:
        return len(self.dims)

    def validate_for(self, d: int) -> None:
        if max(self.dims) >= d:
            raise ConfigError(f"subset {self.dims} out of range for d={d}")


def gini_counts(n_neg: int, n_pos: int) -> float:
    """Gini impurity sum_c p_c (1 - p_c) from class counts."""
    total = n_neg + n_pos
    if total == 0:
        raise DomainError("gini of an empty set is undefined")
    p = n_pos / total
    return 2.0 * p * (1.0 - p)


def gini(labels) -> float:
    """Gini impurity of a non-empty binary label vector; result in [0, 0.5]."""
    y = np.asarray(labels)
    if y.size == 0:
        raise DomainError("gini of an empty set is undefined")
    if np.any((y != 0) & (y != 1)):
        raise DomainError("labels must be binary (0/1)")
    n_pos = int(np.count_nonzero(y))
    return gini_counts(y.size - n_pos, n_pos)


def split_gain_counts(in_neg: int, in_pos: int, out_neg: int, out_pos: int) -> float:
    """Impurity reduction of partitioning S into inside/outside, from counts.

    An empty part contributes zero weight (limit convention).
    """
    n_in = in_neg + in_pos
    n_out = out_neg + out_pos
    n = n_in + n_out
    if n == 0:
        raise DomainError("gain of an empty partition is undefined")
    g = gini_counts(in_neg + out_neg, in_pos + out_pos)
    if n_in:
        g -= (n_in / n) * gini_counts(in_neg, in_pos)
    if n_out:
        g -= (n_out / n) * gini_counts(out_neg, out_pos)
    return g


def split_gain(labels_in, labels_out) -> float:
    """Gini gain G(S) = Q(S) - |I|/|S| Q(I) - |O|/|S| Q(O) for S = I disjoint-union O."""
    yi = np.asarray(labels_in)
    yo = np.asarray(labels_out)
    for y in (yi, yo):
        if y.size and np.any((y != 0) & (y != 1)):
            raise DomainError("labels must be binary (0/1)")
    in_pos = int(np.count_nonzero(yi))
    out_pos = int(np.count_nonzero(yo))
    return split_gain_counts(yi.size - in_pos, in_pos, yo.size - out_pos, out_pos)


def axis_split_gain(features, labels, dim: int, theta: float) -> float:
    """Gain of the axis split x_dim <= theta versus x_dim > theta over S."""
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    if y.size == 0:
        raise DomainError("axis split gain of an empty set is undefined")
    left = X[:, dim] <= theta
    return split_gain(y[left], y[~left])


def box_contains(box: Box, point) -> bool:
    """True iff lower_i < x_i <= upper_i in every dimension."""
    x = np.asarray(point, dtype=np.float64)
    if x.shape != (box.d,):
        raise DomainError(f"point of dim {x.shape} does not match box dim {box.d}")
    return bool(np.all((x > box.lower) & (x <= box.upper)))


def box_mask(box: Box, features) -> np.ndarray:
    """Vectorized membership of each row of ``features`` in ``box``."""
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != box.d:
        raise DomainError(f"features of shape {X.shape} do not match box dim {box.d}")
    mask = np.ones(X.shape[0], dtype=bool)
    for dim in box.bounded_dims():
        col = X[:, dim]
        mask &= (col > box.lower[dim]) & (col <= box.upper[dim])
    return mask
