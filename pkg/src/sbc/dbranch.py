"""Bottom-up construction of decision branches: gain-maximal boxes grown
around positive instances, each paired with a small top-down subtree."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from sbc.core import (
    Box,
    ConfigError,
    DomainError,
    FeatureSubset,
    LabeledDataset,
    box_mask,
    split_gain_counts,
)
from sbc.tree import (
    Leaf,
    TreeConfig,
    TreeNode,
    top_down_construct,
    tree_from_records,
    tree_predict_batch,
    tree_split_dims,
    tree_to_records,
)

__all__ = [
    "VARIANTS",
    "DBranchConfig",
    "DecisionBranch",
    "DecisionBranchModel",
    "DBranchEnsemble",
    "fit_decision_branches",
    "greedy_max_gain_box",
    "initial_empty_box",
    "expand_box",
    "remove_instances",
    "model_predict",
    "model_predict_batch",
    "ensemble_fit",
    "ensemble_predict",
    "ensemble_predict_batch",
    "member_seed",
    "model_to_bytes",
    "model_from_bytes",
    "save_model",
    "load_model",
    "save_ensemble",
    "load_ensemble",
]

VARIANTS = ("B", "Ts", "Ta")


@dataclass(frozen=True)
class DBranchConfig:
    """Fit parameters: the k candidate feature subsets, how many of them are
    tried per box (p), the subtree variant, and the per-side sweep cap p_m."""

    subsets: tuple
    p: int
    mu: int = 1
    variant: str = "B"
    p_m: int = 20
    rng_seed: int = 0

    def __post_init__(self):
        subsets = tuple(self.subsets)
        if not subsets:
            raise ConfigError("at least one feature subset is required")
        sizes = {s.D for s in subsets}
        if len(sizes) != 1:
            raise ConfigError(f"all subsets must have equal size, got {sorted(sizes)}")
        if not 1 <= self.p <= len(subsets):
            raise ConfigError(f"p={self.p} must be in [1, k={len(subsets)}]")
        if self.p_m < 1:
            raise ConfigError("p_m must be >= 1")
        if self.mu < 1:
            raise ConfigError("mu must be >= 1")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}")
        object.__setattr__(self, "subsets", subsets)

    @property
    def k(self) -> int:
        return len(self.subsets)

    @property
    def D(self) -> int:
        return self.subsets[0].D


@dataclass(frozen=True)
class DecisionBranch:
    box: Box
    subset: FeatureSubset
    branch: TreeNode

    def __post_init__(self):
        bounded = set(int(i) for i in self.box.bounded_dims())
        allowed = set(self.subset.dims)
        if not bounded <= allowed:
            raise DomainError(
                f"box bounded on {sorted(bounded)} outside subset {self.subset.dims}"
            )


@dataclass(frozen=True)
class DecisionBranchModel:
    branches: tuple
    d: int

    def __post_init__(self):
        object.__setattr__(self, "branches", tuple(self.branches))


@dataclass(frozen=True)
class DBranchEnsemble:
    models: tuple

    def __post_init__(self):
        models = tuple(self.models)
        if not models:
            raise ConfigError("ensemble needs at least one model")
        object.__setattr__(self, "models", models)

    @property
    def M(self) -> int:
        return len(self.models)


def initial_empty_box(x_prime, features, f_s, rng: np.random.Generator) -> Box:
    """Box containing x_prime (plus coordinate duplicates on the f_s dims) and
    no other point, covering randomized empty space in the f_s dims.

    Dimensions are processed in f_s order; each bound lands uniformly at
    random between x_prime's coordinate and its nearest differing neighbor
    among the points still inside the partially built box.
    """
    X = np.asarray(features, dtype=np.float64)
    x_prime = np.asarray(x_prime, dtype=np.float64)
    d = X.shape[1]
    lower = np.full(d, -np.inf)
    upper = np.full(d, np.inf)
    inside = np.ones(X.shape[0], dtype=bool)
    for dim in f_s:
        col = X[inside, dim]
        xc = x_prime[dim]
        smaller = col[col < xc]
        larger = col[col > xc]
        if smaller.size:
            c_low = float(smaller.max())
            lo = c_low + rng.random() * (xc - c_low)  # in [c_low, xc)
            lower[dim] = lo if lo < xc else c_low     # rounding must not evict x_prime
        if larger.size:
            c_high = float(larger.min())
            hi = xc + rng.random() * (c_high - xc)    # in [xc, c_high)
            upper[dim] = hi if hi < c_high else xc
        inside &= (X[:, dim] > lower[dim]) & (X[:, dim] <= upper[dim])
    return Box(lower, upper)


def _side_candidates(x_coord: float, side_coords: np.ndarray, old_bound: float,
                     p_m: int, right: bool):
    """Candidate bounds for one side: the old bound, the position between
    x_prime and the closest side point, midpoints between the j-th and
    (j+1)-th closest, and +-inf past the last processed point.

    Candidates whose midpoint cannot realize the intended separation under
    (l, r] semantics (equal or float-adjacent coordinates) are dropped; the
    induced partition of every kept candidate is evaluated from the bound
    itself, so reported gains always match the actual box content.
    """
    bounds = [old_bound]
    m = side_coords.size
    if m == 0:
        bounds.append(np.inf if right else -np.inf)
        return bounds
    for j in range(min(p_m, m) + 1):
        if j == m:
            bounds.append(np.inf if right else -np.inf)
            continue
        a = x_coord if j == 0 else side_coords[j - 1]
        b = side_coords[j]
        mid = 0.5 * (a + b)
        if right:
            if mid >= b:
                continue  # would absorb the first excluded point
        else:
            if j == 0 and mid >= x_coord:
                continue  # would evict x_prime
        bounds.append(mid)
    return bounds


def expand_box(x_prime, features, labels, box: Box, dim: int, p_m: int) -> Box:
    """Re-place both bounds of ``box`` along ``dim`` at the gain-maximizing
    sweep positions; the left side first, then the right.

    Only points inside the box-with-dim-unbounded participate. Each side
    sweeps the points on that side of x_prime from the closest outward,
    processing at most p_m of them. The old bound is always a candidate, so
    the induced gain never decreases; gain ties prefer the wider box (full
    expansion into empty space).
    """
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.uint8)
    x_prime = np.asarray(x_prime, dtype=np.float64)
    lower = box.lower.copy()
    upper = box.upper.copy()
    n = X.shape[0]
    total_pos = int(np.count_nonzero(y))
    total_neg = n - total_pos
    xc = float(x_prime[dim])

    # S-bar: membership ignoring this dimension's bounds
    bar = np.ones(n, dtype=bool)
    for j in box.bounded_dims():
        if j == dim:
            continue
        colj = X[:, j]
        bar &= (colj > lower[j]) & (colj <= upper[j])
    col = X[:, dim]

    for right in (False, True):
        if right:
            base = bar & (col > lower[dim]) & (col <= xc)
            side = bar & (col > xc)
            order = np.argsort(col[side], kind="stable")
            old_bound = upper[dim]
        else:
            base = bar & (col >= xc) & (col <= upper[dim])
            side = bar & (col < xc)
            order = np.argsort(-col[side], kind="stable")
            old_bound = lower[dim]
        base_pos = int(np.count_nonzero(y[base]))
        base_neg = int(np.count_nonzero(base)) - base_pos
        side_coords = col[side][order]            # closest to x_prime first
        side_cum_pos = np.cumsum(y[side][order], dtype=np.int64)

        best_gain = -np.inf
        best_bound = old_bound
        for bound in _side_candidates(xc, side_coords, old_bound, p_m, right):
            if right:
                absorbed = int(np.searchsorted(side_coords, bound, side="right"))
            else:
                # descending order: absorbed points have coord > bound
                absorbed = int(np.searchsorted(-side_coords, -bound, side="left"))
            a_pos = int(side_cum_pos[absorbed - 1]) if absorbed else 0
            a_neg = absorbed - a_pos
            in_pos = base_pos + a_pos
            in_neg = base_neg + a_neg
            gain = split_gain_counts(
                in_neg, in_pos, total_neg - in_neg, total_pos - in_pos,
            )
            wider = (bound > best_bound) if right else (bound < best_bound)
            if gain > best_gain or (gain == best_gain and wider):
                best_gain = gain
                best_bound = bound
        if right:
            upper[dim] = best_bound
        else:
            lower[dim] = best_bound

    return Box(lower, upper)


def greedy_max_gain_box(features, labels, x_prime, subset: FeatureSubset,
                        p_m: int, rng: np.random.Generator):
    """Grow a box around x_prime over a random permutation of the subset dims;
    returns the box and the Gini gain of the induced inside/outside split."""
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.uint8)
    f_s = [int(i) for i in rng.permutation(np.asarray(subset.dims))]
    box = initial_empty_box(x_prime, X, f_s, rng)
    for dim in f_s:
        box = expand_box(x_prime, X, y, box, dim, p_m)
    inside = box_mask(box, X)
    in_pos = int(np.count_nonzero(y[inside]))
    in_neg = int(np.count_nonzero(inside)) - in_pos
    total_pos = int(np.count_nonzero(y))
    gain = split_gain_counts(
        in_neg, in_pos,
        (y.size - total_pos) - in_neg, total_pos - in_pos,
    )
    return box, gain


def remove_instances(dataset: LabeledDataset, box: Box):
    """Partition a dataset by box membership: (outside, inside)."""
    mask = box_mask(box, dataset.features)
    return dataset.take(~mask), dataset.take(mask)


def _check_conflicting_duplicates(X: np.ndarray, y: np.ndarray) -> None:
    # identical feature rows with differing labels make coverage unsatisfiable
    order = np.lexsort(X.T[::-1])
    Xs = X[order]
    ys = y[order]
    same = np.all(Xs[1:] == Xs[:-1], axis=1)
    if np.any(same & (ys[1:] != ys[:-1])):
        raise DomainError("duplicate feature rows with conflicting labels")


def _build_branch(X_r: np.ndarray, y_r: np.ndarray, subset: FeatureSubset,
                  cfg: DBranchConfig, d: int, rng: np.random.Generator) -> TreeNode:
    if cfg.variant == "B":
        n_pos = int(np.count_nonzero(y_r))
        n_neg = int(y_r.size - n_pos)
        return Leaf(label=1 if n_pos >= n_neg else 0, counts=(n_neg, n_pos))
    pool = subset.dims if cfg.variant == "Ts" else tuple(range(d))
    tree_cfg = TreeConfig(feature_pool=pool, mu=min(cfg.mu, len(pool)))
    return top_down_construct(X_r, y_r, tree_cfg, rng=rng)


def fit_decision_branches(dataset: LabeledDataset, cfg: DBranchConfig) -> DecisionBranchModel:
    """Repeatedly pick a remaining positive, grow the gain-maximal box over p
    sampled subsets, carve the covered instances out, and attach a branch
    subtree over them, until no positives remain."""
    if not dataset.has_labels:
        raise DomainError("fitting requires a labeled dataset")
    X = dataset.features
    y = dataset.labels
    d = dataset.d
    for s in cfg.subsets:
        s.validate_for(d)
    idx1 = np.flatnonzero(y == 1)
    idx0 = np.flatnonzero(y == 0)
    if idx1.size == 0:
        raise DomainError("at least one positive instance is required")
    _check_conflicting_duplicates(X, y)

    rng = np.random.default_rng(cfg.rng_seed)
    branches = []
    while idx1.size:
        pick = int(rng.integers(idx1.size))
        x_prime = X[idx1[pick]]
        sel = np.concatenate([idx0, idx1])
        X_s = X[sel]
        y_s = y[sel]
        chosen = rng.choice(cfg.k, size=cfg.p, replace=False)
        best_box = None
        best_gain = -np.inf
        best_subset = None
        for si in chosen:
            subset = cfg.subsets[int(si)]
            box, gain = greedy_max_gain_box(X_s, y_s, x_prime, subset, cfg.p_m, rng)
            if best_box is None or gain > best_gain:  # first-sampled wins ties
                best_box, best_gain, best_subset = box, gain, subset
        in1 = box_mask(best_box, X[idx1])
        in0 = box_mask(best_box, X[idx0])
        r_idx = np.concatenate([idx0[in0], idx1[in1]])
        idx0 = idx0[~in0]
        idx1 = idx1[~in1]
        branch = _build_branch(X[r_idx], y[r_idx], best_subset, cfg, d, rng)
        branches.append(DecisionBranch(box=best_box, subset=best_subset, branch=branch))
    return DecisionBranchModel(branches=tuple(branches), d=d)


def model_predict(model: DecisionBranchModel, x) -> int:
    """1 iff some branch box contains x and its subtree predicts 1."""
    x = np.asarray(x, dtype=np.float64)
    row = x.reshape(1, -1)
    for br in model.branches:
        if br.box.contains(x) and tree_predict_batch(br.branch, row)[0] == 1:
            return 1
    return 0


def model_predict_batch(model: DecisionBranchModel, features) -> np.ndarray:
    X = np.asarray(features, dtype=np.float64)
    out = np.zeros(X.shape[0], dtype=np.uint8)
    for br in model.branches:
        undecided = np.flatnonzero(out == 0)
        if undecided.size == 0:
            break
        inside = undecided[box_mask(br.box, X[undecided])]
        if inside.size == 0:
            continue
        preds = tree_predict_batch(br.branch, X[inside])
        out[inside[preds == 1]] = 1
    return out


def member_seed(rng_seed: int, index: int) -> int:
    """Deterministic per-member seed derived from the ensemble seed."""
    ss = np.random.SeedSequence(entropy=rng_seed, spawn_key=(index,))
    return int(ss.generate_state(1, np.uint64)[0])


def ensemble_fit(dataset: LabeledDataset, cfg: DBranchConfig, m: int) -> DBranchEnsemble:
    if m < 1:
        raise ConfigError("ensemble size must be >= 1")
    models = []
    for i in range(m):
        member_cfg = DBranchConfig(
            subsets=cfg.subsets, p=cfg.p, mu=cfg.mu, variant=cfg.variant,
            p_m=cfg.p_m, rng_seed=member_seed(cfg.rng_seed, i),
        )
        models.append(fit_decision_branches(dataset, member_cfg))
    return DBranchEnsemble(models=tuple(models))


def ensemble_predict(ens: DBranchEnsemble, x) -> int:
    votes = sum(model_predict(m, x) for m in ens.models)
    return 1 if 2 * votes > ens.M else 0


def ensemble_predict_batch(ens: DBranchEnsemble, features) -> np.ndarray:
    X = np.asarray(features, dtype=np.float64)
    votes = np.zeros(X.shape[0], dtype=np.int64)
    for m in ens.models:
        votes += model_predict_batch(m, X)
    return (2 * votes > ens.M).astype(np.uint8)


# --- model file format (versioned little-endian binary) ---

_MAGIC = b"SBCM"
_VERSION = 1
_VARIANT_CODE = {v: i for i, v in enumerate(VARIANTS)}


def _pack_tree(node: TreeNode) -> bytes:
    chunks = []
    records = tree_to_records(node)
    chunks.append(struct.pack("<I", len(records)))
    for rec in records:
        if rec[0] == "L":
            chunks.append(struct.pack("<BBII", 0, rec[1], rec[2], rec[3]))
        else:
            chunks.append(struct.pack("<BHd", 1, rec[1], rec[2]))
    return b"".join(chunks)


def _unpack_tree(buf: bytes, off: int):
    (count,) = struct.unpack_from("<I", buf, off)
    off += 4
    records = []
    for _ in range(count):
        (kind,) = struct.unpack_from("<B", buf, off)
        off += 1
        if kind == 0:
            label, n_neg, n_pos = struct.unpack_from("<BII", buf, off)
            off += 9
            records.append(("L", label, n_neg, n_pos))
        else:
            dim, theta = struct.unpack_from("<Hd", buf, off)
            off += 10
            records.append(("I", dim, theta))
    return tree_from_records(records), off


def model_to_bytes(model: DecisionBranchModel, cfg: Optional[DBranchConfig] = None) -> bytes:
    k = cfg.k if cfg is not None else 0
    variant = cfg.variant if cfg is not None else "B"
    seed = cfg.rng_seed if cfg is not None else 0
    D = model.branches[0].subset.D if model.branches else 0
    chunks = [
        _MAGIC,
        struct.pack(
            "<IIIIBQI", _VERSION, model.d, D, k,
            _VARIANT_CODE[variant], seed & 0xFFFFFFFFFFFFFFFF, len(model.branches),
        ),
    ]
    for br in model.branches:
        dims = br.subset.dims
        chunks.append(struct.pack("<H", len(dims)))
        chunks.append(struct.pack(f"<{len(dims)}H", *dims))
        chunks.append(br.box.lower.astype("<f8").tobytes())
        chunks.append(br.box.upper.astype("<f8").tobytes())
        chunks.append(_pack_tree(br.branch))
    return b"".join(chunks)


def model_from_bytes(buf: bytes, off: int = 0):
    if buf[off:off + 4] != _MAGIC:
        raise DomainError("not a decision-branch model blob")
    version, d, _D, _k, _variant, _seed, n_branches = struct.unpack_from("<IIIIBQI", buf, off + 4)
    if version != _VERSION:
        raise DomainError(f"unsupported model version {version}")
    off += 4 + struct.calcsize("<IIIIBQI")
    branches = []
    for _ in range(n_branches):
        (n_dims,) = struct.unpack_from("<H", buf, off)
        off += 2
        dims = struct.unpack_from(f"<{n_dims}H", buf, off)
        off += 2 * n_dims
        lower = np.frombuffer(buf, dtype="<f8", count=d, offset=off).copy()
        off += 8 * d
        upper = np.frombuffer(buf, dtype="<f8", count=d, offset=off).copy()
        off += 8 * d
        branch, off = _unpack_tree(buf, off)
        branches.append(
            DecisionBranch(box=Box(lower, upper), subset=FeatureSubset(dims), branch=branch)
        )
    return DecisionBranchModel(branches=tuple(branches), d=d), off


def save_model(model: DecisionBranchModel, path, cfg: Optional[DBranchConfig] = None) -> None:
    with open(path, "wb") as fh:
        fh.write(model_to_bytes(model, cfg))


def load_model(path) -> DecisionBranchModel:
    with open(path, "rb") as fh:
        buf = fh.read()
    model, _ = model_from_bytes(buf)
    return model


def save_ensemble(ens: DBranchEnsemble, path, cfg: Optional[DBranchConfig] = None) -> None:
    chunks = [b"SBCE", struct.pack("<II", _VERSION, ens.M)]
    for i, model in enumerate(ens.models):
        member_cfg = None
        if cfg is not None:
            member_cfg = DBranchConfig(
                subsets=cfg.subsets, p=cfg.p, mu=cfg.mu, variant=cfg.variant,
                p_m=cfg.p_m, rng_seed=member_seed(cfg.rng_seed, i),
            )
        chunks.append(model_to_bytes(model, member_cfg))
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


def load_ensemble(path) -> DBranchEnsemble:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != b"SBCE":
        raise DomainError(f"{path}: not an ensemble file")
    _version, m = struct.unpack_from("<II", buf, 4)
    off = 12
    models = []
    for _ in range(m):
        model, off = model_from_bytes(buf, off)
        models.append(model)
    return DBranchEnsemble(models=tuple(models))
