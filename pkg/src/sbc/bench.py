"""Benchmark harness: one-vs-all imbalanced tasks, F1 scoring, tree-based
baselines, the NNB baseline, and the index scaling/leaf-size experiments."""

from __future__ import annotations

import csv
import json
import math
import os
import tempfile
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from sbc.core import Box, DomainError, FeatureSubset, LabeledDataset
from sbc.dbranch import (
    DBranchConfig,
    ensemble_fit,
    ensemble_predict_batch,
    fit_decision_branches,
    model_predict_batch,
)
from sbc.engine import sample_feature_subsets
from sbc.kdindex import build_index, knn_query, range_query
from sbc.tree import TreeConfig, top_down_construct, tree_predict_batch

__all__ = [
    "DatasetUnavailable",
    "BenchTask",
    "BenchReport",
    "precision_recall_f1",
    "f1_score",
    "f1_from_predictions",
    "load_dataset",
    "make_tasks",
    "nnb_evaluate",
    "run_benchmark",
    "scaling_experiment",
    "fit_loglog_slope",
    "leaf_size_experiment",
    "write_report_csv",
]

DATA_DIR_ENV = "SBC_DATA_DIR"

KNOWN_DATASETS = ("iris", "digits", "satimage", "letter", "covtype")


class DatasetUnavailable(RuntimeError):
    """The named dataset cannot be loaded in this environment."""


def precision_recall_f1(tp: int, fp: int, fn: int):
    if min(tp, fp, fn) < 0:
        raise DomainError("confusion counts must be nonnegative")
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall == 0.0:
        return precision, recall, 0.0
    return precision, recall, 2.0 * precision * recall / (precision + recall)


def f1_score(tp: int, fp: int, fn: int) -> float:
    return precision_recall_f1(tp, fp, fn)[2]


def f1_from_predictions(y_true, y_pred) -> float:
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    tp = int(np.count_nonzero((y_true == 1) & (y_pred == 1)))
    fp = int(np.count_nonzero((y_true == 0) & (y_pred == 1)))
    fn = int(np.count_nonzero((y_true == 1) & (y_pred == 0)))
    return f1_score(tp, fp, fn)


# --- datasets ---

def load_dataset(name: str, data_dir: Optional[str] = None):
    """Return (features, multiclass labels) for a roster dataset.

    iris and digits ship with scikit-learn; satimage, letter, and covtype are
    fetched from openml/sklearn mirrors when the network allows, or read from
    ``<data_dir>/<name>.csv`` (feature columns plus a ``label`` column).
    """
    if name not in KNOWN_DATASETS:
        raise DatasetUnavailable(
            f"unknown dataset {name!r}; known names: {', '.join(KNOWN_DATASETS)}"
        )
    if data_dir is None:
        data_dir = os.environ.get(DATA_DIR_ENV)
    if name == "iris":
        from sklearn.datasets import load_iris

        data = load_iris()
        return np.asarray(data.data, dtype=np.float64), np.asarray(data.target)
    if name == "digits":
        from sklearn.datasets import load_digits

        data = load_digits()
        return np.asarray(data.data, dtype=np.float64), np.asarray(data.target)

    if data_dir:
        local = Path(data_dir) / f"{name}.csv"
        if local.exists():
            return _read_label_csv(local)
    try:
        if name == "covtype":
            from sklearn.datasets import fetch_covtype

            data = fetch_covtype()
            X = np.asarray(data.data, dtype=np.float64)
            y = np.asarray(data.target)
        else:
            from sklearn.datasets import fetch_openml

            data = fetch_openml(name=name, version=1, as_frame=False, parser="auto")
            X = np.asarray(data.data, dtype=np.float64)
            y = data.target
            _, y = np.unique(y, return_inverse=True)
    except Exception as exc:
        raise DatasetUnavailable(
            f"dataset {name!r} needs a network download or a local file "
            f"{name}.csv under ${DATA_DIR_ENV}: {exc}"
        ) from exc
    return X, np.asarray(y)


def _read_label_csv(path: Path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        label_col = header.index("label")
        feat_cols = [i for i in range(len(header)) if i != label_col]
        rows, labels = [], []
        for row in reader:
            if not row:
                continue
            rows.append([float(row[i]) for i in feat_cols])
            labels.append(row[label_col])
    X = np.asarray(rows, dtype=np.float64)
    _, y = np.unique(labels, return_inverse=True)
    return X, y


# --- one-vs-all task construction ---

@dataclass(frozen=True)
class BenchTask:
    dataset: str
    positive_class: int
    train_idx: np.ndarray
    train_labels: np.ndarray   # binary, aligned with train_idx
    val_idx: np.ndarray
    test_idx: np.ndarray
    n_pos_train: int
    seed: int


def make_tasks(name: str, X: np.ndarray, y: np.ndarray, n_pos: int = 30,
               seeds=(0, 1, 2)) -> list:
    """One task per (class, seed): exactly ``n_pos`` train positives, train
    negatives drawn per class in proportion (n_pos / n_cp) * n_cn, and the
    remainder split into (almost) equal validation/test sets (odd remainder
    goes to test)."""
    classes = np.unique(y)
    tasks = []
    for seed in seeds:
        for ci, c_p in enumerate(classes):
            pos_idx = np.flatnonzero(y == c_p)
            if pos_idx.size < n_pos:
                warnings.warn(
                    f"{name}: class {c_p} has {pos_idx.size} < {n_pos} instances; skipped"
                )
                continue
            rng = np.random.default_rng([seed, ci, 9173])
            train_pos = rng.choice(pos_idx, size=n_pos, replace=False)
            train_neg_parts = []
            for c_n in classes:
                if c_n == c_p:
                    continue
                neg_idx = np.flatnonzero(y == c_n)
                m = int(round(n_pos / pos_idx.size * neg_idx.size))
                m = min(m, neg_idx.size)
                if m > 0:
                    train_neg_parts.append(rng.choice(neg_idx, size=m, replace=False))
            train_neg = np.concatenate(train_neg_parts) if train_neg_parts \
                else np.empty(0, dtype=np.int64)
            train_idx = np.concatenate([train_pos, train_neg])
            train_labels = np.concatenate([
                np.ones(train_pos.size, dtype=np.uint8),
                np.zeros(train_neg.size, dtype=np.uint8),
            ])
            rest = np.setdiff1d(np.arange(y.size), train_idx)
            rest = rng.permutation(rest)
            n_val = rest.size // 2
            tasks.append(BenchTask(
                dataset=name,
                positive_class=int(c_p),
                train_idx=train_idx,
                train_labels=train_labels,
                val_idx=rest[:n_val],
                test_idx=rest[n_val:],
                n_pos_train=n_pos,
                seed=int(seed),
            ))
    return tasks


# --- models under benchmark ---

def _dbranch_hyper(d: int, params: dict, seed: int):
    tau = params.get("tau", 2.0)
    D = min(int(params.get("D", 10)), d)
    k = max(1, int(round(d * tau)))
    policy = params.get("p_policy", "sqrt")
    if policy == "one":
        p = 1
    elif policy == "all":
        p = k
    else:
        p = max(1, int(round(math.sqrt(k))))
    subsets = sample_feature_subsets(d, D, k, np.random.default_rng([seed, 71]))
    return DBranchConfig(
        subsets=subsets,
        p=min(p, k),
        mu=int(params.get("mu", 1)),
        variant=params.get("variant", "B"),
        p_m=int(params.get("p_m", 20)),
        rng_seed=seed,
    )


def _forest_predict(trees, X) -> np.ndarray:
    votes = np.zeros(X.shape[0], dtype=np.int64)
    for tree in trees:
        votes += tree_predict_batch(tree, X)
    return (2 * votes > len(trees)).astype(np.uint8)


def _fit_model(kind: str, params: dict, X_tr, y_tr, seed: int):
    """Fit one benchmark model; returns (predict_fn, model_size)."""
    d = X_tr.shape[1]
    rng = np.random.default_rng([seed, 37])
    if kind == "dbranch":
        cfg = _dbranch_hyper(d, params, seed)
        m = int(params.get("M", 1))
        if m > 1:
            ens = ensemble_fit(LabeledDataset(X_tr, y_tr, np.arange(len(y_tr))), cfg, m)
            size = sum(len(model.branches) for model in ens.models)
            return (lambda X: ensemble_predict_batch(ens, X)), size, cfg.D
        model = fit_decision_branches(
            LabeledDataset(X_tr, y_tr, np.arange(len(y_tr))), cfg
        )
        return (lambda X: model_predict_batch(model, X)), len(model.branches), cfg.D
    if kind in ("dtree", "rforest", "extrees"):
        n_feats = params.get("features")
        if n_feats:
            pool = tuple(sorted(rng.choice(d, size=min(int(n_feats), d), replace=False)))
        else:
            pool = tuple(range(d))
        if kind == "dtree":
            mu = len(pool)
            cfg = TreeConfig(
                feature_pool=pool, mu=mu,
                max_depth=params.get("max_depth"), rng_seed=seed,
            )
            tree = top_down_construct(X_tr, y_tr, cfg)
            return (lambda X: tree_predict_batch(tree, X)), _tree_size(tree), len(pool)
        m = int(params.get("M", 25))
        mu = max(1, int(round(math.sqrt(len(pool)))))
        trees = []
        for i in range(m):
            t_rng = np.random.default_rng([seed, 507, i])
            if kind == "rforest":
                boot = t_rng.integers(len(y_tr), size=len(y_tr))
                Xb, yb = X_tr[boot], y_tr[boot]
            else:
                Xb, yb = X_tr, y_tr
            cfg = TreeConfig(
                feature_pool=pool, mu=mu,
                max_depth=params.get("max_depth"),
                random_thresholds=(kind == "extrees"),
            )
            trees.append(top_down_construct(Xb, yb, cfg, rng=t_rng))
        return (lambda X: _forest_predict(trees, X)), \
            sum(_tree_size(t) for t in trees), len(pool)
    raise DomainError(f"unknown model kind {kind!r}")


def _tree_size(node) -> int:
    from sbc.tree import Internal

    if isinstance(node, Internal):
        return 1 + _tree_size(node.left) + _tree_size(node.right)
    return 1


def _grid_combos(grid: dict):
    if not grid:
        return [{}]
    keys = sorted(grid)
    combos = [{}]
    for key in keys:
        combos = [dict(c, **{key: v}) for c in combos for v in grid[key]]
    return combos


def nnb_evaluate(X: np.ndarray, task: BenchTask, y_multiclass: np.ndarray,
                 mode: str = "scan",
                 subset: Optional[FeatureSubset] = None) -> float:
    """Nearest-neighbor baseline: every train positive runs one K-NN search
    over the test set with K equal to the true positive count there; the
    reported score is the mean F1 over those single-instance searches."""
    eval_idx = task.test_idx
    y_eval = (y_multiclass[eval_idx] == task.positive_class).astype(np.uint8)
    n_pos_eval = int(np.count_nonzero(y_eval))
    if n_pos_eval == 0:
        raise DomainError("NNB is undefined on an evaluation set with zero positives")
    dims = subset.dims if subset is not None else tuple(range(X.shape[1]))
    X_eval = X[np.ix_(eval_idx, np.asarray(dims))]
    queries = X[np.ix_(task.train_idx[task.train_labels == 1], np.asarray(dims))]

    index = None
    if mode == "index":
        with tempfile.TemporaryDirectory() as tmp:
            index = build_index(
                X_eval, np.arange(X_eval.shape[0]), FeatureSubset(tuple(range(len(dims)))),
                leaf_size=max(1, min(64, X_eval.shape[0])), layout="Ts",
                path=Path(tmp) / "nnb",
            )
            return _nnb_mean_f1(queries, X_eval, y_eval, n_pos_eval, index)
    return _nnb_mean_f1(queries, X_eval, y_eval, n_pos_eval, None)


def _nnb_mean_f1(queries, X_eval, y_eval, k: int, index) -> float:
    scores = []
    for q in queries:
        if index is not None:
            nn = knn_query(index, q, k)
        else:
            dist = np.einsum("ij,ij->i", X_eval - q, X_eval - q)
            nn = np.lexsort((np.arange(dist.size), dist))[:k]
        pred = np.zeros(y_eval.size, dtype=np.uint8)
        pred[np.asarray(nn, dtype=np.int64)] = 1
        scores.append(f1_from_predictions(y_eval, pred))
    return float(np.mean(scores))


# --- benchmark driver ---

@dataclass
class BenchReport:
    rows: list = field(default_factory=list)
    config: dict = field(default_factory=dict)


def _evaluate_task(kind: str, model_spec: dict, task: BenchTask,
                   X: np.ndarray, y: np.ndarray):
    """One (model, task) cell: grid-search on validation, score on test."""
    if kind == "nnb":
        t0 = time.perf_counter()
        f1 = nnb_evaluate(X, task, y, mode=model_spec.get("mode", "scan"))
        return f1, 0.0, time.perf_counter() - t0, {}
    X_tr = X[task.train_idx]
    y_tr = task.train_labels
    y_val = (y[task.val_idx] == task.positive_class).astype(np.uint8)
    y_test = (y[task.test_idx] == task.positive_class).astype(np.uint8)
    base = {k_: v for k_, v in model_spec.items()
            if k_ not in ("name", "kind", "grid")}
    candidates = []
    for order, combo in enumerate(_grid_combos(model_spec.get("grid", {}))):
        params = dict(base, **combo)
        t0 = time.perf_counter()
        predict, size, D_used = _fit_model(kind, params, X_tr, y_tr, task.seed)
        t_fit = time.perf_counter() - t0
        val_f1 = f1_from_predictions(y_val, predict(X[task.val_idx]))
        candidates.append((-val_f1, size, D_used, order, predict, t_fit, params))
    candidates.sort(key=lambda c: c[:4])
    _, _, _, _, predict, t_fit, params = candidates[0]
    t0 = time.perf_counter()
    test_pred = predict(X[task.test_idx])
    t_query = time.perf_counter() - t0
    return f1_from_predictions(y_test, test_pred), t_fit, t_query, params


def run_benchmark(config: dict, data_dir: Optional[str] = None,
                  threads: int = 1) -> BenchReport:
    """Grid-search each model on validation F1, evaluate the winner on test,
    aggregate mean/std per (dataset, model) over classes and seeds.

    Grid ties break toward the smaller model: fewer branches/nodes, then
    smaller D, then first-listed combo. Tasks are independent; ``threads``
    caps how many evaluate concurrently.
    """
    from concurrent.futures import ThreadPoolExecutor

    n_pos = int(config.get("n_pos", 30))
    seeds = config.get("seeds", [0, 1, 2])
    report = BenchReport(config=config)
    for ds_name in config["datasets"]:
        X, y = load_dataset(ds_name, data_dir=data_dir)
        tasks = make_tasks(ds_name, X, y, n_pos=n_pos, seeds=seeds)
        for model_spec in config["models"]:
            name = model_spec["name"]
            kind = model_spec["kind"]
            if threads > 1 and len(tasks) > 1:
                with ThreadPoolExecutor(max_workers=threads) as pool:
                    cells = list(pool.map(
                        lambda t: _evaluate_task(kind, model_spec, t, X, y), tasks
                    ))
            else:
                cells = [_evaluate_task(kind, model_spec, t, X, y) for t in tasks]
            f1s = [c[0] for c in cells]
            t_trains = [c[1] for c in cells]
            t_queries = [c[2] for c in cells]
            best_combos = [c[3] for c in cells]
            report.rows.append({
                "dataset": ds_name,
                "model": name,
                "f1_mean": float(np.mean(f1s)),
                "f1_std": float(np.std(f1s)),
                "t_train_mean": float(np.mean(t_trains)),
                "t_query_mean": float(np.mean(t_queries)),
                "t_total_mean": float(np.mean(t_trains) + np.mean(t_queries)),
                "n_tasks": len(f1s),
                "config": json.dumps(best_combos[0] if best_combos else {},
                                     sort_keys=True),
            })
    return report


def write_report_csv(report: BenchReport, path) -> None:
    fields = ["dataset", "model", "f1_mean", "f1_std", "t_train_mean",
              "t_query_mean", "t_total_mean", "n_tasks", "config"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in report.rows:
            writer.writerow(row)


# --- index experiments ---

def _disjoint_boxes(n_boxes: int, D: int, rng: np.random.Generator) -> list:
    """Random boxes confined to distinct cells of a grid over [0, 1]^D."""
    g = math.ceil(n_boxes ** (1.0 / D))
    cells = [np.unravel_index(i, (g,) * D) for i in range(n_boxes)]
    boxes = []
    for cell in cells:
        lo = np.asarray(cell, dtype=np.float64) / g
        width = 1.0 / g
        a = lo + rng.uniform(0.05, 0.25, size=D) * width
        b = lo + rng.uniform(0.75, 0.95, size=D) * width
        boxes.append(Box(a, b))
    return boxes


def scaling_experiment(n_grid, D: int = 3, leaf_budget: int = 10,
                       leaf_size: int = 256, n_boxes: int = 300,
                       repeats: int = 5, seed: int = 0,
                       work_dir=None) -> list:
    """Mean range-query traversal time per catalog size, with the search
    stopped after ``leaf_budget`` leaves so the returned volume stays flat.

    The same non-overlapping random boxes are reused across catalog sizes.
    Returns rows of (N, mean_seconds, std_seconds).
    """
    rng = np.random.default_rng(seed)
    n_max = int(max(n_grid))
    pool = rng.random((n_max, D))
    ids = np.arange(n_max, dtype=np.uint64)
    boxes = _disjoint_boxes(n_boxes, D, np.random.default_rng([seed, 13]))
    subset = FeatureSubset(tuple(range(D)))
    rows = []
    ctx = tempfile.TemporaryDirectory() if work_dir is None else None
    base = Path(ctx.name) if ctx else Path(work_dir)
    try:
        for n in sorted(int(v) for v in n_grid):
            idx = build_index(pool[:n], ids[:n], subset, leaf_size, "Ts",
                              base / f"scaling_{n}")
            for box in boxes:  # untimed warmup pass fills the page cache
                range_query(idx, box, max_leaves=leaf_budget)
            per_run = []
            for _ in range(repeats):
                t0 = time.perf_counter()
                for box in boxes:
                    range_query(idx, box, max_leaves=leaf_budget)
                per_run.append((time.perf_counter() - t0) / len(boxes))
            idx.close()
            rows.append((n, float(np.mean(per_run)), float(np.std(per_run))))
    finally:
        if ctx:
            ctx.cleanup()
    return rows


def fit_loglog_slope(ns, ts) -> float:
    """Least-squares growth exponent of t against N in log-log space."""
    return float(np.polyfit(np.log(np.asarray(ns, dtype=np.float64)),
                            np.log(np.asarray(ts, dtype=np.float64)), 1)[0])


def _drop_page_cache(path: Path) -> None:
    # best effort: ask the kernel to forget cached pages for this file
    try:
        fd = os.open(path, os.O_RDONLY)
        try:
            os.posix_fadvise(fd, 0, 0, os.POSIX_FADV_DONTNEED)
        finally:
            os.close(fd)
    except (OSError, AttributeError):
        pass


def leaf_size_experiment(sizes, n: int = 100_000, d: int = 20,
                         D_values=(3, 6), mode: str = "warm",
                         seed: int = 0, n_queries: int = 30,
                         work_dir=None) -> list:
    """Query time and inner-tree memory across leaf sizes.

    Queries are the branch boxes of decision-branch models fitted on synthetic
    user queries over the same catalog. Rows: (D, leaf_size, mode,
    mean_query_seconds, inner_memory_bytes)."""
    rng = np.random.default_rng(seed)
    X_cat = rng.random((n, d))
    ids = np.arange(n, dtype=np.uint64)
    rows = []
    ctx = tempfile.TemporaryDirectory() if work_dir is None else None
    base = Path(ctx.name) if ctx else Path(work_dir)
    try:
        for D in D_values:
            subsets = sample_feature_subsets(d, D, 10, np.random.default_rng([seed, D]))
            boxes = _experiment_boxes(X_cat, subsets, n_queries, seed)
            used = list({br_subset.dims: br_subset for _, br_subset in boxes}.values())
            for leaf_size in sizes:
                index_by_dims = {}
                for i, subset in enumerate(used):
                    idx = build_index(X_cat, ids, subset, int(leaf_size), "Ts",
                                      base / f"ls_{D}_{leaf_size}_{i}")
                    index_by_dims[subset.dims] = idx
                times = []
                for box, subset in boxes:
                    idx = index_by_dims[subset.dims]
                    if mode == "cold":
                        idx.close()
                        _drop_page_cache(idx.leaves_path)
                    else:
                        range_query(idx, box)  # warm the caches
                    t0 = time.perf_counter()
                    range_query(idx, box)
                    times.append(time.perf_counter() - t0)
                memory = next(iter(index_by_dims.values())).inner_memory_bytes()
                for idx in index_by_dims.values():
                    idx.close()
                rows.append((int(D), int(leaf_size), mode,
                             float(np.mean(times)), int(memory)))
    finally:
        if ctx:
            ctx.cleanup()
    return rows


def _experiment_boxes(X_cat: np.ndarray, subsets, n_queries: int, seed: int) -> list:
    """Branch boxes of models fitted on synthetic planted-cluster queries."""
    rng = np.random.default_rng([seed, 4021])
    n, d = X_cat.shape
    boxes = []
    attempt = 0
    while len(boxes) < n_queries and attempt < n_queries * 3:
        attempt += 1
        center = rng.random(d)
        X_pos = np.clip(center + rng.normal(0, 0.01, size=(30, d)), 0, 1)
        neg_rows = rng.choice(n, size=300, replace=False)
        X_tr = np.vstack([X_pos, X_cat[neg_rows]])
        y_tr = np.concatenate([np.ones(30, dtype=np.uint8),
                               np.zeros(300, dtype=np.uint8)])
        cfg = DBranchConfig(subsets=subsets, p=3, variant="B",
                            rng_seed=int(rng.integers(2**32)))
        model = fit_decision_branches(
            LabeledDataset(X_tr, y_tr, np.arange(len(y_tr))), cfg
        )
        for br in model.branches:
            boxes.append((br.box, br.subset))
    return boxes[:n_queries]
