"""Offline preprocessing (subset sampling + index building) and the online
query pipeline: fit, range-query per branch box, filter through the branch."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

from sbc.core import ConfigError, DomainError, FeatureSubset, LabeledDataset, StorageError
from sbc.dbranch import (
    DBranchConfig,
    DBranchEnsemble,
    DecisionBranchModel,
    ensemble_fit,
    ensemble_predict_batch,
    fit_decision_branches,
    model_predict_batch,
)
from sbc.kdindex import KdIndex, build_index, load_index, range_query
from sbc.tree import tree_predict_batch, tree_split_dims

__all__ = [
    "IndexSet",
    "QueryResult",
    "sample_feature_subsets",
    "preprocess",
    "load_index_set",
    "process_query",
    "scan_oracle",
    "catalog_fingerprint",
    "load_catalog_csv",
    "save_catalog_csv",
    "load_catalog_packed",
    "save_catalog_packed",
]

MANIFEST_NAME = "manifest.json"


@dataclass
class IndexSet:
    manifest: dict
    indexes: list
    directory: Path

    @property
    def subsets(self) -> tuple:
        return tuple(FeatureSubset(tuple(s)) for s in self.manifest["subsets"])

    @property
    def d(self) -> int:
        return int(self.manifest["d"])

    @property
    def layout(self) -> str:
        return self.manifest["layout"]

    def index_for(self, subset: FeatureSubset) -> KdIndex:
        for idx in self.indexes:
            if idx.subset.dims == subset.dims:
                return idx
        raise ConfigError(f"no index built for subset {subset.dims}")

    def close(self) -> None:
        for idx in self.indexes:
            idx.close()


@dataclass
class QueryResult:
    positive_ids: np.ndarray          # deduplicated, ascending
    per_branch_counts: list           # (candidates_retrieved, positives_kept)
    timings: dict                     # t_train / t_query / t_total seconds


def sample_feature_subsets(d: int, D: int, k: int, rng: np.random.Generator) -> tuple:
    """k feature subsets of size D, distinct whenever C(d, D) >= k."""
    if not 1 <= D <= d:
        raise ConfigError(f"D={D} must be in [1, d={d}]")
    if k < 1:
        raise ConfigError("k must be >= 1")
    want_distinct = math.comb(d, D) >= k
    seen = set()
    subsets = []
    while len(subsets) < k:
        dims = tuple(sorted(int(i) for i in rng.choice(d, size=D, replace=False)))
        if want_distinct:
            if dims in seen:
                continue
            seen.add(dims)
        subsets.append(FeatureSubset(dims))
    return tuple(subsets)


def catalog_fingerprint(catalog: LabeledDataset, chunk_rows: int = 262_144) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(catalog.ids).tobytes())
    for start in range(0, catalog.n, chunk_rows):
        h.update(np.ascontiguousarray(catalog.features[start:start + chunk_rows]).tobytes())
    return h.hexdigest()


def preprocess(catalog: LabeledDataset, k: int, D: int, leaf_size: int,
               layout: str, seed: int, out_dir,
               catalog_path: Optional[str] = None) -> IndexSet:
    """Sample k subsets, build one index per subset, write the manifest.

    Conducted once per catalog; every artifact lands under ``out_dir``.
    """
    out_dir = Path(out_dir)
    rng = np.random.default_rng(seed)
    subsets = sample_feature_subsets(catalog.d, D, k, rng)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise StorageError(f"cannot create {out_dir}: {exc}") from exc
    indexes = []
    for i, subset in enumerate(subsets):
        idx = build_index(
            catalog.features, catalog.ids, subset, leaf_size, layout,
            out_dir / f"idx_{i:04d}",
        )
        indexes.append(idx)
    manifest = {
        "version": 1,
        "d": catalog.d,
        "k": k,
        "D": D,
        "leaf_size": leaf_size,
        "layout": layout,
        "seed": seed,
        "subsets": [list(s.dims) for s in subsets],
        "catalog": {
            "n": catalog.n,
            "fingerprint": catalog_fingerprint(catalog),
            "path": catalog_path,
        },
    }
    with open(out_dir / MANIFEST_NAME, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return IndexSet(manifest=manifest, indexes=indexes, directory=out_dir)


def load_index_set(directory) -> IndexSet:
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    try:
        with open(manifest_path) as fh:
            manifest = json.load(fh)
    except OSError as exc:
        raise StorageError(f"cannot read {manifest_path}: {exc}") from exc
    indexes = []
    for i, dims in enumerate(manifest["subsets"]):
        idx = load_index(directory / f"idx_{i:04d}")
        if tuple(idx.subset.dims) != tuple(dims):
            raise StorageError(f"index {i} subset {idx.subset.dims} != manifest {dims}")
        indexes.append(idx)
    return IndexSet(manifest=manifest, indexes=indexes, directory=directory)


def _branch_positive_ids(iset: IndexSet, branch, d: int):
    """Steps 2+3 for one branch: range query, then route candidates through
    the branch subtree, keeping the predicted positives."""
    idx = iset.index_for(branch.subset)
    ids, coords = range_query(idx, branch.box)
    if ids.size == 0:
        return ids, (0, 0)
    if idx.layout == "Ta":
        X = coords
    else:
        # Ts layout stores only subset coords; the branch never splits outside
        X = np.full((ids.size, d), np.nan)
        X[:, list(idx.subset.dims)] = coords
    preds = tree_predict_batch(branch.branch, X)
    kept = ids[preds == 1]
    return kept, (int(ids.size), int(kept.size))


def _model_positive_ids(iset: IndexSet, model: DecisionBranchModel,
                        per_branch_counts: list, threads: int):
    if threads > 1 and len(model.branches) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(
                lambda br: _branch_positive_ids(iset, br, model.d), model.branches
            ))
    else:
        results = [_branch_positive_ids(iset, br, model.d) for br in model.branches]
    parts = []
    for kept, counts in results:
        per_branch_counts.append(counts)
        parts.append(kept)
    if parts:
        return np.unique(np.concatenate(parts))
    return np.empty(0, dtype=np.uint64)


def _validate_model_against(iset: IndexSet, fitted) -> None:
    models = fitted.models if isinstance(fitted, DBranchEnsemble) else (fitted,)
    manifest_subsets = {tuple(s) for s in iset.manifest["subsets"]}
    for model in models:
        for br in model.branches:
            if br.subset.dims not in manifest_subsets:
                raise ConfigError(f"branch subset {br.subset.dims} has no prebuilt index")
            if iset.layout != "Ta":
                extra = tree_split_dims(br.branch) - set(br.subset.dims)
                if extra:
                    raise ConfigError(
                        f"branch splits on dims {sorted(extra)} not stored by layout Ts"
                    )


def process_query(iset: IndexSet, dataset: LabeledDataset, cfg: DBranchConfig,
                  ensemble_size: int = 1, threads: int = 1) -> QueryResult:
    """Fit on the user query, answer it through the prebuilt indexes.

    Ensembles vote on id membership across the per-model retrieved sets: a
    model votes 1 for an id only when one of its boxes retrieved and its
    branch kept it.
    """
    manifest_subsets = tuple(tuple(s) for s in iset.manifest["subsets"])
    cfg_subsets = tuple(s.dims for s in cfg.subsets)
    if cfg_subsets != manifest_subsets:
        raise ConfigError("model config subsets differ from the prebuilt manifest")
    if dataset.d != iset.d:
        raise ConfigError(f"query dimensionality {dataset.d} != catalog {iset.d}")
    if cfg.variant == "Ta" and iset.layout != "Ta":
        raise ConfigError("variant Ta requires indexes built with the Ta layout")

    t0 = time.perf_counter()
    if ensemble_size > 1:
        fitted: Union[DecisionBranchModel, DBranchEnsemble] = ensemble_fit(
            dataset, cfg, ensemble_size
        )
    else:
        fitted = fit_decision_branches(dataset, cfg)
    t1 = time.perf_counter()

    _validate_model_against(iset, fitted)
    per_branch_counts: list = []
    if isinstance(fitted, DBranchEnsemble):
        votes: dict = {}
        for model in fitted.models:
            for i in _model_positive_ids(iset, model, per_branch_counts, threads):
                votes[int(i)] = votes.get(int(i), 0) + 1
        m = fitted.M
        positive_ids = np.asarray(
            sorted(i for i, v in votes.items() if 2 * v > m), dtype=np.uint64
        )
    else:
        positive_ids = _model_positive_ids(iset, fitted, per_branch_counts, threads)
    t2 = time.perf_counter()

    return QueryResult(
        positive_ids=positive_ids,
        per_branch_counts=per_branch_counts,
        timings={"t_train": t1 - t0, "t_query": t2 - t1, "t_total": t2 - t0},
    )


def scan_oracle(catalog: LabeledDataset, fitted) -> np.ndarray:
    """The traditional approach: apply the model to every catalog row."""
    if catalog.n == 0:
        return np.empty(0, dtype=np.uint64)
    if isinstance(fitted, DBranchEnsemble):
        preds = ensemble_predict_batch(fitted, catalog.features)
    else:
        preds = model_predict_batch(fitted, catalog.features)
    return np.sort(catalog.ids[preds == 1])


# --- catalog ingestion ---

def load_catalog_csv(path) -> LabeledDataset:
    """CSV with a header row, an ``id`` column, feature columns, and an
    optional ``label`` column."""
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise StorageError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DomainError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if "id" not in header:
            raise DomainError(f"{path}: no 'id' column in header {header}")
        id_col = header.index("id")
        label_col = header.index("label") if "label" in header else None
        feat_cols = [i for i in range(len(header)) if i not in (id_col, label_col)]
        if not feat_cols:
            raise DomainError(f"{path}: no feature columns")
        ids = []
        labels = []
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DomainError(
                    f"{path}:{line_no}: expected {len(header)} fields, got {len(row)}"
                )
            try:
                ids.append(int(row[id_col]))
                rows.append([float(row[i]) for i in feat_cols])
                if label_col is not None:
                    labels.append(int(row[label_col]))
            except ValueError as exc:
                raise DomainError(f"{path}:{line_no}: {exc}") from None
    if not rows:
        raise DomainError(f"{path}: no data rows")
    features = np.asarray(rows, dtype=np.float64)
    ids_arr = np.asarray(ids, dtype=np.uint64)
    labels_arr = np.asarray(labels, dtype=np.uint8) if label_col is not None \
        else np.empty(0, dtype=np.uint8)
    return LabeledDataset(features, labels_arr, ids_arr)


def save_catalog_csv(dataset: LabeledDataset, path) -> None:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        feat_names = [f"f{i}" for i in range(dataset.d)]
        header = ["id"] + feat_names + (["label"] if dataset.has_labels else [])
        writer.writerow(header)
        for i in range(dataset.n):
            row = [int(dataset.ids[i])] + [repr(float(v)) for v in dataset.features[i]]
            if dataset.has_labels:
                row.append(int(dataset.labels[i]))
            writer.writerow(row)


def save_catalog_packed(dataset: LabeledDataset, base_path) -> None:
    """ids (u64), then the row-major f64 feature matrix, then u8 labels if
    present; layout described by the JSON sidecar."""
    base = Path(base_path)
    bin_path = base.with_suffix(".bin")
    meta_path = base.with_suffix(".json")
    with open(bin_path, "wb") as fh:
        fh.write(np.ascontiguousarray(dataset.ids, dtype="<u8").tobytes())
        fh.write(np.ascontiguousarray(dataset.features, dtype="<f8").tobytes())
        if dataset.has_labels:
            fh.write(np.ascontiguousarray(dataset.labels, dtype="u1").tobytes())
    meta = {
        "n": dataset.n,
        "d": dataset.d,
        "dtype": "f64le",
        "has_labels": bool(dataset.has_labels),
    }
    with open(meta_path, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def load_catalog_packed(base_path, mmap: bool = False) -> LabeledDataset:
    base = Path(base_path)
    bin_path = base.with_suffix(".bin")
    meta_path = base.with_suffix(".json")
    try:
        with open(meta_path) as fh:
            meta = json.load(fh)
    except OSError as exc:
        raise StorageError(f"cannot read {meta_path}: {exc}") from exc
    if meta.get("dtype") != "f64le":
        raise StorageError(f"{meta_path}: unsupported dtype {meta.get('dtype')}")
    n, d = int(meta["n"]), int(meta["d"])
    has_labels = bool(meta.get("has_labels", False))
    expected = 8 * n + 8 * n * d + (n if has_labels else 0)
    actual = bin_path.stat().st_size
    if actual != expected:
        raise StorageError(f"{bin_path}: size {actual} != expected {expected}")
    if mmap:
        raw = np.memmap(bin_path, dtype="u1", mode="r")
    else:
        raw = np.fromfile(bin_path, dtype="u1")
    ids = raw[:8 * n].view("<u8")
    features = raw[8 * n:8 * n + 8 * n * d].view("<f8").reshape(n, d)
    labels = raw[8 * n + 8 * n * d:].view("u1") if has_labels \
        else np.empty(0, dtype=np.uint8)
    return LabeledDataset(np.asarray(features), np.asarray(labels), np.asarray(ids))
