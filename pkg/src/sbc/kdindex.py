"""Hybrid-memory k-d tree: balanced inner tree in memory, fixed-width leaf
records consecutive on disk, loaded only when they intersect a query box."""

from __future__ import annotations

import heapq
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from sbc.core import Box, ConfigError, DomainError, FeatureSubset, StorageError

__all__ = [
    "KdIndex",
    "build_index",
    "load_index",
    "range_query",
    "knn_query",
    "stats",
]

_MAGIC = b"KDX1"
_LAYOUTS = ("Ts", "Ta")
_LEAF_SENTINEL = np.uint16(0xFFFF)

# serialized widths, also used as the in-memory accounting unit
_INNER_NODE_BYTES = 10   # split_dim u16 + split_value f64
_LEAF_DIR_BYTES = 12     # offset u64 + count u32


def _split_sizes(m: int, leaf_size: int):
    """Left/right partition sizes; the left half takes the extra element."""
    n_left = (m + 1) // 2
    return n_left, m - n_left


@dataclass
class KdIndex:
    """Immutable after build; all query state is confined to the call."""

    subset: FeatureSubset
    layout: str
    leaf_size: int
    n: int
    record_width: int            # coords per record (D for Ts, d for Ta)
    node_split_dim: np.ndarray   # uint16 per node; 0xFFFF marks a leaf
    node_split_value: np.ndarray
    node_right: np.ndarray       # right-child node id (left child is i + 1)
    node_leaf_ord: np.ndarray    # leaf ordinal per node, -1 for inner
    leaf_offset: np.ndarray      # byte offset into the leaves file
    leaf_count: np.ndarray
    leaves_path: Path
    _fd: Optional[int] = field(default=None, repr=False)
    _last_stats: dict = field(default_factory=dict, repr=False)

    @property
    def D(self) -> int:
        return self.subset.D

    @property
    def n_leaves(self) -> int:
        return int(self.leaf_offset.size)

    @property
    def n_inner(self) -> int:
        return int(self.node_split_dim.size) - self.n_leaves

    @property
    def record_bytes(self) -> int:
        return 8 + 8 * self.record_width

    def inner_memory_bytes(self) -> int:
        return _INNER_NODE_BYTES * self.n_inner + _LEAF_DIR_BYTES * self.n_leaves

    def coord_position(self, dim: int) -> int:
        """Position of a global feature index inside a leaf record."""
        if self.layout == "Ta":
            return int(dim)
        return self.subset.dims.index(int(dim))

    def _fileno(self) -> int:
        if self._fd is None:
            try:
                self._fd = os.open(self.leaves_path, os.O_RDONLY)
            except OSError as exc:
                raise StorageError(f"cannot open {self.leaves_path}: {exc}") from exc
        return self._fd

    def read_leaf(self, leaf_ord: int):
        """Load one leaf from disk: (ids, coords) arrays."""
        count = int(self.leaf_count[leaf_ord])
        nbytes = count * self.record_bytes
        try:
            buf = os.pread(self._fileno(), nbytes, int(self.leaf_offset[leaf_ord]))
        except OSError as exc:
            raise StorageError(f"leaf read failed: {exc}") from exc
        if len(buf) != nbytes:
            raise StorageError(f"short leaf read: {len(buf)} of {nbytes} bytes")
        rec = np.frombuffer(buf, dtype=self._record_dtype())
        return rec["id"], rec["coords"]

    def _record_dtype(self):
        return np.dtype([("id", "<u8"), ("coords", "<f8", (self.record_width,))])

    def close(self) -> None:
        if self._fd is not None:
            os.close(self._fd)
            self._fd = None

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass


def build_index(features, ids, subset: FeatureSubset, leaf_size: int,
                layout: str, path) -> KdIndex:
    """Build an index over one feature subset and write the file pair.

    The inner tree median-splits on the subset dims cycled by depth until
    partitions hold at most ``leaf_size`` records; leaves land consecutively
    in ``<path>.leaves`` in left-to-right order.
    """
    if leaf_size < 1:
        raise ConfigError("leaf_size must be >= 1")
    if layout not in _LAYOUTS:
        raise ConfigError(f"layout must be one of {_LAYOUTS}")
    X = np.asarray(features, dtype=np.float64)
    ids = np.asarray(ids, dtype=np.uint64)
    n, d = X.shape
    if n < 1:
        raise DomainError("cannot index an empty catalog")
    subset.validate_for(d)
    dims = np.asarray(subset.dims, dtype=np.int64)
    width = d if layout == "Ta" else subset.D

    split_dim = []
    split_value = []
    right_child = []
    leaf_ord = []
    leaf_counts = []
    leaf_order = []

    def build(index: np.ndarray, depth: int) -> None:
        node = len(split_dim)
        if index.size <= leaf_size:
            split_dim.append(int(_LEAF_SENTINEL))
            split_value.append(0.0)
            right_child.append(-1)
            leaf_ord.append(len(leaf_counts))
            leaf_counts.append(index.size)
            leaf_order.append(index)
            return
        dim = int(dims[depth % dims.size])
        vals = X[index, dim]
        n_left, _ = _split_sizes(index.size, leaf_size)
        part = np.argpartition(vals, n_left - 1)
        split_dim.append(dim)
        split_value.append(float(vals[part[n_left - 1]]))
        right_child.append(-1)
        leaf_ord.append(-1)
        build(index[part[:n_left]], depth + 1)
        right_child[node] = len(split_dim)
        build(index[part[n_left:]], depth + 1)

    build(np.arange(n), 0)

    order = np.concatenate(leaf_order)
    rec_dtype = np.dtype([("id", "<u8"), ("coords", "<f8", (width,))])
    records = np.empty(n, dtype=rec_dtype)
    records["id"] = ids[order]
    records["coords"] = X[order] if layout == "Ta" else X[np.ix_(order, dims)]

    path = Path(path)
    leaves_path = path.with_suffix(".leaves")
    tree_path = path.with_suffix(".tree")
    counts = np.asarray(leaf_counts, dtype=np.uint32)
    rec_bytes = 8 + 8 * width
    offsets = np.zeros(counts.size, dtype=np.uint64)
    np.cumsum(counts[:-1].astype(np.uint64) * rec_bytes, out=offsets[1:])
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(leaves_path, "wb") as fh:
            records.tofile(fh)
    except OSError as exc:
        raise StorageError(f"writing {leaves_path} failed: {exc}") from exc

    idx = KdIndex(
        subset=subset,
        layout=layout,
        leaf_size=leaf_size,
        n=n,
        record_width=width,
        node_split_dim=np.asarray(split_dim, dtype=np.uint16),
        node_split_value=np.asarray(split_value, dtype=np.float64),
        node_right=np.asarray(right_child, dtype=np.int64),
        node_leaf_ord=np.asarray(leaf_ord, dtype=np.int64),
        leaf_offset=offsets,
        leaf_count=counts,
        leaves_path=leaves_path,
    )
    _write_tree_file(idx, tree_path)
    return idx


def _write_tree_file(idx: KdIndex, tree_path: Path) -> None:
    chunks = [_MAGIC]
    chunks.append(struct.pack("<H", idx.D))
    chunks.append(struct.pack(f"<{idx.D}H", *idx.subset.dims))
    chunks.append(struct.pack("<IQB", idx.leaf_size, idx.n, _LAYOUTS.index(idx.layout)))
    inner = idx.node_split_dim != _LEAF_SENTINEL
    for dim, value in zip(idx.node_split_dim[inner], idx.node_split_value[inner]):
        chunks.append(struct.pack("<Hd", int(dim), float(value)))
    for off, count in zip(idx.leaf_offset, idx.leaf_count):
        chunks.append(struct.pack("<QI", int(off), int(count)))
    try:
        with open(tree_path, "wb") as fh:
            fh.write(b"".join(chunks))
    except OSError as exc:
        raise StorageError(f"writing {tree_path} failed: {exc}") from exc


def load_index(path) -> KdIndex:
    """Reconstruct an index from its file pair.

    The tree shape is a pure function of (n, leaf_size), so the preorder
    inner-node stream is unambiguous.
    """
    path = Path(path)
    tree_path = path.with_suffix(".tree")
    leaves_path = path.with_suffix(".leaves")
    try:
        with open(tree_path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise StorageError(f"cannot read {tree_path}: {exc}") from exc
    if buf[:4] != _MAGIC:
        raise StorageError(f"{tree_path}: bad magic")
    off = 4
    (D,) = struct.unpack_from("<H", buf, off)
    off += 2
    dims = struct.unpack_from(f"<{D}H", buf, off)
    off += 2 * D
    leaf_size, n, layout_code = struct.unpack_from("<IQB", buf, off)
    off += struct.calcsize("<IQB")
    layout = _LAYOUTS[layout_code]

    split_dim = []
    split_value = []
    right_child = []
    leaf_ord = []
    n_leaves_seen = [0]

    def reconstruct(m: int) -> None:
        nonlocal off
        node = len(split_dim)
        if m <= leaf_size:
            split_dim.append(int(_LEAF_SENTINEL))
            split_value.append(0.0)
            right_child.append(-1)
            leaf_ord.append(n_leaves_seen[0])
            n_leaves_seen[0] += 1
            return
        dim, value = struct.unpack_from("<Hd", buf, off)
        off += _INNER_NODE_BYTES
        split_dim.append(int(dim))
        split_value.append(float(value))
        right_child.append(-1)
        leaf_ord.append(-1)
        n_left, n_right = _split_sizes(m, leaf_size)
        reconstruct(n_left)
        right_child[node] = len(split_dim)
        reconstruct(n_right)

    reconstruct(n)
    n_leaves = n_leaves_seen[0]
    offsets = np.empty(n_leaves, dtype=np.uint64)
    counts = np.empty(n_leaves, dtype=np.uint32)
    for i in range(n_leaves):
        offsets[i], counts[i] = struct.unpack_from("<QI", buf, off)
        off += _LEAF_DIR_BYTES
    if off != len(buf):
        raise StorageError(f"{tree_path}: {len(buf) - off} trailing bytes")
    if int(counts.sum()) != n:
        raise StorageError(f"{tree_path}: leaf counts sum to {counts.sum()} != {n}")

    try:
        leaf_bytes = os.path.getsize(leaves_path)
    except OSError as exc:
        raise StorageError(f"cannot stat {leaves_path}: {exc}") from exc
    if leaf_bytes % n != 0:
        raise StorageError(f"{leaves_path}: size {leaf_bytes} not a record multiple")
    width = (leaf_bytes // n - 8) // 8

    return KdIndex(
        subset=FeatureSubset(dims),
        layout=layout,
        leaf_size=leaf_size,
        n=n,
        record_width=int(width),
        node_split_dim=np.asarray(split_dim, dtype=np.uint16),
        node_split_value=np.asarray(split_value, dtype=np.float64),
        node_right=np.asarray(right_child, dtype=np.int64),
        node_leaf_ord=np.asarray(leaf_ord, dtype=np.int64),
        leaf_offset=offsets,
        leaf_count=counts,
        leaves_path=leaves_path,
    )


def _leaf_filter(idx: KdIndex, box: Box, ids: np.ndarray, coords: np.ndarray):
    mask = np.ones(ids.size, dtype=bool)
    for dim in box.bounded_dims():
        pos = idx.coord_position(int(dim))
        col = coords[:, pos]
        mask &= (col > box.lower[dim]) & (col <= box.upper[dim])
    return ids[mask], coords[mask]


def range_query(idx: KdIndex, box: Box, max_leaves: Optional[int] = None):
    """Exact (l, r] range query; loads only leaves whose region intersects.

    ``max_leaves`` caps the number of leaves loaded (used by the traversal
    scaling experiments); the answer is then potentially partial.
    """
    for dim in box.bounded_dims():
        if int(dim) not in idx.subset.dims:
            raise DomainError(
                f"box bounded on dim {int(dim)} outside index subset {idx.subset.dims}"
            )
    split_dim = idx.node_split_dim
    split_value = idx.node_split_value
    ids_parts = []
    coords_parts = []
    leaves_visited = 0
    bytes_read = 0
    # an empty slab (lower_i == upper_i) admits no point; skip traversal
    stack = [] if bool(np.any(box.lower == box.upper)) else [0]
    while stack:
        node = stack.pop()
        if split_dim[node] == _LEAF_SENTINEL:
            if max_leaves is not None and leaves_visited >= max_leaves:
                break
            leaves_visited += 1
            leaf = int(idx.node_leaf_ord[node])
            bytes_read += int(idx.leaf_count[leaf]) * idx.record_bytes
            ids, coords = idx.read_leaf(leaf)
            ids, coords = _leaf_filter(idx, box, ids, coords)
            if ids.size:
                ids_parts.append(ids)
                coords_parts.append(coords)
            continue
        dim = int(split_dim[node])
        value = split_value[node]
        # right subtree first so the left one pops first (left-to-right visit)
        if box.upper[dim] >= value:
            stack.append(int(idx.node_right[node]))
        if box.lower[dim] < value:
            stack.append(node + 1)
    idx._last_stats = {
        "leaves_visited_last_query": leaves_visited,
        "bytes_read_last_query": bytes_read,
        "inner_memory_bytes": idx.inner_memory_bytes(),
    }
    if ids_parts:
        return np.concatenate(ids_parts), np.vstack(coords_parts)
    return (np.empty(0, dtype=np.uint64),
            np.empty((0, idx.record_width), dtype=np.float64))


def knn_query(idx: KdIndex, q, k: int) -> np.ndarray:
    """Exact k nearest neighbors of a subset-space point by Euclidean
    distance; ties broken toward the smaller id."""
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (idx.D,):
        raise DomainError(f"query point must have {idx.D} dims, got {q.shape}")
    if not 1 <= k <= idx.n:
        raise DomainError(f"k={k} must be in [1, {idx.n}]")
    if idx.layout == "Ta":
        positions = np.asarray([idx.coord_position(dim) for dim in idx.subset.dims])
    else:
        positions = np.arange(idx.D)
    dim_to_qpos = {int(dim): i for i, dim in enumerate(idx.subset.dims)}

    heap = []  # entries (-dist2, -id): popping removes the current worst
    leaves_visited = 0
    bytes_read = 0

    def visit(node: int) -> None:
        nonlocal leaves_visited, bytes_read
        if idx.node_split_dim[node] == _LEAF_SENTINEL:
            leaf = int(idx.node_leaf_ord[node])
            leaves_visited += 1
            bytes_read += int(idx.leaf_count[leaf]) * idx.record_bytes
            ids, coords = idx.read_leaf(leaf)
            diffs = coords[:, positions] - q
            dist2 = np.einsum("ij,ij->i", diffs, diffs)
            for dd, ii in zip(dist2, ids):
                heapq.heappush(heap, (-float(dd), -int(ii)))
                if len(heap) > k:
                    heapq.heappop(heap)
            return
        dim = int(idx.node_split_dim[node])
        value = idx.node_split_value[node]
        qv = q[dim_to_qpos[dim]]
        near, far = (node + 1, int(idx.node_right[node]))
        if qv > value:
            near, far = far, near
        visit(near)
        gap2 = (qv - value) ** 2
        if len(heap) < k or gap2 <= -heap[0][0]:
            visit(far)

    visit(0)
    idx._last_stats = {
        "leaves_visited_last_query": leaves_visited,
        "bytes_read_last_query": bytes_read,
        "inner_memory_bytes": idx.inner_memory_bytes(),
    }
    found = sorted((-d2, -i) for d2, i in heap)
    return np.asarray([i for _, i in found], dtype=np.uint64)


def stats(idx: KdIndex) -> dict:
    """Counters from the most recent query on this index."""
    if not idx._last_stats:
        return {
            "leaves_visited_last_query": 0,
            "bytes_read_last_query": 0,
            "inner_memory_bytes": idx.inner_memory_bytes(),
        }
    return dict(idx._last_stats)
