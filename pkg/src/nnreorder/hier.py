"""Multi-level blocked storage aligned to a row tree and a column tree.

A block is a (row cluster, column cluster) pair. The root block covers the
whole matrix; a block is refined into the non-empty pairs of its clusters'
children until the cut level is reached or both clusters are tree leaves.
Internal blocks only reference their children. Leaf blocks hold local
16-bit (row, col) coordinates in row-major order plus the values.

Leaf blocks are stored in depth-first block order, so recursive descent over
the hierarchy is a linear sweep over the leaf arrays. Children of the root
are ordered row-cluster-major, which makes the leaf blocks of each top-level
target cluster a contiguous range (``row_group_ptr``).

Binary dump layout (``HBM1``, all little-endian)::

    magic            4 bytes  b"HBM1"
    header           u64 x 4  n_rows, n_cols, nnz, cut_level
    row tree         see _write_tree
    column tree      see _write_tree
    n_levels         u64
    per level        u64 count; i64[count] x 5: row_node, col_node,
                     child_lo, child_hi, leaf_id (-1 for internal blocks)
    n_leaf           u64
    leaf arrays      i64[n_leaf] x 4: row_off, col_off, row_span, col_span
                     i64[n_leaf + 1] entry_ptr
                     u16[nnz] local_row, u16[nnz] local_col, f64[nnz] values

Each tree is written as: u32 dim, u32 leaf_capacity, u32 max_depth,
u64 n_points, u64 n_nodes, i64[n_points] leaf-order forward array, then the
pre-order node list as columns: u32 depth, u32 code, u64 lo, u64 hi,
u32 n_children, i64[sum n_children] child ids, f64[n_nodes*dim] box_lo,
f64[n_nodes*dim] box_hi.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .core import Permutation, SparseMatrix, SparsePattern
from .errors import FormatError, LocalIndexOverflow, NonFiniteValue, SpanMismatch
from .orderings import PartitionTree, TreeNode

LOCAL_INDEX_LIMIT = 1 << 16
MAGIC = b"HBM1"


@dataclass
class BlockLevel:
    """Block descriptors of one hierarchy level, in traversal order."""

    row_node: np.ndarray
    col_node: np.ndarray
    child_lo: np.ndarray
    child_hi: np.ndarray
    leaf_id: np.ndarray

    def __len__(self) -> int:
        return int(self.row_node.size)


@dataclass
class HierBlockMatrix:
    row_tree: PartitionTree
    col_tree: PartitionTree
    n_rows: int
    n_cols: int
    cut_level: int
    levels: list[BlockLevel]
    leaf_row_off: np.ndarray
    leaf_col_off: np.ndarray
    leaf_row_span: np.ndarray
    leaf_col_span: np.ndarray
    leaf_ptr: np.ndarray
    local_row: np.ndarray
    local_col: np.ndarray
    values: np.ndarray
    row_group_ptr: np.ndarray = field(default=None)

    @property
    def nnz(self) -> int:
        return int(self.values.size)

    @property
    def n_leaf_blocks(self) -> int:
        return int(self.leaf_row_off.size)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def row_tag(self) -> str:
        return self.row_tree.leaf_order.tag

    @property
    def col_tag(self) -> str:
        return self.col_tree.leaf_order.tag

    @cached_property
    def global_rows(self) -> np.ndarray:
        counts = np.diff(self.leaf_ptr)
        return np.repeat(self.leaf_row_off, counts) + self.local_row

    @cached_property
    def global_cols(self) -> np.ndarray:
        counts = np.diff(self.leaf_ptr)
        return np.repeat(self.leaf_col_off, counts) + self.local_col

    @property
    def leaf_block_nnz(self) -> np.ndarray:
        return np.diff(self.leaf_ptr)


def _children(tree: PartitionTree, node_id: int) -> tuple[int, ...]:
    nd = tree.nodes[node_id]
    return nd.children if nd.children else (node_id,)


def auto_cut_level(row_tree: PartitionTree, col_tree: PartitionTree) -> int:
    """Shallowest level >= 1 at which every row and column cluster fits the
    16-bit local index range."""
    depth = max(row_tree.depth, col_tree.depth, 1)
    for level in range(1, depth + 1):
        spans = [row_tree.nodes[i].size for i in row_tree.clusters_at(level)]
        spans += [col_tree.nodes[i].size for i in col_tree.clusters_at(level)]
        if max(spans) <= LOCAL_INDEX_LIMIT:
            return level
    raise LocalIndexOverflow(
        f"tree leaves exceed {LOCAL_INDEX_LIMIT} points; lower leaf_capacity"
    )


def build_hier(m: SparseMatrix, row_tree: PartitionTree, col_tree: PartitionTree,
               cut_level: int | str = "auto") -> HierBlockMatrix:
    """Block ``m`` (already laid out in the trees' leaf orders) over the
    cluster hierarchy."""
    n_rows, n_cols = m.shape
    if row_tree.n_points != n_rows or col_tree.n_points != n_cols:
        raise SpanMismatch(
            f"trees span ({row_tree.n_points}, {col_tree.n_points}), matrix is {m.shape}"
        )
    if cut_level == "auto" or cut_level is None:
        cut_level = auto_cut_level(row_tree, col_tree)
    cut_level = int(cut_level)
    if cut_level < 1:
        raise ValueError("cut_level must be >= 1")

    rows, cols = m.rows, m.cols
    rn, cn = row_tree.nodes, col_tree.nodes
    # per level: list of [row_node, col_node, child_lo, child_hi, leaf_id]
    level_recs: list[list[list[int]]] = [[] for _ in range(cut_level + 1)]
    leaves: list[tuple[int, int, np.ndarray]] = []

    def descend(level: int, slot: int, r: int, c: int, idx: np.ndarray) -> None:
        rec = [r, c, -1, -1, -1]
        level_recs[level][slot] = rec
        if level == cut_level or (rn[r].is_leaf and cn[c].is_leaf):
            if idx.size == 0:  # only an empty matrix reaches a leaf with no entries
                return
            rec[4] = len(leaves)
            leaves.append((r, c, idx))
            return
        rk = _children(row_tree, r)
        ck = _children(col_tree, c)
        r_starts = np.array([rn[i].lo for i in rk[1:]], dtype=np.int64)
        c_starts = np.array([cn[i].lo for i in ck[1:]], dtype=np.int64)
        ri = np.searchsorted(r_starts, rows[idx], side="right")
        ci = np.searchsorted(c_starts, cols[idx], side="right")
        key = ri * len(ck) + ci
        srt = np.argsort(key, kind="stable")
        key, idx = key[srt], idx[srt]
        uk, starts = np.unique(key, return_index=True)
        bounds = np.append(starts, key.size)
        # reserve all sibling slots first so each parent's children form one
        # contiguous range of the next level
        base = len(level_recs[level + 1])
        rec[2], rec[3] = base, base + uk.size
        level_recs[level + 1].extend([None] * uk.size)
        for off, (k, a, b) in enumerate(zip(uk.tolist(), bounds[:-1], bounds[1:])):
            descend(level + 1, base + off, rk[k // len(ck)], ck[k % len(ck)], idx[a:b])

    level_recs[0].append(None)
    descend(0, 0, 0, 0, np.arange(m.nnz, dtype=np.int64))

    levels = []
    for recs in level_recs:
        arr = np.array(recs, dtype=np.int64).reshape(-1, 5)
        levels.append(BlockLevel(*(np.ascontiguousarray(arr[:, k]) for k in range(5))))
    while len(levels) > 1 and len(levels[-1]) == 0:
        levels.pop()

    n_leaf = len(leaves)
    row_off = np.empty(n_leaf, dtype=np.int64)
    col_off = np.empty(n_leaf, dtype=np.int64)
    row_span = np.empty(n_leaf, dtype=np.int64)
    col_span = np.empty(n_leaf, dtype=np.int64)
    ptr = np.zeros(n_leaf + 1, dtype=np.int64)
    for b, (r, c, idx) in enumerate(leaves):
        row_off[b], row_span[b] = rn[r].lo, rn[r].size
        col_off[b], col_span[b] = cn[c].lo, cn[c].size
        ptr[b + 1] = ptr[b] + idx.size
    if n_leaf and (row_span.max() > LOCAL_INDEX_LIMIT or col_span.max() > LOCAL_INDEX_LIMIT):
        raise LocalIndexOverflow(
            f"leaf block span {max(row_span.max(), col_span.max())} exceeds {LOCAL_INDEX_LIMIT}"
        )
    order = np.concatenate([idx for _, _, idx in leaves]) if leaves else np.empty(0, np.int64)
    counts = np.diff(ptr)
    local_row = (rows[order] - np.repeat(row_off, counts)).astype(np.uint16)
    local_col = (cols[order] - np.repeat(col_off, counts)).astype(np.uint16)
    values = np.array(m.values[order], dtype=np.float64)

    h = HierBlockMatrix(row_tree, col_tree, n_rows, n_cols, cut_level, levels,
                        row_off, col_off, row_span, col_span, ptr,
                        local_row, local_col, values)
    h.row_group_ptr = _row_groups(h)
    return h


def _row_groups(h: HierBlockMatrix) -> np.ndarray:
    """Leaf-block ranges belonging to each top-level target cluster."""
    if h.n_leaf_blocks == 0:
        return np.zeros(1, dtype=np.int64)
    if len(h.levels) < 2:
        return np.array([0, h.n_leaf_blocks], dtype=np.int64)
    top = h.levels[1]
    ptr = [0]
    first_leaf = _first_leaf_under(h)
    for k in range(1, len(top)):
        if top.row_node[k] != top.row_node[k - 1]:
            ptr.append(first_leaf[k])
    ptr.append(h.n_leaf_blocks)
    return np.array(ptr, dtype=np.int64)


def _first_leaf_under(h: HierBlockMatrix) -> list[int]:
    """For each level-1 block, the id of the first leaf block in its subtree."""
    out = []
    for k in range(len(h.levels[1])):
        level, b = 1, k
        while h.levels[level].leaf_id[b] < 0:
            b = int(h.levels[level].child_lo[b])
            level += 1
        out.append(int(h.levels[level].leaf_id[b]))
    return out


def flatten(h: HierBlockMatrix) -> SparseMatrix:
    rows, cols = h.global_rows, h.global_cols
    order = np.argsort(rows * max(h.n_cols, 1) + cols, kind="stable")
    pattern = SparsePattern(h.n_rows, h.n_cols, rows[order], cols[order], _trusted=True)
    return SparseMatrix(pattern, h.values[order])


def update_values(h: HierBlockMatrix, f) -> int:
    """Replace every stored value by ``f(global_rows, global_cols, old_values)``.

    ``f`` is vectorized: it receives the coordinate and value arrays in
    storage order (block order, then local row-major) and returns the new
    values. The pattern is untouched.
    """
    new = np.asarray(f(h.global_rows, h.global_cols, h.values.copy()), dtype=np.float64)
    if new.shape != h.values.shape:
        new = np.broadcast_to(new, h.values.shape)
    if not np.all(np.isfinite(new)):
        bad = int(np.flatnonzero(~np.isfinite(new))[0])
        raise NonFiniteValue(
            f"non-finite value at ({h.global_rows[bad]}, {h.global_cols[bad]})"
        )
    h.values[:] = new
    return int(h.values.size)


# -- binary dump --------------------------------------------------------------

def _write_tree(fh, t: PartitionTree) -> None:
    nodes = t.nodes
    fh.write(struct.pack("<IIIQQ", t.dim, t.leaf_capacity, t.max_depth, t.n_points, len(nodes)))
    fh.write(t.leaf_order.forward.astype("<i8").tobytes())
    fh.write(np.array([nd.depth for nd in nodes], dtype="<u4").tobytes())
    fh.write(np.array([nd.code for nd in nodes], dtype="<u4").tobytes())
    fh.write(np.array([nd.lo for nd in nodes], dtype="<u8").tobytes())
    fh.write(np.array([nd.hi for nd in nodes], dtype="<u8").tobytes())
    fh.write(np.array([len(nd.children) for nd in nodes], dtype="<u4").tobytes())
    kids = [k for nd in nodes for k in nd.children]
    fh.write(np.array(kids, dtype="<i8").tobytes())
    fh.write(np.concatenate([np.broadcast_to(nd.box_lo, (t.dim,)) for nd in nodes]).astype("<f8").tobytes())
    fh.write(np.concatenate([np.broadcast_to(nd.box_hi, (t.dim,)) for nd in nodes]).astype("<f8").tobytes())


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise FormatError("truncated HBM1 file")
        out = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return out

    def array(self, dtype: str, count: int) -> np.ndarray:
        dt = np.dtype(dtype)
        size = dt.itemsize * count
        if self.pos + size > len(self.data):
            raise FormatError("truncated HBM1 file")
        out = np.frombuffer(self.data, dtype=dt, count=count, offset=self.pos).copy()
        self.pos += size
        return out


def _read_tree(rd: _Reader) -> PartitionTree:
    dim, cap, max_depth, n_points, n_nodes = rd.unpack("<IIIQQ")
    forward = rd.array("<i8", n_points)
    depth = rd.array("<u4", n_nodes)
    code = rd.array("<u4", n_nodes)
    lo = rd.array("<u8", n_nodes)
    hi = rd.array("<u8", n_nodes)
    n_kids = rd.array("<u4", n_nodes)
    kids = rd.array("<i8", int(n_kids.sum()))
    box_lo = rd.array("<f8", n_nodes * dim).reshape(n_nodes, dim)
    box_hi = rd.array("<f8", n_nodes * dim).reshape(n_nodes, dim)
    kid_ptr = np.concatenate([[0], np.cumsum(n_kids)]).astype(np.int64)
    nodes = tuple(
        TreeNode(int(depth[i]), int(lo[i]), int(hi[i]), box_lo[i], box_hi[i],
                 tuple(int(k) for k in kids[kid_ptr[i]:kid_ptr[i + 1]]), int(code[i]))
        for i in range(n_nodes)
    )
    return PartitionTree(dim, nodes, Permutation(forward), cap, max_depth)


def dump_hier(h: HierBlockMatrix, path) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<QQQQ", h.n_rows, h.n_cols, h.nnz, h.cut_level))
        _write_tree(fh, h.row_tree)
        _write_tree(fh, h.col_tree)
        fh.write(struct.pack("<Q", len(h.levels)))
        for lv in h.levels:
            fh.write(struct.pack("<Q", len(lv)))
            for arr in (lv.row_node, lv.col_node, lv.child_lo, lv.child_hi, lv.leaf_id):
                fh.write(arr.astype("<i8").tobytes())
        fh.write(struct.pack("<Q", h.n_leaf_blocks))
        for arr in (h.leaf_row_off, h.leaf_col_off, h.leaf_row_span, h.leaf_col_span, h.leaf_ptr):
            fh.write(arr.astype("<i8").tobytes())
        fh.write(h.local_row.astype("<u2").tobytes())
        fh.write(h.local_col.astype("<u2").tobytes())
        fh.write(h.values.astype("<f8").tobytes())


def load_hier(path) -> HierBlockMatrix:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise FormatError(f"{path}: not an HBM1 file")
    rd = _Reader(data)
    rd.pos = 4
    n_rows, n_cols, nnz, cut_level = rd.unpack("<QQQQ")
    row_tree = _read_tree(rd)
    col_tree = _read_tree(rd)
    (n_levels,) = rd.unpack("<Q")
    levels = []
    for _ in range(n_levels):
        (count,) = rd.unpack("<Q")
        levels.append(BlockLevel(*(rd.array("<i8", count).astype(np.int64) for _ in range(5))))
    (n_leaf,) = rd.unpack("<Q")
    row_off, col_off, row_span, col_span = (rd.array("<i8", n_leaf).astype(np.int64) for _ in range(4))
    ptr = rd.array("<i8", n_leaf + 1).astype(np.int64)
    local_row = rd.array("<u2", nnz).astype(np.uint16)
    local_col = rd.array("<u2", nnz).astype(np.uint16)
    values = rd.array("<f8", nnz).astype(np.float64)
    if rd.pos != len(data):
        raise FormatError(f"{path}: {len(data) - rd.pos} trailing bytes")
    h = HierBlockMatrix(row_tree, col_tree, int(n_rows), int(n_cols), int(cut_level), levels,
                        row_off, col_off, row_span, col_span, ptr, local_row, local_col, values)
    h.row_group_ptr = _row_groups(h)
    return h
