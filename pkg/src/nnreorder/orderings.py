"""Row/column orderings: scattered, reverse Cuthill-McKee, lexical, and the
hierarchical (partition tree) ordering."""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .core import Permutation, as_points, pattern_of
from .errors import DimTooHigh, LevelOutOfRange, NotSquare
from .knn import symmetrize

DEFAULT_BINS = 32
DEFAULT_LEAF_CAPACITY = 128
DEFAULT_MAX_DEPTH = 12


# -- partition tree ----------------------------------------------------------

@dataclass(frozen=True)
class TreeNode:
    depth: int
    lo: int
    hi: int
    box_lo: np.ndarray
    box_hi: np.ndarray
    children: tuple[int, ...]
    code: int = 0

    @property
    def is_leaf(self) -> bool:
        return not self.children

    @property
    def size(self) -> int:
        return self.hi - self.lo


@dataclass(frozen=True)
class PartitionTree:
    """Adaptive 2^d-ary region tree over embedded points.

    ``nodes`` is in pre-order (node 0 is the root); every node owns the
    contiguous span ``[lo, hi)`` of the leaf-ordered point list, and
    ``leaf_order.forward[i]`` is the position of point ``i`` in that list.
    """

    dim: int
    nodes: tuple[TreeNode, ...]
    leaf_order: Permutation
    leaf_capacity: int
    max_depth: int

    @property
    def n_points(self) -> int:
        return self.leaf_order.n

    @property
    def root(self) -> TreeNode:
        return self.nodes[0]

    @property
    def depth(self) -> int:
        return max(nd.depth for nd in self.nodes)

    def leaves(self) -> list[int]:
        return [i for i, nd in enumerate(self.nodes) if nd.is_leaf]

    def clusters_at(self, level: int) -> list[int]:
        """Node ids forming the partition at ``level``: nodes of that depth,
        plus leaves that end shallower. Deeper levels than the tree has
        resolve to the leaves. Returned in leaf order."""
        out: list[int] = []
        stack = [0]
        while stack:
            i = stack.pop()
            nd = self.nodes[i]
            if nd.depth == level or nd.is_leaf:
                out.append(i)
            else:
                stack.extend(reversed(nd.children))
        return out

    @classmethod
    def trivial(cls, n: int, dim: int = 1) -> "PartitionTree":
        """Root-only tree over ``n`` points in their given order."""
        z = np.zeros(dim)
        root = TreeNode(0, 0, n, z, z, ())
        return cls(dim, (root,), Permutation.identity(n), max(n, 1), 0)

    @classmethod
    def from_offsets(cls, offsets, leaf_order: Permutation | None = None) -> "PartitionTree":
        """Two-level tree whose root children are the spans between
        ``offsets`` (which run from 0 to n)."""
        offsets = [int(o) for o in offsets]
        n = offsets[-1]
        z = np.zeros(1)
        kids = []
        nodes = [None]
        for a, b in zip(offsets[:-1], offsets[1:]):
            if b > a:
                kids.append(len(nodes))
                nodes.append(TreeNode(1, a, b, z, z, (), len(kids) - 1))
        nodes[0] = TreeNode(0, 0, n, z, z, tuple(kids))
        cap = max((b - a for a, b in zip(offsets[:-1], offsets[1:])), default=1)
        return cls(1, tuple(nodes), leaf_order or Permutation.identity(n), cap, 1)


def build_tree(points_embedded, leaf_capacity: int = DEFAULT_LEAF_CAPACITY,
               max_depth: int = DEFAULT_MAX_DEPTH) -> PartitionTree:
    """Adaptive region tree with box-center splits.

    The root box is the bounding box expanded to a cube. A node splits while
    it holds more than ``leaf_capacity`` points and is shallower than
    ``max_depth``; orthant bit ``a`` is set iff ``coord_a >= center_a``.
    Children are visited in ascending orthant code and points keep their
    original relative order inside a leaf.
    """
    x = as_points(points_embedded)
    n, dim = x.shape
    if dim > 3:
        raise DimTooHigh(f"tree ordering supports dim <= 3, got {dim}")
    if leaf_capacity < 1 or max_depth < 1:
        raise ValueError("leaf_capacity and max_depth must be >= 1")
    if n == 0:
        raise ValueError("cannot build a tree over zero points")
    lo, hi = x.min(axis=0), x.max(axis=0)
    center = 0.5 * (lo + hi)
    half = 0.5 * float(np.max(hi - lo))
    bits = (1 << np.arange(dim)).astype(np.int64)
    n_codes = 1 << dim

    order = np.empty(n, dtype=np.int64)
    nodes: list[TreeNode | None] = []

    def rec(idx, box_lo, box_hi, depth, start, code):
        node_id = len(nodes)
        nodes.append(None)
        kids = []
        if idx.size > leaf_capacity and depth < max_depth:
            mid = 0.5 * (box_lo + box_hi)
            codes = (x[idx] >= mid) @ bits
            srt = np.argsort(codes, kind="stable")
            idx, codes = idx[srt], codes[srt]
            bounds = np.searchsorted(codes, np.arange(n_codes + 1))
            pos = start
            for c in range(n_codes):
                a, b = bounds[c], bounds[c + 1]
                if a == b:
                    continue
                upper = ((c >> np.arange(dim)) & 1).astype(bool)
                c_lo = np.where(upper, mid, box_lo)
                c_hi = np.where(upper, box_hi, mid)
                kids.append(rec(idx[a:b], c_lo, c_hi, depth + 1, pos, c))
                pos += b - a
        else:
            order[start:start + idx.size] = idx
        nodes[node_id] = TreeNode(depth, start, start + idx.size, box_lo, box_hi, tuple(kids), code)
        return node_id

    rec(np.arange(n, dtype=np.int64), center - half, center + half, 0, 0, 0)
    return PartitionTree(dim, tuple(nodes), Permutation.from_order(order),
                         int(leaf_capacity), int(max_depth))


def level_blocking(t: PartitionTree, level: int) -> np.ndarray:
    """Cluster boundary offsets ``[0, ..., n]`` of the partition at ``level``."""
    if level < 0 or level > t.depth:
        raise LevelOutOfRange(f"level {level} outside [0, {t.depth}]")
    starts = [t.nodes[i].lo for i in t.clusters_at(level)]
    return np.array(starts + [t.n_points], dtype=np.int64)


# -- orderings ---------------------------------------------------------------

@dataclass(frozen=True)
class OrderingResult:
    scheme: str
    row_perm: Permutation
    col_perm: Permutation
    row_tree: PartitionTree | None = None
    col_tree: PartitionTree | None = None


def order_scattered(n: int, seed: int = 0) -> Permutation:
    if n < 1:
        raise ValueError("n must be >= 1")
    return Permutation(np.random.default_rng(seed).permutation(n))


def order_lexical(points_embedded, bins_per_axis: int = DEFAULT_BINS) -> Permutation:
    """Sort points by their quantized coordinate tuple.

    Each axis is cut into ``bins_per_axis`` equal-width bins over its observed
    range; ties are broken by the raw last-axis coordinate, then by index.
    In 1-D the bins are skipped and the sort is on the raw coordinate.
    """
    x = as_points(points_embedded)
    n, dim = x.shape
    if dim > 3:
        raise DimTooHigh(f"lexical ordering supports dim <= 3, got {dim}")
    if bins_per_axis < 1:
        raise ValueError("bins_per_axis must be >= 1")
    idx = np.arange(n)
    if dim == 1:
        return Permutation.from_order(np.lexsort((idx, x[:, 0])))
    lo, hi = x.min(axis=0), x.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    bins = np.floor((x - lo) / span * bins_per_axis).astype(np.int64)
    np.clip(bins, 0, bins_per_axis - 1, out=bins)
    # np.lexsort sorts by the last key first
    keys = [idx, x[:, -1]] + [bins[:, a] for a in reversed(range(dim))]
    return Permutation.from_order(np.lexsort(keys))


def order_tree(points_embedded, leaf_capacity: int = DEFAULT_LEAF_CAPACITY,
               max_depth: int = DEFAULT_MAX_DEPTH) -> OrderingResult:
    """Tree ordering of a single (symmetric) point set; the same tree serves
    rows and columns."""
    t = build_tree(points_embedded, leaf_capacity, max_depth)
    return OrderingResult(f"tree{t.dim}", t.leaf_order, t.leaf_order, t, t)


def order_dual_tree(targets_embedded, sources_embedded,
                    leaf_capacity: int = DEFAULT_LEAF_CAPACITY,
                    max_depth: int = DEFAULT_MAX_DEPTH) -> OrderingResult:
    """Row ordering from the target tree, column ordering from the source tree."""
    tt = build_tree(targets_embedded, leaf_capacity, max_depth)
    ts = build_tree(sources_embedded, leaf_capacity, max_depth)
    return OrderingResult(f"tree{tt.dim}", tt.leaf_order, ts.leaf_order, tt, ts)


# -- reverse Cuthill-McKee ---------------------------------------------------

@numba.njit(cache=True)
def _bfs_levels(indptr, indices, start, level):
    """Breadth-first level structure from ``start``; ``level`` must be -1 on
    entry for the component. Returns (visit order, eccentricity)."""
    queue = np.empty(level.size, dtype=np.int64)
    queue[0] = start
    level[start] = 0
    n_visit = 1
    head = 0
    while head < n_visit:
        u = queue[head]
        head += 1
        for e in range(indptr[u], indptr[u + 1]):
            v = indices[e]
            if level[v] < 0:
                level[v] = level[u] + 1
                queue[n_visit] = v
                n_visit += 1
    return queue[:n_visit].copy(), level[queue[n_visit - 1]]


@numba.njit(cache=True)
def _cuthill_mckee(indptr, indices, degree, start, visited):
    queue = np.empty(visited.size, dtype=np.int64)
    queue[0] = start
    visited[start] = True
    n_visit = 1
    head = 0
    buf = np.empty(visited.size, dtype=np.int64)
    while head < n_visit:
        u = queue[head]
        head += 1
        nb = 0
        for e in range(indptr[u], indptr[u + 1]):
            v = indices[e]
            if not visited[v]:
                visited[v] = True
                buf[nb] = v
                nb += 1
        if nb:
            cand = buf[:nb]
            # neighbors arrive in ascending index; a stable sort on degree
            # yields (degree, index) order
            srt = np.argsort(degree[cand], kind="mergesort")
            for t in range(nb):
                queue[n_visit] = cand[srt[t]]
                n_visit += 1
    return queue[:n_visit].copy()


def _pseudo_peripheral(indptr, indices, degree, comp, level):
    """Repeated-BFS heuristic: restart from a minimum-degree node of the last
    level while the eccentricity keeps growing. ``level`` is scratch space,
    all -1 on entry and on exit."""
    if comp.size == 1:
        return int(comp[0])
    v = int(comp[np.lexsort((comp, degree[comp]))[0]])
    ecc_prev = -1
    while True:
        visit, ecc = _bfs_levels(indptr, indices, v, level)
        last = visit[level[visit] == ecc]
        level[visit] = -1
        if ecc <= ecc_prev:
            return v
        ecc_prev = ecc
        v = int(last[np.lexsort((last, degree[last]))[0]])


def order_rcm(p) -> Permutation:
    """Reverse Cuthill-McKee ordering of a square pattern.

    The pattern is symmetrized and its diagonal dropped. Components are
    handled in ascending order of their smallest index; each starts from a
    pseudo-peripheral node, visits neighbors by ascending degree then index,
    and is reversed.
    """
    p = pattern_of(p)
    if p.n_rows != p.n_cols:
        raise NotSquare(f"rCM needs a square pattern, got {p.shape}")
    n = p.n_rows
    sym = symmetrize(p)
    off = sym.rows != sym.cols
    rows, cols = sym.rows[off], sym.cols[off]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=n), out=indptr[1:])
    indices = np.ascontiguousarray(cols)
    degree = np.diff(indptr)

    comp_level = np.full(n, -1, dtype=np.int64)
    scratch = np.full(n, -1, dtype=np.int64)
    visited = np.zeros(n, dtype=np.bool_)
    out = []
    for i in range(n):
        if comp_level[i] >= 0:
            continue
        comp, _ = _bfs_levels(indptr, indices, i, comp_level)
        start = _pseudo_peripheral(indptr, indices, degree, np.sort(comp), scratch)
        cm = _cuthill_mckee(indptr, indices, degree, start, visited)
        out.append(cm[::-1])
    order = np.concatenate(out) if out else np.empty(0, dtype=np.int64)
    return Permutation.from_order(order)
