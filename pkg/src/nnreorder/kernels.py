"""Interaction kernels: flat and multi-level SpMV, the t-SNE attractive
force, and mean shift.

All accumulation orders are fixed (canonical CSR order for the flat kernel;
leaf-block order, then local row-major, for the blocked kernels), so the
parallel blocked kernel is bit-identical to the sequential one.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numba
import numpy as np

from .core import Permutation, SparseMatrix, SparsePattern, as_points
from .errors import DimMismatch, NonFiniteValue, NotSquare, OrderingMismatch, ZeroWeight
from .hier import HierBlockMatrix, update_values
from .knn import KnnGraph, build_knn, pair_sq_dists


@dataclass(frozen=True)
class OrderedVector:
    """A charge or potential vector tagged with the layout it is stored in
    (see :attr:`Permutation.tag`)."""

    values: np.ndarray
    ordering: str

    def __len__(self) -> int:
        return int(self.values.shape[0])


def _unwrap(x, expected_tag: str | None, n: int, what: str) -> np.ndarray:
    if isinstance(x, OrderedVector):
        if expected_tag is not None and x.ordering != expected_tag:
            raise OrderingMismatch(
                f"{what} is laid out as {x.ordering}, matrix expects {expected_tag}"
            )
        x = x.values
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.shape[0] != n:
        raise DimMismatch(f"{what} has length {x.shape[0]}, expected {n}")
    return x


# -- flat CSR ------------------------------------------------------------------

@numba.njit(cache=True, nogil=True)
def _csr_mv(indptr, indices, data, x, y):
    for i in range(indptr.size - 1):
        s = 0.0
        for e in range(indptr[i], indptr[i + 1]):
            s += data[e] * x[indices[e]]
        y[i] = s


@numba.njit(cache=True, nogil=True)
def _csr_mm(indptr, indices, data, x, y):
    ncol = x.shape[1]
    for i in range(indptr.size - 1):
        for c in range(ncol):
            s = 0.0
            for e in range(indptr[i], indptr[i + 1]):
                s += data[e] * x[indices[e], c]
            y[i, c] = s


class CsrKernel:
    """Flat CSR operand with 32-bit column indices (the baseline layout)."""

    def __init__(self, m: SparseMatrix):
        self.shape = m.shape
        self.nnz = m.nnz
        self.indptr = np.ascontiguousarray(m.indptr, dtype=np.int64)
        idx_type = np.int32 if m.shape[1] < 2**31 else np.int64
        self.indices = np.ascontiguousarray(m.cols, dtype=idx_type)
        self.data = np.ascontiguousarray(m.values, dtype=np.float64)

    def matvec(self, x: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
        y = np.empty(self.shape[0]) if out is None else out
        _csr_mv(self.indptr, self.indices, self.data, x, y)
        return y


def spmv_flat(m: SparseMatrix, x) -> np.ndarray:
    """``y_i = sum_j a_ij x_j`` accumulated in canonical entry order."""
    x = _unwrap(x, None, m.shape[1], "charge vector")
    return CsrKernel(m).matvec(x)


def spmm_flat(m: SparseMatrix, x: np.ndarray) -> np.ndarray:
    """Multiply by each column of a dense ``(n_cols, c)`` block."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.shape[0] != m.shape[1]:
        raise DimMismatch(f"operand has {x.shape[0]} rows, expected {m.shape[1]}")
    k = CsrKernel(m)
    y = np.empty((m.shape[0], x.shape[1]))
    _csr_mm(k.indptr, k.indices, k.data, x, y)
    return y


# -- multi-level ---------------------------------------------------------------

@numba.njit(cache=True, nogil=True)
def _hier_mv_range(b_lo, b_hi, row_off, col_off, ptr, lrow, lcol, vals, x, y):
    # y must be zeroed by the caller; with a single leaf block this performs
    # exactly the additions of the CSR kernel, in the same order
    for b in range(b_lo, b_hi):
        yb = y[row_off[b]:]
        xb = x[col_off[b]:]
        for e in range(ptr[b], ptr[b + 1]):
            yb[lrow[e]] += vals[e] * xb[lcol[e]]


def _check_hier_operand(h: HierBlockMatrix, x) -> np.ndarray:
    return _unwrap(x, h.col_tag, h.n_cols, "charge vector")


def spmv_hier(h: HierBlockMatrix, x) -> np.ndarray:
    """Multi-level product; ``x`` must be laid out in the column tree's leaf
    order and the result is in the row tree's leaf order.

    Each leaf block adds ``v * x[col_off + lc]`` into ``y[row_off + lr]``
    entry by entry.
    """
    x = _check_hier_operand(h, x)
    y = np.zeros(h.n_rows)
    _hier_mv_range(0, h.n_leaf_blocks, h.leaf_row_off, h.leaf_col_off, h.leaf_ptr,
                   h.local_row, h.local_col, h.values, x, y)
    return y


def spmv_hier_parallel(h: HierBlockMatrix, x, workers: int = 1) -> np.ndarray:
    """Distribute top-level target-cluster block rows over ``workers``
    threads. Each block row writes a disjoint output segment in the same
    order as :func:`spmv_hier`, so results are bit-identical."""
    x = _check_hier_operand(h, x)
    y = np.zeros(h.n_rows)
    groups = h.row_group_ptr
    args = (h.leaf_row_off, h.leaf_col_off, h.leaf_ptr, h.local_row, h.local_col, h.values, x, y)
    if workers <= 1 or groups.size <= 2:
        _hier_mv_range(0, h.n_leaf_blocks, *args)
        return y
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_hier_mv_range, int(groups[g]), int(groups[g + 1]), *args)
                   for g in range(groups.size - 1)]
        for f in futures:
            f.result()
    return y


class HierKernel:
    """Reusable multi-level operand with an optional persistent thread pool
    (avoids pool start-up inside timed loops)."""

    def __init__(self, h: HierBlockMatrix, workers: int = 1):
        self.h = h
        self.workers = max(1, int(workers))
        self._pool = ThreadPoolExecutor(max_workers=self.workers) if self.workers > 1 else None

    def matvec(self, x: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
        h = self.h
        y = np.zeros(h.n_rows) if out is None else out
        if out is not None:
            y[:] = 0.0
        args = (h.leaf_row_off, h.leaf_col_off, h.leaf_ptr, h.local_row, h.local_col, h.values, x, y)
        groups = h.row_group_ptr
        if self._pool is None or groups.size <= 2:
            _hier_mv_range(0, h.n_leaf_blocks, *args)
        else:
            futures = [self._pool.submit(_hier_mv_range, int(groups[g]), int(groups[g + 1]), *args)
                       for g in range(groups.size - 1)]
            for f in futures:
                f.result()
        return y

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def iterate_interactions(h: HierBlockMatrix, value_fn, x_seq, timings: list | None = None) -> list[np.ndarray]:
    """For each step ``kappa``: refresh values with ``value_fn(kappa)`` (a
    vectorized update function, see :func:`update_values`), then multiply.

    Per-step wall times in nanoseconds are appended to ``timings`` if given.
    """
    out = []
    for kappa, x in enumerate(x_seq):
        t0 = time.perf_counter_ns()
        update_values(h, value_fn(kappa))
        out.append(spmv_hier(h, x))
        if timings is not None:
            timings.append(time.perf_counter_ns() - t0)
    return out


# -- t-SNE attractive force ------------------------------------------------------

def tsne_attractive_step(h: HierBlockMatrix, y, p: np.ndarray | None = None,
                         workers: int = 1) -> np.ndarray:
    """Attractive part of the t-SNE gradient.

    Sets ``a_ij = p_ij / (1 + |y_i - y_j|^2)`` in place, then returns
    ``F_i = sum_j a_ij (y_i - y_j)`` computed as ``r * Y - A Y`` with
    ``r = A 1``. ``p`` holds the affinities in storage order; it defaults to
    the values currently in ``h`` (so pass the original ``p`` when calling
    repeatedly). ``y`` is laid out in the matrix's row/column order.
    """
    if h.n_rows != h.n_cols:
        raise NotSquare("t-SNE forces need a square interaction matrix")
    y = as_points(y, name="embedding")
    if y.shape[0] != h.n_rows:
        raise DimMismatch(f"embedding has {y.shape[0]} points, matrix has {h.n_rows} rows")
    if h.row_tag != h.col_tag:
        raise OrderingMismatch("row and column layouts differ")
    p = h.values.copy() if p is None else np.asarray(p, dtype=np.float64)
    if p.shape != h.values.shape:
        raise DimMismatch("affinity array does not match the stored entries")

    def attract(rows, cols, _old):
        d2 = pair_sq_dists(y, y, rows, cols)
        return p / (1.0 + d2)

    update_values(h, attract)
    with HierKernel(h, workers) as k:
        r = k.matvec(np.ones(h.n_cols))
        forces = np.empty_like(y)
        for c in range(y.shape[1]):
            yc = np.ascontiguousarray(y[:, c])
            forces[:, c] = r * yc - k.matvec(yc)
    if not np.all(np.isfinite(forces)):
        raise NonFiniteValue("non-finite attractive force")
    return forces


# -- mean shift ----------------------------------------------------------------

@dataclass(frozen=True)
class MeanShiftState:
    """Current means (targets) against fixed sources.

    ``knn`` was built against the targets at iteration ``knn_iteration``;
    it is rebuilt every ``refresh_period`` steps. ``target_order[r]`` is the
    original index of the target stored in row ``r`` (changes only when
    ``reorder_on_refresh`` is set).
    """

    sources: np.ndarray
    targets: np.ndarray
    bandwidth: float
    k: int
    knn: KnnGraph
    refresh_period: int = 10
    iteration: int = 0
    knn_iteration: int = 0
    reorder_on_refresh: bool = False
    target_order: np.ndarray | None = None
    leaf_capacity: int = 128

    @classmethod
    def start(cls, sources, targets=None, bandwidth: float = 1.0, k: int = 10,
              refresh_period: int = 10, reorder_on_refresh: bool = False,
              leaf_capacity: int = 128) -> "MeanShiftState":
        if not bandwidth > 0:
            from .errors import NonPositiveBandwidth
            raise NonPositiveBandwidth(f"bandwidth must be positive, got {bandwidth}")
        if refresh_period < 1:
            raise ValueError("refresh_period must be >= 1")
        s = as_points(sources, name="sources")
        t = s.copy() if targets is None else as_points(targets, name="targets").copy()
        g = build_knn(t, s, k)
        return cls(s, t, float(bandwidth), int(k), g, int(refresh_period), 0, 0,
                   reorder_on_refresh, np.arange(t.shape[0]), leaf_capacity)

    def targets_in_original_order(self) -> np.ndarray:
        out = np.empty_like(self.targets)
        out[self.target_order] = self.targets
        return out


def meanshift_weights(state: MeanShiftState) -> SparseMatrix:
    """Gaussian weights of the current targets against their kNN sources."""
    m, k = state.knn.neighbor_ids.shape
    rows = np.repeat(np.arange(m, dtype=np.int64), k)
    cols = state.knn.neighbor_ids.ravel()
    order = np.lexsort((cols, rows))
    rows, cols = rows[order], cols[order]
    d2 = pair_sq_dists(state.targets, state.sources, rows, cols)
    w = np.exp(-d2 / (2.0 * state.bandwidth ** 2))
    pattern = SparsePattern(m, state.sources.shape[0], rows, cols, _trusted=True)
    return SparseMatrix(pattern, w)


def meanshift_step(state: MeanShiftState) -> MeanShiftState:
    """Move every target to the Gaussian-weighted mean of its kNN sources.

    Raises :class:`ZeroWeight` naming the first target whose weights all
    underflow.
    """
    if state.iteration - state.knn_iteration > state.refresh_period:
        raise ValueError("neighbor lists are staler than the refresh period allows")
    w = meanshift_weights(state)
    rhs = np.column_stack([state.sources, np.ones(state.sources.shape[0])])
    acc = spmm_flat(w, rhs)
    denom = acc[:, -1]
    zero = np.flatnonzero(denom == 0.0)
    if zero.size:
        raise ZeroWeight(int(state.target_order[zero[0]]))
    new_targets = acc[:, :-1] / denom[:, None]
    it = state.iteration + 1
    targets, order = new_targets, state.target_order
    knn, knn_it = state.knn, state.knn_iteration
    if it % state.refresh_period == 0:
        if state.reorder_on_refresh:
            from .orderings import order_tree
            from .pca import embed_points
            emb = embed_points(targets, 3)
            perm = order_tree(emb, state.leaf_capacity).row_perm
            targets = perm.apply(targets)
            order = perm.apply(order)
        knn = build_knn(targets, state.sources, state.k)
        knn_it = it
    return replace(state, targets=targets, iteration=it, knn=knn, knn_iteration=knn_it,
                   target_order=order)
