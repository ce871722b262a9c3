"""Deterministic synthetic patterns and point clouds."""

from __future__ import annotations

import numpy as np

from .core import SparsePattern
from .errors import NotDivisible, TooMany, TooWide


def _check_positive(**kw) -> None:
    for name, v in kw.items():
        if v < 1:
            raise ValueError(f"{name} must be positive, got {v}")


def gen_arrowhead(n: int, b: int) -> SparsePattern:
    """Full ``b x b`` diagonal blocks plus a full first block row and block
    column; ``nnz = (3 n/b - 2) b^2``."""
    _check_positive(n=n, b=b)
    if n % b:
        raise NotDivisible(f"block size {b} does not divide {n}")
    nb = n // b
    blocks = {(i, i) for i in range(nb)}
    blocks |= {(0, j) for j in range(nb)} | {(i, 0) for i in range(nb)}
    mask = np.zeros((nb, nb), dtype=bool)
    for i, j in blocks:
        mask[i, j] = True
    dense = np.kron(mask, np.ones((b, b), dtype=bool))
    return SparsePattern.from_dense(dense)


def gen_banded(n: int, nnz_per_row: int) -> SparsePattern:
    """Row ``i`` holds columns ``i - w//2 .. i + ceil(w/2) - 1`` clipped to
    ``[0, n)``."""
    _check_positive(n=n, nnz_per_row=nnz_per_row)
    w = nnz_per_row
    if w > n:
        raise TooWide(f"band width {w} exceeds n={n}")
    offs = np.arange(-(w // 2), -(w // 2) + w)
    rows = np.repeat(np.arange(n, dtype=np.int64), w)
    cols = (np.arange(n, dtype=np.int64)[:, None] + offs[None, :]).ravel()
    keep = (cols >= 0) & (cols < n)
    return SparsePattern(n, n, rows[keep], cols[keep], _trusted=True)


def gen_scattered(n: int, nnz_per_row: int, seed: int = 0) -> SparsePattern:
    """``nnz_per_row`` distinct uniformly random columns in every row."""
    _check_positive(n=n, nnz_per_row=nnz_per_row)
    w = nnz_per_row
    if w > n:
        raise TooMany(f"{w} distinct columns requested from {n}")
    rng = np.random.default_rng(seed)
    cols = np.empty((n, w), dtype=np.int64)
    if w * 4 >= n:
        for i in range(n):
            cols[i] = rng.choice(n, size=w, replace=False)
    else:
        # draw with replacement and redraw rows that collide (rare for w << n)
        cols[:] = rng.integers(0, n, size=(n, w))
        cols.sort(axis=1)
        bad = np.flatnonzero((np.diff(cols, axis=1) == 0).any(axis=1))
        while bad.size:
            redo = np.sort(rng.integers(0, n, size=(bad.size, w)), axis=1)
            cols[bad] = redo
            bad = bad[(np.diff(redo, axis=1) == 0).any(axis=1)]
    cols.sort(axis=1)
    rows = np.repeat(np.arange(n, dtype=np.int64), w)
    return SparsePattern(n, n, rows, cols.ravel(), _trusted=True)


def gen_gaussian_mixture(n_points: int, dim: int, n_clusters: int, center_spread: float,
                         cluster_sigma: float, seed: int = 0, return_labels: bool = False):
    """Isotropic Gaussian clusters around centers drawn uniformly from
    ``[0, center_spread]^dim``.

    Points are assigned to clusters round-robin, so cluster sizes differ by
    at most one; the returned order is shuffled.

    Returns
    -------
    points : ndarray, shape (n_points, dim)
    centers, labels : ndarray
        Only when ``return_labels`` is set.
    """
    _check_positive(n_points=n_points, dim=dim, n_clusters=n_clusters)
    if center_spread < 0 or cluster_sigma < 0:
        raise ValueError("center_spread and cluster_sigma must be non-negative")
    rng = np.random.default_rng(seed)
    centers = rng.uniform(0.0, center_spread, size=(n_clusters, dim))
    labels = rng.permutation(np.arange(n_points) % n_clusters)
    points = centers[labels] + cluster_sigma * rng.standard_normal((n_points, dim))
    if return_labels:
        return points, centers, labels
    return points
