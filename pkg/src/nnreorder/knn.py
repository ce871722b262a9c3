"""Exact k-nearest-neighbor interaction patterns and kernel-valued matrices."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import SparseMatrix, SparsePattern, as_points, pattern_of
from .errors import DimMismatch, KTooLarge, NonPositiveBandwidth, NotSquare, SizeMismatch

# rows of the target block evaluated per GEMM; bounds the M x N scratch array
_CHUNK = 512


@dataclass(frozen=True)
class KnnGraph:
    """``neighbor_ids[i]`` lists the ``k`` nearest sources of target ``i`` by
    ascending squared distance (ties: smaller source index first)."""

    k: int
    n_sources: int
    neighbor_ids: np.ndarray
    neighbor_dists: np.ndarray

    @property
    def n_targets(self) -> int:
        return int(self.neighbor_ids.shape[0])


def build_knn(targets, sources, k: int) -> KnnGraph:
    """Brute-force exact kNN under squared Euclidean distance.

    When ``targets is sources`` each point's own index is excluded from its
    neighbor list. Candidate selection runs on the GEMM expansion
    ``|t|^2 + |s|^2 - 2 t.s``; the candidates are re-ranked with directly
    computed distances, so the result is exact and ties are resolved by
    source index.
    """
    self_set = targets is sources
    t = as_points(targets, name="targets")
    s = t if self_set else as_points(sources, name="sources")
    if t.shape[1] != s.shape[1]:
        raise DimMismatch(f"targets have dim {t.shape[1]}, sources dim {s.shape[1]}")
    n = s.shape[0]
    limit = n - 1 if self_set else n
    if k < 1 or k > limit:
        raise KTooLarge(f"k={k} outside [1, {limit}]")

    m, dim = t.shape
    ids = np.empty((m, k), dtype=np.int64)
    dists = np.empty((m, k), dtype=np.float64)
    s_sq = np.einsum("ij,ij->i", s, s)
    s_sq_max = float(s_sq.max()) if n else 0.0
    t_sq = np.einsum("ij,ij->i", t, t)
    # generous bound on the rounding error of the expanded distance
    eps_scale = 8.0 * (dim + 4) * np.finfo(np.float64).eps

    for lo in range(0, m, _CHUNK):
        hi = min(lo + _CHUNK, m)
        approx = t_sq[lo:hi, None] + s_sq[None, :] - 2.0 * (t[lo:hi] @ s.T)
        if self_set:
            approx[np.arange(hi - lo), np.arange(lo, hi)] = np.inf
        kth = np.partition(approx, k - 1, axis=1)[:, k - 1]
        tau = eps_scale * (t_sq[lo:hi] + s_sq_max)
        cand_mask = approx <= (kth + 2.0 * tau)[:, None]
        for r in range(hi - lo):
            i = lo + r
            cand = np.flatnonzero(cand_mask[r])
            diff = s[cand] - t[i]
            exact = np.einsum("ij,ij->i", diff, diff)
            order = np.lexsort((cand, exact))[:k]
            ids[i] = cand[order]
            dists[i] = exact[order]
    ids.setflags(write=False)
    dists.setflags(write=False)
    return KnnGraph(k=k, n_sources=n, neighbor_ids=ids, neighbor_dists=dists)


def pattern_from_knn(g: KnnGraph) -> SparsePattern:
    m, k = g.neighbor_ids.shape
    rows = np.repeat(np.arange(m, dtype=np.int64), k)
    return SparsePattern(m, g.n_sources, rows, g.neighbor_ids.ravel())


def symmetrize(p) -> SparsePattern:
    """Structural union of a square pattern with its transpose."""
    p = pattern_of(p)
    if p.n_rows != p.n_cols:
        raise NotSquare(f"cannot symmetrize a {p.n_rows}x{p.n_cols} pattern")
    p_t = SparsePattern(p.n_cols, p.n_rows, p.cols, p.rows)
    return p.union(p_t)


def gaussian_values(p, targets, sources, h: float) -> SparseMatrix:
    """Attach ``exp(-|t_i - s_j|^2 / (2 h^2))`` to every entry of ``p``."""
    if not h > 0:
        raise NonPositiveBandwidth(f"bandwidth must be positive, got {h}")
    p = pattern_of(p)
    t = as_points(targets, name="targets")
    s = t if sources is targets else as_points(sources, name="sources")
    if p.n_rows != t.shape[0] or p.n_cols != s.shape[0]:
        raise SizeMismatch(
            f"pattern {p.shape} does not match {t.shape[0]} targets x {s.shape[0]} sources"
        )
    if t.shape[1] != s.shape[1]:
        raise DimMismatch("targets and sources differ in dimension")
    d2 = pair_sq_dists(t, s, p.rows, p.cols)
    return SparseMatrix(p, np.exp(-d2 / (2.0 * h * h)))


def pair_sq_dists(t: np.ndarray, s: np.ndarray, rows: np.ndarray, cols: np.ndarray,
                  chunk: int = 1 << 16) -> np.ndarray:
    """Squared distances ``|t[rows[e]] - s[cols[e]]|^2`` computed directly."""
    out = np.empty(rows.size, dtype=np.float64)
    for lo in range(0, rows.size, chunk):
        diff = t[rows[lo:lo + chunk]] - s[cols[lo:lo + chunk]]
        out[lo:lo + chunk] = np.einsum("ij,ij->i", diff, diff)
    return out
