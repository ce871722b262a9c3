"""Sparsity-profile quality measures.

``gamma_*`` evaluate the Gaussian patch-density score

    gamma(A; sigma) = 1 / (sigma * nnz) * sum_{p, q in nz(A)} exp(-|p - q|^2 / sigma^2)

over nonzero index positions ``p = (row, col)``. ``beta_bruteforce`` and
``best_ordering_bruteforce`` are exhaustive oracles for the combinatorial
patch-covering density on tiny matrices.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numba
import numpy as np

from .core import Permutation, SparsePattern, pattern_of
from .errors import EmptyPattern, TooLarge

# exp(-x) is exactly 0.0 in double precision for x above ~745.13
_EXP_ZERO_ARG = 746.0

BETA_MAX_CELLS = 64
ORDERING_MAX_SIDE = 5


@dataclass(frozen=True)
class GammaParams:
    sigma: float
    cutoff_rho: float = 3.0
    include_self_pairs: bool = True

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not self.cutoff_rho >= 1:
            raise ValueError(f"cutoff_rho must be >= 1, got {self.cutoff_rho}")


def _params(params) -> GammaParams:
    return params if isinstance(params, GammaParams) else GammaParams(float(params))


def _kernel_table(sigma: float, extent: int) -> np.ndarray:
    """``exp(-d^2 / sigma^2)`` for integer offsets ``d``, cut where it first
    underflows to 0.0. The kernel is separable, so a pair contributes
    ``table[|dr|] * table[|dc|]`` with no exponential in the pair loop."""
    d = np.arange(min(extent, int(math.sqrt(_EXP_ZERO_ARG) * sigma) + 1), dtype=np.float64)
    return np.exp(-(d * d) / (sigma * sigma))


@numba.njit(cache=True, parallel=True)
def _gamma_exact_sum(r, c, table, include_self):
    n = r.size
    lim = table.size
    partial = np.zeros(n)
    for p in numba.prange(n):
        rp = r[p]
        cp = c[p]
        acc = 0.0
        for q in range(p + 1, n):
            dr = r[q] - rp
            # rows are sorted, so every later pair contributes exactly 0.0
            if dr >= lim:
                break
            dc = abs(c[q] - cp)
            if dc < lim:
                acc += table[dr] * table[dc]
        partial[p] = 2.0 * acc
    total = np.sum(partial)
    if include_self:
        total += n
    return total


def gamma_exact(p, params) -> float:
    """Direct evaluation over all ordered pairs of nonzeros.

    ``params`` is a :class:`GammaParams` or a bare ``sigma``. Pairs whose row
    distance alone drives the kernel to an exact floating-point zero are
    skipped, which leaves the sum unchanged.
    """
    p = pattern_of(p)
    prm = _params(params)
    if p.nnz == 0:
        raise EmptyPattern("gamma is undefined for an empty pattern")
    table = _kernel_table(prm.sigma, max(p.shape))
    total = _gamma_exact_sum(p.rows, p.cols, table, prm.include_self_pairs)
    return float(total / (prm.sigma * p.nnz))


@numba.njit(cache=True, parallel=True)
def _gamma_grid_sum(r, c, ukeys, ustart, ucr, ucc, ncc, radius, table, include_self):
    n_cells = ukeys.size
    lim = table.size
    partial = np.zeros(n_cells)
    for u in numba.prange(n_cells):
        cr = ucr[u]
        cc = ucc[u]
        c_lo = max(cc - radius, 0)
        c_hi = min(cc + radius, ncc - 1)
        acc = 0.0
        for dr in range(-radius, radius + 1):
            row = cr + dr
            if row < 0:
                continue
            v_lo = np.searchsorted(ukeys, row * ncc + c_lo)
            v_hi = np.searchsorted(ukeys, row * ncc + c_hi, side="right")
            for v in range(v_lo, v_hi):
                for p in range(ustart[u], ustart[u + 1]):
                    rp = r[p]
                    cp = c[p]
                    for q in range(ustart[v], ustart[v + 1]):
                        if p == q and not include_self:
                            continue
                        ddr = abs(r[q] - rp)
                        ddc = abs(c[q] - cp)
                        if ddr < lim and ddc < lim:
                            acc += table[ddr] * table[ddc]
        partial[u] = acc
    return np.sum(partial)


def gamma_grid(p, params) -> float:
    """Cell-list evaluation of gamma.

    Nonzeros are binned into square cells of side ``sigma``; only cell pairs
    within Chebyshev distance ``ceil(cutoff_rho)`` are accumulated, so every
    neglected pair contributes less than ``exp(-cutoff_rho**2)``.
    """
    p = pattern_of(p)
    prm = _params(params)
    if p.nnz == 0:
        raise EmptyPattern("gamma is undefined for an empty pattern")
    s = prm.sigma
    cr = np.floor(p.rows / s).astype(np.int64)
    cc = np.floor(p.cols / s).astype(np.int64)
    ncc = int(cc.max()) + 1
    key = cr * ncc + cc
    order = np.argsort(key, kind="stable")
    key = key[order]
    r = np.ascontiguousarray(p.rows[order])
    c = np.ascontiguousarray(p.cols[order])
    ukeys, ustart = np.unique(key, return_index=True)
    ustart = np.append(ustart, key.size).astype(np.int64)
    radius = int(math.ceil(prm.cutoff_rho))
    total = _gamma_grid_sum(r, c, ukeys, ustart, ukeys // ncc, ukeys % ncc, ncc,
                            radius, _kernel_table(s, max(p.shape)), prm.include_self_pairs)
    return float(total / (s * p.nnz))


def gamma(p, params, method: str = "auto") -> float:
    """Dispatch to :func:`gamma_exact` (small patterns) or :func:`gamma_grid`."""
    p = pattern_of(p)
    if method == "exact" or (method == "auto" and p.nnz <= 20000):
        return gamma_exact(p, params)
    return gamma_grid(p, params)


def bandwidth(p) -> int:
    p = pattern_of(p)
    if p.nnz == 0:
        return 0
    return int(np.max(np.abs(p.rows - p.cols)))


# -- patch covering oracles --------------------------------------------------

@dataclass(frozen=True)
class Patch:
    row_lo: int
    row_hi: int
    col_lo: int
    col_hi: int

    @property
    def area(self) -> int:
        return (self.row_hi - self.row_lo) * (self.col_hi - self.col_lo)

    def contains(self, i: int, j: int) -> bool:
        return self.row_lo <= i < self.row_hi and self.col_lo <= j < self.col_hi

    def overlaps(self, other: "Patch") -> bool:
        return (self.row_lo < other.row_hi and other.row_lo < self.row_hi
                and self.col_lo < other.col_hi and other.col_lo < self.col_hi)


@dataclass(frozen=True)
class PatchCovering:
    """Non-overlapping half-open index rectangles."""

    patches: tuple[Patch, ...]

    @property
    def area(self) -> int:
        return sum(pt.area for pt in self.patches)

    def is_valid_for(self, p: SparsePattern) -> bool:
        for a, b in itertools.combinations(self.patches, 2):
            if a.overlaps(b):
                return False
        return all(any(pt.contains(i, j) for pt in self.patches) for i, j in p.entries())

    def score(self, nnz: int) -> float:
        return nnz / (len(self.patches) * self.area)


def _tight_rects(mask: np.ndarray):
    """All rectangles that are the bounding box of the nonzeros they hold."""
    nr, nc = mask.shape
    rects = []
    for r0 in range(nr):
        for r1 in range(r0 + 1, nr + 1):
            for c0 in range(nc):
                for c1 in range(c0 + 1, nc + 1):
                    sub = mask[r0:r1, c0:c1]
                    if not (sub[0].any() and sub[-1].any() and sub[:, 0].any() and sub[:, -1].any()):
                        continue
                    rects.append((r0, r1, c0, c1))
    return rects


def _beta_search(mask: np.ndarray):
    nr, nc = mask.shape
    cell_bit = np.arange(nr * nc, dtype=object).reshape(nr, nc)
    nz_cells = [int(i * nc + j) for i, j in zip(*np.nonzero(mask))]
    nnz = len(nz_cells)
    nz_mask = sum(1 << b for b in nz_cells)

    rects = []
    for r0, r1, c0, c1 in _tight_rects(mask):
        cells = 0
        for b in cell_bit[r0:r1, c0:c1].ravel():
            cells |= 1 << int(b)
        rects.append(((r0, r1, c0, c1), cells, (r1 - r0) * (c1 - c0), bin(cells & nz_mask).count("1")))
    containing = {b: [] for b in nz_cells}
    for rect in rects:
        for b in nz_cells:
            if rect[1] >> b & 1:
                containing[b].append(rect)
    for b in containing:
        # dense candidates first; they tend to produce good incumbents early
        containing[b].sort(key=lambda t: (-t[3] / t[2], -t[3], t[0]))

    # incumbents: one bounding box, or one patch per nonzero
    bbox = max(rects, key=lambda t: t[2])
    best = [nnz / bbox[2], (bbox[0],)]
    if nnz / (nnz * nnz) > best[0]:
        best = [1.0 / nnz, tuple((b // nc, b // nc + 1, b % nc, b % nc + 1) for b in nz_cells)]

    chosen: list[tuple[int, int, int, int]] = []

    def search(covered: int, used: int, k: int, area: int, n_cov: int):
        if covered == nz_mask:
            score = nnz / (k * area)
            if score > best[0]:
                best[0] = score
                best[1] = tuple(chosen)
            return
        remaining = nnz - n_cov
        if nnz / ((k + 1) * (area + remaining)) <= best[0]:
            return
        free = nz_mask & ~covered
        b = (free & -free).bit_length() - 1
        for geom, cells, r_area, r_nnz in containing[b]:
            if cells & used:
                continue
            chosen.append(geom)
            search(covered | (cells & nz_mask), used | cells, k + 1, area + r_area, n_cov + r_nnz)
            chosen.pop()

    search(0, 0, 0, 0, 0)
    return best[0], best[1]


def beta_bruteforce(p) -> tuple[float, PatchCovering]:
    """Maximal patch-covering density and one witness covering.

    Exhaustive branch-and-bound over coverings by tight rectangles; limited
    to matrices of at most 64 cells.
    """
    p = pattern_of(p)
    if p.n_rows * p.n_cols > BETA_MAX_CELLS:
        raise TooLarge(f"{p.n_rows}x{p.n_cols} exceeds the {BETA_MAX_CELLS}-cell oracle limit")
    if p.nnz == 0:
        raise EmptyPattern("beta is undefined for an empty pattern")
    score, geoms = _beta_search(p.to_dense())
    return score, PatchCovering(tuple(Patch(*g) for g in geoms))


def best_ordering_bruteforce(p) -> tuple[Permutation, Permutation, float]:
    """Row/column permutation pair maximizing beta, by full enumeration."""
    p = pattern_of(p)
    if p.n_rows > ORDERING_MAX_SIDE or p.n_cols > ORDERING_MAX_SIDE:
        raise TooLarge(f"{p.n_rows}x{p.n_cols} exceeds {ORDERING_MAX_SIDE}x{ORDERING_MAX_SIDE}")
    if p.nnz == 0:
        raise EmptyPattern("beta is undefined for an empty pattern")
    base = p.to_dense()
    cache: dict[bytes, float] = {}
    best = (-1.0, None, None)
    for fr in itertools.permutations(range(p.n_rows)):
        inv_r = np.argsort(fr)
        rows_done = base[inv_r]
        for fc in itertools.permutations(range(p.n_cols)):
            m = rows_done[:, np.argsort(fc)]
            key = np.packbits(m).tobytes()
            score = cache.get(key)
            if score is None:
                score = _beta_search(m)[0]
                cache[key] = score
            if score > best[0]:
                best = (score, fr, fc)
    return Permutation(best[1]), Permutation(best[2]), best[0]
