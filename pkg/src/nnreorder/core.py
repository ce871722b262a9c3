"""Sparse patterns, valued sparse matrices, permutations and point sets.

Patterns and matrices are kept in canonical row-major order (row, then
column ascending) from construction onwards; every other module relies on
that. Objects are immutable after construction: the index and value arrays
are flagged read-only.
"""

from __future__ import annotations

import hashlib
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DimMismatch,
    DuplicateEntry,
    FormatError,
    NonFiniteValue,
    OutOfBounds,
    SizeMismatch,
)

INDEX_DTYPE = np.int64


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def _canonical_order(rows: np.ndarray, cols: np.ndarray, n_cols: int) -> np.ndarray:
    key = rows * np.int64(max(n_cols, 1)) + cols
    return np.argsort(key, kind="stable")


class SparsePattern:
    """Structure of a sparse matrix: deduplicated (row, col) pairs in
    row-major order.

    Duplicate pairs are rejected; use :meth:`union` to merge patterns.
    """

    def __init__(self, n_rows: int, n_cols: int, rows, cols, *, _trusted: bool = False):
        self.n_rows = int(n_rows)
        self.n_cols = int(n_cols)
        rows = np.asarray(rows, dtype=INDEX_DTYPE).ravel()
        cols = np.asarray(cols, dtype=INDEX_DTYPE).ravel()
        if rows.shape != cols.shape:
            raise SizeMismatch("row and column index arrays differ in length")
        if not _trusted:
            if self.n_rows < 0 or self.n_cols < 0:
                raise SizeMismatch("negative matrix dimension")
            if rows.size and (
                rows.min() < 0 or cols.min() < 0
                or rows.max() >= self.n_rows or cols.max() >= self.n_cols
            ):
                raise OutOfBounds(
                    f"entry index outside {self.n_rows}x{self.n_cols} matrix"
                )
            order = _canonical_order(rows, cols, self.n_cols)
            rows, cols = rows[order], cols[order]
            if rows.size > 1:
                same = (np.diff(rows) == 0) & (np.diff(cols) == 0)
                if same.any():
                    k = int(np.flatnonzero(same)[0])
                    raise DuplicateEntry(f"duplicate entry ({rows[k]}, {cols[k]})")
        self.rows = _frozen(np.ascontiguousarray(rows))
        self.cols = _frozen(np.ascontiguousarray(cols))

    @classmethod
    def from_entries(cls, entries: Iterable[tuple[int, int]], n_rows: int, n_cols: int) -> "SparsePattern":
        arr = np.asarray(list(entries), dtype=INDEX_DTYPE).reshape(-1, 2)
        return cls(n_rows, n_cols, arr[:, 0], arr[:, 1])

    @classmethod
    def from_dense(cls, mask) -> "SparsePattern":
        mask = np.asarray(mask, dtype=bool)
        r, c = np.nonzero(mask)
        return cls(mask.shape[0], mask.shape[1], r, c, _trusted=True)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self) -> int:
        return int(self.rows.size)

    @cached_property
    def indptr(self) -> np.ndarray:
        """CSR row pointer array (length ``n_rows + 1``)."""
        counts = np.bincount(self.rows, minlength=self.n_rows)
        ptr = np.zeros(self.n_rows + 1, dtype=INDEX_DTYPE)
        np.cumsum(counts, out=ptr[1:])
        return _frozen(ptr)

    def entries(self) -> list[tuple[int, int]]:
        return list(zip(self.rows.tolist(), self.cols.tolist()))

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape, dtype=bool)
        out[self.rows, self.cols] = True
        return out

    def union(self, other: "SparsePattern") -> "SparsePattern":
        if other.shape != self.shape:
            raise SizeMismatch(f"cannot merge {self.shape} with {other.shape}")
        key = np.concatenate([
            self.rows * max(self.n_cols, 1) + self.cols,
            other.rows * max(self.n_cols, 1) + other.cols,
        ])
        key = np.unique(key)
        return SparsePattern(self.n_rows, self.n_cols, key // max(self.n_cols, 1),
                             key % max(self.n_cols, 1), _trusted=True)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SparsePattern):
            return NotImplemented
        return (self.shape == other.shape
                and np.array_equal(self.rows, other.rows)
                and np.array_equal(self.cols, other.cols))

    __hash__ = None

    def __repr__(self) -> str:
        return f"SparsePattern({self.n_rows}x{self.n_cols}, nnz={self.nnz})"


class SparseMatrix:
    """A :class:`SparsePattern` with one finite double value per entry."""

    __slots__ = ("pattern", "values")

    def __init__(self, pattern: SparsePattern, values):
        values = np.array(values, dtype=np.float64).ravel()
        if values.size != pattern.nnz:
            raise SizeMismatch(f"{values.size} values for {pattern.nnz} entries")
        if not np.all(np.isfinite(values)):
            raise NonFiniteValue("matrix values must be finite")
        self.pattern = pattern
        self.values = _frozen(values)

    @property
    def shape(self) -> tuple[int, int]:
        return self.pattern.shape

    @property
    def nnz(self) -> int:
        return self.pattern.nnz

    @property
    def rows(self) -> np.ndarray:
        return self.pattern.rows

    @property
    def cols(self) -> np.ndarray:
        return self.pattern.cols

    @property
    def indptr(self) -> np.ndarray:
        return self.pattern.indptr

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        out[self.rows, self.cols] = self.values
        return out

    def entries(self) -> list[tuple[int, int, float]]:
        return list(zip(self.rows.tolist(), self.cols.tolist(), self.values.tolist()))

    def __eq__(self, other) -> bool:
        if not isinstance(other, SparseMatrix):
            return NotImplemented
        return self.pattern == other.pattern and np.array_equal(self.values, other.values)

    __hash__ = None

    def __repr__(self) -> str:
        return f"SparseMatrix({self.shape[0]}x{self.shape[1]}, nnz={self.nnz})"


def csr_from_coo(entries, n_rows: int, n_cols: int) -> SparseMatrix:
    """Build a canonical matrix from ``(row, col, value)`` triples.

    ``entries`` is either a sequence of triples or a ``(rows, cols, values)``
    tuple of arrays. Duplicate coordinates raise :class:`DuplicateEntry`.
    """
    if isinstance(entries, tuple) and len(entries) == 3 and np.ndim(entries[0]) == 1:
        rows, cols, vals = (np.asarray(e) for e in entries)
    else:
        arr = list(entries)
        rows = np.array([e[0] for e in arr], dtype=INDEX_DTYPE)
        cols = np.array([e[1] for e in arr], dtype=INDEX_DTYPE)
        vals = np.array([e[2] for e in arr], dtype=np.float64)
    rows = np.asarray(rows, dtype=INDEX_DTYPE)
    cols = np.asarray(cols, dtype=INDEX_DTYPE)
    vals = np.asarray(vals, dtype=np.float64)
    if not (rows.size == cols.size == vals.size):
        raise SizeMismatch("rows, cols and values differ in length")
    order = _canonical_order(rows, cols, n_cols)
    pattern = SparsePattern(n_rows, n_cols, rows[order], cols[order])
    return SparseMatrix(pattern, vals[order])


class Permutation:
    """Bijective reordering of ``n`` indices.

    ``forward[i]`` is the new position of original index ``i``;
    ``inverse[p]`` is the original index placed at position ``p``.
    """

    def __init__(self, forward):
        forward = np.array(forward, dtype=INDEX_DTYPE).ravel()
        n = forward.size
        inverse = np.full(n, -1, dtype=INDEX_DTYPE)
        if n and (forward.min() < 0 or forward.max() >= n):
            raise OutOfBounds("permutation entry outside [0, n)")
        inverse[forward] = np.arange(n, dtype=INDEX_DTYPE)
        if n and (inverse < 0).any():
            raise DuplicateEntry("forward array is not a bijection")
        self.forward = _frozen(forward)
        self.inverse = _frozen(inverse)

    @classmethod
    def identity(cls, n: int) -> "Permutation":
        return cls(np.arange(n, dtype=INDEX_DTYPE))

    @classmethod
    def from_order(cls, order) -> "Permutation":
        """Permutation whose position ``p`` holds original index ``order[p]``."""
        order = np.asarray(order, dtype=INDEX_DTYPE)
        fwd = np.empty_like(order)
        fwd[order] = np.arange(order.size, dtype=INDEX_DTYPE)
        return cls(fwd)

    @property
    def n(self) -> int:
        return int(self.forward.size)

    def __len__(self) -> int:
        return self.n

    @property
    def order(self) -> np.ndarray:
        return self.inverse

    @cached_property
    def tag(self) -> str:
        """Short fingerprint identifying the layout this permutation induces."""
        return hashlib.sha1(self.forward.tobytes()).hexdigest()[:16]

    def apply(self, data: np.ndarray) -> np.ndarray:
        """Lay out per-index data (vector or point rows) in permuted order."""
        return np.asarray(data)[self.inverse]

    def restore(self, data: np.ndarray) -> np.ndarray:
        """Inverse of :meth:`apply`."""
        return np.asarray(data)[self.forward]

    def compose(self, then: "Permutation") -> "Permutation":
        """Apply ``self`` first, then ``then``."""
        return Permutation(then.forward[self.forward])

    def is_identity(self) -> bool:
        return bool(np.array_equal(self.forward, np.arange(self.n)))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Permutation):
            return NotImplemented
        return np.array_equal(self.forward, other.forward)

    __hash__ = None

    def __repr__(self) -> str:
        return f"Permutation(n={self.n}, tag={self.tag})"


def permute(m, p_rows: Permutation, p_cols: Permutation):
    """Reorder rows and columns: entry ``(i, j)`` moves to
    ``(p_rows.forward[i], p_cols.forward[j])``.

    Accepts a :class:`SparseMatrix` or a :class:`SparsePattern` and returns the
    same kind.
    """
    pattern = m.pattern if isinstance(m, SparseMatrix) else m
    if p_rows.n != pattern.n_rows or p_cols.n != pattern.n_cols:
        raise SizeMismatch(
            f"permutations ({p_rows.n}, {p_cols.n}) do not match shape {pattern.shape}"
        )
    rows = p_rows.forward[pattern.rows]
    cols = p_cols.forward[pattern.cols]
    order = _canonical_order(rows, cols, pattern.n_cols)
    new_pattern = SparsePattern(pattern.n_rows, pattern.n_cols, rows[order], cols[order],
                                _trusted=True)
    if isinstance(m, SparseMatrix):
        return SparseMatrix(new_pattern, m.values[order])
    return new_pattern


def transpose(m):
    pattern = m.pattern if isinstance(m, SparseMatrix) else m
    order = _canonical_order(pattern.cols, pattern.rows, pattern.n_rows)
    new_pattern = SparsePattern(pattern.n_cols, pattern.n_rows,
                                pattern.cols[order], pattern.rows[order], _trusted=True)
    if isinstance(m, SparseMatrix):
        return SparseMatrix(new_pattern, m.values[order])
    return new_pattern


def as_points(points, *, name: str = "points") -> np.ndarray:
    """Validate a point set and return it as a C-contiguous float64
    ``(n_points, dim)`` array. A 1-D input is read as ``n`` points in 1-D."""
    a = np.asarray(points, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    if a.ndim != 2:
        raise DimMismatch(f"{name} must be a 2-D (n_points, dim) array")
    if not np.all(np.isfinite(a)):
        raise NonFiniteValue(f"{name} contain non-finite coordinates")
    return np.ascontiguousarray(a)


# -- Matrix Market -----------------------------------------------------------

_MM_HEADER = "%%MatrixMarket matrix coordinate"


def write_matrix_market(path, m) -> None:
    """Write a matrix (``real general``) or a pattern (``pattern general``)."""
    is_matrix = isinstance(m, SparseMatrix)
    pattern = m.pattern if is_matrix else m
    field = "real" if is_matrix else "pattern"
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"{_MM_HEADER} {field} general\n")
        fh.write(f"{pattern.n_rows} {pattern.n_cols} {pattern.nnz}\n")
        r = pattern.rows + 1
        c = pattern.cols + 1
        if is_matrix:
            for i, j, v in zip(r.tolist(), c.tolist(), m.values.tolist()):
                fh.write(f"{i} {j} {v!r}\n")
        else:
            for i, j in zip(r.tolist(), c.tolist()):
                fh.write(f"{i} {j}\n")


def read_matrix_market(path):
    """Read a coordinate Matrix Market file.

    Returns a :class:`SparseMatrix` for ``real``/``integer`` files and a
    :class:`SparsePattern` for ``pattern`` files. ``symmetric`` files are
    expanded to both triangles.
    """
    text = Path(path).read_text(encoding="ascii").splitlines()
    if not text or not text[0].lower().startswith(_MM_HEADER.lower()):
        raise FormatError(f"{path}: missing '{_MM_HEADER}' header")
    tokens = text[0].split()
    if len(tokens) < 5:
        raise FormatError(f"{path}: incomplete header line")
    field, symmetry = tokens[3].lower(), tokens[4].lower()
    if field not in ("real", "integer", "pattern"):
        raise FormatError(f"{path}: unsupported field '{field}'")
    if symmetry not in ("general", "symmetric"):
        raise FormatError(f"{path}: unsupported symmetry '{symmetry}'")
    body = [ln for ln in text[1:] if ln.strip() and not ln.lstrip().startswith("%")]
    if not body:
        raise FormatError(f"{path}: missing size line")
    try:
        n_rows, n_cols, nnz = (int(t) for t in body[0].split()[:3])
    except ValueError as exc:
        raise FormatError(f"{path}: bad size line {body[0]!r}") from exc
    lines = body[1:]
    if len(lines) != nnz:
        raise FormatError(f"{path}: expected {nnz} entries, found {len(lines)}")
    ncol = 2 if field == "pattern" else 3
    try:
        data = np.array([ln.split()[:ncol] for ln in lines], dtype=np.float64).reshape(-1, ncol)
    except ValueError as exc:
        raise FormatError(f"{path}: malformed entry line") from exc
    rows = data[:, 0].astype(INDEX_DTYPE) - 1
    cols = data[:, 1].astype(INDEX_DTYPE) - 1
    vals = data[:, 2] if field != "pattern" else None
    if symmetry == "symmetric":
        off = rows != cols
        rows, cols = np.concatenate([rows, cols[off]]), np.concatenate([cols, rows[off]])
        if vals is not None:
            vals = np.concatenate([vals, vals[off]])
    if vals is None:
        return SparsePattern(n_rows, n_cols, rows, cols)
    return csr_from_coo((rows, cols, vals), n_rows, n_cols)


# -- permutation text files --------------------------------------------------

def write_permutation(path, p: Permutation) -> None:
    """First line ``n``, then the ``n`` forward indices, one per line."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"{p.n}\n")
        fh.write("".join(f"{i}\n" for i in p.forward.tolist()))


def read_permutation(path) -> Permutation:
    lines = [ln.strip() for ln in Path(path).read_text(encoding="ascii").splitlines() if ln.strip()]
    if not lines:
        raise FormatError(f"{path}: empty permutation file")
    n = int(lines[0])
    if len(lines) - 1 != n:
        raise FormatError(f"{path}: header says {n} entries, found {len(lines) - 1}")
    return Permutation(np.array(lines[1:], dtype=INDEX_DTYPE))


def pattern_of(m) -> SparsePattern:
    return m.pattern if isinstance(m, SparseMatrix) else m


__all__: Sequence[str] = [
    "SparsePattern", "SparseMatrix", "Permutation", "csr_from_coo", "permute",
    "transpose", "as_points", "write_matrix_market", "read_matrix_market",
    "write_permutation", "read_permutation", "pattern_of",
]
