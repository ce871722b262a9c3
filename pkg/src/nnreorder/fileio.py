"""``.fvecs`` vector files and PGM spy plots."""

from __future__ import annotations

import os

import numpy as np

from .core import as_points, pattern_of
from .errors import EmptyFile, InconsistentDim, MalformedRecord


def read_fvecs(path) -> np.ndarray:
    """Read records ``{int32 dim, dim x float32}`` (little-endian) into a
    float64 ``(n, dim)`` array."""
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0:
        raise EmptyFile(f"{path} is empty")
    if raw.size < 4:
        raise MalformedRecord(f"{path}: truncated header")
    dim = int(raw[:4].view("<i4")[0])
    if dim < 1:
        raise MalformedRecord(f"{path}: record 0 has dimension {dim}")
    rec = 4 * (dim + 1)
    n, tail = divmod(raw.size, rec)
    if tail:
        # either a truncated final record or records of different widths
        words = raw[: raw.size - raw.size % 4].view("<i4")
        pos = 0
        k = 0
        while 4 * pos < raw.size:
            if 4 * pos + 4 > raw.size:
                raise MalformedRecord(f"{path}: truncated header in record {k}")
            d = int(words[pos])
            if d != dim:
                raise InconsistentDim(f"{path}: record {k} has dim {d}, expected {dim}")
            if 4 * (pos + 1 + d) > raw.size:
                raise MalformedRecord(f"{path}: record {k} is truncated")
            pos += 1 + d
            k += 1
    table = raw.view("<i4").reshape(n, dim + 1)
    dims = table[:, 0]
    bad = np.flatnonzero(dims != dim)
    if bad.size:
        raise InconsistentDim(f"{path}: record {bad[0]} has dim {dims[bad[0]]}, expected {dim}")
    return table[:, 1:].view("<f4").astype(np.float64)


def write_fvecs(path, points) -> None:
    x = as_points(points)
    n, dim = x.shape
    table = np.empty((n, dim + 1), dtype="<i4")
    table[:, 0] = dim
    table[:, 1:] = x.astype("<f4").view("<i4")
    table.tofile(path)


def _occupancy(rows, cols, lo, hi, side_r, side_c, shape):
    """Count nonzeros falling into each pixel of an ROI split into
    ``side_r x side_c`` near-equal index ranges."""
    (r0, c0), (r1, c1) = lo, hi
    keep = (rows >= r0) & (rows < r1) & (cols >= c0) & (cols < c1)
    pr = ((rows[keep] - r0) * side_r) // (r1 - r0)
    pc = ((cols[keep] - c0) * side_c) // (c1 - c0)
    occ = np.zeros(shape, dtype=np.int64)
    np.add.at(occ, (pr, pc), 1)
    return occ


def spy_image(p, image_side: int, out_path, roi: tuple[int, int, int, int] | None = None) -> np.ndarray:
    """Render a sparsity profile as a binary PGM (P5, maxval 255).

    Each pixel covers a rectangle of indices; its gray level is
    ``255 - round(255 * count / peak_count)`` so darker means denser. ``roi``
    is ``(row_lo, row_hi, col_lo, col_hi)`` (half-open) for detail views.
    Pixel side lengths are capped at the ROI extent, so an ROI of ``n``
    indices rendered at ``image_side >= n`` is an exact indicator image.

    Returns the pixel array that was written.
    """
    if image_side < 1:
        raise ValueError("image_side must be >= 1")
    p = pattern_of(p)
    r0, r1, c0, c1 = roi if roi is not None else (0, p.n_rows, 0, p.n_cols)
    if not (0 <= r0 < r1 <= p.n_rows and 0 <= c0 < c1 <= p.n_cols):
        raise ValueError(f"ROI {roi} is empty or outside {p.shape}")
    side_r = min(image_side, r1 - r0)
    side_c = min(image_side, c1 - c0)
    occ = _occupancy(p.rows, p.cols, (r0, c0), (r1, c1), side_r, side_c, (side_r, side_c))
    peak = occ.max()
    if peak == 0:
        img = np.full(occ.shape, 255, dtype=np.uint8)
    else:
        img = (255 - np.minimum(255, np.rint(255.0 * occ / peak))).astype(np.uint8)
    tmp = f"{out_path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(f"P5\n{side_c} {side_r}\n255\n".encode("ascii"))
        fh.write(img.tobytes())
    os.replace(tmp, out_path)
    return img


def read_pgm(path) -> np.ndarray:
    """Read a binary PGM written by :func:`spy_image`."""
    with open(path, "rb") as fh:
        data = fh.read()
    fields = []
    pos = 0
    while len(fields) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        fields.append(data[pos:end])
        pos = end
    pos += 1
    if fields[0] != b"P5":
        raise ValueError(f"{path} is not a binary PGM")
    w, h = int(fields[1]), int(fields[2])
    return np.frombuffer(data[pos:pos + w * h], dtype=np.uint8).reshape(h, w)
