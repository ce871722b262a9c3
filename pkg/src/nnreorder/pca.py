"""Principal-axis embedding by blocked subspace iteration.

Only the leading ``d`` directions are ever computed: the iteration works on
the covariance action ``X^T (X Q)`` with a small oversampled block, and a
Rayleigh-Ritz step extracts the singular values at the end.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import as_points
from .errors import DegenerateData, DimMismatch

OVERSAMPLE = 4


@dataclass(frozen=True)
class Embedding:
    """Affine map onto the leading principal axes of a point set.

    ``axes`` has shape ``(dim_out, dim_in)``; rows are orthonormal and each
    is oriented so that its largest-magnitude component is positive.
    """

    mean: np.ndarray
    axes: np.ndarray
    singular_values: np.ndarray
    total_sq_norm: float
    n_iter: int = 0
    converged: bool = True
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def dim_in(self) -> int:
        return int(self.axes.shape[1])

    @property
    def dim_out(self) -> int:
        return int(self.axes.shape[0])


def _max_principal_angle_sin(q_old: np.ndarray, q_new: np.ndarray) -> float:
    resid = q_new - q_old @ (q_old.T @ q_new)
    return float(np.linalg.norm(resid, 2))


def _orient(axes: np.ndarray) -> np.ndarray:
    lead = np.argmax(np.abs(axes), axis=1)
    signs = np.sign(axes[np.arange(axes.shape[0]), lead])
    signs[signs == 0] = 1.0
    return axes * signs[:, None]


def fit_pca(points, d: int, tol: float = 1e-10, max_iter: int = 1000, seed: int = 0) -> Embedding:
    """Fit the top-``d`` principal axes of ``points``.

    Convergence is declared when the largest principal angle between the
    leading ``d``-dimensional Ritz subspaces of successive iterates drops
    below ``tol`` (reported in ``converged``/``n_iter``).
    """
    x = as_points(points)
    n, dim = x.shape
    if not 1 <= d <= min(dim, n):
        raise ValueError(f"d={d} must lie in [1, {min(dim, n)}]")
    if not tol > 0:
        raise ValueError("tol must be positive")
    mean = x.mean(axis=0)
    xc = x - mean
    total = float(np.einsum("ij,ij->", xc, xc))
    if total == 0.0:
        raise DegenerateData("all points are identical; principal axes are undefined")

    p = min(dim, d + OVERSAMPLE)
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((dim, p)))
    lead_old = None
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        z = xc.T @ (xc @ q)
        q, _ = np.linalg.qr(z)
        if p == dim:
            converged = True
            break
        # Ritz rotation so the leading d columns track the dominant subspace
        _, _, wt = np.linalg.svd(xc @ q, full_matrices=False)
        lead = q @ wt[:d].T
        if lead_old is not None and _max_principal_angle_sin(lead_old, lead) < tol:
            converged = True
            break
        lead_old = lead

    _, sv, wt = np.linalg.svd(xc @ q, full_matrices=False)
    axes = _orient((q @ wt[:d].T).T)
    return Embedding(
        mean=mean,
        axes=np.ascontiguousarray(axes),
        singular_values=sv[:d].copy(),
        total_sq_norm=total,
        n_iter=it,
        converged=converged,
        meta={"block_size": p, "seed": seed, "tol": tol},
    )


def project(points, e: Embedding) -> np.ndarray:
    """Coordinates ``<x - mean, axis_a>`` of each point on each axis."""
    x = as_points(points)
    if x.shape[1] != e.dim_in:
        raise DimMismatch(f"points have dim {x.shape[1]}, embedding expects {e.dim_in}")
    return (x - e.mean) @ e.axes.T


def variance_ratio(e: Embedding) -> float:
    """Fraction of the centered squared Frobenius norm captured by the axes."""
    if e.total_sq_norm <= 0:
        raise DegenerateData("zero total variance")
    return float(min(1.0, np.sum(e.singular_values**2) / e.total_sq_norm))


def choose_dim(points, ratio_tol: float = 0.5, d_max: int = 3, seed: int = 0) -> int:
    """Smallest ``d <= d_max`` whose variance ratio reaches ``ratio_tol``
    (``d_max`` if none does)."""
    if not 0 <= ratio_tol <= 1:
        raise ValueError("ratio_tol must lie in [0, 1]")
    if d_max < 1:
        raise ValueError("d_max must be at least 1")
    x = as_points(points)
    d_max = min(d_max, *x.shape)
    e = fit_pca(x, d_max, seed=seed)
    cum = np.cumsum(e.singular_values**2) / e.total_sq_norm
    hits = np.flatnonzero(cum >= ratio_tol * (1 - 1e-12))
    return int(hits[0] + 1) if hits.size else d_max


def embed_points(points, d: int = 3, seed: int = 0, embedding: Embedding | None = None) -> np.ndarray:
    """Pipeline helper: project onto ``d`` principal axes.

    A supplied ``embedding`` is used as is. When the data dimension is already
    ``<= d`` the embedding step reduces to centering.
    """
    x = as_points(points)
    if embedding is not None:
        return project(x, embedding)
    if x.shape[1] <= d:
        return x - x.mean(axis=0)
    return project(x, fit_pca(x, d, seed=seed))
