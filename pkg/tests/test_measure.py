import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.signal import fftconvolve

from nnreorder.core import Permutation, SparsePattern, permute, transpose
from nnreorder.errors import EmptyPattern, TooLarge
from nnreorder.measure import (
    GammaParams,
    Patch,
    PatchCovering,
    bandwidth,
    best_ordering_bruteforce,
    beta_bruteforce,
    gamma,
    gamma_exact,
    gamma_grid,
)
from nnreorder.synth import gen_arrowhead


def gamma_fft(mask, sigma, include_self=True):
    """Oracle: the pair sum is the mask correlated with the Gaussian kernel."""
    nr, nc = mask.shape
    dr = np.arange(-(nr - 1), nr)[:, None]
    dc = np.arange(-(nc - 1), nc)[None, :]
    kern = np.exp(-(dr**2 + dc**2) / sigma**2)
    m = mask.astype(float)
    total = np.sum(m * fftconvolve(m, kern, mode="full")[nr - 1:2 * nr - 1, nc - 1:2 * nc - 1])
    if not include_self:
        total -= m.sum()
    return total / (sigma * m.sum())


def gamma_naive(p, sigma):
    r, c = p.rows.astype(float), p.cols.astype(float)
    d2 = (r[:, None] - r[None]) ** 2 + (c[:, None] - c[None]) ** 2
    return np.exp(-d2 / sigma**2).sum() / (sigma * p.nnz)


@st.composite
def patterns(draw, max_side=40):
    nr = draw(st.integers(1, max_side))
    nc = draw(st.integers(1, max_side))
    rng = np.random.default_rng(draw(st.integers(0, 2**31)))
    mask = rng.random((nr, nc)) < draw(st.floats(0.01, 1.0))
    mask[rng.integers(nr), rng.integers(nc)] = True
    return SparsePattern.from_dense(mask)


# -- gamma -------------------------------------------------------------------

def test_single_nonzero():
    assert gamma_exact(SparsePattern.from_entries([(3, 4)], 5, 5), 10.0) == pytest.approx(0.1, rel=1e-15)


def test_two_nonzeros_closed_form():
    p = SparsePattern.from_entries([(0, 0), (0, 1)], 1, 2)
    assert gamma_exact(p, 10.0) == pytest.approx((1 + np.exp(-0.01)) / 10, rel=1e-14)
    assert gamma_exact(p, 10.0) == pytest.approx(0.1990, abs=5e-5)


def test_empty_pattern_raises():
    with pytest.raises(EmptyPattern):
        gamma_exact(SparsePattern(3, 3, [], []), 1.0)
    with pytest.raises(EmptyPattern):
        gamma_grid(SparsePattern(3, 3, [], []), 1.0)


def test_params_validation():
    with pytest.raises(ValueError):
        GammaParams(0.0)
    with pytest.raises(ValueError):
        GammaParams(1.0, cutoff_rho=0.5)


@given(patterns(), st.floats(0.5, 20.0))
def test_exact_matches_naive_pair_sum(p, sigma):
    assert gamma_exact(p, sigma) == pytest.approx(gamma_naive(p, sigma), rel=1e-12)


def test_exact_matches_fft_oracle_on_arrowhead():
    mask = gen_arrowhead(500, 20).to_dense()
    assert gamma_exact(SparsePattern.from_dense(mask), 10.0) == pytest.approx(gamma_fft(mask, 10.0), rel=1e-9)


def test_self_pair_flag(rng):
    p = SparsePattern.from_dense(rng.random((30, 30)) < 0.2)
    with_self = gamma_exact(p, GammaParams(4.0))
    without = gamma_exact(p, GammaParams(4.0, include_self_pairs=False))
    assert with_self - without == pytest.approx(1 / 4.0, rel=1e-12)
    assert gamma_grid(p, GammaParams(4.0, 50.0, False)) == pytest.approx(without, rel=1e-12)


@given(patterns(), st.floats(0.5, 15.0))
def test_gamma_bounds_and_transpose(p, sigma):
    g = gamma_exact(p, sigma)
    assert 1 / sigma * (1 - 1e-12) <= g <= p.nnz / sigma * (1 + 1e-12)
    assert gamma_exact(transpose(p), sigma) == pytest.approx(g, rel=1e-12)


@given(patterns(max_side=20), st.integers(0, 5), st.integers(0, 5), st.floats(1.0, 8.0))
def test_gamma_translation_invariant(p, pad_r, pad_c, sigma):
    padded = SparsePattern(p.n_rows + pad_r + 2, p.n_cols + pad_c + 3, p.rows + pad_r, p.cols + pad_c)
    assert gamma_exact(padded, sigma) == pytest.approx(gamma_exact(p, sigma), rel=1e-12)


@given(patterns(), st.floats(0.5, 6.0))
def test_grid_without_truncation_equals_exact(p, sigma):
    rho = (p.n_rows + p.n_cols) / sigma + 2
    assert gamma_grid(p, GammaParams(sigma, rho)) == pytest.approx(gamma_exact(p, sigma), rel=1e-12)


@given(patterns(), st.floats(0.5, 6.0))
def test_grid_monotone_in_cutoff(p, sigma):
    vals = [gamma_grid(p, GammaParams(sigma, rho)) for rho in (1.0, 1.5, 2.5, 4.0, 8.0)]
    assert all(b >= a * (1 - 1e-13) for a, b in zip(vals, vals[1:]))


def test_grid_matches_exact_on_arrowhead():
    p = gen_arrowhead(500, 20)
    assert gamma_grid(p, GammaParams(10.0)) == pytest.approx(gamma_exact(p, 10.0), rel=1e-3)


def test_auto_dispatch(rng):
    p = SparsePattern.from_dense(rng.random((50, 50)) < 0.1)
    assert gamma(p, 3.0) == gamma_exact(p, 3.0)
    assert gamma(p, 3.0, method="grid") == gamma_grid(p, 3.0)


# -- bandwidth ---------------------------------------------------------------

def test_bandwidth_examples():
    assert bandwidth(SparsePattern.from_dense(np.eye(5, dtype=bool))) == 0
    tri = np.eye(5, dtype=bool) | np.eye(5, k=1, dtype=bool) | np.eye(5, k=-1, dtype=bool)
    assert bandwidth(SparsePattern.from_dense(tri)) == 1
    assert bandwidth(SparsePattern.from_entries([(0, 9)], 10, 10)) == 9
    assert bandwidth(SparsePattern(4, 4, [], [])) == 0


# -- beta --------------------------------------------------------------------

def beta_enumerate(mask):
    """Oracle: enumerate every set of pairwise disjoint rectangles (any
    rectangle, not only tight ones) that covers the nonzeros."""
    nr, nc = mask.shape
    rects = [Patch(r0, r1, c0, c1) for r0 in range(nr) for r1 in range(r0 + 1, nr + 1)
             for c0 in range(nc) for c1 in range(c0 + 1, nc + 1)]
    nz = list(zip(*np.nonzero(mask)))
    best = 0.0

    def rec(i, chosen):
        nonlocal best
        while i < len(nz) and any(pt.contains(*nz[i]) for pt in chosen):
            i += 1
        if i == len(nz):
            best = max(best, PatchCovering(tuple(chosen)).score(len(nz)))
            return
        for r in rects:
            if r.contains(*nz[i]) and not any(r.overlaps(c) for c in chosen):
                rec(i + 1, chosen + [r])

    rec(0, [])
    return best


def test_beta_examples():
    assert beta_bruteforce(SparsePattern.from_dense(np.ones((2, 2), bool)))[0] == 1.0
    assert beta_bruteforce(SparsePattern.from_dense(np.eye(4, dtype=bool)))[0] == pytest.approx(0.25)
    assert beta_bruteforce(SparsePattern.from_dense(np.eye(2, dtype=bool)[::-1]))[0] == pytest.approx(0.5)


@pytest.mark.parametrize("seed", range(12))
def test_beta_matches_full_enumeration(seed):
    rng = np.random.default_rng(seed)
    nr, nc = rng.integers(1, 4, size=2)
    mask = rng.random((nr, nc)) < 0.5
    mask[0, 0] = True
    score, cover = beta_bruteforce(SparsePattern.from_dense(mask))
    assert score == pytest.approx(beta_enumerate(mask), rel=1e-12)
    p = SparsePattern.from_dense(mask)
    assert cover.is_valid_for(p) and cover.score(p.nnz) == pytest.approx(score)


@given(st.integers(0, 2**31))
def test_beta_witness_is_valid(seed):
    rng = np.random.default_rng(seed)
    nr, nc = rng.integers(1, 7, size=2)
    mask = rng.random((nr, nc)) < 0.4
    mask[rng.integers(nr), rng.integers(nc)] = True
    p = SparsePattern.from_dense(mask)
    score, cover = beta_bruteforce(p)
    assert cover.is_valid_for(p)
    assert cover.score(p.nnz) == pytest.approx(score)
    assert p.nnz / (nr * nc) <= score * (1 + 1e-12)


@given(st.integers(0, 2**31))
def test_beta_invariant_under_automorphism(seed):
    rng = np.random.default_rng(seed)
    # block-diagonal pattern; swapping the two identical blocks is an automorphism
    b = rng.random((3, 3)) < 0.6
    b[0, 0] = True
    mask = np.zeros((6, 6), bool)
    mask[:3, :3] = b
    mask[3:, 3:] = b
    p = SparsePattern.from_dense(mask)
    swap = Permutation([3, 4, 5, 0, 1, 2])
    q = permute(p, swap, swap)
    assert q == p
    assert beta_bruteforce(q)[0] == beta_bruteforce(p)[0]


def test_beta_too_large():
    with pytest.raises(TooLarge):
        beta_bruteforce(SparsePattern(9, 8, [0], [0]))


def test_best_ordering_examples():
    anti = SparsePattern.from_dense(np.eye(2, dtype=bool)[::-1])
    _, _, b = best_ordering_bruteforce(anti)
    assert b == pytest.approx(0.5)
    _, _, b = best_ordering_bruteforce(SparsePattern.from_dense(np.eye(3, dtype=bool)[[2, 0, 1]]))
    assert b == pytest.approx(1 / 3)


def test_best_ordering_recovers_block():
    base = SparsePattern.from_entries([(0, 0), (0, 1), (1, 0), (1, 1), (2, 2)], 3, 3)
    scram = permute(base, Permutation([2, 0, 1]), Permutation([1, 2, 0]))
    pr, pc, b = best_ordering_bruteforce(scram)
    # one 3x3 patch (5/9) beats the 2x2 + 1x1 pair (1/2 * 5/5)
    assert b == pytest.approx(beta_enumerate(base.to_dense()))
    assert b == pytest.approx(5 / 9)
    assert beta_bruteforce(permute(scram, pr, pc))[0] == pytest.approx(b)


def test_best_ordering_beats_sampled_orderings():
    rng = np.random.default_rng(4)
    mask = np.zeros((5, 5), bool)
    mask[:2, :3] = True
    mask[2:, 3:] = True
    p = permute(SparsePattern.from_dense(mask), Permutation(rng.permutation(5)), Permutation(rng.permutation(5)))
    _, _, best = best_ordering_bruteforce(p)
    for _ in range(200):
        q = permute(p, Permutation(rng.permutation(5)), Permutation(rng.permutation(5)))
        assert beta_bruteforce(q)[0] <= best + 1e-12


def test_best_ordering_too_large():
    with pytest.raises(TooLarge):
        best_ordering_bruteforce(SparsePattern(6, 2, [0], [0]))


def test_rectangular_pattern():
    p = SparsePattern.from_entries([(0, 0), (1, 2)], 2, 3)
    _, _, b = best_ordering_bruteforce(p)
    # moving the two entries next to each other gives one 2x2 patch
    assert b == pytest.approx(0.5)
