import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nnreorder.core import Permutation, SparsePattern, permute
from nnreorder.errors import DimTooHigh, LevelOutOfRange, NotSquare
from nnreorder.measure import bandwidth
from nnreorder.orderings import (
    PartitionTree,
    build_tree,
    level_blocking,
    order_dual_tree,
    order_lexical,
    order_rcm,
    order_scattered,
    order_tree,
)
from nnreorder.synth import gen_banded, gen_gaussian_mixture


def path_pattern(n, labels):
    """Path graph over ``labels`` in order, as a symmetric pattern."""
    e = [(labels[i], labels[i + 1]) for i in range(n - 1)]
    e += [(b, a) for a, b in e]
    return SparsePattern.from_entries(e, n, n)


def reordered(p, perm):
    return permute(p, perm, perm)


def assert_bijection(perm, n):
    assert perm.n == n
    assert np.array_equal(np.sort(perm.forward), np.arange(n))
    assert np.array_equal(perm.forward[perm.inverse], np.arange(n))


# -- scattered ---------------------------------------------------------------

def test_scattered():
    assert order_scattered(1).is_identity()
    assert order_scattered(50, 9) == order_scattered(50, 9)
    assert_bijection(order_scattered(1000, 1), 1000)
    with pytest.raises(ValueError):
        order_scattered(0)


# -- rCM ---------------------------------------------------------------------

def test_rcm_restores_scrambled_path(rng):
    labels = rng.permutation(5)
    p = path_pattern(5, labels)
    assert bandwidth(p) > 1
    assert bandwidth(reordered(p, order_rcm(p))) == 1


@given(st.integers(2, 60), st.integers(0, 2**31))
def test_rcm_path_bandwidth_one(n, seed):
    p = path_pattern(n, np.random.default_rng(seed).permutation(n))
    perm = order_rcm(p)
    assert_bijection(perm, n)
    assert bandwidth(reordered(p, perm)) == 1


def test_rcm_keeps_tridiagonal_banded():
    p = gen_banded(12, 3)
    assert bandwidth(reordered(p, order_rcm(p))) <= 1


def test_rcm_components_are_contiguous():
    p = SparsePattern.from_entries([(0, 3), (3, 0), (1, 2), (2, 1)], 4, 4)
    pos = order_rcm(p).forward
    assert abs(pos[0] - pos[3]) == 1 and abs(pos[1] - pos[2]) == 1
    # component holding index 0 comes first
    assert {pos[0], pos[3]} == {0, 1}


def test_rcm_ignores_entry_order_and_asymmetry(rng):
    mask = rng.random((30, 30)) < 0.1
    p = SparsePattern.from_dense(mask)
    sym = SparsePattern.from_dense(mask | mask.T | np.eye(30, dtype=bool))
    assert order_rcm(p) == order_rcm(sym)


def test_rcm_matches_reference_bandwidth(rng):
    from scipy.sparse import csr_matrix
    from scipy.sparse.csgraph import reverse_cuthill_mckee
    pts = rng.standard_normal((400, 2))
    from nnreorder.knn import build_knn, pattern_from_knn, symmetrize
    p = symmetrize(pattern_from_knn(build_knn(pts, pts, 6)))
    ours = bandwidth(reordered(p, order_rcm(p)))
    a = csr_matrix((np.ones(p.nnz), (p.rows, p.cols)), shape=p.shape)
    ref = Permutation.from_order(reverse_cuthill_mckee(a, symmetric_mode=True))
    theirs = bandwidth(reordered(p, ref))
    scrambled = bandwidth(p)
    assert ours < scrambled / 4
    assert ours <= 2 * theirs


def test_rcm_not_square():
    with pytest.raises(NotSquare):
        order_rcm(SparsePattern(2, 3, [], []))


# -- lexical -----------------------------------------------------------------

def test_lexical_1d():
    assert order_lexical(np.array([[0.9], [0.1], [0.5]])).order.tolist() == [1, 2, 0]


def test_lexical_single_bin_column_sorts_on_second_axis(rng):
    x = np.column_stack([np.full(20, 0.3), rng.standard_normal(20)])
    assert np.array_equal(order_lexical(x).order, np.argsort(x[:, 1], kind="stable"))


@given(st.integers(1, 200), st.sampled_from([2, 3]), st.integers(1, 40), st.integers(0, 2**31))
def test_lexical_is_sorted_bijection(n, dim, g, seed):
    x = np.random.default_rng(seed).standard_normal((n, dim))
    perm = order_lexical(x, g)
    assert_bijection(perm, n)
    lo, hi = x.min(0), x.max(0)
    span = np.where(hi > lo, hi - lo, 1.0)
    bins = np.clip(np.floor((x - lo) / span * g), 0, g - 1).astype(int)
    seq = [tuple(b) for b in bins[perm.order]]
    assert seq == sorted(seq)


@given(st.integers(1, 100), st.integers(0, 2**31))
def test_lexical_1d_equals_coordinate_sort(n, seed):
    x = np.random.default_rng(seed).standard_normal((n, 1))
    assert np.array_equal(order_lexical(x).order, np.argsort(x[:, 0], kind="stable"))


def test_lexical_rejects_high_dim(rng):
    with pytest.raises(DimTooHigh):
        order_lexical(rng.standard_normal((5, 4)))


# -- trees -------------------------------------------------------------------

def test_tree_1d_example():
    t = build_tree(np.array([[0.1], [0.9], [0.15], [0.85]]), leaf_capacity=1)
    pos = t.leaf_order.forward
    assert max(pos[0], pos[2]) < min(pos[1], pos[3])


def test_tree_identical_points_stop_at_max_depth():
    t = build_tree(np.zeros((50, 2)), leaf_capacity=4, max_depth=5)
    assert t.depth == 5
    assert t.leaf_order.is_identity()


def test_tree_four_quadrant_clusters(rng):
    centers = np.array([[-5, -5], [5, -5], [-5, 5], [5, 5]], dtype=float)
    lab = np.repeat(np.arange(4), 25)
    x = centers[lab] + rng.uniform(-1, 1, (100, 2))
    t = build_tree(x, leaf_capacity=25)
    assert len(t.leaves()) == 4
    for c in range(4):
        pos = np.sort(t.leaf_order.forward[lab == c])
        assert pos[-1] - pos[0] == 24
    assert level_blocking(t, 1).tolist() == [0, 25, 50, 75, 100]
    assert level_blocking(t, 0).tolist() == [0, 100]


def test_single_cluster_large_capacity_is_identity(rng):
    o = order_tree(rng.standard_normal((40, 3)), leaf_capacity=40)
    assert o.row_perm.is_identity() and o.scheme == "tree3"


def check_tree(t, n):
    assert_bijection(t.leaf_order, n)
    for nd in t.nodes:
        if nd.is_leaf:
            assert nd.size <= t.leaf_capacity or nd.depth == t.max_depth
        else:
            kids = [t.nodes[c] for c in nd.children]
            assert kids[0].lo == nd.lo and kids[-1].hi == nd.hi
            assert all(a.hi == b.lo for a, b in zip(kids, kids[1:]))
            assert [k.code for k in kids] == sorted(k.code for k in kids)
            assert all(k.depth == nd.depth + 1 for k in kids)


@given(st.integers(1, 300), st.integers(1, 3), st.integers(1, 20), st.integers(1, 8), st.integers(0, 2**31))
def test_tree_invariants(n, dim, cap, depth, seed):
    x = np.random.default_rng(seed).standard_normal((n, dim))
    t = build_tree(x, cap, depth)
    check_tree(t, n)
    # points in a node lie in its box
    pos = t.leaf_order.forward
    for nd in t.nodes:
        members = x[np.flatnonzero((pos >= nd.lo) & (pos < nd.hi))]
        assert np.all(members >= nd.box_lo - 1e-12) and np.all(members <= nd.box_hi + 1e-12)
    for level in range(t.depth + 1):
        off = level_blocking(t, level)
        assert off[0] == 0 and off[-1] == n and np.all(np.diff(off) > 0)
    with pytest.raises(LevelOutOfRange):
        level_blocking(t, t.depth + 1)


def test_tree_rejects_high_dim(rng):
    with pytest.raises(DimTooHigh):
        build_tree(rng.standard_normal((5, 4)))


def runs(sorted_positions):
    return 1 + int(np.sum(np.diff(sorted_positions) > 1))


def test_mixture_components_occupy_few_runs():
    x, _, lab = gen_gaussian_mixture(2000, 3, 8, 40.0, 1.0, seed=2, return_labels=True)
    tree = order_tree(x, leaf_capacity=32).row_perm.forward
    scat = order_scattered(2000, 0).forward
    for c in range(8):
        # a compact cluster can straddle at most one split plane per axis
        assert runs(np.sort(tree[lab == c])) <= 2**3
        assert runs(np.sort(scat[lab == c])) > 50


def test_dual_tree_uses_both_sets(rng):
    t = rng.standard_normal((30, 2))
    s = rng.standard_normal((50, 2))
    o = order_dual_tree(t, s, leaf_capacity=4)
    assert o.row_perm.n == 30 and o.col_perm.n == 50
    assert o.row_tree.leaf_order == o.row_perm and o.col_tree.leaf_order == o.col_perm


def test_from_offsets_and_trivial():
    t = PartitionTree.from_offsets([0, 3, 3, 7])
    assert [t.nodes[i].size for i in t.leaves()] == [3, 4]
    assert PartitionTree.trivial(5).root.is_leaf
