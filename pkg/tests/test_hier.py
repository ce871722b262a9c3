import numpy as np
import pytest
from hypothesis import example, given
from hypothesis import strategies as st

from nnreorder.core import SparseMatrix, SparsePattern, permute
from nnreorder.errors import FormatError, NonFiniteValue, SpanMismatch
from nnreorder.hier import build_hier, dump_hier, flatten, load_hier, update_values
from nnreorder.kernels import spmv_hier_parallel
from nnreorder.knn import build_knn, gaussian_values, pattern_from_knn, symmetrize
from nnreorder.orderings import PartitionTree, build_tree


def random_instance(seed, n=None, dim=None, density=None, cap=None):
    rng = np.random.default_rng(seed)
    n = n or int(rng.integers(1, 200))
    dim = dim or int(rng.integers(1, 4))
    density = density if density is not None else float(rng.uniform(0.0, 0.3))
    cap = cap or int(rng.integers(1, 40))
    pts = rng.standard_normal((n, dim))
    t = build_tree(pts, cap, 8)
    mask = rng.random((n, n)) < density
    p = SparsePattern.from_dense(mask)
    m = SparseMatrix(p, rng.standard_normal(p.nnz))
    return permute(m, t.leaf_order, t.leaf_order), t


def quadrant_instance():
    centers = np.array([[-5, -5], [5, -5], [-5, 5], [5, 5]], dtype=float)
    rng = np.random.default_rng(1)
    lab = np.repeat(np.arange(4), 16)
    x = centers[lab] + rng.uniform(-1, 1, (64, 2))
    g = build_knn(x, x, 5)
    m = gaussian_values(symmetrize(pattern_from_knn(g)), x, x, 2.0)
    t = build_tree(x, 16)
    return permute(m, t.leaf_order, t.leaf_order), t


def test_flat_degenerate_case(rng):
    mask = rng.random((30, 20)) < 0.3
    p = SparsePattern.from_dense(mask)
    m = SparseMatrix(p, rng.standard_normal(p.nnz))
    h = build_hier(m, PartitionTree.trivial(30), PartitionTree.trivial(20), 1)
    assert h.n_leaf_blocks == 1
    assert np.array_equal(h.local_row, m.rows) and np.array_equal(h.local_col, m.cols)
    assert np.array_equal(h.values, m.values)
    assert flatten(h) == m


def test_quadrant_blocks():
    m, t = quadrant_instance()
    h = build_hier(m, t, t, 1)
    assert h.n_leaf_blocks <= 16
    # well-separated quadrants interact only with themselves
    assert h.n_leaf_blocks == 4
    assert flatten(h) == m


def nonzero_cluster_pairs(m, row_off, col_off):
    rb = np.searchsorted(row_off, m.rows, side="right") - 1
    cb = np.searchsorted(col_off, m.cols, side="right") - 1
    return len(set(zip(rb.tolist(), cb.tolist())))


@given(st.integers(0, 2**31), st.integers(1, 4))
def test_roundtrip_and_coverage(seed, cut):
    m, t = random_instance(seed)
    h = build_hier(m, t, t, cut)
    assert flatten(h) == m
    assert int(h.leaf_block_nnz.sum()) == m.nnz
    rects = list(zip(h.leaf_row_off, h.leaf_row_span, h.leaf_col_off, h.leaf_col_span))
    for i, (r0, rs, c0, cs) in enumerate(rects):
        lo, hi = h.leaf_ptr[i], h.leaf_ptr[i + 1]
        assert hi > lo  # empty blocks are never stored
        assert np.all(h.local_row[lo:hi] < rs) and np.all(h.local_col[lo:hi] < cs)
        key = h.local_row[lo:hi].astype(np.int64) * cs + h.local_col[lo:hi]
        assert np.all(np.diff(key) > 0)
    for a in range(len(rects)):
        for b in range(a + 1, len(rects)):
            ra, rb = rects[a], rects[b]
            overlap = (ra[0] < rb[0] + rb[1] and rb[0] < ra[0] + ra[1]
                       and ra[2] < rb[2] + rb[3] and rb[2] < ra[2] + ra[3])
            assert not overlap


@given(st.integers(0, 2**31))
def test_leaf_blocks_match_cluster_pairs_at_cut(seed):
    m, t = random_instance(seed)
    level = min(2, max(t.depth, 1))
    h = build_hier(m, t, t, level)
    starts = np.array(sorted(t.nodes[i].lo for i in t.clusters_at(level)))
    assert h.n_leaf_blocks == nonzero_cluster_pairs(m, starts, starts)


@given(st.integers(0, 2**31))
@example(262143)  # 1x1 matrix with no entries
def test_block_rows_are_contiguous_runs(seed):
    m, t = random_instance(seed)
    h = build_hier(m, t, t, "auto")
    g = h.row_group_ptr
    assert g[0] == 0 and g[-1] == h.n_leaf_blocks
    assert np.all(np.diff(g) > 0)
    # each group covers one row span; groups are in row order
    spans = []
    for a, b in zip(g[:-1], g[1:]):
        lo = h.leaf_row_off[a:b].min()
        hi = (h.leaf_row_off[a:b] + h.leaf_row_span[a:b]).max()
        spans.append((lo, hi))
    assert all(p[1] <= q[0] for p, q in zip(spans, spans[1:]))


def test_dual_trees_with_rectangular_matrix(rng):
    rt = build_tree(rng.standard_normal((40, 2)), 5)
    ct = build_tree(rng.standard_normal((70, 3)), 9)
    p = SparsePattern.from_dense(rng.random((40, 70)) < 0.15)
    m = SparseMatrix(p, rng.standard_normal(p.nnz))
    for cut in (1, 2, 3, "auto"):
        assert flatten(build_hier(m, rt, ct, cut)) == m


def test_span_mismatch(rng):
    m, t = random_instance(3, n=20)
    with pytest.raises(SpanMismatch):
        build_hier(m, PartitionTree.trivial(19), t)


def test_update_values_examples(rng):
    m, t = random_instance(5, n=80, density=0.1)
    h = build_hier(m, t, t, 2)
    assert update_values(h, lambda r, c, v: v) == m.nnz
    assert flatten(h) == m
    update_values(h, lambda r, c, v: 1.0)
    assert np.all(flatten(h).values == 1.0)
    with pytest.raises(NonFiniteValue):
        update_values(h, lambda r, c, v: np.where(r == r[0], np.inf, v))


def test_update_values_matches_rebuild(rng):
    x = rng.standard_normal((120, 2))
    g = build_knn(x, x, 6)
    p = symmetrize(pattern_from_knn(g))
    t = build_tree(x, 10)
    perm = t.leaf_order
    mp = permute(gaussian_values(p, x, x, 1.0), perm, perm)
    h = build_hier(mp, t, t, "auto")
    for step in range(3):
        x = x + 0.1 * rng.standard_normal(x.shape)
        xp = perm.apply(x)
        update_values(h, lambda r, c, v: np.exp(-((xp[r] - xp[c]) ** 2).sum(1) / 2.0))
        expected = permute(gaussian_values(p, x, x, 1.0), perm, perm)
        got = flatten(h)
        assert got.pattern == expected.pattern
        assert np.allclose(got.values, expected.values, rtol=1e-15, atol=0)


def test_dump_load_roundtrip(tmp_path):
    m, t = random_instance(11, n=150, dim=3, density=0.05, cap=12)
    h = build_hier(m, t, t, 3)
    dump_hier(h, tmp_path / "h.bin")
    g = load_hier(tmp_path / "h.bin")
    assert flatten(g) == m
    assert g.cut_level == h.cut_level and g.n_leaf_blocks == h.n_leaf_blocks
    assert g.row_tag == h.row_tag
    assert np.array_equal(g.row_group_ptr, h.row_group_ptr)
    assert (tmp_path / "h.bin").read_bytes()[:4] == b"HBM1"


def test_load_rejects_garbage(tmp_path):
    (tmp_path / "bad.bin").write_bytes(b"XXXX1234")
    with pytest.raises(FormatError):
        load_hier(tmp_path / "bad.bin")
    m, t = random_instance(2, n=30)
    dump_hier(build_hier(m, t, t), tmp_path / "ok.bin")
    data = (tmp_path / "ok.bin").read_bytes()
    (tmp_path / "cut.bin").write_bytes(data[: len(data) // 2])
    with pytest.raises(FormatError):
        load_hier(tmp_path / "cut.bin")


def test_empty_matrix_has_no_blocks():
    m = SparseMatrix(SparsePattern(10, 10, [], []), [])
    t = build_tree(np.random.default_rng(0).standard_normal((10, 2)), 3)
    h = build_hier(m, t, t)
    assert h.n_leaf_blocks == 0 and h.nnz == 0
    assert h.row_group_ptr.tolist() == [0]
    assert flatten(h) == m
    assert np.array_equal(spmv_hier_parallel(h, np.ones(10), 4), np.zeros(10))
