"""``nnreorder`` command line."""

from __future__ import annotations

import argparse
import os
import sys
import time
import warnings

import numpy as np

from . import pipeline as pl
from .core import pattern_of, permute, read_matrix_market, read_permutation, write_matrix_market, write_permutation
from .errors import NNReorderError, PhaseError
from .pipeline import SCHEMES, PipelineConfig, phase


def _add_common(ap: argparse.ArgumentParser) -> None:
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default=None, help="output file or directory")


def _add_points(ap: argparse.ArgumentParser) -> None:
    g = ap.add_argument_group("points (an .fvecs file, else a Gaussian mixture)")
    g.add_argument("--input", default=None, help=".fvecs file")
    g.add_argument("--n", type=int, default=4096, help="number of points")
    g.add_argument("--dim", type=int, default=64)
    g.add_argument("--clusters", type=int, default=32)
    g.add_argument("--spread", type=float, default=10.0, help="side of the cube holding cluster centers")
    g.add_argument("--cluster-sigma", type=float, default=1.0)


def _add_ordering(ap: argparse.ArgumentParser, multi: bool = False) -> None:
    if multi:
        ap.add_argument("--scheme", action="append", choices=SCHEMES + ("all",), default=None,
                        help="repeatable; default: all")
    else:
        ap.add_argument("--scheme", choices=SCHEMES, default="tree3")
    ap.add_argument("--k", type=int, default=30)
    ap.add_argument("--sigma", type=float, default=None, help="gamma scale (default k/2)")
    ap.add_argument("--leaf-capacity", type=int, default=128)
    ap.add_argument("--max-depth", type=int, default=12)
    ap.add_argument("--no-symmetrize", action="store_true")


def _config(a, scheme: str | None = None) -> PipelineConfig:
    return PipelineConfig(
        scheme=scheme or getattr(a, "scheme", "tree3") or "tree3",
        seed=a.seed, input_path=a.input, n_points=a.n, dim=a.dim, n_clusters=a.clusters,
        center_spread=a.spread, cluster_sigma=a.cluster_sigma,
        k=getattr(a, "k", 30), symmetrize=not getattr(a, "no_symmetrize", False),
        sigma=getattr(a, "sigma", None), leaf_capacity=getattr(a, "leaf_capacity", 128),
        max_depth=getattr(a, "max_depth", 12),
    )


def _points(a) -> np.ndarray:
    return pl.load_points(_config(a))


def _load_matrix(path: str, perm: str | None):
    m = read_matrix_market(path)
    if perm:
        p = read_permutation(perm)
        m = permute(m, p, p)
    return m


# -- subcommands --------------------------------------------------------------

def cmd_gen(a) -> int:
    from . import synth
    from .fileio import write_fvecs
    if a.out is None:
        raise ValueError("--out is required")
    if a.kind == "mixture":
        write_fvecs(a.out, _points(a))
        return 0
    if a.kind == "arrowhead":
        p = synth.gen_arrowhead(a.n, a.block)
    elif a.kind == "banded":
        p = synth.gen_banded(a.n, a.width)
    else:
        p = synth.gen_scattered(a.n, a.width, a.seed)
    write_matrix_market(a.out, p)
    print(f"{a.kind}: {p.n_rows}x{p.n_cols}, nnz={p.nnz}")
    return 0


def cmd_knn(a) -> int:
    with phase("load"):
        pts = _points(a)
    with phase("knn"):
        m = pl.interaction_matrix(pts, a.k, not a.no_symmetrize)
    if a.out:
        write_matrix_market(a.out, m)
    print(f"knn: n={m.shape[0]} k={a.k} nnz={m.nnz}")
    return 0


def cmd_embed(a) -> int:
    from .fileio import write_fvecs
    from .pca import embed_points, fit_pca, variance_ratio
    with phase("load"):
        pts = _points(a)
    with phase("embed"):
        if pts.shape[1] > a.d:
            e = fit_pca(pts, a.d, seed=a.seed)
            print(f"embed: {pts.shape[1]} -> {a.d} dims, variance ratio {variance_ratio(e):.4f}, "
                  f"{e.n_iter} iterations")
        y = embed_points(pts, a.d, seed=a.seed)
    if a.out:
        write_fvecs(a.out, y)
    return 0


def cmd_order(a) -> int:
    with phase("load"):
        pts = _points(a) if a.scheme.startswith(("lex", "tree")) or a.matrix is None else None
        m = read_matrix_market(a.matrix) if a.matrix else None
    with phase("knn"):
        if m is None and a.scheme == "rcm":
            m = pl.interaction_matrix(pts, a.k, not a.no_symmetrize)
    with phase("order"):
        t0 = time.perf_counter_ns()
        o = pl.order_by_scheme(a.scheme, pts, pattern_of(m) if m is not None else None, a.seed,
                               a.leaf_capacity, a.max_depth)
        dt = time.perf_counter_ns() - t0
    if a.out:
        write_permutation(a.out, o.row_perm)
    print(f"order: scheme={o.scheme} n={o.row_perm.n} tag={o.row_perm.tag} time_ms={dt / 1e6:.2f}")
    return 0


def cmd_measure(a) -> int:
    from .measure import GammaParams, bandwidth, gamma
    schemes = a.scheme or ["all"]
    rows = []
    if a.matrix:
        with phase("load"):
            m = _load_matrix(a.matrix, a.perm)
        sigma = a.sigma if a.sigma is not None else a.k / 2.0
        with phase("measure"):
            g = gamma(m, GammaParams(sigma, a.rho), method=a.method)
        rows.append({"scheme": a.perm or "as-given", "n": m.shape[0], "nnz": m.nnz, "sigma": sigma,
                     "gamma": g, "bandwidth": bandwidth(m)})
    else:
        names = SCHEMES if "all" in schemes else schemes
        with phase("load"):
            pts = _points(a)
        with phase("knn"):
            m = pl.interaction_matrix(pts, a.k, not a.no_symmetrize)
        for s in names:
            r = pl.run_pipeline(_config(a, s), points=pts, matrix=m)
            rows.append({"scheme": s, "n": r.matrix.shape[0], "nnz": r.matrix.nnz,
                         "sigma": r.config.gamma_sigma, "gamma": r.gamma, "bandwidth": r.bandwidth})
    print(f"{'scheme':<12}{'n':>8}{'nnz':>10}{'sigma':>8}{'gamma':>10}{'bandwidth':>11}")
    for r in rows:
        print(f"{r['scheme']:<12}{r['n']:>8}{r['nnz']:>10}{r['sigma']:>8.2f}{r['gamma']:>10.3f}{r['bandwidth']:>11}")
    if a.out:
        pl.append_csv(a.out, rows)
    return 0


def cmd_spy(a) -> int:
    from .fileio import spy_image
    if a.out is None:
        raise ValueError("--out is required")
    with phase("load"):
        m = _load_matrix(a.matrix, a.perm)
    roi = tuple(a.roi) if a.roi else None
    with phase("spy"):
        img = spy_image(m, a.side, a.out, roi)
    print(f"spy: wrote {img.shape[1]}x{img.shape[0]} image to {a.out}")
    return 0


def cmd_bench(a) -> int:
    out_dir = a.out or "bench_out"
    os.makedirs(out_dir, exist_ok=True)
    workers = tuple(a.workers) if a.workers else (1, os.cpu_count() or 1)
    workers = tuple(sorted(set(workers)))
    reports = []
    meta = {"machine": pl.machine_descriptor(), "reps": a.reps, "workers": list(workers)}
    if a.micro:
        with phase("bench"):
            res = pl.bench_micro(a.n, a.width, a.reps, a.seed)
        reports += [res["banded"], res["scattered"]]
        meta["micro_ratio_banded_over_scattered"] = res["ratio"]
    else:
        names = SCHEMES if a.scheme is None or "all" in a.scheme else a.scheme
        with phase("load"):
            pts = _points(a)
        with phase("knn"):
            m = pl.interaction_matrix(pts, a.k, not a.no_symmetrize)
        orderings, order_ns = [], {}
        for s in names:
            t0 = time.perf_counter_ns()
            with phase("order"):
                o = pl.order_by_scheme(s, pts, m.pattern, a.seed, a.leaf_capacity, a.max_depth)
            order_ns[s] = time.perf_counter_ns() - t0
            orderings.append(o)
        with phase("bench"):
            reports = pl.bench_spmv(m, orderings, a.reps, workers, k=a.k, block=a.leaf_capacity,
                                    order_ns=order_ns)
        meta.update(n=m.shape[0], nnz=m.nnz, k=a.k, schemes=list(names))
    base = next((r for r in reports if r.scheme == "scattered" and r.kernel == "csr"), reports[0])
    print(f"{'scheme':<12}{'kernel':<7}{'workers':>8}{'median_ms':>11}{'Mnnz/s':>10}{'speedup':>9}  checksum")
    for r in reports:
        print(f"{r.scheme:<12}{r.kernel:<7}{r.workers:>8}{r.multiply_ns / 1e6:>11.3f}"
              f"{r.throughput / 1e6:>10.1f}{r.throughput / base.throughput:>9.2f}  {r.checksum:.12g}")
    meta["reports"] = [r.row() for r in reports]
    pl.write_json(os.path.join(out_dir, "bench.json"), meta)
    pl.append_csv(os.path.join(out_dir, "bench.csv"), [r.row() for r in reports], pl.CSV_FIELDS)
    return 0


def cmd_tsne_attr(a) -> int:
    from .kernels import tsne_attractive_step
    with phase("load"):
        pts = _points(a)
    with phase("knn"):
        m = pl.interaction_matrix(pts, a.k, True)
    r = pl.run_pipeline(_config(a), points=pts, matrix=m)
    h = r.hier
    p = h.values / h.values.sum()
    y = np.random.default_rng(a.seed).standard_normal((h.n_rows, a.dim_emb)) * 1e-2
    times = []
    with phase("tsne"):
        for _ in range(a.iters):
            t0 = time.perf_counter_ns()
            f = tsne_attractive_step(h, y, p, workers=a.workers)
            times.append(time.perf_counter_ns() - t0)
            y = y - a.step * f
    print(f"tsne-attr: scheme={a.scheme} n={h.n_rows} nnz={h.nnz} iters={a.iters} "
          f"median_ms={np.median(times) / 1e6:.3f} |F|={np.linalg.norm(f):.6g}")
    if a.out:
        pl.write_json(a.out, {"scheme": a.scheme, "n": h.n_rows, "nnz": h.nnz,
                              "iteration_ns": times, "force_norm": float(np.linalg.norm(f))})
    return 0


def cmd_meanshift(a) -> int:
    from .kernels import MeanShiftState, meanshift_step
    with phase("load"):
        pts = _points(a)
    with phase("meanshift"):
        st = MeanShiftState.start(pts, bandwidth=a.bandwidth, k=a.k, refresh_period=a.refresh,
                                  reorder_on_refresh=a.reorder, leaf_capacity=a.leaf_capacity)
        t0 = time.perf_counter_ns()
        for _ in range(a.iters):
            st = meanshift_step(st)
        dt = time.perf_counter_ns() - t0
    final = st.targets_in_original_order()
    modes = np.unique(np.round(final, 3), axis=0).shape[0]
    print(f"meanshift: n={pts.shape[0]} iters={a.iters} time_ms={dt / 1e6:.1f} distinct_means~{modes}")
    if a.out:
        from .fileio import write_fvecs
        write_fvecs(a.out, final)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nnreorder", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic pattern (.mtx) or point set (.fvecs)")
    p.add_argument("kind", choices=["arrowhead", "banded", "scattered", "mixture"])
    p.add_argument("--block", type=int, default=20)
    p.add_argument("--width", type=int, default=30, help="nonzeros per row")
    _add_points(p)
    _add_common(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("knn", help="build the kNN interaction matrix")
    _add_points(p)
    _add_ordering(p)
    _add_common(p)
    p.set_defaults(func=cmd_knn)

    p = sub.add_parser("embed", help="project points onto leading principal axes")
    p.add_argument("--d", type=int, default=3)
    _add_points(p)
    _add_common(p)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("order", help="compute an ordering and write it as a permutation file")
    p.add_argument("--matrix", default=None, help="Matrix Market file (for rcm)")
    _add_points(p)
    _add_ordering(p)
    _add_common(p)
    p.set_defaults(func=cmd_order)

    p = sub.add_parser("measure", help="gamma and bandwidth table")
    p.add_argument("--matrix", default=None)
    p.add_argument("--perm", default=None)
    p.add_argument("--rho", type=float, default=3.0)
    p.add_argument("--method", choices=["auto", "exact", "grid"], default="auto")
    _add_points(p)
    _add_ordering(p, multi=True)
    _add_common(p)
    p.set_defaults(func=cmd_measure)

    p = sub.add_parser("spy", help="render a sparsity profile as PGM")
    p.add_argument("--matrix", required=True)
    p.add_argument("--perm", default=None)
    p.add_argument("--side", type=int, default=512)
    p.add_argument("--roi", type=int, nargs=4, metavar=("ROW_LO", "ROW_HI", "COL_LO", "COL_HI"))
    _add_common(p)
    p.set_defaults(func=cmd_spy)

    p = sub.add_parser("bench", help="SpMV throughput comparison across orderings")
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--workers", type=int, nargs="+", default=None)
    p.add_argument("--micro", action="store_true", help="banded vs scattered micro-benchmark")
    p.add_argument("--width", type=int, default=30)
    _add_points(p)
    _add_ordering(p, multi=True)
    _add_common(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("tsne-attr", help="timed t-SNE attractive-force iterations")
    p.add_argument("--dim-emb", type=int, default=2)
    p.add_argument("--iters", type=int, default=10)
    p.add_argument("--step", type=float, default=1.0)
    p.add_argument("--workers", type=int, default=1)
    _add_points(p)
    _add_ordering(p)
    _add_common(p)
    p.set_defaults(func=cmd_tsne_attr)

    p = sub.add_parser("meanshift", help="mean-shift iterations over kNN neighborhoods")
    p.add_argument("--bandwidth", type=float, default=1.0)
    p.add_argument("--iters", type=int, default=50)
    p.add_argument("--refresh", type=int, default=10)
    p.add_argument("--reorder", action="store_true", help="reorder targets by tree3 on refresh")
    _add_points(p)
    _add_ordering(p)
    _add_common(p)
    p.set_defaults(func=cmd_meanshift)
    return ap


def main(argv=None) -> int:
    a = build_parser().parse_args(argv)
    # numba falls back to another threading layer on its own; the notice is noise here
    warnings.filterwarnings("ignore", message="The TBB threading layer")
    try:
        return a.func(a)
    except PhaseError as e:
        print(f"nnreorder {a.command}: error {e}", file=sys.stderr)
    except (NNReorderError, ValueError, OSError) as e:
        print(f"nnreorder {a.command}: error [{a.command}] {type(e).__name__}: {e}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
