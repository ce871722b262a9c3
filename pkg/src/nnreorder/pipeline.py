"""End-to-end driver: points -> kNN -> embedding -> ordering -> blocked
matrix -> measurements, plus the SpMV benchmark harness."""

from __future__ import annotations

import contextlib
import csv
import dataclasses
import json
import os
import platform
import time
from dataclasses import dataclass, field

import numpy as np

from .core import Permutation, SparseMatrix, SparsePattern, permute
from .errors import ChecksumMismatch, PhaseError
from .hier import HierBlockMatrix, build_hier
from .kernels import CsrKernel, HierKernel
from .knn import build_knn, gaussian_values, pattern_from_knn, symmetrize
from .measure import GammaParams, bandwidth, gamma
from .orderings import (
    DEFAULT_BINS,
    DEFAULT_LEAF_CAPACITY,
    DEFAULT_MAX_DEPTH,
    OrderingResult,
    PartitionTree,
    order_lexical,
    order_rcm,
    order_scattered,
    order_tree,
)
from .pca import embed_points
from .synth import gen_banded, gen_gaussian_mixture, gen_scattered

SCHEMES = ("scattered", "rcm", "lex1", "lex2", "lex3", "tree2", "tree3")


@contextlib.contextmanager
def phase(name: str):
    """Re-raise any failure inside the block tagged with ``name``."""
    try:
        yield
    except PhaseError:
        raise
    except Exception as exc:
        raise PhaseError(name, exc) from exc


def machine_descriptor() -> str:
    return f"{platform.node()} {platform.machine()} {platform.processor() or 'cpu'} x{os.cpu_count()} py{platform.python_version()}"


def order_by_scheme(scheme: str, points: np.ndarray | None, pattern: SparsePattern | None,
                    seed: int = 0, leaf_capacity: int = DEFAULT_LEAF_CAPACITY,
                    max_depth: int = DEFAULT_MAX_DEPTH, bins: int = DEFAULT_BINS,
                    embedding_seed: int = 0) -> OrderingResult:
    """Symmetric (rows = columns) ordering of a square interaction matrix by
    scheme name. ``lexD``/``treeD`` embed the points into ``D`` dimensions
    first."""
    if scheme == "scattered":
        n = pattern.n_rows if pattern is not None else points.shape[0]
        p = order_scattered(n, seed)
        return OrderingResult(scheme, p, p)
    if scheme == "rcm":
        p = order_rcm(pattern)
        return OrderingResult(scheme, p, p)
    if scheme[:3] == "lex" or scheme[:4] == "tree":
        d = int(scheme[-1])
        emb = embed_points(points, d, seed=embedding_seed)
        if scheme.startswith("lex"):
            p = order_lexical(emb, bins)
            return OrderingResult(scheme, p, p)
        return order_tree(emb, leaf_capacity, max_depth)
    raise ValueError(f"unknown scheme {scheme!r}; choose from {', '.join(SCHEMES)}")


def uniform_tree(perm: Permutation, block: int) -> PartitionTree:
    """Equal-size blocking of a permuted index range (the flat, CSB-like
    layout used for schemes without a tree)."""
    n = perm.n
    offsets = list(range(0, n, block)) + [n]
    return PartitionTree.from_offsets(offsets, perm)


def blocked(m_perm: SparseMatrix, o: OrderingResult, block: int, cut_level="auto") -> HierBlockMatrix:
    rt = o.row_tree or uniform_tree(o.row_perm, block)
    ct = o.col_tree or uniform_tree(o.col_perm, block)
    return build_hier(m_perm, rt, ct, cut_level)


def checksum(y: np.ndarray) -> float:
    """Position-weighted sum; unlike a plain sum it changes if entries move."""
    w = 1.0 + (np.arange(y.size) % 97) / 97.0
    return float(np.dot(y, w))


def charges(n: int, seed: int = 0) -> np.ndarray:
    return np.random.default_rng(seed + 7919).uniform(-1.0, 1.0, n)


# -- reports -------------------------------------------------------------------

@dataclass
class BenchReport:
    machine: str
    scheme: str
    kernel: str
    n: int
    nnz: int
    k: int
    order_ns: int
    build_ns: int
    multiply_ns: int
    reps: int
    workers: int
    throughput: float
    checksum: float
    multiply_all_ns: list = field(default_factory=list, repr=False)

    def row(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("multiply_all_ns")
        return d


CSV_FIELDS = [f.name for f in dataclasses.fields(BenchReport) if f.name != "multiply_all_ns"]


def append_csv(path, rows: list[dict], fields: list[str] | None = None) -> None:
    """Append rows, writing the header only when the file is new."""
    fields = fields or list(rows[0].keys())
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        if new:
            w.writeheader()
        for r in rows:
            w.writerow({k: r.get(k) for k in fields})


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"{type(o).__name__} is not JSON serializable")


# -- benchmark harness ----------------------------------------------------------

def _time_interleaved(fns: list, reps: int) -> list[list[int]]:
    """Warm each callable up once, then time ``reps`` rounds that call every
    callable in turn, so slow drift of the machine hits all of them alike."""
    for fn in fns:
        fn()
    out = [[] for _ in fns]
    for _ in range(reps):
        for fn, times in zip(fns, out):
            t0 = time.perf_counter_ns()
            fn()
            times.append(max(1, time.perf_counter_ns() - t0))
    return out


def bench_spmv(m: SparseMatrix, orderings: list[OrderingResult], reps: int = 5,
               workers: tuple[int, ...] = (1,), kernels: tuple[str, ...] = ("csr", "hier"),
               x: np.ndarray | None = None, k: int = 0, block: int = DEFAULT_LEAF_CAPACITY,
               order_ns: dict | None = None, rtol: float = 1e-9,
               machine: str | None = None) -> list[BenchReport]:
    """Time ``y = A x`` under each ordering.

    The matrix and charges are permuted and blocked for every ordering
    first; then each run gets one warm-up multiply and ``reps`` timed
    multiplies taken in interleaved rounds. The median is reported.
    Outputs are restored to the original index order and their checksums
    must agree across all runs to ``rtol`` relative, else
    :class:`ChecksumMismatch`. ``csr`` runs single-threaded; ``hier`` runs
    once per worker count.
    """
    if reps < 3:
        raise ValueError("reps must be >= 3")
    n_rows, n_cols = m.shape
    x = charges(n_cols) if x is None else np.asarray(x, dtype=np.float64)
    machine = machine or machine_descriptor()
    order_ns = order_ns or {}
    runs = []
    for o in orderings:
        t0 = time.perf_counter_ns()
        mp = permute(m, o.row_perm, o.col_perm)
        h = blocked(mp, o, block) if "hier" in kernels else None
        build_ns = max(1, time.perf_counter_ns() - t0)
        xp = o.col_perm.apply(x)
        if "csr" in kernels:
            runs.append((o, "csr", 1, CsrKernel(mp), xp, build_ns))
        if h is not None:
            runs += [(o, "hier", w, HierKernel(h, w), xp, build_ns) for w in workers]
    outs = [np.empty(n_rows) for _ in runs]
    try:
        fns = [(lambda op=r[3], xp=r[4], y=y: op.matvec(xp, y)) for r, y in zip(runs, outs)]
        all_times = _time_interleaved(fns, reps)
    finally:
        for r in runs:
            if isinstance(r[3], HierKernel):
                r[3].close()
    reports: list[BenchReport] = []
    reference = None
    for (o, kernel, w, _, _, build_ns), y, times in zip(runs, outs, all_times):
        cs = checksum(o.row_perm.restore(y))
        if reference is None:
            reference = (cs, o.scheme, kernel, w)
        elif not np.isclose(cs, reference[0], rtol=rtol, atol=rtol * (1.0 + abs(reference[0]))):
            raise ChecksumMismatch(
                f"{o.scheme}/{kernel}/w{w} checksum {cs!r} differs from "
                f"{reference[1]}/{reference[2]}/w{reference[3]} checksum {reference[0]!r}"
            )
        med = int(np.median(times))
        reports.append(BenchReport(
            machine=machine, scheme=o.scheme, kernel=kernel, n=n_rows, nnz=m.nnz, k=k,
            order_ns=int(order_ns.get(o.scheme, 0)), build_ns=build_ns,
            multiply_ns=med, reps=reps, workers=w,
            throughput=m.nnz / (med * 1e-9), checksum=cs, multiply_all_ns=times,
        ))
    return reports


def bench_micro(n: int = 1 << 14, nnz_per_row: int = 30, reps: int = 20, seed: int = 0,
                machine: str | None = None) -> dict:
    """Banded vs scattered flat SpMV at equal ``n`` and ``nnz``.

    The banded pattern is built with wrap-free clipping, so to keep nnz equal
    the scattered matrix uses the banded row counts. Both are timed in
    interleaved rounds.
    """
    if reps < 3:
        raise ValueError("reps must be >= 3")
    machine = machine or machine_descriptor()
    banded = gen_banded(n, nnz_per_row)
    scat = gen_scattered(n, nnz_per_row, seed)
    # trim scattered rows to the banded row counts so nnz matches exactly
    counts = np.diff(banded.indptr)
    keep = np.concatenate([np.arange(a, a + c) for a, c in zip(scat.indptr[:-1], counts)])
    scat = SparsePattern(n, n, scat.rows[keep], scat.cols[keep], _trusted=True)
    vals = np.random.default_rng(seed).uniform(0.5, 1.5, banded.nnz)
    x = charges(n, seed)
    names = ("banded", "scattered")
    ops = [CsrKernel(SparseMatrix(p, vals)) for p in (banded, scat)]
    ys = [np.empty(n) for _ in ops]
    fns = [(lambda op=op, y=y: op.matvec(x, y)) for op, y in zip(ops, ys)]
    out = {}
    for name, y, times in zip(names, ys, _time_interleaved(fns, reps)):
        med = int(np.median(times))
        out[name] = BenchReport(
            machine=machine, scheme=name, kernel="csr", n=n, nnz=banded.nnz, k=nnz_per_row,
            order_ns=0, build_ns=0, multiply_ns=med, reps=reps, workers=1,
            throughput=banded.nnz / (med * 1e-9), checksum=checksum(y), multiply_all_ns=times,
        )
    out["ratio"] = out["banded"].throughput / out["scattered"].throughput
    return out


# -- pipeline -----------------------------------------------------------------

@dataclass
class PipelineConfig:
    scheme: str = "tree3"
    seed: int = 0
    input_path: str | None = None
    n_points: int = 4096
    dim: int = 64
    n_clusters: int = 32
    center_spread: float = 10.0
    cluster_sigma: float = 1.0
    k: int = 30
    symmetrize: bool = True
    sigma: float | None = None
    leaf_capacity: int = DEFAULT_LEAF_CAPACITY
    max_depth: int = DEFAULT_MAX_DEPTH
    bins: int = DEFAULT_BINS
    cut_level: int | str = "auto"
    spy_path: str | None = None
    spy_side: int = 512
    bench: bool = False
    reps: int = 5
    workers: tuple[int, ...] = (1,)
    out_dir: str | None = None

    @property
    def gamma_sigma(self) -> float:
        return self.sigma if self.sigma is not None else self.k / 2.0


@dataclass
class PipelineResult:
    config: PipelineConfig
    ordering: OrderingResult
    matrix: SparseMatrix
    hier: HierBlockMatrix
    gamma: float
    bandwidth: int
    timings_ns: dict
    checksum: float
    bench: list[BenchReport] = field(default_factory=list)

    def metadata(self) -> dict:
        return {
            "config": dataclasses.asdict(self.config),
            "scheme": self.ordering.scheme,
            "n": self.matrix.shape[0],
            "nnz": self.matrix.nnz,
            "gamma": self.gamma,
            "gamma_sigma": self.config.gamma_sigma,
            "bandwidth": self.bandwidth,
            "n_leaf_blocks": self.hier.n_leaf_blocks,
            "cut_level": self.hier.cut_level,
            "timings_ns": self.timings_ns,
            "checksum": self.checksum,
            "row_perm_tag": self.ordering.row_perm.tag,
            "machine": machine_descriptor(),
        }


def load_points(cfg: PipelineConfig) -> np.ndarray:
    if cfg.input_path:
        from .fileio import read_fvecs
        return read_fvecs(cfg.input_path)
    return gen_gaussian_mixture(cfg.n_points, cfg.dim, cfg.n_clusters, cfg.center_spread,
                                cfg.cluster_sigma, cfg.seed)


def interaction_matrix(points: np.ndarray, k: int, sym: bool = True) -> SparseMatrix:
    """Self-excluded kNN pattern (optionally symmetrized) with Gaussian
    values at the median neighbor distance."""
    g = build_knn(points, points, k)
    p = pattern_from_knn(g)
    if sym:
        p = symmetrize(p)
    h = float(np.median(g.neighbor_dists[:, -1])) or 1.0
    return gaussian_values(p, points, points, h)


def run_pipeline(cfg: PipelineConfig, points: np.ndarray | None = None,
                 matrix: SparseMatrix | None = None) -> PipelineResult:
    """Run every phase; failures surface as :class:`PhaseError`."""
    t: dict[str, int] = {}

    def tick(name, t0):
        t[name] = max(1, time.perf_counter_ns() - t0)

    t0 = time.perf_counter_ns()
    with phase("load"):
        if points is None:
            points = load_points(cfg)
    tick("load", t0)

    t0 = time.perf_counter_ns()
    with phase("knn"):
        if matrix is None:
            matrix = interaction_matrix(points, cfg.k, cfg.symmetrize)
    tick("knn", t0)

    t0 = time.perf_counter_ns()
    with phase("order"):
        o = order_by_scheme(cfg.scheme, points, matrix.pattern, cfg.seed, cfg.leaf_capacity,
                            cfg.max_depth, cfg.bins)
    tick("order", t0)

    t0 = time.perf_counter_ns()
    with phase("build"):
        mp = permute(matrix, o.row_perm, o.col_perm)
        h = blocked(mp, o, cfg.leaf_capacity, cfg.cut_level)
    tick("build", t0)

    t0 = time.perf_counter_ns()
    with phase("measure"):
        g = gamma(mp.pattern, GammaParams(cfg.gamma_sigma))
        bw = bandwidth(mp.pattern)
    tick("measure", t0)

    with phase("multiply"):
        x = charges(matrix.shape[1], cfg.seed)
        with HierKernel(h) as hk:
            y = o.row_perm.restore(hk.matvec(o.col_perm.apply(x)))
        cs = checksum(y)

    if cfg.spy_path:
        with phase("spy"):
            from .fileio import spy_image
            spy_image(mp.pattern, cfg.spy_side, cfg.spy_path)

    reports: list[BenchReport] = []
    if cfg.bench:
        with phase("bench"):
            reports = bench_spmv(matrix, [o], reps=cfg.reps, workers=cfg.workers, k=cfg.k,
                                 block=cfg.leaf_capacity, order_ns={o.scheme: t["order"]})

    res = PipelineResult(cfg, o, mp, h, g, bw, t, cs, reports)
    if cfg.out_dir:
        with phase("report"):
            os.makedirs(cfg.out_dir, exist_ok=True)
            write_json(os.path.join(cfg.out_dir, f"run_{cfg.scheme}.json"), res.metadata())
            append_csv(os.path.join(cfg.out_dir, "gamma.csv"),
                       [{"scheme": o.scheme, "n": mp.shape[0], "nnz": mp.nnz, "k": cfg.k,
                         "sigma": cfg.gamma_sigma, "gamma": g, "bandwidth": bw, "seed": cfg.seed}])
            if reports:
                append_csv(os.path.join(cfg.out_dir, "bench.csv"), [r.row() for r in reports], CSV_FIELDS)
    return res
