"""Locality-improving reorderings for sparse near-neighbor interaction
matrices, with multi-level blocked storage and SpMV kernels."""

from .core import (
    Permutation,
    SparseMatrix,
    SparsePattern,
    csr_from_coo,
    permute,
    read_matrix_market,
    read_permutation,
    transpose,
    write_matrix_market,
    write_permutation,
)
from .errors import NNReorderError
from .fileio import read_fvecs, spy_image, write_fvecs
from .hier import HierBlockMatrix, build_hier, dump_hier, flatten, load_hier, update_values
from .kernels import (
    MeanShiftState,
    OrderedVector,
    iterate_interactions,
    meanshift_step,
    spmv_flat,
    spmv_hier,
    spmv_hier_parallel,
    tsne_attractive_step,
)
from .knn import KnnGraph, build_knn, gaussian_values, pattern_from_knn, symmetrize
from .measure import GammaParams, bandwidth, best_ordering_bruteforce, beta_bruteforce, gamma, gamma_exact, gamma_grid
from .orderings import (
    OrderingResult,
    PartitionTree,
    build_tree,
    level_blocking,
    order_dual_tree,
    order_lexical,
    order_rcm,
    order_scattered,
    order_tree,
)
from .pca import Embedding, choose_dim, embed_points, fit_pca, project, variance_ratio
from .pipeline import BenchReport, PipelineConfig, bench_micro, bench_spmv, run_pipeline
from .synth import gen_arrowhead, gen_banded, gen_gaussian_mixture, gen_scattered

__version__ = "0.1.0"
