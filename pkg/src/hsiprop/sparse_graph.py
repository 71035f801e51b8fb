"""Top-k pruned pixel graph, block affinity assembly and symmetric normalisation."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ._validation import check_positive, check_spectra
from .anchors import FactoredAffinity, sq_distances

ROW_CHUNK = 256
EDGE_CHUNK = 1 << 17


def topk_prune(affinity: FactoredAffinity, k: int, chunk: int = ROW_CHUNK) -> sp.csr_matrix:
    """Keep the ``k`` largest off-diagonal affinities of every row.

    Rows of the factored affinity are expanded ``chunk`` at a time, so peak
    memory is O(chunk * n) rather than O(n^2). Ties at the k-th value go to
    the smaller column index. The returned CSR matrix holds the affinity
    values on the retained edges (explicit zeros are kept so every row has
    exactly ``k`` entries).
    """
    n = affinity.n
    k = int(k)
    if not 1 <= k < n:
        raise ValueError(f"k={k} must satisfy 1 <= k < n={n}")
    indptr = np.arange(n + 1, dtype=np.int64) * k
    indices = np.empty(n * k, dtype=np.int64)
    data = np.empty(n * k)
    for start in range(0, n, chunk):
        stop = min(n, start + chunk)
        block = affinity.rows(slice(start, stop))
        local = np.arange(stop - start)
        block[local, local + start] = -np.inf
        cols = _topk_columns(block, k)
        indices[start * k : stop * k] = cols.ravel()
        data[start * k : stop * k] = np.take_along_axis(block, cols, axis=1).ravel()
    return sp.csr_matrix((data, indices, indptr), shape=(n, n))


def _topk_columns(block: np.ndarray, k: int) -> np.ndarray:
    """Column ids (ascending) of the k largest entries per row, low index wins ties."""
    n = block.shape[1]
    kth = np.partition(block, n - k, axis=1)[:, n - k][:, None]
    above = block > kth
    tied = block == kth
    need = k - above.sum(axis=1, keepdims=True)
    keep = above | (tied & (np.cumsum(tied, axis=1) <= need))
    return np.nonzero(keep)[1].reshape(block.shape[0], k)


def recompute_similarity(spectra, edges: sp.csr_matrix, sigma2: float) -> sp.csr_matrix:
    """Gaussian kernel exp(-||x_i - x_j||^2 / (2 sigma2)) on the edges of ``edges``."""
    sigma2 = check_positive(sigma2, "sigma2")
    X = check_spectra(spectra)
    edges = edges.tocsr()
    rows = np.repeat(np.arange(edges.shape[0]), np.diff(edges.indptr))
    cols = edges.indices
    sq = np.einsum("ij,ij->i", X, X)
    d2 = np.empty(cols.size)
    for s in range(0, cols.size, EDGE_CHUNK):
        i, j = rows[s : s + EDGE_CHUNK], cols[s : s + EDGE_CHUNK]
        d2[s : s + EDGE_CHUNK] = sq[i] + sq[j] - 2.0 * np.einsum("ek,ek->e", X[i], X[j])
    np.maximum(d2, 0.0, out=d2)
    return sp.csr_matrix(
        (np.exp(-d2 / (2.0 * sigma2)), cols.copy(), edges.indptr.copy()), shape=edges.shape
    )


def combine(affinity_on_edges: sp.csr_matrix, kernel_on_edges: sp.csr_matrix) -> sp.csr_matrix:
    """Entrywise product on the shared edge set, symmetrised by entrywise max."""
    a, b = affinity_on_edges.tocsr(), kernel_on_edges.tocsr()
    if a.shape != b.shape or not (
        np.array_equal(a.indptr, b.indptr) and np.array_equal(a.indices, b.indices)
    ):
        raise ValueError("both factors must share the same edge set")
    prod = sp.csr_matrix((a.data * b.data, a.indices, a.indptr), shape=a.shape)
    prod.setdiag(0.0)
    prod.eliminate_zeros()
    sym = prod.maximum(prod.T).tocsr()
    sym.sort_indices()
    return sym


def anchor_kernel(anchor_features, sigma2: float) -> np.ndarray:
    """Fully connected Gaussian graph over the anchors (diagonal = 1)."""
    sigma2 = check_positive(sigma2, "sigma2")
    Q = check_spectra(anchor_features)
    W = np.exp(-sq_distances(Q, Q) / (2.0 * sigma2))
    W = 0.5 * (W + W.T)
    np.fill_diagonal(W, 1.0)
    return W


@dataclass(frozen=True)
class AffinityBlocks:
    """W = [[W_ll, Z^T], [Z, W_uu]] with anchors ordered first."""

    W_ll: np.ndarray
    Z: np.ndarray
    W_uu: sp.csr_matrix

    @property
    def m(self) -> int:
        return self.W_ll.shape[0]

    @property
    def n(self) -> int:
        return self.Z.shape[0]

    def to_sparse(self) -> sp.csr_matrix:
        Z = sp.csr_matrix(self.Z)
        return sp.bmat([[sp.csr_matrix(self.W_ll), Z.T], [Z, self.W_uu]], format="csr")


def assemble(W_ll, Z, W_uu) -> AffinityBlocks:
    W_ll = np.asarray(W_ll, dtype=np.float64)
    Z = np.asarray(Z, dtype=np.float64)
    W_uu = sp.csr_matrix(W_uu)
    m, n = W_ll.shape[0], Z.shape[0]
    if W_ll.shape != (m, m) or Z.shape[1] != m or W_uu.shape != (n, n):
        raise ValueError(
            f"block shapes disagree: W_ll {W_ll.shape}, Z {Z.shape}, W_uu {W_uu.shape}"
        )
    if not np.allclose(W_ll, W_ll.T, atol=1e-12, rtol=0):
        raise ValueError("W_ll must be symmetric")
    return AffinityBlocks(W_ll, Z, W_uu)


@dataclass(frozen=True)
class NormalizedGraph:
    S: sp.csr_matrix
    degree: np.ndarray
    isolated: np.ndarray


def symmetric_normalize(W) -> NormalizedGraph:
    """S = D^-1/2 W D^-1/2 with D the row sums of W.

    Nodes with zero degree get a unit self-loop first (with a warning).
    """
    if isinstance(W, AffinityBlocks):
        W = W.to_sparse()
    W = sp.csr_matrix(W, dtype=np.float64)
    degree = np.asarray(W.sum(axis=1)).ravel()
    isolated = np.flatnonzero(degree <= 0)
    if isolated.size:
        warnings.warn(
            f"{isolated.size} isolated nodes received a unit self-loop", RuntimeWarning, stacklevel=2
        )
        W = W + sp.csr_matrix(
            (np.ones(isolated.size), (isolated, isolated)), shape=W.shape
        )
        degree = np.asarray(W.sum(axis=1)).ravel()
    inv_sqrt = sp.diags(1.0 / np.sqrt(degree))
    S = (inv_sqrt @ W @ inv_sqrt).tocsr()
    S.sort_indices()
    return NormalizedGraph(S, degree, isolated)


def write_edge_list(W, path) -> None:
    """Dump a sparse graph as ``i j weight`` lines for debugging."""
    coo = sp.coo_matrix(W)
    with open(path, "w") as fh:
        for i, j, w in zip(coo.row, coo.col, coo.data):
            fh.write(f"{i} {j} {w:.17g}\n")
