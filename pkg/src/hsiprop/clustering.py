"""Rank-constrained clustering of the anchor graph into exactly c components."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import connected_components
from sklearn.base import BaseEstimator, ClusterMixin

from ._validation import check_positive, check_spectra, one_hot
from .sparse_graph import anchor_kernel

ZERO_EIG_RTOL = 1e-8
DEGENERATE_DENOM = 1e-12


@dataclass(frozen=True)
class ClusterConfig:
    c: int
    beta: float = 35.0
    h: int = 25
    max_iter: int = 50
    adaptive_beta: bool = True

    def validate(self, m: int) -> None:
        check_positive(self.beta, "beta")
        if not 1 <= self.c < m:
            raise ValueError(f"c={self.c} must satisfy 1 <= c < m={m}")
        # self-loops are excluded, so a row has m - 1 candidates and the
        # closed form needs one more than h of them
        if not 1 <= self.h <= m - 2:
            raise ValueError(f"h={self.h} must satisfy 1 <= h <= m - 2 = {m - 2}")


@dataclass(frozen=True)
class SpectralEmbedding:
    F: np.ndarray  # (m, c), orthonormal columns
    eigenvalues: np.ndarray  # full ascending spectrum of the Laplacian


@dataclass(frozen=True)
class ClusterGraph:
    A: np.ndarray
    gamma: np.ndarray  # per-row regulariser implied by the h-sparse closed form
    degenerate_rows: np.ndarray

    @property
    def laplacian(self) -> np.ndarray:
        return graph_laplacian(0.5 * (self.A + self.A.T))


@dataclass
class ClusterResult:
    labels: np.ndarray
    graph: ClusterGraph
    embedding: SpectralEmbedding
    n_iter: int
    converged: bool
    beta: float
    repaired: bool
    trace: list = field(default_factory=list)


def graph_laplacian(W: np.ndarray) -> np.ndarray:
    W = np.asarray(W, dtype=np.float64)
    return np.diag(W.sum(axis=1)) - W


def _embedding(L: np.ndarray, c: int) -> SpectralEmbedding:
    try:
        evals, evecs = np.linalg.eigh(0.5 * (L + L.T))
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            f"eigendecomposition failed (condition estimate {np.linalg.cond(L):.3g})"
        ) from exc
    F = evecs[:, :c].copy()
    idx = np.argmax(np.abs(F), axis=0)
    signs = np.sign(F[idx, np.arange(c)])
    signs[signs == 0] = 1.0
    return SpectralEmbedding(F * signs, evals)


def init_embedding(W_ll, c: int) -> SpectralEmbedding:
    """Eigenvectors of D - W_ll for the c smallest eigenvalues."""
    W = np.asarray(W_ll, dtype=np.float64)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ValueError("W_ll must be square")
    if np.any(W < 0) or not np.allclose(W, W.T, atol=1e-12):
        raise ValueError("W_ll must be symmetric and non-negative")
    return _embedding(graph_laplacian(W), c)


def update_F(A, c: int) -> SpectralEmbedding:
    """Eigenvectors of L_A = D_A - (A^T + A)/2 for the c smallest eigenvalues."""
    A = np.asarray(A, dtype=np.float64)
    return _embedding(graph_laplacian(0.5 * (A + A.T)), c)


def _pairwise_sq(F: np.ndarray) -> np.ndarray:
    sq = np.einsum("ij,ij->i", F, F)
    d = sq[:, None] + sq[None, :] - 2.0 * F @ F.T
    return np.maximum(d, 0.0)


def update_A(W_ll, F, beta: float, h: int) -> ClusterGraph:
    """Closed-form row update keeping the h smallest costs of every row.

    With e_ij = beta ||f_i - f_j||^2 - 2 w_ij sorted ascending per row (self
    excluded), A_ij = (e_{i,h+1} - e_ij) / (h e_{i,h+1} - sum_{n<=h} e_in) on
    the h smallest entries and 0 elsewhere. Rows whose denominator vanishes
    (all h+1 costs tied) get 1/h on the h smallest.
    """
    W = np.asarray(W_ll, dtype=np.float64)
    F = np.asarray(F, dtype=np.float64)
    m = W.shape[0]
    if F.shape[0] != m:
        raise ValueError("F and W_ll disagree on the anchor count")
    h = int(h)
    if not 1 <= h <= m - 2:
        raise ValueError(f"h={h} must satisfy 1 <= h <= m - 2 = {m - 2}")
    E = beta * _pairwise_sq(F) - 2.0 * W
    np.fill_diagonal(E, np.inf)
    order = np.argsort(E, axis=1, kind="stable")
    e_sorted = np.take_along_axis(E, order, axis=1)
    top = e_sorted[:, :h]
    nxt = e_sorted[:, h]
    denom = h * nxt - top.sum(axis=1)
    degenerate = denom <= DEGENERATE_DENOM
    safe = np.where(degenerate, 1.0, denom)
    vals = np.where(degenerate[:, None], 1.0 / h, (nxt[:, None] - top) / safe[:, None])
    A = np.zeros((m, m))
    np.put_along_axis(A, order[:, :h], vals, axis=1)
    if np.any(degenerate):
        warnings.warn(
            f"{int(degenerate.sum())} rows had tied costs; assigned uniform weights",
            RuntimeWarning,
            stacklevel=2,
        )
    # implicit regulariser: 2 (gamma + 1) = h e_{h+1} - sum of the h smallest
    gamma = np.where(degenerate, np.nan, denom / 2.0 - 1.0)
    return ClusterGraph(A, gamma, np.flatnonzero(degenerate))


def objective(A, F, W_ll, beta: float, gamma) -> float:
    """||A - W||_F^2 + sum_i gamma_i ||A_i||^2 + 2 beta Tr(F^T L_A F)."""
    A = np.asarray(A)
    W = np.asarray(W_ll)
    L = graph_laplacian(0.5 * (A + A.T))
    gamma = np.nan_to_num(np.asarray(gamma, dtype=np.float64))
    return float(
        np.sum((A - W) ** 2)
        + np.sum(gamma * np.sum(A * A, axis=1))
        + 2.0 * beta * np.trace(F.T @ L @ F)
    )


def count_zero_eigenvalues(eigenvalues, rtol: float = ZERO_EIG_RTOL) -> int:
    ev = np.asarray(eigenvalues)
    scale = max(float(np.max(np.abs(ev))), np.finfo(float).tiny)
    return int(np.sum(ev < rtol * scale))


def support_components(A) -> tuple[int, np.ndarray]:
    A = np.asarray(A)
    return connected_components((A + A.T) > 0, directed=False)


def run_clustering(W_ll, config: ClusterConfig, callback=None) -> ClusterResult:
    """Alternate the A and F updates until L_A has exactly c zero eigenvalues.

    With ``adaptive_beta`` the penalty is halved when there are too many
    components and doubled when there are too few. At termination the
    connected components of A's support are the clusters; if their count
    differs from c they are merged (closest mean W_ll affinity first) or split
    (largest component, by the sign of its Fiedler vector) until exactly c
    remain, and ``repaired`` is set.

    ``callback(iteration, graph, embedding)`` is called after every outer
    iteration.
    """
    W = np.asarray(W_ll, dtype=np.float64)
    m = W.shape[0]
    config.validate(m)
    c, h, beta = config.c, config.h, float(config.beta)
    if m < c * (h + 1):
        # every component needs h + 1 members for its rows to stay inside it
        warnings.warn(
            f"m={m} anchors cannot form {c} components with h={h} (needs m >= {c * (h + 1)}); "
            "expect the component repair to run",
            RuntimeWarning,
            stacklevel=2,
        )
    emb = init_embedding(W, c)
    trace = []
    converged = False
    graph = None
    n_iter = 0
    for n_iter in range(1, config.max_iter + 1):
        prev_F = emb.F
        graph = update_A(W, prev_F, beta, h)
        obj_after_A = objective(graph.A, prev_F, W, beta, graph.gamma)
        emb = update_F(graph.A, c)
        obj_after_F = objective(graph.A, emb.F, W, beta, graph.gamma)
        zeros = count_zero_eigenvalues(emb.eigenvalues)
        n_comp, _ = support_components(graph.A)
        trace.append(
            {
                "iter": n_iter,
                "beta": beta,
                "objective_after_A": obj_after_A,
                "objective_after_F": obj_after_F,
                "zero_eigenvalues": zeros,
                "components": int(n_comp),
                "ky_fan_gap": float(
                    abs(emb.eigenvalues[:c].sum() - np.trace(emb.F.T @ graph.laplacian @ emb.F))
                ),
            }
        )
        if callback is not None:
            callback(n_iter, graph, emb)
        if zeros == c:
            converged = True
            break
        if config.adaptive_beta:
            beta = beta / 2.0 if zeros > c else beta * 2.0
    n_comp, comp = support_components(graph.A)
    labels = _canonical(comp)
    repaired = n_comp != c
    if repaired:
        warnings.warn(
            f"graph has {n_comp} components after {n_iter} iterations; repairing to {c}",
            RuntimeWarning,
            stacklevel=2,
        )
        labels = _repair(labels, W, c)
    return ClusterResult(labels, graph, emb, n_iter, converged, beta, repaired, trace)


def _canonical(labels) -> np.ndarray:
    """Renumber so that clusters are ordered by their smallest member."""
    uniq, first, inverse = np.unique(np.asarray(labels), return_index=True, return_inverse=True)
    rank = np.empty(uniq.size, dtype=np.int64)
    rank[np.argsort(first)] = np.arange(uniq.size)
    return rank[inverse.ravel()]


def _repair(labels, W, c):
    labels = labels.copy()
    while labels.max() + 1 > c:
        k = labels.max() + 1
        ind = one_hot(labels, k)
        sizes = ind.sum(axis=0)
        link = ind.T @ W @ ind / np.outer(sizes, sizes)
        np.fill_diagonal(link, -np.inf)
        a, b = np.unravel_index(np.argmax(link), link.shape)
        a, b = min(a, b), max(a, b)
        labels[labels == b] = a
        labels = _canonical(labels)
    while labels.max() + 1 < c:
        sizes = np.bincount(labels)
        big = int(np.argmax(sizes))
        members = np.flatnonzero(labels == big)
        if members.size < 2:
            break
        sub = W[np.ix_(members, members)]
        fiedler = np.linalg.eigh(graph_laplacian(sub))[1][:, 1]
        side = fiedler < 0
        if side.all() or not side.any():
            side = fiedler < np.median(fiedler)
        if side.all() or not side.any():
            side = np.arange(members.size) >= members.size // 2
        labels[members[side]] = labels.max() + 1
        labels = _canonical(labels)
    return labels


def pseudo_label_anchors(cluster_ids, c: int | None = None) -> np.ndarray:
    """One-hot anchor label matrix U from cluster ids 0..c-1."""
    ids = np.asarray(cluster_ids, dtype=np.int64)
    c = int(ids.max()) + 1 if c is None else int(c)
    counts = np.bincount(ids, minlength=c)
    if counts.size != c or np.any(counts == 0):
        raise ValueError(f"every one of the {c} clusters needs at least one anchor")
    return one_hot(ids, c)


class RankConstrainedClustering(ClusterMixin, BaseEstimator):
    """Cluster points into exactly ``n_clusters`` graph components.

    ``fit(X)`` builds a fully connected Gaussian graph on X (or uses X as the
    affinity when ``affinity='precomputed'``) and learns the sparse
    c-component graph ``graph_``; ``labels_`` holds the component ids.
    """

    def __init__(self, n_clusters=16, beta=35.0, h=25, sigma2=1.0, max_iter=50,
                 adaptive_beta=True, affinity="gaussian"):
        self.n_clusters = n_clusters
        self.beta = beta
        self.h = h
        self.sigma2 = sigma2
        self.max_iter = max_iter
        self.adaptive_beta = adaptive_beta
        self.affinity = affinity

    def fit(self, X, y=None):
        if self.affinity == "precomputed":
            W = np.asarray(X, dtype=np.float64)
        elif self.affinity == "gaussian":
            W = anchor_kernel(check_spectra(X, min_samples=3), self.sigma2)
        else:
            raise ValueError(f"unknown affinity {self.affinity!r}")
        cfg = ClusterConfig(self.n_clusters, self.beta, self.h, self.max_iter, self.adaptive_beta)
        res = run_clustering(W, cfg)
        self.affinity_matrix_ = W
        self.labels_ = res.labels
        self.graph_ = res.graph
        self.embedding_ = res.embedding.F
        self.n_iter_ = res.n_iter
        self.converged_ = res.converged
        self.repaired_ = res.repaired
        self.beta_ = res.beta
        self.trace_ = res.trace
        return self
