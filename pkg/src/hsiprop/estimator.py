"""Two-stage anchor-graph label propagation as a scikit-learn classifier."""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted, column_or_1d

from ._validation import check_open_unit, check_positive, check_spectra, one_hot
from .anchors import FactoredAffinity, build_anchor_graph, initial_labels
from .cube import slice_pixels
from .propagation import PropagationConfig, build_Y, propagate_closed_form
from .sparse_graph import (
    anchor_kernel,
    assemble,
    combine,
    recompute_similarity,
    symmetric_normalize,
    topk_prune,
)

UNLABELED = -1


@dataclass
class SliceResult:
    F: np.ndarray  # (m + n_slice, c), anchors first
    n_iter: int
    converged: bool
    k_used: int
    n_edges: int
    timings: dict = field(default_factory=dict)


def propagate_slice(X_slice, anchors, U, W_ll, sigma2, k, config: PropagationConfig) -> SliceResult:
    """Both propagation stages for one slice of unlabeled pixels."""
    t = {}
    t0 = time.perf_counter()
    Z = build_anchor_graph(X_slice, anchors, sigma2).Z
    F0 = initial_labels(Z, U)
    t["anchor_graph"] = time.perf_counter() - t0

    n = X_slice.shape[0]
    k_used = min(int(k), n - 1)
    t0 = time.perf_counter()
    if k_used >= 1:
        Wa_edges = topk_prune(FactoredAffinity(Z), k_used)
        t["prune"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        Wk = recompute_similarity(X_slice, Wa_edges, sigma2)
        W_uu = combine(Wa_edges, Wk)
    else:
        t["prune"] = time.perf_counter() - t0
        t0 = time.perf_counter()
        W_uu = sp.csr_matrix((n, n))
    t["sparse_graph"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    graph = symmetric_normalize(assemble(W_ll, Z, W_uu))
    Y = build_Y(U, F0)
    t["normalize"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    res = propagate_closed_form(graph.S, Y, config=config)
    t["solve"] = time.perf_counter() - t0
    return SliceResult(res.F, res.n_iter, res.converged, k_used, W_uu.nnz, t)


class AnchorGraphLabelPropagation(ClassifierMixin, BaseEstimator):
    """Transductive classifier: labeled rows act as anchors for two-stage propagation.

    ``fit(X, y)`` follows the scikit-learn semi-supervised convention: rows
    with ``y == -1`` are unlabeled and receive labels in ``transduction_``.
    Labeled rows become the anchors. Unlabeled rows are processed in
    contiguous slices of at most ``theta`` pixels; each slice builds its own
    pruned pixel graph and shares the anchor block.

    Parameters
    ----------
    sigma2 : float
        Gaussian kernel bandwidth (squared) used for every kernel.
    k : int
        Neighbours kept per pixel by the top-k pruning (clipped to slice size - 1).
    alpha : float
        Propagation balance in (0, 1).
    theta : int
        Maximum pixels per slice.
    solver : {'cg', 'direct', 'iterative'}
    n_jobs : int
        Worker threads across slices. Results do not depend on it.
    """

    def __init__(self, sigma2=0.2, k=1000, alpha=0.99, theta=3000, solver="cg",
                 tol=1e-6, max_iter=1000, cg_tol=1e-8, n_jobs=1):
        self.sigma2 = sigma2
        self.k = k
        self.alpha = alpha
        self.theta = theta
        self.solver = solver
        self.tol = tol
        self.max_iter = max_iter
        self.cg_tol = cg_tol
        self.n_jobs = n_jobs

    def _config(self):
        mode = {"cg": "closed_form", "direct": "direct", "iterative": "iterative"}.get(self.solver)
        if mode is None:
            raise ValueError(f"unknown solver {self.solver!r}")
        return PropagationConfig(
            alpha=check_open_unit(self.alpha, "alpha"),
            mode=mode,
            tol=self.tol,
            max_iter=self.max_iter,
            cg_tol=self.cg_tol,
        )

    def fit(self, X, y):
        X = check_spectra(X, min_samples=2)
        y = column_or_1d(y)
        if y.shape[0] != X.shape[0]:
            raise ValueError("X and y have different lengths")
        sigma2 = check_positive(self.sigma2, "sigma2")
        if int(self.k) < 1 or int(self.theta) < 1:
            raise ValueError("k and theta must be >= 1")
        config = self._config()

        labeled = np.flatnonzero(y != UNLABELED)
        unlabeled = np.flatnonzero(y == UNLABELED)
        if labeled.size == 0:
            raise ValueError("at least one labeled row is required")
        self.classes_, anchor_ids = np.unique(y[labeled], return_inverse=True)
        U = one_hot(anchor_ids, self.classes_.size)
        Q = X[labeled]
        W_ll = anchor_kernel(Q, sigma2)
        plan = slice_pixels(unlabeled.size, self.theta)

        def work(rows):
            return propagate_slice(X[unlabeled[rows]], Q, U, W_ll, sigma2, self.k, config)

        workers = max(1, int(self.n_jobs or 1))
        if workers == 1 or plan.n_slices <= 1:
            results = [work(r) for r in plan.slices]
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(work, plan.slices))

        m, c = labeled.size, self.classes_.size
        dist = np.zeros((X.shape[0], c))
        anchor_F = np.zeros((m, c))
        for rows, res in zip(plan.slices, results):
            dist[unlabeled[rows]] = res.F[m:]
            anchor_F += res.F[:m]
        anchor_F = anchor_F / len(results) if results else U
        dist[labeled] = anchor_F

        self.anchor_rows_ = labeled
        self.anchors_ = Q
        self.anchor_labels_ = U
        self.anchor_label_distributions_ = anchor_F
        self.label_distributions_ = dist
        self.transduction_ = self.classes_[np.argmax(dist, axis=1)]
        self.slice_plan_ = plan
        self.slice_results_ = results
        self.converged_ = all(r.converged for r in results)
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X):
        """Out-of-sample scores from the anchor graph and propagated anchor labels."""
        check_is_fitted(self, "anchors_")
        X = check_spectra(X, n_features=self.n_features_in_)
        Z = build_anchor_graph(X, self.anchors_, self.sigma2).Z
        scores = np.clip(Z @ self.anchor_label_distributions_, 0.0, None)
        totals = scores.sum(axis=1, keepdims=True)
        return np.divide(scores, totals, out=np.full_like(scores, 1.0 / scores.shape[1]),
                         where=totals > 0)

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]
