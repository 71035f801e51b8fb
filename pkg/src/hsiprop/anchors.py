"""Anchor selection, the pixel-anchor graph Z and first-stage propagation."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ._validation import check_positive, check_row_stochastic, check_spectra

KMEANS_MAX_ITER = 100


@dataclass(frozen=True)
class AnchorSet:
    features: np.ndarray  # (m, d), every row is a dataset row
    source_rows: np.ndarray  # (m,) distinct row indices into the spectra
    n_iter: int = 0
    inertia: float = float("nan")

    @property
    def m(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class AnchorGraph:
    Z: np.ndarray  # (n, m)
    sigma2: float
    row_normalized: bool = True


def sq_distances(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances between rows of X and rows of C, clipped at 0."""
    d2 = (
        np.einsum("ij,ij->i", X, X)[:, None]
        + np.einsum("ij,ij->i", C, C)[None, :]
        - 2.0 * (X @ C.T)
    )
    np.maximum(d2, 0.0, out=d2)
    return d2


def _kmeans_pp(X, m, rng):
    n = X.shape[0]
    chosen = [int(rng.integers(n))]
    closest = sq_distances(X, X[chosen]).ravel()
    for _ in range(1, m):
        closest[chosen] = 0.0
        total = closest.sum()
        if total > 0:
            idx = int(rng.choice(n, p=closest / total))
        else:
            # duplicate rows only: pick any row not taken yet
            free = np.setdiff1d(np.arange(n), chosen)
            idx = int(free[rng.integers(free.size)])
        chosen.append(idx)
        np.minimum(closest, sq_distances(X, X[idx : idx + 1]).ravel(), out=closest)
    return X[chosen].copy()


def kmeans(spectra, m: int, seed: int = 0, max_iter: int = KMEANS_MAX_ITER) -> AnchorSet:
    """Lloyd's k-means with k-means++ seeding, snapped to dataset rows.

    Each final centroid is replaced by its nearest dataset row; when two
    centroids snap to the same row the later one takes its next-nearest unused
    row. Empty clusters are reseeded from the point farthest from its centre.
    """
    X = check_spectra(spectra)
    n = X.shape[0]
    m = int(m)
    if not 1 <= m <= n:
        raise ValueError(f"anchor count m={m} must lie in [1, n={n}]")
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp(X, m, rng)
    assign = None
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        d2 = sq_distances(X, centers)
        new_assign = np.argmin(d2, axis=1)
        counts = np.bincount(new_assign, minlength=m)
        if np.any(counts == 0):
            point_cost = d2[np.arange(n), new_assign]
            taken: set[int] = set()
            for j in np.flatnonzero(counts == 0):
                far = next(int(i) for i in np.argsort(-point_cost, kind="stable") if int(i) not in taken)
                taken.add(far)
                new_assign[far] = j
            counts = np.bincount(new_assign, minlength=m)
        if assign is not None and np.array_equal(assign, new_assign):
            break
        assign = new_assign
        sums = np.zeros_like(centers)
        np.add.at(sums, assign, X)
        centers = np.where(counts[:, None] > 0, sums / np.maximum(counts, 1)[:, None], centers)
    inertia = float(sq_distances(X, centers)[np.arange(n), assign].sum())
    rows = snap_to_rows(X, centers)
    return AnchorSet(X[rows].copy(), rows, n_iter, inertia)


def snap_to_rows(X: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Nearest distinct dataset row for each centre, resolved in centre order."""
    d2 = sq_distances(X, centers)
    used: set[int] = set()
    rows = np.empty(centers.shape[0], dtype=np.int64)
    for j in range(centers.shape[0]):
        for i in np.argsort(d2[:, j], kind="stable"):
            if int(i) not in used:
                rows[j] = i
                used.add(int(i))
                break
    return rows


def anchors_from_rows(spectra, rows) -> AnchorSet:
    X = check_spectra(spectra)
    rows = np.asarray(rows, dtype=np.int64)
    if np.unique(rows).size != rows.size:
        raise ValueError("anchor rows must be distinct")
    return AnchorSet(X[rows].copy(), rows)


def build_anchor_graph(spectra, anchors, sigma2: float) -> AnchorGraph:
    """Row-normalised Gaussian kernel between pixels and anchors.

    z_ij is proportional to exp(-||x_i - a_j||^2 / (2 sigma2)). Each row is
    shifted by its smallest distance before exponentiating, which leaves the
    normalised row unchanged but keeps far-away pixels from underflowing.
    """
    sigma2 = check_positive(sigma2, "sigma2")
    X = check_spectra(spectra)
    A = anchors.features if isinstance(anchors, AnchorSet) else check_spectra(anchors)
    logits = -sq_distances(X, A) / (2.0 * sigma2)
    underflow = np.max(logits, axis=1) < np.log(np.finfo(np.float64).tiny)
    if np.any(underflow):
        warnings.warn(
            f"{int(underflow.sum())} pixel rows underflow the raw kernel; "
            "normalised from the shifted kernel instead",
            RuntimeWarning,
            stacklevel=2,
        )
    logits -= logits.max(axis=1, keepdims=True)
    Z = np.exp(logits)
    Z /= Z.sum(axis=1, keepdims=True)
    return AnchorGraph(Z, sigma2, True)


def initial_labels(Z, U) -> np.ndarray:
    """First-stage labels F0 = Z U."""
    Z = Z.Z if isinstance(Z, AnchorGraph) else np.asarray(Z, dtype=np.float64)
    U = np.asarray(U, dtype=np.float64)
    if Z.shape[1] != U.shape[0]:
        raise ValueError(f"Z has {Z.shape[1]} anchor columns but U has {U.shape[0]} rows")
    return Z @ U


class FactoredAffinity:
    """Pixel affinity W = Z diag(1/delta) Z^T kept in factored form.

    ``delta`` holds the column sums of Z. Columns with zero sum are dropped at
    construction and listed in ``dropped``.
    """

    def __init__(self, Z):
        Z = Z.Z if isinstance(Z, AnchorGraph) else np.asarray(Z, dtype=np.float64)
        check_row_stochastic(Z, "Z", atol=1e-8)
        delta = Z.sum(axis=0)
        keep = delta > 0
        self.dropped = np.flatnonzero(~keep)
        if self.dropped.size:
            warnings.warn(
                f"anchors {self.dropped.tolist()} have zero column sum and were dropped",
                RuntimeWarning,
                stacklevel=2,
            )
            Z = Z[:, keep]
            Z = Z / Z.sum(axis=1, keepdims=True)
            delta = delta[keep]
        self.Z = Z
        self.delta = delta
        self._right = (Z / delta).T  # (m, n)

    @property
    def n(self) -> int:
        return self.Z.shape[0]

    def rows(self, index) -> np.ndarray:
        """Dense rows of W for the given row indices (slice or array)."""
        return self.Z[index] @ self._right

    def dense(self) -> np.ndarray:
        return self.rows(slice(None))

    def entries(self, i, j) -> np.ndarray:
        """W[i, j] for paired index arrays."""
        return np.einsum("ek,ek->e", self.Z[i] / self.delta, self.Z[j])


def anchor_affinity(Z) -> FactoredAffinity:
    return FactoredAffinity(Z)
