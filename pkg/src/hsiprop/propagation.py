"""Second-stage label propagation on the normalised graph."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ._validation import check_open_unit, check_positive

DEFAULT_ALPHA = 0.99


@dataclass(frozen=True)
class PropagationConfig:
    alpha: float = DEFAULT_ALPHA
    mode: str = "closed_form"
    tol: float = 1e-6
    max_iter: int = 1000
    cg_tol: float = 1e-8
    cg_max_iter: int = 5000

    def __post_init__(self):
        check_open_unit(self.alpha, "alpha")
        check_positive(self.tol, "tol")
        check_positive(self.cg_tol, "cg_tol")
        if self.mode not in ("closed_form", "iterative", "direct"):
            raise ValueError(f"unknown propagation mode {self.mode!r}")


@dataclass
class LabelMatrix:
    F: np.ndarray
    n_iter: int = 0
    converged: bool = True
    residuals: list = field(default_factory=list)

    @property
    def hardened(self) -> np.ndarray:
        return harden(self.F)


def build_Y(U, F0) -> np.ndarray:
    """Stack anchor labels on top of the first-stage pixel labels."""
    U = np.asarray(U, dtype=np.float64)
    F0 = np.asarray(F0, dtype=np.float64)
    if U.ndim != 2 or F0.ndim != 2 or U.shape[1] != F0.shape[1]:
        raise ValueError(f"class counts differ: U {U.shape}, F0 {F0.shape}")
    return np.vstack([U, F0])


def _as_operator(S):
    return S if sp.issparse(S) else np.asarray(S, dtype=np.float64)


def propagate_iterative(S, Y, config: PropagationConfig | None = None, **overrides) -> LabelMatrix:
    """Run F <- alpha S F + (1 - alpha) Y from F = Y.

    Stops when the max-norm change drops below ``tol``. The fixed point is
    ``(1 - alpha) (I - alpha S)^-1 Y``.
    """
    cfg = config or PropagationConfig(**overrides)
    S = _as_operator(S)
    Y = np.asarray(Y, dtype=np.float64)
    a = cfg.alpha
    base = (1.0 - a) * Y
    F = Y.copy()
    for it in range(1, cfg.max_iter + 1):
        F_next = a * (S @ F) + base
        step = float(np.max(np.abs(F_next - F))) if F.size else 0.0
        F = F_next
        if step < cfg.tol:
            return LabelMatrix(F, it, True)
    warnings.warn(
        f"label propagation did not converge in {cfg.max_iter} iterations (last step {step:.3g})",
        RuntimeWarning,
        stacklevel=2,
    )
    return LabelMatrix(F, cfg.max_iter, False)


def conjugate_gradient(matvec, B, tol=1e-8, max_iter=5000, stall=200):
    """Column-wise CG for a symmetric positive definite operator.

    Each column of ``B`` is an independent right-hand side; they are advanced
    together but converge (and freeze) individually once
    ``||r_j|| <= tol * ||b_j||``. Returns ``(X, n_iter, converged, history)``
    where ``history`` holds the per-iteration max relative residual.
    """
    B = np.asarray(B, dtype=np.float64)
    X = np.zeros_like(B)
    R = B.copy()
    P = R.copy()
    bnorm = np.linalg.norm(B, axis=0)
    bnorm[bnorm == 0] = 1.0
    rr = np.einsum("ij,ij->j", R, R)
    active = np.sqrt(rr) / bnorm > tol
    history = [float(np.max(np.sqrt(rr) / bnorm, initial=0.0))]
    best, since_best = history[0], 0
    it = 0
    while np.any(active) and it < max_iter:
        it += 1
        cols = np.flatnonzero(active)
        AP = matvec(P[:, cols])
        pAp = np.einsum("ij,ij->j", P[:, cols], AP)
        step = rr[cols] / pAp
        X[:, cols] += P[:, cols] * step
        R[:, cols] -= AP * step
        rr_new = np.einsum("ij,ij->j", R[:, cols], R[:, cols])
        P[:, cols] = R[:, cols] + P[:, cols] * (rr_new / rr[cols])
        rr[cols] = rr_new
        rel = np.sqrt(rr) / bnorm
        active = rel > tol
        history.append(float(rel.max()))
        if history[-1] < best * (1 - 1e-12):
            best, since_best = history[-1], 0
        else:
            since_best += 1
            if since_best >= stall:
                break
    return X, it, not np.any(active), history


def propagate_closed_form(S, Y, alpha: float = DEFAULT_ALPHA, config: PropagationConfig | None = None) -> LabelMatrix:
    """Solve (I - alpha S) F = Y.

    Uses conjugate gradients (``mode='closed_form'``) or a dense LU
    factorisation (``mode='direct'``). If CG stalls the result falls back to
    the iterative scheme, rescaled by 1/(1 - alpha) so both routes return the
    same matrix.
    """
    cfg = config or PropagationConfig(alpha=alpha)
    a = cfg.alpha
    S = _as_operator(S)
    Y = np.asarray(Y, dtype=np.float64)
    if cfg.mode == "direct":
        dense = S.toarray() if sp.issparse(S) else S
        F = np.linalg.solve(np.eye(dense.shape[0]) - a * dense, Y)
        return LabelMatrix(F, 1, True)
    if cfg.mode == "iterative":
        res = propagate_iterative(S, Y, cfg)
        return LabelMatrix(res.F / (1.0 - a), res.n_iter, res.converged)

    def matvec(V):
        return V - a * (S @ V)

    F, n_iter, converged, history = conjugate_gradient(
        matvec, Y, tol=cfg.cg_tol, max_iter=cfg.cg_max_iter
    )
    if not converged:
        warnings.warn(
            f"CG stalled at relative residual {history[-1]:.3g}; falling back to iteration",
            RuntimeWarning,
            stacklevel=2,
        )
        res = propagate_iterative(S, Y, cfg)
        return LabelMatrix(res.F / (1.0 - a), n_iter + res.n_iter, res.converged, history)
    return LabelMatrix(F, n_iter, True, history)


def harden(F) -> np.ndarray:
    """Row-wise argmax (first index wins ties); all-zero rows map to -1."""
    F = np.asarray(F, dtype=np.float64)
    if not np.all(np.isfinite(F)):
        raise ValueError("label matrix has non-finite entries")
    labels = np.argmax(F, axis=1) if F.shape[1] else np.full(F.shape[0], -1)
    empty = ~np.any(F != 0, axis=1)
    if np.any(empty):
        warnings.warn(
            f"{int(empty.sum())} rows carry no label mass and stay unclassified",
            RuntimeWarning,
            stacklevel=2,
        )
        labels = np.where(empty, -1, labels)
    return labels


def to_raster(labels, pixel_index, shape, classes=None) -> np.ndarray:
    """Scatter hardened column ids into a class-id raster (0 = unclassified).

    ``classes`` maps column ids to raster ids; by default column j -> j + 1.
    """
    labels = np.asarray(labels, dtype=np.int64)
    classes = np.arange(1, labels.max(initial=0) + 2) if classes is None else np.asarray(classes)
    raster = np.zeros(shape, dtype=np.int64)
    valid = labels >= 0
    idx = np.asarray(pixel_index).reshape(-1, 2)
    raster[idx[valid, 0], idx[valid, 1]] = classes[labels[valid]]
    return raster
