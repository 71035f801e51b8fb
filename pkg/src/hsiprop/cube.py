"""Hyperspectral cube model, HSC1/HSL1 file formats, PCA and pixel slicing."""

from __future__ import annotations

import math
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_spectra

CUBE_MAGIC = b"HSC1"
LABEL_MAGIC = b"HSL1"


class FormatError(ValueError):
    """Raised for unreadable HSC1/HSL1 files. ``code`` names the failure."""

    MALFORMED_HEADER = "malformed-header"
    TRUNCATED_PAYLOAD = "truncated-payload"
    NON_FINITE = "non-finite-values"
    BAD_LABELS = "bad-labels"

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


@dataclass(frozen=True)
class HsiCube:
    """A (height, width, bands) reflectance raster with optional truth map.

    ``values`` is stored as a (height, width, bands) array; the file layout is
    band sequential and conversion happens in :func:`load_cube`/:func:`save_cube`.
    ``truth`` holds class ids with 0 meaning unlabeled.
    """

    values: np.ndarray
    truth: np.ndarray | None = None
    n_classes: int | None = None

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 3:
            raise ValueError(f"cube values must be 3-D, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise FormatError(FormatError.NON_FINITE, "cube contains NaN or inf")
        values = values.copy()
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        if self.truth is not None:
            truth = np.asarray(self.truth)
            if truth.shape != values.shape[:2]:
                raise ValueError(
                    f"truth shape {truth.shape} does not match raster {values.shape[:2]}"
                )
            if truth.size and truth.min() < 0:
                raise FormatError(FormatError.BAD_LABELS, "negative class id")
            n_classes = self.n_classes
            if n_classes is None:
                n_classes = int(truth.max()) if truth.size else 0
                object.__setattr__(self, "n_classes", n_classes)
            elif truth.size and truth.max() > n_classes:
                raise FormatError(
                    FormatError.BAD_LABELS,
                    f"class id {truth.max()} exceeds declared count {n_classes}",
                )
            truth = truth.astype(np.int64)
            truth.flags.writeable = False
            object.__setattr__(self, "truth", truth)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def bands(self) -> int:
        return self.values.shape[2]

    def pixels(self) -> np.ndarray:
        """Flattened (height*width, bands) view in raster order."""
        return self.values.reshape(-1, self.bands)


def _read_header(buf: bytes, magic: bytes, n_fields: int, path) -> tuple[int, ...]:
    size = 4 + 4 * n_fields
    if len(buf) < size or buf[:4] != magic:
        raise FormatError(
            FormatError.MALFORMED_HEADER, f"{path}: expected {magic!r} header"
        )
    return struct.unpack(f"<{n_fields}I", buf[4:size])


def load_cube(path, labels_path=None, n_classes: int | None = None) -> HsiCube:
    """Read an HSC1 cube (and optionally an HSL1 truth map)."""
    buf = Path(path).read_bytes()
    height, width, bands = _read_header(buf, CUBE_MAGIC, 3, path)
    count = height * width * bands
    payload = buf[16:]
    if len(payload) < 4 * count:
        raise FormatError(
            FormatError.TRUNCATED_PAYLOAD,
            f"{path}: header declares {count} floats, found {len(payload) // 4}",
        )
    if len(payload) > 4 * count:
        raise FormatError(
            FormatError.MALFORMED_HEADER,
            f"{path}: {len(payload) - 4 * count} trailing bytes after payload",
        )
    bsq = np.frombuffer(payload, dtype="<f4", count=count).reshape(bands, height, width)
    if not np.all(np.isfinite(bsq)):
        raise FormatError(FormatError.NON_FINITE, f"{path}: NaN or inf in payload")
    truth = load_labels(labels_path) if labels_path is not None else None
    if truth is not None and truth.shape != (height, width):
        raise FormatError(
            FormatError.MALFORMED_HEADER,
            f"label raster {truth.shape} does not match cube {(height, width)}",
        )
    return HsiCube(np.moveaxis(bsq, 0, -1), truth, n_classes)


def save_cube(cube: HsiCube, path) -> None:
    bsq = np.ascontiguousarray(np.moveaxis(cube.values, -1, 0), dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(CUBE_MAGIC)
        fh.write(struct.pack("<3I", cube.height, cube.width, cube.bands))
        fh.write(bsq.tobytes())


def load_labels(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    height, width = _read_header(buf, LABEL_MAGIC, 2, path)
    count = height * width
    payload = buf[12:]
    if len(payload) != 2 * count:
        code = (
            FormatError.TRUNCATED_PAYLOAD
            if len(payload) < 2 * count
            else FormatError.MALFORMED_HEADER
        )
        raise FormatError(code, f"{path}: expected {count} u16 ids, got {len(payload) // 2}")
    return np.frombuffer(payload, dtype="<u2").reshape(height, width).astype(np.int64)


def save_labels(labels: np.ndarray, path) -> None:
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ValueError("label raster must be 2-D")
    if labels.size and (labels.min() < 0 or labels.max() > 0xFFFF):
        raise FormatError(FormatError.BAD_LABELS, "class ids must fit in u16")
    with open(path, "wb") as fh:
        fh.write(LABEL_MAGIC)
        fh.write(struct.pack("<2I", *labels.shape))
        fh.write(np.ascontiguousarray(labels, dtype="<u2").tobytes())


def convert_text(
    text_path,
    height: int,
    width: int,
    drop_bands=(),
    labels_text=None,
) -> HsiCube:
    """Build a cube from a whitespace text dump, one pixel per line in raster order.

    ``drop_bands`` are zero-based column indices removed before building the
    cube (e.g. water absorption bands). ``labels_text`` is an optional dump with
    one class id per pixel.
    """
    data = np.loadtxt(text_path, dtype=np.float64, ndmin=2)
    if data.shape[0] != height * width:
        raise FormatError(
            FormatError.TRUNCATED_PAYLOAD,
            f"{text_path}: {data.shape[0]} pixel rows for a {height}x{width} raster",
        )
    data = _drop_bands(data, drop_bands)
    truth = None
    if labels_text is not None:
        truth = np.loadtxt(labels_text, dtype=np.int64).reshape(height, width)
    return HsiCube(data.reshape(height, width, -1).astype(np.float32), truth)


def convert_mat(mat_path, drop_bands=(), labels_mat=None) -> HsiCube:
    """Build a cube from the MATLAB files the public benchmark scenes ship in."""
    from scipy.io import loadmat

    values = _single_array(loadmat(mat_path), ndim=3, path=mat_path)
    h, w, b = values.shape
    values = _drop_bands(values.reshape(-1, b).astype(np.float64), drop_bands)
    truth = None
    if labels_mat is not None:
        truth = _single_array(loadmat(labels_mat), ndim=2, path=labels_mat).astype(np.int64)
    return HsiCube(values.reshape(h, w, -1).astype(np.float32), truth)


def _single_array(mat: dict, ndim: int, path) -> np.ndarray:
    arrays = [v for k, v in mat.items() if not k.startswith("__") and getattr(v, "ndim", 0) == ndim]
    if len(arrays) != 1:
        raise FormatError(
            FormatError.MALFORMED_HEADER, f"{path}: expected one {ndim}-D array, found {len(arrays)}"
        )
    return np.asarray(arrays[0])


def _drop_bands(data: np.ndarray, drop_bands) -> np.ndarray:
    drop = sorted({int(b) for b in drop_bands})
    if drop and (drop[0] < 0 or drop[-1] >= data.shape[1]):
        raise ValueError(f"band indices {drop} outside 0..{data.shape[1] - 1}")
    return np.delete(data, drop, axis=1)


def parse_band_list(spec: str) -> list[int]:
    """Parse ``"103-107,149-162,219"`` into a sorted list of band indices."""
    bands: set[int] = set()
    for part in filter(None, (p.strip() for p in spec.split(","))):
        if "-" in part:
            lo, hi = (int(v) for v in part.split("-", 1))
            bands.update(range(lo, hi + 1))
        else:
            bands.add(int(part))
    return sorted(bands)


def max_abs_scale(values: np.ndarray) -> tuple[np.ndarray, float]:
    """Divide by the global max absolute reflectance.

    Returns the scaled array and the divisor.
    """
    values = np.asarray(values, dtype=np.float64)
    peak = float(np.max(np.abs(values))) if values.size else 0.0
    if peak == 0.0:
        return values.copy(), 1.0
    return values / peak, peak


class SpectralPCA(TransformerMixin, BaseEstimator):
    """PCA through an eigendecomposition of the band covariance matrix.

    Components are sorted by decreasing eigenvalue and each one is flipped so
    that its largest-magnitude entry is non-negative. When the covariance has
    rank below ``n_components`` the trailing components are zero rows and a
    warning is issued; ``rank_`` records how many rows are genuine.

    Parameters
    ----------
    n_components : int
        Retained dimension ``d``.
    rank_tol : float
        Eigenvalues at or below ``rank_tol * max_eigenvalue`` count as zero.
    """

    def __init__(self, n_components=30, rank_tol=1e-12):
        self.n_components = n_components
        self.rank_tol = rank_tol

    def fit(self, X, y=None):
        X = check_spectra(X)
        n, d0 = X.shape
        d = int(self.n_components)
        if not 1 <= d <= d0:
            raise ValueError(f"n_components={d} must lie in [1, {d0}]")
        if n < 2:
            raise ValueError("PCA needs at least two samples")
        self.mean_ = X.mean(axis=0)
        centered = X - self.mean_
        cov = centered.T @ centered / (n - 1)
        evals, evecs = np.linalg.eigh(cov)
        order = np.argsort(evals)[::-1][:d]
        evals = np.clip(evals[order], 0.0, None)
        comps = evecs[:, order].T
        comps *= _sign_flip(comps)[:, None]
        top = evals[0] if evals.size else 0.0
        rank = int(np.sum(evals > self.rank_tol * max(top, np.finfo(float).tiny)))
        if rank < d:
            warnings.warn(
                f"covariance has rank {rank} < {d}; components {rank}..{d - 1} are zero-padded",
                RuntimeWarning,
                stacklevel=2,
            )
            comps[rank:] = 0.0
            evals[rank:] = 0.0
        total = np.clip(np.linalg.eigvalsh(cov), 0.0, None).sum()
        self.components_ = comps
        self.explained_variance_ = evals
        self.explained_variance_ratio_ = evals / total if total > 0 else np.zeros_like(evals)
        self.rank_ = rank
        self.n_features_in_ = d0
        return self

    def transform(self, X):
        check_is_fitted(self, "components_")
        X = check_spectra(X, n_features=self.n_features_in_)
        return (X - self.mean_) @ self.components_.T

    def inverse_transform(self, X):
        check_is_fitted(self, "components_")
        return np.asarray(X, dtype=np.float64) @ self.components_ + self.mean_


def _sign_flip(vectors: np.ndarray) -> np.ndarray:
    """+1/-1 per row so that each row's largest-magnitude entry is non-negative."""
    if vectors.size == 0:
        return np.ones(vectors.shape[0])
    idx = np.argmax(np.abs(vectors), axis=1)
    signs = np.sign(vectors[np.arange(vectors.shape[0]), idx])
    signs[signs == 0] = 1.0
    return signs


def pca_fit(spectra, d: int) -> SpectralPCA:
    return SpectralPCA(n_components=d).fit(spectra)


@dataclass(frozen=True)
class SpectraMatrix:
    """Pixel features plus the raster position each row came from."""

    data: np.ndarray
    pixel_index: np.ndarray  # (n, 2) row/col positions

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        index = np.asarray(self.pixel_index, dtype=np.int64).reshape(-1, 2)
        if data.ndim != 2 or data.shape[0] != index.shape[0]:
            raise ValueError("data rows and pixel_index length differ")
        if not np.all(np.isfinite(data)):
            raise ValueError("spectra contain non-finite values")
        if len({tuple(p) for p in index.tolist()}) != len(index):
            raise ValueError("pixel_index repeats a raster position")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "pixel_index", index)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    @classmethod
    def from_cube(cls, cube: HsiCube, features: np.ndarray | None = None, mask=None):
        """Rows for every pixel (or for ``mask`` pixels) in raster order."""
        if mask is None:
            mask = np.ones((cube.height, cube.width), dtype=bool)
        rr, cc = np.nonzero(mask)
        flat = rr * cube.width + cc
        feats = cube.pixels() if features is None else np.asarray(features)
        return cls(feats[flat], np.column_stack([rr, cc]))


@dataclass(frozen=True)
class SlicePlan:
    theta: int
    slices: list[range] = field(default_factory=list)

    @property
    def n_slices(self) -> int:
        return len(self.slices)


def slice_pixels(n_rows, theta: int) -> SlicePlan:
    """Cut ``n_rows`` (an int or a SpectraMatrix) into contiguous runs of at most ``theta``."""
    n = n_rows.rows if isinstance(n_rows, SpectraMatrix) else int(n_rows)
    theta = int(theta)
    if theta < 1:
        raise ValueError("theta must be >= 1")
    count = math.ceil(n / theta)
    return SlicePlan(theta, [range(i * theta, min(n, (i + 1) * theta)) for i in range(count)])
