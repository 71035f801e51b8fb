"""Synthetic hyperspectral scenes for tests, demos and timing runs."""

from __future__ import annotations

import numpy as np

from .cube import HsiCube


def endmembers(n_classes: int, bands: int, rng) -> np.ndarray:
    """Smooth, positive spectral signatures (one row per class)."""
    grid = np.linspace(0.0, 1.0, bands)
    rows = []
    for _ in range(n_classes):
        centers = rng.uniform(0, 1, 4)
        widths = rng.uniform(0.05, 0.3, 4)
        heights = rng.uniform(0.2, 1.0, 4)
        curve = 0.15 + sum(h * np.exp(-((grid - c) ** 2) / (2 * w**2))
                           for c, w, h in zip(centers, widths, heights))
        rows.append(curve)
    return np.array(rows)


def synthetic_scene(height=60, width=60, bands=40, n_classes=6, mixing=0.15,
                    noise=0.01, background=0.1, scale=4000.0, seed=0) -> HsiCube:
    """A raster of rectangular class patches with mixed, noisy spectra.

    Each pixel is its class signature blended with a random share (up to
    ``mixing``) of another class, plus Gaussian noise of relative size
    ``noise``. A fraction ``background`` of pixels is left unlabeled (truth 0)
    and filled with spectra of random classes, like unannotated scene pixels.
    Values are multiplied by ``scale`` to mimic raw sensor counts.
    """
    rng = np.random.default_rng(seed)
    sigs = endmembers(n_classes, bands, rng)
    # vertical stripes subdivided into horizontal patches
    truth = np.zeros((height, width), dtype=np.int64)
    col_edges = np.linspace(0, width, n_classes + 1).astype(int)
    for j in range(n_classes):
        truth[:, col_edges[j]:col_edges[j + 1]] = j + 1
    rows = rng.permutation(height)[: height // 4]
    for r in rows:
        shift = rng.integers(1, n_classes)
        truth[r] = (truth[r] - 1 + shift) % n_classes + 1
    cls = truth.ravel() - 1
    other = (cls + rng.integers(1, n_classes, cls.size)) % n_classes
    share = rng.uniform(0, mixing, cls.size)[:, None]
    spectra = (1 - share) * sigs[cls] + share * sigs[other]
    spectra *= 1.0 + noise * rng.standard_normal(spectra.shape)
    spectra = np.clip(spectra, 0.0, None) * scale
    bg = rng.random(cls.size) < background
    truth = truth.ravel()
    truth[bg] = 0
    return HsiCube(spectra.reshape(height, width, bands).astype(np.float32),
                   truth.reshape(height, width), n_classes)


def blobs(n_per=50, centers=((0, 0), (6, 6), (-6, 6)), spread=0.5, seed=0):
    """Isotropic Gaussian blobs: returns (X, labels 0..len(centers)-1)."""
    rng = np.random.default_rng(seed)
    centers = np.asarray(centers, dtype=np.float64)
    X = np.vstack([c + spread * rng.standard_normal((n_per, centers.shape[1])) for c in centers])
    y = np.repeat(np.arange(len(centers)), n_per)
    return X, y
