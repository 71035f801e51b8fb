"""Seeded sensor-noise injection: Gaussian, impulse (salt and pepper), Poisson.

Random numbers are drawn in fixed-size blocks, each from its own Philox
stream keyed by ``(seed, block index)``. The output therefore depends only on
the seed and the entry positions, never on how the work is split.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cube import HsiCube

BLOCK = 1 << 16
MODELS = ("gaussian", "impulse", "poisson")


@dataclass(frozen=True)
class NoiseSpec:
    model: str
    scale: float
    seed: int = 0

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"noise model must be one of {MODELS}, got {self.model!r}")
        if not np.isfinite(self.scale) or self.scale < 0:
            raise ValueError(f"noise scale must be >= 0, got {self.scale}")


def _blocks(size: int, seed: int):
    for b, start in enumerate(range(0, size, BLOCK)):
        ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, b])
        yield slice(start, min(size, start + BLOCK)), np.random.Generator(np.random.Philox(ss))


def _unwrap(data):
    if isinstance(data, HsiCube):
        return np.array(data.values, dtype=np.float64), data
    return np.array(data, dtype=np.float64), None


def _rewrap(values, original):
    if original is None:
        return values
    return HsiCube(values.astype(original.values.dtype), original.truth, original.n_classes)


def add_gaussian(data, scale: float, seed: int = 0):
    """Add i.i.d. N(0, scale^2) noise to every entry, then clamp to [0, 1]."""
    values, original = _unwrap(data)
    if scale == 0:
        return _rewrap(values, original)
    flat = values.reshape(-1)
    for sl, rng in _blocks(flat.size, seed):
        flat[sl] += rng.normal(0.0, scale, sl.stop - sl.start)
    np.clip(values, 0.0, 1.0, out=values)
    return _rewrap(values, original)


def add_impulse(data, scale: float, seed: int = 0):
    """Replace each entry with probability ``scale`` by 0 or 1 (equally likely)."""
    if not 0 <= scale <= 1:
        raise ValueError("impulse probability must lie in [0, 1]")
    values, original = _unwrap(data)
    if scale == 0:
        return _rewrap(values, original)
    flat = values.reshape(-1)
    for sl, rng in _blocks(flat.size, seed):
        n = sl.stop - sl.start
        hit = rng.random(n) < scale
        salt = rng.random(n) < 0.5
        chunk = flat[sl]
        chunk[hit] = salt[hit].astype(np.float64)
    return _rewrap(values, original)


def add_poisson(data, scale: float, seed: int = 0):
    """Signal-dependent shot noise: v -> Poisson(v * lam) / lam, lam = 1 / scale^2.

    Negative inputs are clamped to 0 before sampling; the result is clamped
    to [0, 1].
    """
    values, original = _unwrap(data)
    if scale == 0:
        return _rewrap(values, original)
    lam = 1.0 / scale**2
    flat = values.reshape(-1)
    np.maximum(flat, 0.0, out=flat)
    for sl, rng in _blocks(flat.size, seed):
        flat[sl] = rng.poisson(flat[sl] * lam) / lam
    np.clip(values, 0.0, 1.0, out=values)
    return _rewrap(values, original)


_DISPATCH = {"gaussian": add_gaussian, "impulse": add_impulse, "poisson": add_poisson}


def apply_noise(data, spec: NoiseSpec | None):
    if spec is None:
        return data
    return _DISPATCH[spec.model](data, spec.scale, spec.seed)
