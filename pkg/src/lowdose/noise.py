"""Poisson-Gaussian measurement model, linearisation and variance stabilisation."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .projector import Geometry, forward_project

__all__ = [
    "NoiseModel",
    "simulate_measurements",
    "simulate_with_level",
    "expected_counts",
    "gaussian_sigma_for_level",
    "linearize",
    "anscombe",
    "estimate_sigma_blank_scan",
    "poisson_nsr",
]

# np.random.Generator.poisson refuses larger means
_MAX_POISSON_MEAN = 1e15


@dataclass(frozen=True)
class NoiseModel:
    """Beam intensity per bin and additive Gaussian read-noise level.

    ``i0`` may be a scalar or an array with the sinogram's shape (the
    latter after selective re-irradiation).
    """

    i0: float | np.ndarray
    sigma: float = 0.0

    def __post_init__(self):
        i0 = np.asarray(self.i0, dtype=np.float64)
        if i0.size == 0 or not np.all(np.isfinite(i0)) or np.any(i0 <= 0):
            raise ValueError("i0 entries must be finite and > 0")
        if not np.isfinite(self.sigma) or self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        object.__setattr__(self, "i0", float(i0) if i0.ndim == 0 else i0)
        object.__setattr__(self, "sigma", float(self.sigma))

    @property
    def is_scalar(self) -> bool:
        return np.ndim(self.i0) == 0

    def i0_grid(self, shape) -> np.ndarray:
        i0 = np.asarray(self.i0, dtype=np.float64)
        if i0.ndim and i0.shape != tuple(shape):
            raise ValueError(f"per-bin i0 has shape {i0.shape}, expected {tuple(shape)}")
        return np.broadcast_to(i0, shape)

    def mean_i0(self) -> float:
        return float(np.mean(self.i0))


def expected_counts(line_integrals, i0) -> np.ndarray:
    """Beer-Lambert mean counts ``i0 * exp(-p)``."""
    return np.asarray(i0, dtype=np.float64) * np.exp(-np.asarray(line_integrals, dtype=np.float64))


def _means(img, geom: Geometry, i0) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if np.any(img < 0):
        raise ValueError("attenuation image has negative entries")
    a = expected_counts(forward_project(img, geom), i0)
    if not np.all(np.isfinite(a)) or np.any(a > _MAX_POISSON_MEAN):
        raise OverflowError(
            f"expected counts overflow (max {np.nanmax(a):.3g}); check image scale and i0"
        )
    return a


def simulate_measurements(img, geom: Geometry, nm: NoiseModel, seed: int) -> np.ndarray:
    """Draw ``Poisson(i0 * exp(-Phi x)) + N(0, sigma^2)`` counts.

    The whole sinogram is drawn from one seeded generator, so equal seeds
    give bit-identical output.
    """
    a = _means(img, geom, nm.i0_grid(geom.sino_shape))
    rng = np.random.default_rng(seed)
    y = rng.poisson(a).astype(np.float64)
    if nm.sigma > 0:
        y += rng.normal(0.0, nm.sigma, size=y.shape)
    return y


def gaussian_sigma_for_level(counts, level: float) -> float:
    """Gaussian std whose *variance* is ``level`` times the mean count."""
    if level < 0:
        raise ValueError(f"level must be >= 0, got {level}")
    counts = np.asarray(counts, dtype=np.float64)
    if counts.size == 0:
        raise ValueError("empty sinogram")
    return float(np.sqrt(level * max(counts.mean(), 0.0)))


def simulate_with_level(
    img, geom: Geometry, i0, level: float, seed: int, kind: str = "variance"
) -> tuple[np.ndarray, NoiseModel]:
    """Simulate counts with Gaussian noise set relative to the Poisson counts.

    ``kind="variance"``: sigma^2 = level * mean(Poisson counts).
    ``kind="std"``: sigma = level * mean(Poisson counts).
    Returns the counts and the noise model that generated them.
    """
    if kind not in ("variance", "std"):
        raise ValueError(f"kind must be 'variance' or 'std', got {kind!r}")
    a = _means(img, geom, np.broadcast_to(np.asarray(i0, dtype=np.float64), geom.sino_shape))
    rng = np.random.default_rng(seed)
    y = rng.poisson(a).astype(np.float64)
    if kind == "variance":
        sigma = gaussian_sigma_for_level(y, level)
    else:
        if level < 0:
            raise ValueError(f"level must be >= 0, got {level}")
        sigma = float(level * y.mean())
    if sigma > 0:
        y += rng.normal(0.0, sigma, size=y.shape)
    return y, NoiseModel(i0, sigma)


def linearize(y, i0) -> np.ndarray:
    """Post-log line integrals ``-log((y + eps) / i0)``.

    ``eps = -min(y) + 0.001`` when any count is <= 0, otherwise 0.
    """
    y = np.asarray(y, dtype=np.float64)
    i0 = np.asarray(i0, dtype=np.float64)
    if np.any(i0 <= 0):
        raise ValueError("i0 must be > 0")
    ymin = y.min()
    eps = -ymin + 0.001 if ymin <= 0 else 0.0
    return -np.log((y + eps) / i0)


def anscombe(s, sigma: float) -> np.ndarray:
    """Generalised Anscombe transform ``sqrt(s + 3/8 + sigma^2)`` (argument clipped at 0)."""
    s = np.asarray(s, dtype=np.float64)
    return np.sqrt(np.maximum(s + 0.375 + sigma * sigma, 0.0))


def estimate_sigma_blank_scan(blank, i0: float) -> float:
    """Read-noise std from an object-free scan, using Var(y) = i0 + sigma^2."""
    blank = np.asarray(blank, dtype=np.float64)
    if blank.size < 2:
        raise ValueError("blank scan needs at least two bins")
    excess = blank.var(ddof=1) - float(i0)
    if excess < 0:
        warnings.warn(
            "blank-scan variance below i0; Gaussian noise not detectable, returning 0",
            RuntimeWarning,
        )
        return 0.0
    return float(np.sqrt(excess))


def poisson_nsr(a) -> float:
    """Average Poisson noise-to-signal ratio, mean of 1/sqrt(a) over bins with a > 1."""
    a = np.asarray(a, dtype=np.float64)
    a = a[a > 1]
    if a.size == 0:
        return float("nan")
    return float(np.mean(1.0 / np.sqrt(a)))
