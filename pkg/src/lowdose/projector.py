"""Parallel-beam geometry, Joseph ray-driven projector and filtered backprojection.

The projector is a linear-interpolation (Joseph) ray tracer. Its ray weights
are tabulated once per geometry into a sparse matrix so that the forward
operator and its adjoint use bit-identical weights.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

__all__ = [
    "Geometry",
    "forward_project",
    "back_project",
    "fbp",
    "fbp_filter",
    "system_matrix",
]

FILTERS = ("cosine", "ram-lak")


@dataclass(frozen=True)
class Geometry:
    """Parallel-beam acquisition geometry.

    Angles are ``k * pi / n_angles`` for ``k = 0 .. n_angles - 1``. The
    detector is centred on the rotation axis. Image row 0 is the top row.

    Parameters
    ----------
    image_side : int
        Pixels per image edge.
    n_angles : int
        Number of equally spaced views in ``[0, pi)``.
    n_bins : int, optional
        Detector bins per view. Defaults to ``ceil(sqrt(2) * image_side)`` so
        the detector covers the image diagonal.
    pixel_size : float
        Pixel edge length in length units.
    detector_spacing : float, optional
        Bin width in length units; defaults to ``pixel_size``.
    """

    image_side: int
    n_angles: int
    n_bins: int | None = None
    pixel_size: float = 1.0
    detector_spacing: float | None = None
    angles: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.n_bins is None:
            object.__setattr__(self, "n_bins", int(math.ceil(math.sqrt(2) * self.image_side)))
        if self.detector_spacing is None:
            object.__setattr__(self, "detector_spacing", float(self.pixel_size))
        if int(self.image_side) < 2:
            raise ValueError(f"image_side must be >= 2, got {self.image_side}")
        if int(self.n_angles) < 1:
            raise ValueError(f"n_angles must be >= 1, got {self.n_angles}")
        if int(self.n_bins) < int(self.image_side):
            raise ValueError(
                f"n_bins ({self.n_bins}) must be >= image_side ({self.image_side})"
            )
        if self.pixel_size <= 0 or self.detector_spacing <= 0:
            raise ValueError("pixel_size and detector_spacing must be positive")
        object.__setattr__(self, "image_side", int(self.image_side))
        object.__setattr__(self, "n_angles", int(self.n_angles))
        object.__setattr__(self, "n_bins", int(self.n_bins))
        angles = np.arange(self.n_angles) * (np.pi / self.n_angles)
        angles.setflags(write=False)
        object.__setattr__(self, "angles", angles)

    @property
    def image_shape(self) -> tuple[int, int]:
        return (self.image_side, self.image_side)

    @property
    def sino_shape(self) -> tuple[int, int]:
        return (self.n_angles, self.n_bins)

    @property
    def n_measurements(self) -> int:
        return self.n_angles * self.n_bins

    def pixel_coords(self) -> tuple[np.ndarray, np.ndarray]:
        """Return (x, y) coordinates of pixel centres, each of image shape."""
        n = self.image_side
        c = (np.arange(n) - (n - 1) / 2.0) * self.pixel_size
        return np.meshgrid(c, -c)

    def bin_coords(self) -> np.ndarray:
        return (np.arange(self.n_bins) - (self.n_bins - 1) / 2.0) * self.detector_spacing


def _joseph_weights(geom: Geometry):
    n = geom.image_side
    ps = geom.pixel_size
    s = geom.bin_coords()
    centre = (n - 1) / 2.0
    # pixel-centre coordinates: column j -> x_j, row i -> y_i (row 0 on top)
    coords = (np.arange(n) - centre) * ps
    rows, cols, vals = [], [], []
    lines = np.arange(n)
    for j, phi in enumerate(geom.angles):
        c, sn = math.cos(phi), math.sin(phi)
        ray = j * geom.n_bins + np.arange(geom.n_bins)
        if abs(c) >= abs(sn):
            # step through image rows, interpolate across columns
            y = -coords
            x = (s[:, None] - y[None, :] * sn) / c
            frac_idx = x / ps + centre
            step = ps / abs(c)
            lo = np.floor(frac_idx).astype(np.int64)
            f = frac_idx - lo
            for idx, w in ((lo, 1.0 - f), (lo + 1, f)):
                ok = (idx >= 0) & (idx < n) & (w > 0)
                r_idx = np.broadcast_to(ray[:, None], idx.shape)[ok]
                pix = (np.broadcast_to(lines[None, :], idx.shape)[ok]) * n + idx[ok]
                rows.append(r_idx)
                cols.append(pix)
                vals.append(w[ok] * step)
        else:
            # step through image columns, interpolate across rows
            x = coords
            y = (s[:, None] - x[None, :] * c) / sn
            frac_idx = centre - y / ps
            step = ps / abs(sn)
            lo = np.floor(frac_idx).astype(np.int64)
            f = frac_idx - lo
            for idx, w in ((lo, 1.0 - f), (lo + 1, f)):
                ok = (idx >= 0) & (idx < n) & (w > 0)
                r_idx = np.broadcast_to(ray[:, None], idx.shape)[ok]
                pix = idx[ok] * n + np.broadcast_to(lines[None, :], idx.shape)[ok]
                rows.append(r_idx)
                cols.append(pix)
                vals.append(w[ok] * step)
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


@lru_cache(maxsize=8)
def _matrices(geom: Geometry) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    r, c, v = _joseph_weights(geom)
    a = sp.csr_matrix(
        (v, (r, c)), shape=(geom.n_measurements, geom.image_side**2), dtype=np.float64
    )
    a.sum_duplicates()
    at = a.T.tocsr()
    return a, at


def system_matrix(geom: Geometry) -> sp.csr_matrix:
    """Sparse matrix of ray weights, rows = rays (angle-major), cols = pixels."""
    return _matrices(geom)[0]


def _check_image(img, geom: Geometry) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.shape != geom.image_shape:
        raise ValueError(f"image shape {img.shape} does not match geometry {geom.image_shape}")
    return img


def _check_sino(sino, geom: Geometry) -> np.ndarray:
    sino = np.asarray(sino, dtype=np.float64)
    if sino.shape != geom.sino_shape:
        raise ValueError(f"sinogram shape {sino.shape} does not match geometry {geom.sino_shape}")
    return sino


def forward_project(img, geom: Geometry) -> np.ndarray:
    """Line integrals of ``img`` along every (angle, bin) ray."""
    img = _check_image(img, geom)
    a, _ = _matrices(geom)
    return (a @ img.ravel()).reshape(geom.sino_shape)


def back_project(sino, geom: Geometry) -> np.ndarray:
    """Exact adjoint of :func:`forward_project`."""
    sino = _check_sino(sino, geom)
    _, at = _matrices(geom)
    return (at @ sino.ravel()).reshape(geom.image_shape)


def fbp_filter(n: int, kind: str = "cosine") -> np.ndarray:
    """Frequency response on ``np.fft.fftfreq(n)`` normalised to 1 at Nyquist.

    ``ram-lak`` is ``|w| / w_max``; ``cosine`` multiplies it by
    ``cos(pi * w / (2 * w_max))``. The DC term is zero for both.
    """
    if kind not in FILTERS:
        raise ValueError(f"unknown filter {kind!r}; expected one of {FILTERS}")
    w = np.abs(np.fft.fftfreq(n)) / 0.5
    h = w.copy()
    if kind == "cosine":
        h *= np.cos(np.pi * w / 2.0)
    return h


def fbp(sino, geom: Geometry, filter: str = "cosine", clip: bool = True) -> np.ndarray:
    """Filtered backprojection.

    Each view is ramp-filtered in the frequency domain (zero padded to at
    least twice its length) and backprojected with the adjoint operator.

    Parameters
    ----------
    clip : bool
        Clip the result at zero. Pass False when backprojecting fields that
        are not attenuation values (e.g. p-values).
    """
    sino = _check_sino(sino, geom)
    if geom.n_angles < 2:
        warnings.warn("FBP with a single view is not a meaningful reconstruction", RuntimeWarning)
    n = geom.n_bins
    npad = 1 << int(math.ceil(math.log2(2 * n)))
    h = fbp_filter(npad, filter)
    spec = np.fft.fft(sino, n=npad, axis=1) * h
    filtered = np.real(np.fft.ifft(spec, axis=1))[:, :n]
    scale = np.pi / (2.0 * geom.n_angles * geom.pixel_size**2)
    out = scale * back_project(filtered, geom)
    if clip:
        out = np.maximum(out, 0.0)
    return out
