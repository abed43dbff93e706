"""Orthonormal sparsifying bases and the proximal pieces used by FISTA."""

from __future__ import annotations

import numpy as np

__all__ = [
    "HaarBasis",
    "IdentityBasis",
    "make_basis",
    "haar2",
    "ihaar2",
    "soft_threshold",
]

_SQRT2 = np.sqrt(2.0)


def _next_pow2(n: int) -> int:
    return 1 << (int(n) - 1).bit_length()


def haar2(img: np.ndarray) -> np.ndarray:
    """Full-depth orthonormal 2D Haar analysis of a square power-of-two array.

    Coefficients are stored in the usual Mallat layout: the coarsest
    scaling coefficient sits at ``[0, 0]``.
    """
    out = np.array(img, dtype=np.float64, copy=True)
    n = out.shape[0]
    if out.ndim != 2 or out.shape[1] != n or n & (n - 1):
        raise ValueError(f"haar2 needs a square power-of-two array, got {out.shape}")
    while n > 1:
        block = out[:n, :n]
        # rows
        a = (block[:, 0::2] + block[:, 1::2]) / _SQRT2
        d = (block[:, 0::2] - block[:, 1::2]) / _SQRT2
        block = np.concatenate([a, d], axis=1)
        # columns
        a = (block[0::2, :] + block[1::2, :]) / _SQRT2
        d = (block[0::2, :] - block[1::2, :]) / _SQRT2
        out[:n, :n] = np.concatenate([a, d], axis=0)
        n //= 2
    return out


def ihaar2(coeffs: np.ndarray) -> np.ndarray:
    """Inverse of :func:`haar2`."""
    out = np.array(coeffs, dtype=np.float64, copy=True)
    size = out.shape[0]
    if out.ndim != 2 or out.shape[1] != size or size & (size - 1):
        raise ValueError(f"ihaar2 needs a square power-of-two array, got {out.shape}")
    n = 2
    while n <= size:
        h = n // 2
        block = out[:n, :n]
        a, d = block[:h, :], block[h:, :]
        cols = np.empty_like(block)
        cols[0::2, :] = (a + d) / _SQRT2
        cols[1::2, :] = (a - d) / _SQRT2
        a, d = cols[:, :h], cols[:, h:]
        rows = np.empty_like(block)
        rows[:, 0::2] = (a + d) / _SQRT2
        rows[:, 1::2] = (a - d) / _SQRT2
        out[:n, :n] = rows
        n *= 2
    return out


def soft_threshold(theta, t: float) -> np.ndarray:
    """Elementwise ``sign(c) * max(|c| - t, 0)``."""
    if t < 0:
        raise ValueError(f"threshold must be non-negative, got {t}")
    theta = np.asarray(theta, dtype=np.float64)
    return np.sign(theta) * np.maximum(np.abs(theta) - t, 0.0)


class _Basis:
    """Shared padding/cropping logic.

    Images of side ``n`` live on a ``padded_side`` grid in coefficient space;
    :meth:`synthesize` returns the image restricted to the original support,
    :meth:`synthesize_full` returns the whole padded grid.
    """

    name = ""

    def __init__(self, image_side: int, padded_side: int):
        self.image_side = int(image_side)
        self.padded_side = int(padded_side)

    @property
    def coef_shape(self) -> tuple[int, int]:
        return (self.padded_side, self.padded_side)

    @property
    def padding(self) -> int:
        return self.padded_side - self.image_side

    def _pad(self, img) -> np.ndarray:
        img = np.asarray(img, dtype=np.float64)
        if img.ndim != 2:
            raise ValueError(f"expected a 2D image, got shape {img.shape}")
        rows, cols = img.shape
        if rows > self.padded_side or cols > self.padded_side:
            raise ValueError(f"image {img.shape} larger than basis grid {self.coef_shape}")
        if img.shape == self.coef_shape:
            return img
        out = np.zeros(self.coef_shape)
        out[:rows, :cols] = img
        return out

    def _crop(self, full: np.ndarray) -> np.ndarray:
        n = self.image_side
        return full[:n, :n]

    def analyze(self, img) -> np.ndarray:
        return self._forward(self._pad(img))

    def synthesize_full(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != self.coef_shape:
            raise ValueError(f"coefficient shape {theta.shape} != {self.coef_shape}")
        return self._inverse(theta)

    def synthesize(self, theta) -> np.ndarray:
        return self._crop(self.synthesize_full(theta)).copy()

    def adjoint_synthesize(self, img_grad) -> np.ndarray:
        """Adjoint of :meth:`synthesize`: zero-pad then analyze."""
        return self.analyze(img_grad)

    def project_nonneg(self, theta) -> np.ndarray:
        """Coefficients of the nearest image with no negative pixels."""
        return self._forward(np.maximum(self.synthesize_full(theta), 0.0))

    def __repr__(self):
        return f"{type(self).__name__}(image_side={self.image_side})"


class HaarBasis(_Basis):
    """Orthonormal 2D Haar wavelets, zero padding to the next power of two."""

    name = "haar"

    def __init__(self, image_side: int):
        super().__init__(image_side, _next_pow2(image_side))

    def _forward(self, img):
        return haar2(img)

    def _inverse(self, theta):
        return ihaar2(theta)


class IdentityBasis(_Basis):
    """Pixel basis; handy for debugging and for exact least-squares checks."""

    name = "identity"

    def __init__(self, image_side: int):
        super().__init__(image_side, image_side)

    def _forward(self, img):
        return np.array(img, dtype=np.float64, copy=True)

    def _inverse(self, theta):
        return np.array(theta, dtype=np.float64, copy=True)


def make_basis(kind: str, image_side: int) -> _Basis:
    if kind == "haar":
        return HaarBasis(image_side)
    if kind == "identity":
        return IdentityBasis(image_side)
    raise ValueError(f"unknown basis {kind!r}; expected 'haar' or 'identity'")
