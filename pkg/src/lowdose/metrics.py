"""Image quality metrics: SSIM and relative error, optionally inside a region of interest."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["RoI", "ssim", "ssim_map", "relative_mse", "rmse"]

WINDOW = 8
K1, K2 = 0.01, 0.03


@dataclass(frozen=True)
class RoI:
    """Rectangular region ``(row0, col0, height, width)`` or a boolean mask."""

    row0: int = 0
    col0: int = 0
    height: int = 0
    width: int = 0
    mask: np.ndarray | None = None

    @classmethod
    def from_mask(cls, mask) -> "RoI":
        mask = np.asarray(mask, dtype=bool)
        if not mask.any():
            raise ValueError("empty RoI mask")
        return cls(mask=mask)

    def to_mask(self, shape) -> np.ndarray:
        if self.mask is not None:
            if self.mask.shape != tuple(shape):
                raise ValueError(f"RoI mask shape {self.mask.shape} != image shape {shape}")
            return self.mask
        if (
            self.row0 < 0
            or self.col0 < 0
            or self.height <= 0
            or self.width <= 0
            or self.row0 + self.height > shape[0]
            or self.col0 + self.width > shape[1]
        ):
            raise ValueError(f"RoI {self} does not fit in image of shape {shape}")
        m = np.zeros(shape, dtype=bool)
        m[self.row0 : self.row0 + self.height, self.col0 : self.col0 + self.width] = True
        return m


def _window_sums(a: np.ndarray, w: int) -> np.ndarray:
    c = np.zeros((a.shape[0] + 1, a.shape[1] + 1))
    c[1:, 1:] = a.cumsum(0).cumsum(1)
    return c[w:, w:] - c[:-w, w:] - c[w:, :-w] + c[:-w, :-w]


def ssim_map(a, b, data_range: float | None = None, win: int = WINDOW) -> np.ndarray:
    """SSIM for every ``win x win`` window position fully inside the image.

    Uniform window weights, unbiased (N - 1) local variances, and
    ``C1 = (0.01 L)^2``, ``C2 = (0.03 L)^2`` with ``L`` the range of ``a``.
    Entry ``[i, j]`` belongs to the window whose top-left pixel is ``(i, j)``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim != 2 or min(a.shape) < win:
        raise ValueError(f"images must be 2D and at least {win} pixels on a side")
    if data_range is None:
        data_range = float(a.max() - a.min())
    if data_range <= 0:
        data_range = 1.0
    n = win * win
    mu_a = _window_sums(a, win) / n
    mu_b = _window_sums(b, win) / n
    cov_norm = n / (n - 1.0)
    var_a = cov_norm * (_window_sums(a * a, win) / n - mu_a**2)
    var_b = cov_norm * (_window_sums(b * b, win) / n - mu_b**2)
    cov = cov_norm * (_window_sums(a * b, win) / n - mu_a * mu_b)
    c1 = (K1 * data_range) ** 2
    c2 = (K2 * data_range) ** 2
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a, b, roi: RoI | None = None, win: int = WINDOW) -> float:
    """Mean SSIM of ``b`` against reference ``a``.

    With ``roi``, only windows lying entirely inside the region count.
    """
    smap = ssim_map(a, b, win=win)
    if roi is None:
        return float(smap.mean())
    mask = roi.to_mask(np.shape(a)).astype(np.float64)
    inside = _window_sums(mask, win) >= win * win - 0.5
    if not inside.any():
        raise ValueError(f"RoI holds no complete {win}x{win} window")
    return float(smap[inside].mean())


def relative_mse(truth, est, roi: RoI | None = None) -> float:
    """``||est - truth|| / ||truth||``, restricted to ``roi`` if given."""
    truth = np.asarray(truth, dtype=np.float64)
    est = np.asarray(est, dtype=np.float64)
    if truth.shape != est.shape:
        raise ValueError(f"shape mismatch: {truth.shape} vs {est.shape}")
    if roi is not None:
        m = roi.to_mask(truth.shape)
        truth, est = truth[m], est[m]
    denom = np.linalg.norm(truth)
    if denom == 0:
        raise ValueError("reference image has zero norm")
    return float(np.linalg.norm(est - truth) / denom)


def rmse(truth, est, roi: RoI | None = None) -> float:
    truth = np.asarray(truth, dtype=np.float64)
    est = np.asarray(est, dtype=np.float64)
    if truth.shape != est.shape:
        raise ValueError(f"shape mismatch: {truth.shape} vs {est.shape}")
    if roi is not None:
        m = roi.to_mask(truth.shape)
        truth, est = truth[m], est[m]
    return float(np.sqrt(np.mean((est - truth) ** 2)))
