"""Data-fidelity terms for low-dose CT and their exact gradients.

Every term is a function of the coefficients ``theta`` through the line
integrals ``p = Phi Psi theta`` and the expected counts
``a = i0 * exp(-p)``. Each class implements ``_loss(p)`` returning the value
and its derivative in ``p``; the chain rule back to ``theta`` is shared.

Constants that do not depend on ``theta`` are dropped per kind (see each
class), so values of different kinds are not comparable with each other.
"""

from __future__ import annotations

import logging
import math

import numpy as np
from scipy.special import digamma, gammaln, logsumexp, polygamma

from .noise import NoiseModel, linearize
from .projector import Geometry, back_project, forward_project

log = logging.getLogger(__name__)

__all__ = [
    "KINDS",
    "Objective",
    "PostLogCS",
    "NLLS",
    "PoissonNLL",
    "PGNLL",
    "RNLLS",
    "RNLLSPG",
    "ConvPG",
    "make_objective",
    "stirling_log_factorial",
    "conv_truncation_window",
    "v_step",
]

KINDS = ("postlog-cs", "nlls", "poisson-nll", "pg-nll", "rnlls", "rnlls-pg", "conv-pg")

_STIRLING_CUTOFF = 20.0


def stirling_log_factorial(l):
    """``log(l!)``: exact log-gamma below 20, Stirling's formula from 20 on."""
    l = np.asarray(l, dtype=np.float64)
    if np.any(l < 0):
        raise ValueError("log-factorial needs l >= 0")
    big = l >= _STIRLING_CUTOFF
    safe = np.where(big, l, 1.0)
    stirling = 0.5 * np.log(2.0 * np.pi * safe) + safe * np.log(safe) - safe
    out = np.where(big, stirling, gammaln(l + 1.0))
    return out if out.ndim else float(out)


def conv_truncation_window(y, sigma: float, k: int = 3):
    """Integer support ``[max(0, floor(y - k sigma)), ceil(y + k sigma)]``.

    When ``y + k sigma < 0`` the window is empty and ``hi < lo`` is returned.
    Works elementwise on arrays.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    y = np.asarray(y, dtype=np.float64)
    lo = np.maximum(0, np.floor(y - k * sigma)).astype(np.int64)
    hi = np.ceil(y + k * sigma).astype(np.int64)
    if lo.ndim == 0:
        return int(lo), int(hi)
    return lo, hi


class Objective:
    """Base class for data-fidelity terms on a parallel-beam geometry.

    Parameters
    ----------
    data : ndarray
        Sinogram; counts for every kind except :class:`PostLogCS`, which
        takes linearised line integrals.
    nm : NoiseModel
    geom : Geometry
    basis : sparsity basis
        Provides ``synthesize`` and ``adjoint_synthesize``.
    """

    kind = ""

    def __init__(self, data, nm: NoiseModel, geom: Geometry, basis):
        data = np.asarray(data, dtype=np.float64)
        if data.shape != geom.sino_shape:
            raise ValueError(f"data shape {data.shape} != sinogram shape {geom.sino_shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("data contains non-finite values")
        if basis.image_side != geom.image_side:
            raise ValueError("basis and geometry disagree on image size")
        self.data = data
        self.nm = nm
        self.geom = geom
        self.basis = basis
        self.i0 = np.array(nm.i0_grid(geom.sino_shape), dtype=np.float64)
        self.log_i0 = np.log(self.i0)
        self.sigma = nm.sigma

    # -- evaluation -------------------------------------------------------
    def line_integrals(self, theta) -> np.ndarray:
        return forward_project(self.basis.synthesize(theta), self.geom)

    def counts(self, p) -> np.ndarray:
        with np.errstate(over="ignore"):
            return self.i0 * np.exp(-p)

    def _loss(self, p):  # pragma: no cover - abstract
        raise NotImplementedError

    def cost(self, theta) -> float:
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            value, _ = self._loss(self.line_integrals(theta))
        return float(value)

    def gradient(self, theta) -> np.ndarray:
        return self.value_and_grad(theta)[1]

    def value_and_grad(self, theta):
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            value, gp = self._loss(self.line_integrals(theta))
        grad = self.basis.adjoint_synthesize(back_project(gp, self.geom))
        return float(value), grad

    def __repr__(self):
        return f"{type(self).__name__}(sigma={self.sigma:.4g}, shape={self.data.shape})"


class PostLogCS(Objective):
    """``||y0 - Phi x||^2`` on linearised data ``y0``."""

    kind = "postlog-cs"

    def _loss(self, p):
        r = p - self.data
        return np.dot(r.ravel(), r.ravel()), 2.0 * r


class NLLS(Objective):
    """``||y - i0 exp(-Phi x)||^2``: non-linear least squares in count space."""

    kind = "nlls"

    def _loss(self, p):
        a = self.counts(p)
        r = self.data - a
        return np.dot(r.ravel(), r.ravel()), 2.0 * a * r


class PoissonNLL(Objective):
    """Poisson negative log-likelihood ``sum(a - y log a)``.

    ``log(y!)`` is dropped. Bins with negative counts are excluded; their
    number is kept in ``n_excluded``.
    """

    kind = "poisson-nll"

    def __init__(self, data, nm, geom, basis):
        super().__init__(data, nm, geom, basis)
        self.mask = self.data >= 0
        self.n_excluded = int(self.mask.size - self.mask.sum())
        if self.n_excluded:
            log.info("poisson-nll: excluded %d negative bins", self.n_excluded)
        self._y = np.where(self.mask, self.data, 0.0)

    def _loss(self, p):
        a = self.counts(p)
        loga = self.log_i0 - p
        value = np.sum(np.where(self.mask, a - self._y * loga, 0.0))
        return value, np.where(self.mask, self._y - a, 0.0)


class PGNLL(Objective):
    """Joint Poisson-Gaussian negative log-likelihood with latent counts ``v``.

    ``sum(a - v log a + log Gamma(v + 1) + (y - v)^2 / (2 sigma^2))``; the
    Gaussian normaliser is dropped. ``latent_v`` defaults to ``max(y, 0)``
    and is replaced wholesale by :func:`v_step`.
    """

    kind = "pg-nll"

    def __init__(self, data, nm, geom, basis, latent_v=None):
        super().__init__(data, nm, geom, basis)
        if latent_v is None:
            latent_v = np.maximum(self.data, 0.0)
        self.latent_v = np.asarray(latent_v, dtype=np.float64)
        if self.latent_v.shape != self.data.shape or np.any(self.latent_v < 0):
            raise ValueError("latent_v must be non-negative with the data's shape")

    def _loss(self, p):
        v = self.latent_v
        a = self.counts(p)
        loga = self.log_i0 - p
        value = np.sum(a - v * loga + gammaln(v + 1.0))
        if self.sigma > 0:
            value += np.sum((self.data - v) ** 2) / (2.0 * self.sigma**2)
        return value, v - a


class RNLLSPG(Objective):
    """Rescaled non-linear least squares ``sum((y - a)^2 / (a + sigma^2))``.

    Parameters
    ----------
    exact_gradient : bool
        If False, the denominator is treated as constant when
        differentiating (the frozen-weight approximation).
    """

    kind = "rnlls-pg"

    def __init__(self, data, nm, geom, basis, exact_gradient: bool = True):
        super().__init__(data, nm, geom, basis)
        self.exact_gradient = exact_gradient

    def _offset(self) -> float:
        return self.sigma**2

    def _loss(self, p):
        a = self.counts(p)
        den = a + self._offset()
        r = self.data - a
        q = r / den
        value = np.dot(r.ravel(), q.ravel())
        # d/da [(y-a)^2/(a+s)] = -2q - q^2 ; dp = -a da
        dda = -2.0 * q - q * q if self.exact_gradient else -2.0 * q
        return value, -a * dda


class RNLLS(RNLLSPG):
    """Rescaled NLLS for pure Poisson noise: ``sum((y - a)^2 / a)``."""

    kind = "rnlls"

    def _offset(self) -> float:
        return 0.0


class ConvPG(Objective):
    """Negative log of the Poisson-Gaussian convolution density.

    For each bin the series over Poisson counts ``l`` is truncated to
    :func:`conv_truncation_window` and ``log(l!)`` is evaluated with
    :func:`stirling_log_factorial`. The Gaussian normaliser is dropped. Bins
    whose window is empty are excluded (``n_excluded``).
    """

    kind = "conv-pg"

    def __init__(self, data, nm, geom, basis, k_trunc: int = 3):
        super().__init__(data, nm, geom, basis)
        if k_trunc < 1:
            raise ValueError(f"k_trunc must be >= 1, got {k_trunc}")
        if self.sigma <= 0:
            raise ValueError("conv-pg needs sigma > 0")
        self.k_trunc = int(k_trunc)
        y = self.data.ravel()
        lo, hi = conv_truncation_window(y, self.sigma, self.k_trunc)
        self.mask = (hi >= lo).reshape(self.data.shape)
        self.n_excluded = int(self.mask.size - self.mask.sum())
        if not self.mask.any():
            raise ValueError("conv-pg: every truncation window is empty")
        width = np.where(hi >= lo, hi - lo + 1, 0)
        self.window_width = (int(width.min()), int(width.max()))
        log.info(
            "conv-pg: window widths %d..%d, %d bins excluded",
            *self.window_width,
            self.n_excluded,
        )
        n_l = int(width.max())
        ls = lo[:, None] + np.arange(n_l)[None, :]
        valid = ls <= hi[:, None]
        ls = np.where(valid, ls, lo[:, None])
        const = -stirling_log_factorial(ls.astype(np.float64))
        const -= (y[:, None] - ls) ** 2 / (2.0 * self.sigma**2)
        self._l = ls.astype(np.float64)
        self._const = np.where(valid, const, -np.inf)
        self._flat_mask = self.mask.ravel()

    def _loss(self, p):
        a = self.counts(p).ravel()
        loga = (self.log_i0 - p).ravel()
        t = self._const + self._l * loga[:, None]
        lse = logsumexp(t, axis=1)
        w = np.exp(t - lse[:, None])
        mean_l = np.sum(w * self._l, axis=1)
        m = self._flat_mask
        value = np.sum((a - lse)[m])
        gp = np.where(m, mean_l - a, 0.0)
        return value, gp.reshape(self.data.shape)


_CLASSES = {
    "postlog-cs": PostLogCS,
    "nlls": NLLS,
    "poisson-nll": PoissonNLL,
    "pg-nll": PGNLL,
    "rnlls": RNLLS,
    "rnlls-pg": RNLLSPG,
    "conv-pg": ConvPG,
}


def make_objective(kind: str, counts, nm: NoiseModel, geom: Geometry, basis, **kwargs) -> Objective:
    """Build the data term ``kind`` from measured counts.

    ``postlog-cs`` linearises the counts first; all other kinds consume the
    counts as they are.
    """
    if kind not in _CLASSES:
        raise ValueError(f"unknown objective kind {kind!r}; expected one of {KINDS}")
    if kind == "postlog-cs":
        return PostLogCS(linearize(counts, nm.i0_grid(geom.sino_shape)), nm, geom, basis)
    return _CLASSES[kind](counts, nm, geom, basis, **kwargs)


def _v_grad(v, loga, y, sigma):
    return -loga + digamma(v + 1.0) - (y - v) / sigma**2


def v_step(obj: PGNLL, theta, max_iter: int = 100, tol: float = 1e-12) -> np.ndarray:
    """Optimal latent counts for fixed ``theta``.

    Minimises ``-v log a + log Gamma(v + 1) + (y - v)^2 / (2 sigma^2)`` over
    ``v >= 0`` per bin by Newton's method kept inside a shrinking bracket
    (bisection when a Newton step leaves it). The problem is strictly
    convex in ``v``.
    """
    if not isinstance(obj, PGNLL):
        raise TypeError("v_step applies to pg-nll objectives only")
    sigma = obj.sigma
    if sigma <= 0:
        raise ValueError("v_step needs sigma > 0")
    p = obj.line_integrals(theta)
    loga = (obj.log_i0 - p).ravel()
    y = obj.data.ravel()

    g0 = _v_grad(np.zeros_like(y), loga, y, sigma)
    active = g0 < 0
    v = np.zeros_like(y)
    if not active.any():
        return v.reshape(obj.data.shape)
    la, ya = loga[active], y[active]
    lo = np.zeros_like(ya)
    hi = np.maximum(ya, 1.0)
    for _ in range(200):
        bad = _v_grad(hi, la, ya, sigma) <= 0
        if not bad.any():
            break
        lo = np.where(bad, hi, lo)
        hi = np.where(bad, 2.0 * hi, hi)
    x = np.clip(np.maximum(ya, 0.0), lo, hi)
    for _ in range(max_iter):
        g = _v_grad(x, la, ya, sigma)
        lo = np.where(g < 0, x, lo)
        hi = np.where(g > 0, x, hi)
        h = polygamma(1, x + 1.0) + 1.0 / sigma**2
        newton = x - g / h
        inside = (newton > lo) & (newton < hi)
        x_new = np.where(inside, newton, 0.5 * (lo + hi))
        done = np.abs(x_new - x) <= tol * (1.0 + np.abs(x))
        x = x_new
        if done.all():
            break
    v[active] = x
    return v.reshape(obj.data.shape)
