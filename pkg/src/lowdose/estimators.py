"""scikit-learn style wrappers around the functional pipeline.

Inputs are sinograms of counts, either a single ``(n_angles, n_bins)``
array or a stack ``(n_samples, n_angles, n_bins)``; outputs are images of
matching stack shape. Estimators only hold parameters until ``fit``; the
fitted state lives in trailing-underscore attributes.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .experiments import METHODS, reconstruct
from .noise import NoiseModel
from .projector import Geometry
from .solver import SolveConfig
from .templates import (
    build_image_eigenspace,
    build_meas_eigenspaces,
    change_pvalues,
    project_measurements,
    reconstruct_weighted_prior,
    weights_map,
)
from .tuning import tune_lambda1

__all__ = ["Reconstructor", "ChangeDetector", "TemplatePriorReconstructor", "Lambda1Search"]


def check_sinograms(X, geom: Geometry) -> tuple[np.ndarray, bool]:
    """Validate counts; returns a (n, Q, B) float stack and whether the input was 2D."""
    X = check_array(X, ensure_2d=False, allow_nd=True, dtype=np.float64)
    single = X.ndim == 2
    if single:
        X = X[None]
    if X.ndim != 3 or X.shape[1:] != geom.sino_shape:
        raise ValueError(f"expected sinograms of shape {geom.sino_shape}, got {X.shape}")
    return X, single


def check_images(X, side: int) -> np.ndarray:
    X = check_array(X, ensure_2d=False, allow_nd=True, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3 or X.shape[1:] != (side, side):
        raise ValueError(f"expected images of shape ({side}, {side}), got {X.shape}")
    return X


class _GeometryMixin:
    def _geometry(self) -> Geometry:
        return Geometry(self.image_side, self.n_angles, n_bins=self.n_bins, pixel_size=self.pixel_size)

    def _config(self) -> SolveConfig:
        return SolveConfig(lambda1=self.lambda1, max_iters=self.max_iters, tol=self.tol)


class Reconstructor(_GeometryMixin, TransformerMixin, BaseEstimator):
    """Counts to images with one reconstruction method.

    Parameters
    ----------
    image_side, n_angles, n_bins, pixel_size
        Acquisition geometry.
    method : str
        One of ``fbp``, ``postlog-cs``, ``nlls``, ``poisson-nll``,
        ``pg-nll``, ``rnlls``, ``rnlls-pg``, ``conv-pg``.
    i0, sigma : float
        Incident intensity and Gaussian read-noise level.
    lambda1 : float
        Weight of the l1 penalty on the Haar coefficients.
    """

    def __init__(
        self,
        image_side=128,
        n_angles=200,
        n_bins=None,
        pixel_size=1.0,
        method="rnlls-pg",
        i0=1000.0,
        sigma=0.0,
        lambda1=1.0,
        max_iters=300,
        tol=1e-6,
    ):
        self.image_side = image_side
        self.n_angles = n_angles
        self.n_bins = n_bins
        self.pixel_size = pixel_size
        self.method = method
        self.i0 = i0
        self.sigma = sigma
        self.lambda1 = lambda1
        self.max_iters = max_iters
        self.tol = tol

    def fit(self, X=None, y=None):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        self.geometry_ = self._geometry()
        self.noise_model_ = NoiseModel(self.i0, self.sigma)
        self._config()
        if X is not None:
            check_sinograms(X, self.geometry_)
        return self

    def transform(self, X):
        check_is_fitted(self, "geometry_")
        X, single = check_sinograms(X, self.geometry_)
        cfg = self._config()
        self.reports_ = []
        out = []
        for counts in X:
            img, rep = reconstruct(self.method, counts, self.noise_model_, self.geometry_, self.lambda1, cfg)
            out.append(img)
            self.reports_.append(rep)
        out = np.stack(out)
        return out[0] if single else out


class ChangeDetector(_GeometryMixin, TransformerMixin, BaseEstimator):
    """Weights maps from counts, given template images at fit time.

    ``fit(templates)`` builds the per-view eigenspaces of the noiseless
    template measurements; ``transform(counts)`` returns one weights map
    per sinogram (low values where the object changed).
    """

    def __init__(self, image_side=128, n_angles=200, n_bins=None, pixel_size=1.0, i0=1000.0, sigma=0.0, patch_width=5):
        self.image_side = image_side
        self.n_angles = n_angles
        self.n_bins = n_bins
        self.pixel_size = pixel_size
        self.i0 = i0
        self.sigma = sigma
        self.patch_width = patch_width

    def fit(self, X, y=None):
        self.geometry_ = self._geometry()
        templates = check_images(X, self.image_side)
        self.eigenspace_ = build_meas_eigenspaces(list(templates), self.geometry_, self.i0)
        return self

    def pvalues(self, X) -> np.ndarray:
        check_is_fitted(self, "eigenspace_")
        X, single = check_sinograms(X, self.geometry_)
        out = np.stack(
            [change_pvalues(c, project_measurements(c, self.eigenspace_), self.sigma, (1, self.patch_width)) for c in X]
        )
        return out[0] if single else out

    def transform(self, X):
        p = self.pvalues(X)
        if p.ndim == 2:
            return weights_map(p, self.geometry_)
        return np.stack([weights_map(s, self.geometry_) for s in p])


class TemplatePriorReconstructor(_GeometryMixin, TransformerMixin, BaseEstimator):
    """Reconstruction regularised by a template eigenspace prior.

    With ``weighted=True`` the prior is modulated by the weights map of a
    :class:`ChangeDetector` fitted on the same templates; otherwise the
    prior acts with unit weight everywhere.
    """

    def __init__(
        self,
        image_side=128,
        n_angles=200,
        n_bins=None,
        pixel_size=1.0,
        i0=1000.0,
        sigma=0.0,
        lambda1=1.0,
        lambda2=100.0,
        weighted=True,
        patch_width=5,
        outer_iters=8,
        max_iters=300,
        tol=1e-6,
    ):
        self.image_side = image_side
        self.n_angles = n_angles
        self.n_bins = n_bins
        self.pixel_size = pixel_size
        self.i0 = i0
        self.sigma = sigma
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.weighted = weighted
        self.patch_width = patch_width
        self.outer_iters = outer_iters
        self.max_iters = max_iters
        self.tol = tol

    def fit(self, X, y=None):
        templates = check_images(X, self.image_side)
        self.geometry_ = self._geometry()
        self.image_eigenspace_ = build_image_eigenspace(list(templates))
        self.detector_ = ChangeDetector(
            self.image_side, self.n_angles, self.n_bins, self.pixel_size, self.i0, self.sigma, self.patch_width
        ).fit(templates)
        return self

    def transform(self, X):
        check_is_fitted(self, "image_eigenspace_")
        X, single = check_sinograms(X, self.geometry_)
        nm = NoiseModel(self.i0, self.sigma)
        cfg = self._config()
        out, self.weights_ = [], []
        for counts in X:
            w = self.detector_.transform(counts) if self.weighted else np.ones(self.geometry_.image_shape)
            res = reconstruct_weighted_prior(
                counts, self.geometry_, nm, self.image_eigenspace_, w, self.lambda1, self.lambda2, cfg,
                outer_iters=self.outer_iters,
            )
            out.append(res.image)
            self.weights_.append(w)
        out = np.stack(out)
        return out[0] if single else out


class Lambda1Search(_GeometryMixin, BaseEstimator):
    """Pick ``lambda1`` on a grid by the discrepancy statistic.

    ``fit(counts, truth=None)`` stores the :class:`~lowdose.tuning.TuneResult`
    in ``result_`` and the selected value in ``lambda1_``.
    """

    def __init__(self, image_side=128, n_angles=200, n_bins=None, pixel_size=1.0, i0=1000.0, sigma=0.0, grid=(0.1, 1.0, 10.0), max_iters=300, tol=1e-6):
        self.image_side = image_side
        self.n_angles = n_angles
        self.n_bins = n_bins
        self.pixel_size = pixel_size
        self.i0 = i0
        self.sigma = sigma
        self.grid = grid
        self.max_iters = max_iters
        self.tol = tol

    def fit(self, X, y=None):
        self.geometry_ = self._geometry()
        X, single = check_sinograms(X, self.geometry_)
        if not single:
            raise ValueError("Lambda1Search fits a single sinogram")
        truth = None if y is None else check_images(y, self.image_side)[0]
        cfg = SolveConfig(max_iters=self.max_iters, tol=self.tol)
        self.result_ = tune_lambda1(X[0], self.geometry_, NoiseModel(self.i0, self.sigma), list(self.grid), cfg, truth=truth)
        self.lambda1_ = self.result_.chosen_lambda
        return self
