"""Template priors for longitudinal scans.

Change detection works in measurement space: the test sinogram is compared
view by view with its projection onto an eigenspace of noiseless template
sinograms, after variance stabilisation. Patches whose stabilised
residual is unlikely under N(0, 1/4) are flagged, and the resulting p-value
field is backprojected into an image-domain weights map. The weights map
then modulates an image-domain eigenspace prior during reconstruction.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import erfc

from .noise import NoiseModel, anscombe, expected_counts
from .objectives import RNLLSPG
from .projector import Geometry, fbp, forward_project
from .solver import SolveConfig, default_theta0, fista, l1_norm
from .sparsity import HaarBasis

log = logging.getLogger(__name__)

__all__ = [
    "MeasEigenspace",
    "ImageEigenspace",
    "build_meas_eigenspaces",
    "project_measurement",
    "project_measurements",
    "change_pvalues",
    "patch_pvalues",
    "weights_map",
    "stretch",
    "build_image_eigenspace",
    "alpha_step",
    "WeightedPrior",
    "SumObjective",
    "PriorResult",
    "reconstruct_weighted_prior",
]


def _pca(rows: np.ndarray, rtol: float = 1e-10):
    """Mean and orthonormal principal directions of the rows of ``rows``.

    Returns ``(mean, V)`` with ``V`` of shape (dim, n - 1); directions past
    the numerical rank are zero columns.
    """
    n = rows.shape[0]
    mean = rows.mean(axis=0)
    centred = rows - mean
    v = np.zeros((rows.shape[1], n - 1))
    if n < 2:
        return mean, v
    _, s, vt = np.linalg.svd(centred, full_matrices=False)
    scale = max(np.abs(rows).max(), 1e-300)
    rank = int(np.sum(s > rtol * scale * math.sqrt(rows.size)))
    rank = min(rank, n - 1)
    v[:, :rank] = vt[:rank].T
    return mean, v


def _as_stack(sino: np.ndarray) -> np.ndarray:
    """View a 2D sinogram (Q, B) or a slice stack (S, Q, B) as (S, Q, B)."""
    sino = np.asarray(sino, dtype=np.float64)
    if sino.ndim == 2:
        return sino[None]
    if sino.ndim == 3:
        return sino
    raise ValueError(f"expected a (Q, B) sinogram or (S, Q, B) stack, got {sino.shape}")


@dataclass
class MeasEigenspace:
    """Per-view eigenspaces of noiseless template measurements.

    ``mean[j]`` and ``components[j]`` (dim x (n - 1)) describe view ``j``,
    where a view is the flattened (slices x bins) block for that angle.
    """

    mean: np.ndarray
    components: np.ndarray
    view_shape: tuple[int, int]

    @property
    def n_views(self) -> int:
        return self.mean.shape[0]

    def rank(self) -> np.ndarray:
        return np.count_nonzero(np.abs(self.components).sum(axis=1) > 0, axis=1)


def _sinogram_stack(volume, geom: Geometry) -> np.ndarray:
    vol = np.asarray(volume, dtype=np.float64)
    if vol.ndim == 2:
        vol = vol[None]
    return np.stack([forward_project(s, geom) for s in vol])


def build_meas_eigenspaces(templates, geom: Geometry, i0) -> MeasEigenspace:
    """Eigenspace per view from noiseless ``i0 * exp(-Phi x_t)`` of each template.

    ``templates`` is a sequence of images, or of slice stacks (S, N, N).
    """
    templates = list(templates)
    if len(templates) < 2:
        raise ValueError("need at least two templates")
    sinos = [expected_counts(_sinogram_stack(t, geom), i0) for t in templates]
    shapes = {s.shape for s in sinos}
    if len(shapes) != 1:
        raise ValueError("templates differ in shape")
    data = np.stack(sinos)  # (n, S, Q, B)
    n, n_slices, q, b = data.shape
    means = np.empty((q, n_slices * b))
    comps = np.empty((q, n_slices * b, n - 1))
    for j in range(q):
        rows = data[:, :, j, :].reshape(n, -1)
        means[j], comps[j] = _pca(rows)
    return MeasEigenspace(means, comps, (n_slices, b))


def project_measurement(y_j, mean_j, v_j) -> np.ndarray:
    """``mean + V V^T (y - mean)`` for a single view."""
    y_j = np.asarray(y_j, dtype=np.float64)
    if y_j.shape != mean_j.shape:
        raise ValueError(f"view shape {y_j.shape} != eigenspace shape {mean_j.shape}")
    return mean_j + v_j @ (v_j.T @ (y_j - mean_j))


def project_measurements(y, es: MeasEigenspace) -> np.ndarray:
    """Project every view of ``y`` onto its eigenspace; returns ``y``'s shape."""
    y = np.asarray(y, dtype=np.float64)
    stack = _as_stack(y)
    s, q, b = stack.shape
    if (s, b) != es.view_shape or q != es.n_views:
        raise ValueError(f"sinogram {y.shape} does not match eigenspace views {es.view_shape} x {es.n_views}")
    views = stack.transpose(1, 0, 2).reshape(q, s * b)
    centred = views - es.mean
    coef = np.einsum("qdk,qd->qk", es.components, centred)
    proj = es.mean + np.einsum("qdk,qk->qd", es.components, coef)
    return proj.reshape(q, s, b).transpose(1, 0, 2).reshape(y.shape)


def _tiles(n: int, size: int):
    return [(start, min(start + size, n)) for start in range(0, n, size)]


def _patch_z(d: np.ndarray, patch):
    """z statistics of non-overlapping patches over each view of ``d`` (S, Q, B)."""
    h, w = patch
    s, q, b = d.shape
    if h < 1 or w < 1 or h > s or w > b:
        raise ValueError(f"patch {patch} does not fit views of shape ({s}, {b})")
    out = []
    for r0, r1 in _tiles(s, h):
        for c0, c1 in _tiles(b, w):
            block = d[r0:r1, :, c0:c1]
            count = (r1 - r0) * (c1 - c0)
            z = block.mean(axis=(0, 2)) / (0.5 / math.sqrt(count))
            out.append(((r0, r1, c0, c1), z))
    return out


def _two_sided_p(z):
    return erfc(np.abs(z) / math.sqrt(2.0))


def patch_pvalues(y, y_p, sigma: float, patch=(1, 5)) -> np.ndarray:
    """Two-sided Z-test p-value of every patch, shape (n_patches_per_view, Q)."""
    d = _as_stack(anscombe(y, sigma) - anscombe(y_p, sigma))
    return np.array([_two_sided_p(z) for _, z in _patch_z(d, patch)])


def change_pvalues(y, y_p, sigma: float, patch=(1, 5)) -> np.ndarray:
    """Per-bin p-values for "no change" between ``y`` and its template projection.

    The stabilised difference ``anscombe(y) - anscombe(y_p)`` is tested
    against N(0, 1/4) on non-overlapping patches of each view; patches at
    the view edges are shrunk to fit. A 2D sinogram has 1D views, so its
    patch must be ``(1, w)``.
    """
    y = np.asarray(y, dtype=np.float64)
    y_p = np.asarray(y_p, dtype=np.float64)
    if y.shape != y_p.shape:
        raise ValueError(f"shape mismatch: {y.shape} vs {y_p.shape}")
    h, w = patch
    if y.ndim == 2 and h != 1:
        raise ValueError("a single 2D sinogram has 1D views; use patch (1, w)")
    d = _as_stack(anscombe(y, sigma) - anscombe(y_p, sigma))
    p = np.empty_like(d)
    for (r0, r1, c0, c1), z in _patch_z(d, (h, w)):
        p[r0:r1, :, c0:c1] = _two_sided_p(z)[None, :, None]
    return p.reshape(y.shape)


def stretch(w: np.ndarray) -> np.ndarray:
    """Linear map onto [0, 1]; a constant input maps to all ones."""
    lo, hi = float(w.min()), float(w.max())
    if hi - lo <= 1e-12 * max(abs(hi), 1.0):
        return np.ones_like(w)
    return (w - lo) / (hi - lo)


def weights_map(p, geom: Geometry, return_inlier: bool = False):
    """Weights map in [0, 1] from a p-value sinogram (low weight = change).

    ``1 - p`` is backprojected with the cosine-filtered FBP of ``geom``
    (no clipping), inverted pointwise as ``1 / (1 + W_inlier^2)`` and
    stretched linearly onto [0, 1]. Slice stacks give one map per slice.
    """
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < 0) or np.any(p > 1):
        raise ValueError("p-values must lie in [0, 1]")
    stack = _as_stack(p)
    inlier = np.stack([fbp(1.0 - s, geom, "cosine", clip=False) for s in stack])
    w = stretch(1.0 / (1.0 + inlier**2))
    if p.ndim == 2:
        inlier, w = inlier[0], w[0]
    return (w, inlier) if return_inlier else w


@dataclass
class ImageEigenspace:
    """Mean image and orthonormal principal images of a template set.

    ``components`` has shape (pixels, n - 1) with zero columns past the
    numerical rank.
    """

    mean: np.ndarray
    components: np.ndarray

    @property
    def shape(self):
        return self.mean.shape

    def synthesize(self, alpha) -> np.ndarray:
        return self.mean + (self.components @ np.asarray(alpha)).reshape(self.shape)


def build_image_eigenspace(templates) -> ImageEigenspace:
    templates = [np.asarray(t, dtype=np.float64) for t in templates]
    if len(templates) < 2:
        raise ValueError("need at least two templates")
    if len({t.shape for t in templates}) != 1:
        raise ValueError("templates differ in shape")
    rows = np.stack([t.ravel() for t in templates])
    mean, v = _pca(rows)
    return ImageEigenspace(mean.reshape(templates[0].shape), v)


def alpha_step(x, es: ImageEigenspace, w) -> np.ndarray:
    """Weighted least-squares coefficients ``argmin ||W (x - mu - V alpha)||``.

    Solves ``(V^T W^2 V) alpha = V^T W^2 (x - mu)``; a singular system gets a
    1e-8 ridge and a warning.
    """
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if x.shape != es.shape or w.shape != es.shape:
        raise ValueError("image, weights and eigenspace shapes differ")
    v = es.components
    w2 = (w * w).ravel()
    gram = v.T @ (w2[:, None] * v)
    rhs = v.T @ (w2 * (x - es.mean).ravel())
    k = gram.shape[0]
    if k == 0:
        return np.zeros(0)
    scale = max(np.trace(gram) / k, 1.0)
    if np.linalg.cond(gram) > 1e12 or np.min(np.diag(gram)) <= 1e-14 * scale:
        warnings.warn("singular weighted normal matrix; using ridge 1e-8", RuntimeWarning)
        gram = gram + 1e-8 * np.eye(k)
    return np.linalg.solve(gram, rhs)


class WeightedPrior:
    """``lambda2 * ||W (Psi theta - mu - V alpha)||^2`` as a function of ``theta``."""

    def __init__(self, es: ImageEigenspace, w, lambda2: float, basis, alpha=None):
        if lambda2 < 0:
            raise ValueError("lambda2 must be >= 0")
        self.es = es
        self.w = np.asarray(w, dtype=np.float64)
        self.lambda2 = float(lambda2)
        self.basis = basis
        self.alpha = np.zeros(es.components.shape[1]) if alpha is None else np.asarray(alpha)

    def _residual(self, theta):
        x = self.basis.synthesize(theta)
        return self.w * (x - self.es.synthesize(self.alpha))

    def cost(self, theta) -> float:
        r = self._residual(theta)
        return self.lambda2 * float(np.vdot(r, r))

    def value_and_grad(self, theta):
        r = self._residual(theta)
        grad = self.basis.adjoint_synthesize(2.0 * self.lambda2 * self.w * r)
        return self.lambda2 * float(np.vdot(r, r)), grad

    def gradient(self, theta):
        return self.value_and_grad(theta)[1]


class SumObjective:
    """Sum of smooth terms sharing one basis."""

    def __init__(self, *terms):
        self.terms = terms
        self.basis = terms[0].basis

    def cost(self, theta) -> float:
        return sum(t.cost(theta) for t in self.terms)

    def value_and_grad(self, theta):
        total, grad = 0.0, 0.0
        for t in self.terms:
            v, g = t.value_and_grad(theta)
            total += v
            grad = grad + g
        return total, grad

    def gradient(self, theta):
        return self.value_and_grad(theta)[1]


@dataclass
class PriorResult:
    image: np.ndarray
    theta: np.ndarray
    alpha: np.ndarray
    cost_trace: list[float]
    pilot: np.ndarray
    converged: bool
    outer_iters: int = 0
    extras: dict = field(default_factory=dict)


def reconstruct_weighted_prior(
    y,
    geom: Geometry,
    nm: NoiseModel,
    es: ImageEigenspace,
    w,
    lambda1: float,
    lambda2: float,
    cfg: SolveConfig,
    basis=None,
    outer_iters: int = 8,
    pilot_theta=None,
) -> PriorResult:
    """Minimise rescaled-NLLS + ``lambda1 ||theta||_1`` + weighted eigenspace prior.

    The pilot (no-prior) reconstruction seeds ``theta`` and the first
    ``alpha``; then FISTA in ``theta`` and the closed-form ``alpha`` update
    alternate until the joint cost changes by less than ``cfg.tol``
    (relative) or ``outer_iters`` rounds have run.
    """
    if lambda1 < 0 or lambda2 < 0:
        raise ValueError("lambda1 and lambda2 must be >= 0")
    basis = basis or HaarBasis(geom.image_side)
    w = np.asarray(w, dtype=np.float64)
    if w.shape != geom.image_shape or es.shape != geom.image_shape:
        raise ValueError("weights map / eigenspace do not match the geometry")
    cfg = replace(cfg, lambda1=lambda1)
    data = RNLLSPG(y, nm, geom, basis)
    if pilot_theta is None:
        pilot_theta = fista(data, cfg, default_theta0(y, nm, geom, basis)).final_theta
    pilot = basis.synthesize(pilot_theta)
    inert = lambda2 == 0 or not np.any(w)
    alpha = np.zeros(es.components.shape[1]) if inert else alpha_step(pilot, es, w)
    prior = WeightedPrior(es, w, lambda2, basis, alpha)
    obj = SumObjective(data, prior)
    theta = pilot_theta
    trace = [obj.cost(theta) + lambda1 * l1_norm(theta)]
    if inert:
        # the prior term is identically zero: the pilot already solves the problem
        return PriorResult(pilot, theta, alpha, trace, pilot, True, 0)
    converged = False
    rounds = 0
    for rounds in range(1, outer_iters + 1):
        theta = fista(obj, cfg, theta).final_theta
        prior.alpha = alpha_step(basis.synthesize(theta), es, w)
        trace.append(obj.cost(theta) + lambda1 * l1_norm(theta))
        log.debug("prior round %d: joint cost %.6g", rounds, trace[-1])
        if abs(trace[-2] - trace[-1]) <= cfg.tol * max(abs(trace[-2]), 1e-300):
            converged = True
            break
    return PriorResult(basis.synthesize(theta), theta, prior.alpha, trace, pilot, converged, rounds)
