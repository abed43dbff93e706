"""Choosing the sparsity weight from the standardized residual norm.

At the true object the standardized residuals ``(y - a) / sqrt(a + sigma^2)``
have unit variance, so their squared sum is close to ``m`` (the number of
measurements) and their norm close to ``sqrt(m)``. The discrepancy
``D = | ||r|| - sqrt(m) |`` of a reconstruction therefore measures how far
its residuals are from looking like noise; ``lambda1`` is picked to make
``D`` smallest over a grid.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .metrics import relative_mse
from .noise import NoiseModel, expected_counts, simulate_measurements
from .objectives import RNLLSPG
from .projector import Geometry, forward_project
from .solver import SolveConfig, default_theta0, fista
from .sparsity import HaarBasis

log = logging.getLogger(__name__)

__all__ = [
    "TuneResult",
    "RRow",
    "standardized_residuals",
    "discrepancy",
    "tune_lambda1",
    "r_statistics",
    "expected_R_report",
]


def standardized_residuals(y, mean_counts, sigma: float) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    mean_counts = np.asarray(mean_counts, dtype=np.float64)
    if y.shape != mean_counts.shape:
        raise ValueError(f"shape mismatch: {y.shape} vs {mean_counts.shape}")
    return (y - mean_counts) / np.sqrt(mean_counts + sigma * sigma)


def _counts_of_image(img, nm: NoiseModel, geom: Geometry) -> np.ndarray:
    return expected_counts(forward_project(img, geom), nm.i0_grid(geom.sino_shape))


def discrepancy(y, theta, nm: NoiseModel, geom: Geometry, basis=None) -> float:
    """``| ||(y - a) / sqrt(a + sigma^2)|| - sqrt(m) |`` with ``a`` the counts of ``Psi theta``.

    ``basis`` defaults to the Haar basis of ``geom``'s image side.
    """
    basis = basis or HaarBasis(geom.image_side)
    a = _counts_of_image(basis.synthesize(theta), nm, geom)
    r = standardized_residuals(y, a, nm.sigma)
    return abs(float(np.linalg.norm(r)) - math.sqrt(r.size))


@dataclass
class TuneResult:
    """Discrepancy (and optional error) for every grid value of ``lambda1``.

    Invalid grid points carry NaN in ``d_values`` and ``rel_mse``.
    """

    grid: list[float]
    d_values: list[float]
    chosen_lambda: float
    rel_mse: list[float] | None = None
    images: list[np.ndarray] = field(default_factory=list, repr=False)

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(np.asarray(self.d_values))

    def best_mse_lambda(self) -> float:
        if self.rel_mse is None:
            raise ValueError("no ground truth was supplied")
        err = np.asarray(self.rel_mse)
        return self.grid[int(np.nanargmin(err))]

    def rows(self) -> list[tuple]:
        err = self.rel_mse if self.rel_mse is not None else [float("nan")] * len(self.grid)
        return list(zip(self.grid, self.d_values, err))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["lambda1", "D", "rel_mse"])
            for lam, d, e in self.rows():
                w.writerow([repr(float(lam)), repr(float(d)), repr(float(e))])


def _argmin_prefer_larger(values) -> int:
    v = np.asarray(values, dtype=np.float64)
    best = np.nanmin(v)
    return int(np.flatnonzero(v == best)[-1])


def tune_lambda1(
    y,
    geom: Geometry,
    nm: NoiseModel,
    grid,
    cfg: SolveConfig,
    truth=None,
    basis=None,
    keep_images: bool = False,
) -> TuneResult:
    """Brute-force search of ``lambda1`` minimising the discrepancy.

    Every grid point is an independent rescaled-NLLS solve from the same
    FBP warm start, so results do not depend on the grid order. Ties go to
    the larger ``lambda1``. A solve that raises is logged and excluded.
    """
    grid = [float(g) for g in grid]
    if not grid:
        raise ValueError("empty lambda1 grid")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("lambda1 grid must be strictly increasing")
    if grid[0] < 0:
        raise ValueError("lambda1 values must be >= 0")
    basis = basis or HaarBasis(geom.image_side)
    obj = RNLLSPG(y, nm, geom, basis)
    theta0 = default_theta0(y, nm, geom, basis)
    d_values, errors, images = [], [], []
    for lam in grid:
        try:
            rep = fista(obj, replace(cfg, lambda1=lam, trace_path=None), theta0)
            img = basis.synthesize(rep.final_theta)
            d = discrepancy(y, rep.final_theta, nm, geom, basis)
            if not math.isfinite(d):
                raise FloatingPointError("non-finite discrepancy")
        except (ValueError, FloatingPointError, OverflowError, np.linalg.LinAlgError) as exc:
            log.warning("lambda1=%g failed: %s", lam, exc)
            d_values.append(float("nan"))
            errors.append(float("nan"))
            images.append(None)
            continue
        d_values.append(d)
        errors.append(relative_mse(truth, img) if truth is not None else float("nan"))
        images.append(img if keep_images else None)
        log.info("lambda1=%g D=%.4f", lam, d)
    if not np.any(np.isfinite(d_values)):
        raise RuntimeError("every grid point failed")
    chosen = grid[_argmin_prefer_larger(d_values)]
    return TuneResult(
        grid,
        d_values,
        chosen,
        errors if truth is not None else None,
        images if keep_images else [],
    )


def r_statistics(y, mean_counts, sigma: float) -> tuple[float, float]:
    """Squared-sum and norm forms of the standardized residual statistic."""
    r = standardized_residuals(y, mean_counts, sigma)
    s = float(np.vdot(r, r))
    return s, math.sqrt(s)


@dataclass(frozen=True)
class RRow:
    i0: float
    sigma: float
    m: int
    n_trials: int
    sum_mean: float
    sum_var: float
    norm_mean: float
    norm_var: float

    @property
    def sum_ratio(self) -> float:
        return self.sum_mean / self.m

    @property
    def norm_ratio(self) -> float:
        return self.norm_mean / math.sqrt(self.m)


def expected_R_report(nm, geom: Geometry, phantom, n_trials: int = 100, seed: int = 0) -> list[RRow]:
    """Monte Carlo mean and variance of both statistics at the true object.

    ``nm`` is a noise model or a sequence of them (an intensity sweep). Trial
    ``k`` of model ``i`` uses seed ``seed + 1000 * i + k``.
    """
    if n_trials < 10:
        raise ValueError("n_trials must be >= 10")
    models = [nm] if isinstance(nm, NoiseModel) else list(nm)
    rows = []
    for i, model in enumerate(models):
        a = _counts_of_image(phantom, model, geom)
        sums, norms = [], []
        for k in range(n_trials):
            y = simulate_measurements(phantom, geom, model, seed + 1000 * i + k)
            s, n = r_statistics(y, a, model.sigma)
            sums.append(s)
            norms.append(n)
        rows.append(
            RRow(
                model.mean_i0(),
                model.sigma,
                a.size,
                n_trials,
                float(np.mean(sums)),
                float(np.var(sums, ddof=1)),
                float(np.mean(norms)),
                float(np.var(norms, ddof=1)),
            )
        )
    return rows
