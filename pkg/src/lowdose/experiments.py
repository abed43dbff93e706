"""Orchestration of method comparisons over doses and seeds."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, replace

import numpy as np

from .metrics import relative_mse, ssim
from .noise import NoiseModel, linearize, simulate_with_level
from .objectives import KINDS, PGNLL, make_objective
from .phantoms import Scenario, generate_phantom
from .projector import Geometry, fbp
from .solver import SolveConfig, default_theta0, fista, solve_pgnll
from .sparsity import HaarBasis

log = logging.getLogger(__name__)

__all__ = [
    "METHODS",
    "RunRecord",
    "scenario_geometry",
    "lambda_scale",
    "reconstruct",
    "calibrate_lambda1",
    "run_comparison",
    "ssim_table",
    "RECORD_FIELDS",
]

METHODS = ("fbp",) + KINDS


def scenario_geometry(spec: Scenario) -> Geometry:
    return Geometry(spec.size, spec.n_views, pixel_size=spec.pixel_size)


def lambda_scale(method: str, counts) -> float:
    """Curvature of each data term relative to the Poisson likelihood.

    Near the solution the Poisson term has curvature ``a`` per bin in the
    line integrals; post-log least squares has 2, count-space least squares
    ``2 a^2`` and the rescaled variants about ``2 a``. Dividing by these
    puts one ``lambda1`` multiplier on a comparable footing across methods.
    """
    mean = max(float(np.mean(counts)), 1.0)
    return {
        "fbp": 0.0,
        "postlog-cs": 2.0 / mean,
        "nlls": 2.0 * mean,
        "poisson-nll": 1.0,
        "pg-nll": 1.0,
        "rnlls": 2.0,
        "rnlls-pg": 2.0,
        "conv-pg": 1.0,
    }[method]


def reconstruct(method: str, counts, nm: NoiseModel, geom: Geometry, lambda1: float, cfg: SolveConfig, basis=None):
    """Image from counts with one of :data:`METHODS`; returns ``(image, report)``.

    ``fbp`` ignores ``lambda1`` and returns ``None`` as report.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    if method == "fbp":
        y0 = linearize(counts, nm.i0_grid(geom.sino_shape))
        return fbp(y0, geom, "cosine", clip=True), None
    basis = basis or HaarBasis(geom.image_side)
    cfg = replace(cfg, lambda1=float(lambda1))
    obj = make_objective(method, counts, nm, geom, basis)
    theta0 = default_theta0(counts, nm, geom, basis)
    if isinstance(obj, PGNLL):
        rep = solve_pgnll(obj, cfg, theta0=theta0)
    else:
        rep = fista(obj, cfg, theta0)
    return basis.synthesize(rep.final_theta), rep


@dataclass
class RunRecord:
    scenario_hash: str
    method: str
    i0: float
    seed: int
    lambda1: float
    lambda2: float = 0.0
    ssim: float = float("nan")
    rel_mse: float = float("nan")
    roi_ssim: float = float("nan")
    roi_rel_mse: float = float("nan")
    iterations: int = 0
    converged: bool = False
    wall_time: float = 0.0
    error: str = ""

    def metrics(self) -> tuple:
        """The deterministic part of the record (everything but timing)."""
        d = asdict(self)
        d.pop("wall_time")
        return tuple(d.values())


RECORD_FIELDS = tuple(RunRecord.__dataclass_fields__)


def _simulate(spec: Scenario, truth, geom, i0, seed):
    return simulate_with_level(truth, geom, i0, spec.gaussian_level, seed, kind=spec.gaussian_kind)


def calibrate_lambda1(spec: Scenario, method: str, i0: float, cfg: SolveConfig, truth=None, geom=None):
    """Best ``lambda1`` by SSIM against the truth on the calibration seed.

    Scans ``spec.lambda_grid`` (multipliers of ``sqrt(i0)`` times the method
    scale) and keeps stepping outward while the best value sits on an edge
    of the scanned range, at most three extra steps per side. Returns
    ``(lambda1, {lambda1: ssim})``.
    """
    geom = geom or scenario_geometry(spec)
    truth = generate_phantom(spec, "test") if truth is None else truth
    y, nm = _simulate(spec, truth, geom, i0, spec.calibration_seed)
    unit = math.sqrt(i0) * lambda_scale(method, y)
    grid = list(spec.lambda_grid)
    ratio = grid[-1] / grid[-2] if len(grid) > 1 else math.sqrt(2.0)
    scores: dict[float, float] = {}

    def score(mult):
        lam = mult * unit
        if lam not in scores:
            img, _ = reconstruct(method, y, nm, geom, lam, cfg)
            scores[lam] = ssim(truth, img)
        return scores[lam]

    for g in grid:
        score(g)
    lo, hi = grid[0], grid[-1]
    for _ in range(3):
        best = max(scores, key=scores.get) / unit
        if math.isclose(best, lo):
            lo /= ratio
            score(lo)
        elif math.isclose(best, hi):
            hi *= ratio
            score(hi)
        else:
            break
    best = max(scores, key=scores.get)
    log.info("calibrated %s at i0=%g: lambda1=%.4g (ssim %.4f)", method, i0, best, scores[best])
    return best, scores


def run_comparison(spec: Scenario, cfg: SolveConfig | None = None, roi=None) -> list[RunRecord]:
    """Every method x dose x seed of ``spec``, scored against the test object.

    A failing cell is recorded with its error message and the run goes on.
    Records come back sorted by (method, i0, seed).
    """
    cfg = cfg or SolveConfig()
    geom = scenario_geometry(spec)
    truth = generate_phantom(spec, "test")
    digest = spec.hash()
    records = []
    for method in spec.methods:
        for i0 in spec.doses:
            lam = spec.lambda1.get(method)
            if lam is None and method != "fbp":
                try:
                    lam, _ = calibrate_lambda1(spec, method, i0, cfg, truth, geom)
                except Exception as exc:  # recorded, not raised
                    log.warning("calibration of %s at i0=%g failed: %s", method, i0, exc)
                    for seed in spec.seeds:
                        records.append(RunRecord(digest, method, i0, seed, float("nan"), error=f"calibration: {exc}"))
                    continue
            lam = 0.0 if lam is None else float(lam)
            for seed in spec.seeds:
                records.append(_run_cell(spec, digest, method, i0, seed, lam, cfg, truth, geom, roi))
    records.sort(key=lambda r: (r.method, r.i0, r.seed))
    return records


def _run_cell(spec, digest, method, i0, seed, lam, cfg, truth, geom, roi) -> RunRecord:
    rec = RunRecord(digest, method, float(i0), int(seed), lam)
    t0 = time.perf_counter()
    try:
        y, nm = _simulate(spec, truth, geom, i0, seed)
        img, rep = reconstruct(method, y, nm, geom, lam, cfg)
        rec.ssim = ssim(truth, img)
        rec.rel_mse = relative_mse(truth, img)
        if roi is not None:
            rec.roi_ssim = ssim(truth, img, roi)
            rec.roi_rel_mse = relative_mse(truth, img, roi)
        if rep is not None:
            rec.iterations = rep.iterations_used
            rec.converged = bool(rep.converged)
    except Exception as exc:  # recorded, not raised
        log.warning("%s i0=%g seed=%d failed: %s", method, i0, seed, exc)
        rec.error = f"{type(exc).__name__}: {exc}"
    rec.wall_time = time.perf_counter() - t0
    return rec


def ssim_table(records) -> dict[str, dict[float, float]]:
    """Median SSIM over seeds, ``{method: {i0: value}}``, failed cells skipped."""
    out: dict[str, dict[float, list]] = {}
    for r in records:
        if r.error:
            continue
        out.setdefault(r.method, {}).setdefault(r.i0, []).append(r.ssim)
    return {m: {i0: float(np.median(v)) for i0, v in sorted(d.items())} for m, d in out.items()}
