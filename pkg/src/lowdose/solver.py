"""FISTA with an l1 + non-negativity proximal step, and alternating drivers."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .noise import linearize
from .objectives import PGNLL, v_step
from .projector import fbp
from .sparsity import soft_threshold

log = logging.getLogger(__name__)

__all__ = ["SolveConfig", "SolveReport", "fista", "solve_pgnll", "default_theta0", "l1_norm"]

_MIN_STEP = 1e-15


@dataclass(frozen=True)
class SolveConfig:
    """FISTA settings.

    ``tol`` is the relative change of ``theta`` between iterates at which
    the solve stops. With ``monotone`` set, an iterate that raises the total
    cost is rejected and the momentum is restarted.
    """

    lambda1: float = 0.0
    max_iters: int = 300
    tol: float = 1e-6
    step_init: float = 1.0
    backtracking: float = 0.5
    monotone: bool = True
    trace_path: str | None = None

    def __post_init__(self):
        if self.lambda1 < 0:
            raise ValueError(f"lambda1 must be >= 0, got {self.lambda1}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if not self.tol > 0:
            raise ValueError(f"tol must be > 0, got {self.tol}")
        if not 0 < self.backtracking < 1:
            raise ValueError(f"backtracking must lie in (0, 1), got {self.backtracking}")
        if not self.step_init > 0:
            raise ValueError(f"step_init must be > 0, got {self.step_init}")


@dataclass
class SolveReport:
    final_theta: np.ndarray
    cost_trace: list[float]
    iterations_used: int
    converged: bool
    step: float = float("nan")
    trace_rows: list[tuple] = field(default_factory=list, repr=False)


def l1_norm(theta) -> float:
    return float(np.abs(theta).sum())


def default_theta0(counts, nm, geom, basis) -> np.ndarray:
    """Warm start: coefficients of the clipped post-log FBP image."""
    y0 = linearize(counts, nm.i0_grid(geom.sino_shape))
    return basis.analyze(fbp(y0, geom, "cosine", clip=True))


def _write_trace(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "cost", "step", "theta_change"])
        w.writerows(rows)


def fista(obj, cfg: SolveConfig, theta0) -> SolveReport:
    """Minimise ``obj(theta) + lambda1 * ||theta||_1`` s.t. ``Psi theta >= 0``.

    Beck-Teboulle FISTA with backtracking on the smooth term. The proximal
    step soft-thresholds and then projects the synthesized image onto the
    non-negative orthant, which keeps every iterate feasible but is only an
    approximation of the exact joint prox.

    ``obj`` needs ``cost``, ``value_and_grad`` and ``basis``.
    """
    basis = obj.basis
    lam = cfg.lambda1

    def prox(z, step):
        return basis.project_nonneg(soft_threshold(z, lam * step))

    x = prox(np.asarray(theta0, dtype=np.float64), 0.0)
    fx = obj.cost(x)
    if not math.isfinite(fx):
        raise ValueError("objective is not finite at the initial point")
    total = fx + lam * l1_norm(x)
    trace = [total]
    rows = [(0, total, cfg.step_init, 0.0)]
    step = cfg.step_init
    z, t = x, 1.0
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        fz, gz = obj.value_and_grad(z)
        if not math.isfinite(fz):
            # extrapolated point left the domain; restart from the iterate
            z, t = x, 1.0
            fz, gz = obj.value_and_grad(z)
        while True:
            x_new = prox(z - step * gz, step)
            f_new = obj.cost(x_new)
            d = x_new - z
            bound = fz + np.vdot(gz, d) + np.vdot(d, d) / (2.0 * step)
            if math.isfinite(f_new) and f_new <= bound + 1e-12 * abs(bound):
                break
            step *= cfg.backtracking
            if step < _MIN_STEP:
                break
        if step < _MIN_STEP:
            log.warning("fista: line search failed at iteration %d", it)
            break
        total_new = f_new + lam * l1_norm(x_new)
        if cfg.monotone and total_new > trace[-1]:
            if z is x:
                # already a plain proximal step from x and still no descent
                log.debug("fista: no descent from current iterate at %d", it)
                rows.append((it, trace[-1], step, 0.0))
                trace.append(trace[-1])
                step *= cfg.backtracking
                if step < _MIN_STEP:
                    break
                continue
            z, t = x, 1.0
            rows.append((it, trace[-1], step, 0.0))
            trace.append(trace[-1])
            continue
        change = np.linalg.norm(x_new - x) / max(np.linalg.norm(x), 1e-300)
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        z = x_new + ((t - 1.0) / t_new) * (x_new - x)
        x, t = x_new, t_new
        trace.append(total_new)
        rows.append((it, total_new, step, change))
        if change < cfg.tol:
            converged = True
            break
    if cfg.trace_path:
        _write_trace(cfg.trace_path, rows)
    return SolveReport(x, trace, it, converged, step, rows)


def joint_cost(obj, theta, lambda1: float) -> float:
    return obj.cost(theta) + lambda1 * l1_norm(theta)


def solve_pgnll(obj: PGNLL, cfg: SolveConfig, outer_iters: int = 5, theta0=None) -> SolveReport:
    """Alternate FISTA in ``theta`` (latent counts fixed) and exact ``v`` updates.

    The returned ``cost_trace`` holds the joint cost after each outer round,
    preceded by the cost at the start. ``obj.latent_v`` is replaced in place.
    """
    if not isinstance(obj, PGNLL):
        raise TypeError("solve_pgnll needs a pg-nll objective")
    if outer_iters < 1:
        raise ValueError("outer_iters must be >= 1")
    if theta0 is None:
        theta0 = default_theta0(obj.data, obj.nm, obj.geom, obj.basis)
    theta = obj.basis.project_nonneg(np.asarray(theta0, dtype=np.float64))
    if obj.sigma <= 0:
        # no Gaussian component: v is pinned to the data
        obj.latent_v = np.maximum(obj.data, 0.0)
        return fista(obj, cfg, theta)
    trace = [joint_cost(obj, theta, cfg.lambda1)]
    iters = 0
    converged = False
    rep = None
    for _ in range(outer_iters):
        rep = fista(obj, cfg, theta)
        theta = rep.final_theta
        iters += rep.iterations_used
        obj.latent_v = v_step(obj, theta)
        trace.append(joint_cost(obj, theta, cfg.lambda1))
        if abs(trace[-2] - trace[-1]) <= cfg.tol * max(abs(trace[-2]), 1e-300):
            converged = True
            break
    return SolveReport(theta, trace, iters, converged, rep.step if rep else float("nan"))
