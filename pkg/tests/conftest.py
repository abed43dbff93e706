import math

import numpy as np
import pytest

from lowdose.projector import Geometry


def smooth_disc(n, radius, value=1.0, width=1.0, center=None):
    """Disc with a logistic edge of ``width`` pixels (no aliasing at the rim)."""
    c = (n - 1) / 2.0 if center is None else center
    r = np.hypot(*np.mgrid[0:n, 0:n] - np.array([c, c])[:, None, None])
    return value / (1.0 + np.exp((r - radius) / width))


def segment_in_square(x0, y0, half, angle, s):
    """Length of the line {x cos a + y sin a = s} inside a square (slab clipping)."""
    c, sn = math.cos(angle), math.sin(angle)
    # parametrise the line as p(t) = s * (c, sn) + t * (-sn, c)
    px, py = s * c, s * sn
    dx, dy = -sn, c
    lo, hi = -math.inf, math.inf
    for p, d, a, b in ((px, dx, x0 - half, x0 + half), (py, dy, y0 - half, y0 + half)):
        if abs(d) < 1e-15:
            if not a <= p <= b:
                return 0.0
            continue
        t1, t2 = sorted(((a - p) / d, (b - p) / d))
        lo, hi = max(lo, t1), min(hi, t2)
    return max(hi - lo, 0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def geom16():
    return Geometry(16, 10)


@pytest.fixture(scope="session")
def geom32():
    return Geometry(32, 40)


def gradient_problem(kind, seed, side=16, n_angles=10, i0=500.0, sigma=2.0):
    """Small random problem for finite-difference checks of ``kind``."""
    from lowdose.noise import NoiseModel, simulate_measurements
    from lowdose.objectives import make_objective
    from lowdose.sparsity import HaarBasis

    r = np.random.default_rng(seed)
    g = Geometry(side, n_angles)
    basis = HaarBasis(side)
    truth = r.uniform(0.0, 0.04, size=(side, side))
    nm = NoiseModel(i0, sigma if kind not in ("rnlls", "poisson-nll") else 0.0)
    y = simulate_measurements(truth, g, nm, seed)
    obj = make_objective(kind, y, nm, g, basis)
    theta = basis.analyze(truth * r.uniform(0.7, 1.3, size=truth.shape))
    return obj, theta, r


def fd_relative_error(obj, theta, r, n_dirs=3, h=1e-4):
    """Worst relative gap between central differences and the analytic slope."""
    _, g = obj.value_and_grad(theta)
    worst = 0.0
    for _ in range(n_dirs):
        d = r.normal(size=theta.shape)
        d *= np.linalg.norm(theta) / np.linalg.norm(d)
        fd = (obj.cost(theta + h * d) - obj.cost(theta - h * d)) / (2 * h)
        an = float(np.vdot(g, d))
        worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-12))
    return worst


_ACCEPTANCE: dict[str, str] = {}


def report(criterion: str, passed: bool, detail: str) -> None:
    """Record and print one acceptance line."""
    line = f"{criterion}: {'PASS' if passed else 'FAIL'} | {detail}"
    _ACCEPTANCE[criterion] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE, key=lambda k: int(k[1:])):
        terminalreporter.write_line(_ACCEPTANCE[key])
