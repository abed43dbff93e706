"""Synthetic phantoms and longitudinal (template + test) scenarios."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

__all__ = [
    "Change",
    "Scenario",
    "shepp_logan",
    "random_ellipses",
    "disc_field",
    "disc",
    "base_phantom",
    "generate_phantom",
    "change_mask",
]

# (value, semi-axis a, semi-axis b, x0, y0, rotation in degrees), unit-square coordinates
_SHEPP_LOGAN = (
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    (0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    (0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    (0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    (0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    (0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
)

_SUPERSAMPLE = 4


def _grid(n: int, ss: int = _SUPERSAMPLE):
    """Sub-pixel sample coordinates in [-1, 1], shape (n, n, ss*ss); row 0 on top."""
    off = (np.arange(ss) + 0.5) / ss - 0.5
    centre = np.arange(n) - (n - 1) / 2.0
    xs = (centre[None, :, None] + off[None, None, :]) * (2.0 / n)
    ys = -(centre[:, None, None] + off[None, None, :]) * (2.0 / n)
    x = np.repeat(xs[:, :, :, None], ss, axis=3).reshape(1, n, ss * ss)
    y = np.repeat(ys[:, :, None, :], ss, axis=2).reshape(n, 1, ss * ss)
    return np.broadcast_to(x, (n, n, ss * ss)), np.broadcast_to(y, (n, n, ss * ss))


def _ellipses(n: int, table) -> np.ndarray:
    x, y = _grid(n)
    img = np.zeros((n, n, x.shape[2]))
    for val, a, b, x0, y0, deg in table:
        t = np.deg2rad(deg)
        c, s = np.cos(t), np.sin(t)
        u = (x - x0) * c + (y - y0) * s
        v = -(x - x0) * s + (y - y0) * c
        img += val * ((u / a) ** 2 + (v / b) ** 2 <= 1.0)
    return np.clip(img.mean(axis=2), 0.0, None)


def shepp_logan(n: int) -> np.ndarray:
    """Modified (high-contrast) Shepp-Logan head, anti-aliased, peak 1."""
    return _ellipses(n, _SHEPP_LOGAN)


def random_ellipses(n: int, seed: int = 0, count: int = 12) -> np.ndarray:
    """A large body ellipse holding ``count`` random inner ellipses."""
    rng = np.random.default_rng(seed)
    table = [(0.6, 0.8, 0.7, 0.0, 0.0, 0.0)]
    for _ in range(count):
        r = 0.45 * np.sqrt(rng.uniform())
        phi = rng.uniform(0, 2 * np.pi)
        table.append(
            (
                rng.uniform(-0.3, 0.4),
                rng.uniform(0.04, 0.18),
                rng.uniform(0.04, 0.18),
                r * np.cos(phi),
                r * np.sin(phi),
                rng.uniform(0, 180),
            )
        )
    return _ellipses(n, table)


def disc_field(n: int, seed: int = 0, count: int = 20) -> np.ndarray:
    """Body disc scattered with small high-contrast discs (fine texture)."""
    rng = np.random.default_rng(seed)
    table = [(0.5, 0.8, 0.8, 0.0, 0.0, 0.0)]
    for _ in range(count):
        r = 0.6 * np.sqrt(rng.uniform())
        phi = rng.uniform(0, 2 * np.pi)
        rad = rng.uniform(0.03, 0.07)
        table.append((rng.choice([-0.25, 0.35]), rad, rad, r * np.cos(phi), r * np.sin(phi), 0.0))
    return _ellipses(n, table)


def disc(n: int, row: float, col: float, radius: float) -> np.ndarray:
    """Anti-aliased indicator of a disc given in pixel units (centre row/col)."""
    x, y = _grid(n)
    scale = n / 2.0
    cx = (col - (n - 1) / 2.0) / scale
    cy = -(row - (n - 1) / 2.0) / scale
    r = radius / scale
    return ((x - cx) ** 2 + (y - cy) ** 2 <= r * r).mean(axis=2)


@dataclass(frozen=True)
class Change:
    """A disc inserted (``delta > 0``) or removed (``delta < 0``) in the test object."""

    row: float
    col: float
    radius: float
    delta: float


@dataclass(frozen=True)
class Scenario:
    """Everything that defines a synthetic experiment.

    ``mass`` rescales the base phantom to a fixed total intensity; when it
    is None the base phantom is scaled to peak value ``peak``. Changes apply
    to the test object only.

    ``lambda1`` maps a method to a fixed sparsity weight. Methods missing
    from it are calibrated on ``calibration_seed`` (never an evaluation
    seed) over ``lambda_grid``, whose entries are multiples of the
    per-method scale ``sqrt(i0) * lambda_scale(method, counts)``.
    """

    phantom: str = "shepp-logan"
    size: int = 128
    n_templates: int = 4
    changes: tuple[Change, ...] = ()
    doses: tuple[float, ...] = (20.0, 40.0, 80.0, 160.0, 320.0, 620.0)
    gaussian_level: float = 0.02
    gaussian_kind: str = "variance"
    n_views: int = 200
    seeds: tuple[int, ...] = (0, 1, 2)
    mass: float | None = 60.0
    peak: float = 1.0
    pixel_size: float = 1.0
    perturbation: float = 0.05
    n_bumps: int = 3
    phantom_seed: int = 0
    methods: tuple[str, ...] = ("postlog-cs", "nlls", "fbp", "poisson-nll", "pg-nll", "rnlls", "rnlls-pg", "conv-pg")
    lambda1: dict = field(default_factory=dict)
    lambda_grid: tuple[float, ...] = (11.3, 16.0, 22.6, 32.0, 45.3)
    calibration_seed: int = 1000

    def __post_init__(self):
        if self.phantom not in PHANTOMS:
            raise ValueError(f"unknown phantom {self.phantom!r}; expected one of {tuple(PHANTOMS)}")
        if self.size < 8:
            raise ValueError("size must be >= 8")
        if self.n_templates < 2:
            raise ValueError("need at least two templates")
        if self.gaussian_kind not in ("variance", "std"):
            raise ValueError("gaussian_kind must be 'variance' or 'std'")
        object.__setattr__(self, "changes", tuple(
            c if isinstance(c, Change) else Change(**c) for c in self.changes
        ))
        object.__setattr__(self, "doses", tuple(float(d) for d in self.doses))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "lambda1", {str(k): float(v) for k, v in dict(self.lambda1).items()})
        object.__setattr__(self, "lambda_grid", tuple(float(g) for g in self.lambda_grid))
        if not self.lambda_grid or any(g <= 0 for g in self.lambda_grid):
            raise ValueError("lambda_grid must hold positive multipliers")
        if self.calibration_seed in self.seeds:
            raise ValueError("calibration_seed must differ from the evaluation seeds")
        _check_changes(self.changes, self.size)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["changes"] = [asdict(c) for c in self.changes]
        return d

    def hash(self) -> str:
        """Stable digest of every semantic field."""
        blob = json.dumps(self.to_dict(), sort_keys=True, default=float)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def _check_changes(changes, n):
    for c in changes:
        if c.radius <= 0:
            raise ValueError(f"change radius must be positive: {c}")
        if (
            c.row - c.radius < 0
            or c.col - c.radius < 0
            or c.row + c.radius > n - 1
            or c.col + c.radius > n - 1
        ):
            raise ValueError(f"change {c} extends outside the {n}x{n} image")
    for i, a in enumerate(changes):
        for b in changes[i + 1 :]:
            if np.hypot(a.row - b.row, a.col - b.col) < a.radius + b.radius:
                raise ValueError(f"changes overlap: {a} and {b}")


PHANTOMS = {
    "shepp-logan": lambda n, seed: shepp_logan(n),
    "ellipses": lambda n, seed: random_ellipses(n, seed),
    "disc-field": lambda n, seed: disc_field(n, seed),
}


def base_phantom(spec: Scenario) -> np.ndarray:
    img = PHANTOMS[spec.phantom](spec.size, spec.phantom_seed)
    if spec.mass is not None:
        return img * (spec.mass / img.sum())
    return img * (spec.peak / img.max())


def _bumps(spec: Scenario, base: np.ndarray) -> np.ndarray:
    """Smooth multiplicative variation patterns, shape (n_bumps, n, n)."""
    n = spec.size
    rng = np.random.default_rng(spec.phantom_seed + 7919)
    rows, cols = np.mgrid[0:n, 0:n]
    support = base > 0
    out = []
    for _ in range(spec.n_bumps):
        r0, c0 = rng.uniform(0.3 * n, 0.7 * n, size=2)
        width = rng.uniform(0.1 * n, 0.25 * n)
        g = np.exp(-((rows - r0) ** 2 + (cols - c0) ** 2) / (2 * width**2))
        out.append(g * base * support)
    return np.array(out)


def template_coefficients(spec: Scenario) -> np.ndarray:
    rng = np.random.default_rng(spec.phantom_seed + 104729)
    return rng.normal(0.0, spec.perturbation, size=(spec.n_templates, spec.n_bumps))


def change_mask(spec: Scenario, threshold: float = 0.5) -> np.ndarray:
    """Boolean mask of the pixels touched by the scenario's changes."""
    m = np.zeros((spec.size, spec.size), dtype=bool)
    for c in spec.changes:
        m |= disc(spec.size, c.row, c.col, c.radius) >= threshold
    return m


def generate_phantom(spec: Scenario, which="test") -> np.ndarray:
    """Deterministic non-negative phantom.

    ``which`` is ``"base"``, ``"test"`` or a template index. Templates are
    the base plus small smooth intensity variations; the test object is the
    mean of the templates with the scenario's changes applied.
    """
    base = base_phantom(spec)
    if which == "base":
        return base
    bumps = _bumps(spec, base)
    coef = template_coefficients(spec)
    if which == "test":
        img = base + np.tensordot(coef.mean(axis=0), bumps, axes=1)
        for c in spec.changes:
            img = img + c.delta * disc(spec.size, c.row, c.col, c.radius)
        return np.clip(img, 0.0, None)
    idx = int(which)
    if not 0 <= idx < spec.n_templates:
        raise ValueError(f"template index {idx} out of range 0..{spec.n_templates - 1}")
    return np.clip(base + np.tensordot(coef[idx], bumps, axes=1), 0.0, None)
