"""Command-line interface: ``lowdose <subcommand> ...``.

Every subcommand accepts ``--seed``, ``--trace``, ``--out`` and
``--config``. A config file holds ``key = value`` lines whose keys are the
long option names (dashes or underscores); flags given on the command line
win over the file. Failures print a one-line JSON object with an error
category on stderr and exit with a nonzero status.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import io
from .experiments import METHODS, RECORD_FIELDS, reconstruct, run_comparison, ssim_table
from .metrics import RoI, relative_mse, rmse, ssim
from .noise import NoiseModel, simulate_with_level
from .phantoms import PHANTOMS, Change, Scenario, generate_phantom
from .projector import Geometry
from .reirradiate import reconstruct_reirradiated, select_bins
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

log = logging.getLogger("lowdose")

EXIT_CODES = {"invalid-input": 3, "io": 4, "format": 5, "numerical": 6, "internal": 1}


class CliError(Exception):
    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in str(text).replace(" ", "").split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    return [int(v) for v in _floats(text)]


def _change(text: str) -> Change:
    vals = _floats(text)
    if len(vals) != 4:
        raise argparse.ArgumentTypeError("a change is 'row,col,radius,delta'")
    return Change(*vals)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--trace", default=None, help="write the solver cost trace (CSV) here")
    p.add_argument("--out", default=None, help="output file")
    p.add_argument("--config", default=None, help="key = value file with option defaults")


def _geometry_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--size", type=int, default=128, help="image side in pixels")
    p.add_argument("--views", type=int, default=200)
    p.add_argument("--bins", type=int, default=None)
    p.add_argument("--pixel-size", type=float, default=1.0)


def _solver_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lambda1", type=float, default=1.0)
    p.add_argument("--max-iters", type=int, default=300)
    p.add_argument("--tol", type=float, default=1e-6)


def _noise_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--i0", type=float, required=True, help="incident intensity per bin")
    p.add_argument("--sigma", type=float, default=0.0, help="Gaussian read-noise std")


def _prior_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--counts", required=True, help="measured counts (raw sinogram)")
    p.add_argument("--templates", nargs="+", required=True, help="template images (raw)")
    p.add_argument("--weights", default=None, help="weights map (raw); computed when omitted")
    p.add_argument("--lambda2", type=float, default=100.0)
    p.add_argument("--patch", type=int, default=5, help="test patch width in bins")
    p.add_argument("--outer-iters", type=int, default=8)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lowdose", description="Low-dose CT simulation and reconstruction")
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="write a synthetic phantom")
    _common(p)
    p.add_argument("--phantom", choices=sorted(PHANTOMS), default="shepp-logan")
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--which", default="test", help="base, test or a template index")
    p.add_argument("--templates", type=int, default=4, help="number of templates in the scenario")
    p.add_argument("--mass", type=float, default=None)
    p.add_argument("--peak", type=float, default=1.0)
    p.add_argument("--change", type=_change, action="append", default=[], help="row,col,radius,delta")
    p.add_argument("--pgm", default=None, help="also write a 16-bit PGM preview")

    p = sub.add_parser("simulate", help="simulate noisy counts from an image")
    _common(p)
    p.add_argument("--image", required=True)
    _geometry_opts(p)
    p.add_argument("--i0", type=float, required=True)
    p.add_argument("--level", type=float, default=0.02, help="Gaussian noise level")
    p.add_argument("--noise-kind", choices=("variance", "std"), default="variance")

    p = sub.add_parser("reconstruct", help="reconstruct an image from counts")
    _common(p)
    p.add_argument("--method", choices=METHODS, required=True)
    p.add_argument("--counts", required=True)
    _geometry_opts(p)
    _noise_opts(p)
    _solver_opts(p)

    p = sub.add_parser("weights-map", help="change-detection weights map from counts and templates")
    _common(p)
    p.add_argument("--counts", required=True)
    p.add_argument("--templates", nargs="+", required=True)
    _geometry_opts(p)
    _noise_opts(p)
    p.add_argument("--patch", type=int, default=5)
    p.add_argument("--pvalues-out", default=None)

    p = sub.add_parser("prior-recon", help="reconstruction with a (weighted) template prior")
    _common(p)
    _prior_opts(p)
    p.add_argument("--unweighted", action="store_true", help="use W = 1 everywhere")
    _geometry_opts(p)
    _noise_opts(p)
    _solver_opts(p)

    p = sub.add_parser("reirradiate", help="re-scan bins crossing detected changes and reconstruct")
    _common(p)
    _prior_opts(p)
    p.add_argument("--truth", required=True, help="object image standing in for the re-scan")
    p.add_argument("--boost", type=float, default=2.0)
    p.add_argument("--max-fraction", type=float, default=0.25)
    p.add_argument("--w-threshold", type=float, default=0.5)
    p.add_argument("--mask-out", default=None, help="write the bin selection mask here")
    _geometry_opts(p)
    _noise_opts(p)
    _solver_opts(p)

    p = sub.add_parser("tune", help="choose lambda1 by the discrepancy statistic")
    _common(p)
    p.add_argument("--counts", required=True)
    p.add_argument("--grid", type=_floats, required=True, help="comma-separated lambda1 values")
    p.add_argument("--truth", default=None)
    _geometry_opts(p)
    _noise_opts(p)
    p.add_argument("--max-iters", type=int, default=300)
    p.add_argument("--tol", type=float, default=1e-6)

    p = sub.add_parser("compare", help="method x dose x seed comparison table")
    _common(p)
    p.add_argument("--phantom", choices=sorted(PHANTOMS), default="shepp-logan")
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--views", type=int, default=200)
    p.add_argument("--doses", type=_floats, default=[20, 40, 80, 160, 320, 620])
    p.add_argument("--methods", type=lambda s: [m for m in s.split(",") if m], default=list(METHODS))
    p.add_argument("--seeds", type=_ints, default=[0, 1, 2])
    p.add_argument("--level", type=float, default=0.02)
    p.add_argument("--noise-kind", choices=("variance", "std"), default="variance")
    p.add_argument("--mass", type=float, default=60.0 * (128 / 154) ** 2)
    p.add_argument("--lambda-grid", type=_floats, default=[11.3, 16.0, 22.6, 32.0, 45.3])
    p.add_argument("--max-iters", type=int, default=300)
    p.add_argument("--tol", type=float, default=1e-6)

    p = sub.add_parser("metrics", help="SSIM and relative error of an image against a reference")
    _common(p)
    p.add_argument("--truth", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--roi", type=_ints, default=None, help="row0,col0,height,width")
    return parser


def _config_path(argv) -> str | None:
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def _apply_config(parser: argparse.ArgumentParser, argv) -> argparse.Namespace:
    argv = list(sys.argv[1:] if argv is None else argv)
    choices = parser._subparsers._group_actions[0].choices
    command = next((tok for tok in argv if tok in choices), None)
    path = _config_path(argv)
    if command is None or path is None:
        return parser.parse_args(argv)
    sub = choices[command]
    actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "config")}
    schema = {dest: _config_type(a) for dest, a in actions.items()}
    values = io.read_config(path, schema)
    for dest, a in actions.items():
        # a required option supplied by the config no longer needs the flag
        if dest in values and a.required:
            a.required = False
    sub.set_defaults(**values)
    return parser.parse_args(argv)


def _config_type(action):
    if isinstance(action, argparse._StoreTrueAction):
        return bool
    if action.nargs == "+":
        return lambda s: s.split()
    conv = action.type or str

    def check(text):
        value = conv(text)
        if action.choices is not None and value not in action.choices:
            raise ValueError(f"{value!r} not in {sorted(action.choices)}")
        return value

    return check


def _geom(args) -> Geometry:
    return Geometry(args.size, args.views, n_bins=args.bins, pixel_size=args.pixel_size)


def _cfg(args) -> SolveConfig:
    return SolveConfig(
        lambda1=getattr(args, "lambda1", 0.0),
        max_iters=args.max_iters,
        tol=args.tol,
        trace_path=args.trace,
    )


def _need_out(args) -> str:
    if not args.out:
        raise CliError("invalid-input", "--out is required for this subcommand")
    return args.out


def _read_counts(path, geom: Geometry) -> np.ndarray:
    grid = io.read_raw(path, kind="sinogram")
    if grid.data.shape != geom.sino_shape:
        raise CliError("invalid-input", f"{path}: sinogram {grid.data.shape} does not match geometry {geom.sino_shape}")
    if grid.stage != "counts":
        raise CliError("invalid-input", f"{path}: expected counts, file holds stage {grid.stage!r}")
    return grid.data.astype(np.float64)


def _read_image(path, geom: Geometry | None = None) -> np.ndarray:
    img = io.read_raw(path, kind="image").data.astype(np.float64)
    if geom is not None and img.shape != geom.image_shape:
        raise CliError("invalid-input", f"{path}: image {img.shape} does not match size {geom.image_shape}")
    return img


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


def cmd_phantom(args):
    spec = Scenario(
        phantom=args.phantom,
        size=args.size,
        n_templates=args.templates,
        changes=tuple(args.change),
        mass=args.mass,
        peak=args.peak,
        phantom_seed=args.seed,
    )
    which = args.which if args.which in ("base", "test") else int(args.which)
    img = generate_phantom(spec, which)
    io.write_raw(_need_out(args), img, "image", "attenuation")
    if args.pgm:
        io.write_pgm(args.pgm, img)
    _emit({"out": args.out, "shape": list(img.shape), "sum": float(img.sum()), "scenario": spec.hash()})


def cmd_simulate(args):
    geom = _geom(args)
    img = _read_image(args.image, geom)
    y, nm = simulate_with_level(img, geom, args.i0, args.level, args.seed, kind=args.noise_kind)
    io.write_raw(_need_out(args), y, "sinogram", "counts")
    _emit({"out": args.out, "i0": nm.mean_i0(), "sigma": nm.sigma, "shape": list(y.shape)})


def cmd_reconstruct(args):
    geom = _geom(args)
    y = _read_counts(args.counts, geom)
    img, rep = reconstruct(args.method, y, NoiseModel(args.i0, args.sigma), geom, args.lambda1, _cfg(args))
    io.write_raw(_need_out(args), img, "image", args.method)
    info = {"out": args.out, "method": args.method}
    if rep is not None:
        info.update(iterations=rep.iterations_used, converged=rep.converged, final_cost=rep.cost_trace[-1])
    _emit(info)


def _detect(args, geom, y, templates):
    es = build_meas_eigenspaces(templates, geom, args.i0)
    p = change_pvalues(y, project_measurements(y, es), args.sigma, (1, args.patch))
    return p, weights_map(p, geom)


def cmd_weights_map(args):
    geom = _geom(args)
    y = _read_counts(args.counts, geom)
    templates = [_read_image(t, geom) for t in args.templates]
    p, w = _detect(args, geom, y, templates)
    io.write_raw(_need_out(args), w, "weights", "weights")
    if args.pvalues_out:
        io.write_raw(args.pvalues_out, p, "pvalues", "p-value")
    _emit({"out": args.out, "flagged_fraction": float((p < 0.05).mean()), "w_min": float(w.min())})


def _prior_inputs(args):
    geom = _geom(args)
    y = _read_counts(args.counts, geom)
    templates = [_read_image(t, geom) for t in args.templates]
    if args.weights:
        w = io.read_raw(args.weights, kind="weights").data.astype(np.float64)
        if w.shape != geom.image_shape:
            raise CliError("invalid-input", f"{args.weights}: weights {w.shape} do not match {geom.image_shape}")
    else:
        w = _detect(args, geom, y, templates)[1]
    return geom, y, templates, w


def cmd_prior_recon(args):
    geom, y, templates, w = _prior_inputs(args)
    if args.unweighted:
        w = np.ones_like(w)
    res = reconstruct_weighted_prior(
        y,
        geom,
        NoiseModel(args.i0, args.sigma),
        build_image_eigenspace(templates),
        w,
        args.lambda1,
        args.lambda2,
        _cfg(args),
        outer_iters=args.outer_iters,
    )
    io.write_raw(_need_out(args), res.image, "image", "prior-recon")
    _emit({"out": args.out, "outer_iters": res.outer_iters, "converged": res.converged, "final_cost": res.cost_trace[-1]})


def cmd_reirradiate(args):
    geom, y, templates, w = _prior_inputs(args)
    truth = _read_image(args.truth, geom)
    sel = select_bins(w, geom, args.w_threshold, args.max_fraction)
    res = reconstruct_reirradiated(
        y,
        sel,
        truth,
        geom,
        args.i0,
        args.boost,
        args.sigma,
        args.seed,
        build_image_eigenspace(templates),
        w,
        args.lambda1,
        args.lambda2,
        _cfg(args),
        outer_iters=args.outer_iters,
    )
    io.write_raw(_need_out(args), res.image, "image", "reirradiated")
    if args.mask_out:
        io.write_raw(args.mask_out, sel.mask.astype(np.float32), "mask", "selection")
    _emit(
        {
            "out": args.out,
            "selected_fraction": sel.fraction,
            "selection_status": sel.status,
            "extra_dose": res.extra_dose,
        }
    )


def cmd_tune(args):
    geom = _geom(args)
    y = _read_counts(args.counts, geom)
    truth = _read_image(args.truth, geom) if args.truth else None
    cfg = SolveConfig(max_iters=args.max_iters, tol=args.tol)
    res = tune_lambda1(y, geom, NoiseModel(args.i0, args.sigma), sorted(args.grid), cfg, truth=truth)
    res.to_csv(_need_out(args))
    _emit({"out": args.out, "chosen_lambda": res.chosen_lambda})


def cmd_compare(args):
    spec = Scenario(
        phantom=args.phantom,
        size=args.size,
        n_views=args.views,
        doses=tuple(args.doses),
        methods=tuple(args.methods),
        seeds=tuple(args.seeds),
        gaussian_level=args.level,
        gaussian_kind=args.noise_kind,
        mass=args.mass,
        phantom_seed=args.seed,
        lambda_grid=tuple(args.lambda_grid),
    )
    unknown = set(spec.methods) - set(METHODS)
    if unknown:
        raise CliError("invalid-input", f"unknown methods: {sorted(unknown)}")
    cfg = SolveConfig(max_iters=args.max_iters, tol=args.tol)
    records = run_comparison(spec, cfg)
    io.write_table(_need_out(args), RECORD_FIELDS, [tuple(vars(r).values()) for r in records])
    _emit({"out": args.out, "scenario": spec.hash(), "median_ssim": {m: {str(k): v for k, v in d.items()} for m, d in ssim_table(records).items()}})


def cmd_metrics(args):
    truth = _read_image(args.truth)
    img = _read_image(args.image)
    roi = None
    if args.roi is not None:
        if len(args.roi) != 4:
            raise CliError("invalid-input", "--roi needs row0,col0,height,width")
        roi = RoI(*args.roi)
    out = {
        "ssim": ssim(truth, img, roi),
        "rel_mse": relative_mse(truth, img, roi),
        "rmse": rmse(truth, img, roi),
    }
    if args.out:
        io.write_table(args.out, list(out), [tuple(out.values())])
    _emit(out)


COMMANDS = {
    "phantom": cmd_phantom,
    "simulate": cmd_simulate,
    "reconstruct": cmd_reconstruct,
    "weights-map": cmd_weights_map,
    "prior-recon": cmd_prior_recon,
    "reirradiate": cmd_reirradiate,
    "tune": cmd_tune,
    "compare": cmd_compare,
    "metrics": cmd_metrics,
}


def _category(exc: Exception) -> str:
    if isinstance(exc, CliError):
        return exc.category
    if isinstance(exc, io.FormatError):
        return "format"
    if isinstance(exc, (FileNotFoundError, PermissionError, IsADirectoryError)):
        return "io"
    if isinstance(exc, (FloatingPointError, OverflowError, RuntimeError)):
        return "numerical"
    if isinstance(exc, (ValueError, TypeError)):
        return "invalid-input"
    if isinstance(exc, OSError):
        return "io"
    return "internal"


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except (io.FormatError, OSError) as exc:
        cat = _category(exc)
        print(json.dumps({"error": cat, "message": str(exc)}), file=sys.stderr)
        return EXIT_CODES[cat]
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING))
    try:
        COMMANDS[args.command](args)
    except Exception as exc:
        cat = _category(exc)
        log.debug("command failed", exc_info=True)
        print(json.dumps({"error": cat, "message": str(exc)}), file=sys.stderr)
        return EXIT_CODES[cat]
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
