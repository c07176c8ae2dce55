"""Command line entry point: ``patchyhjb <subcommand> ...``."""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import harness
from .errors import ConfigError, PatchyError, StageError
from .partition import format_id, load_atlas, save_atlas
from .problem import BUILTINS, get_problem, oracle_for


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _overrides(pairs) -> dict:
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _manifest(path: str) -> str:
    return os.path.join(path, "manifest.json") if os.path.isdir(path) else path


def _oracle(atlas):
    if atlas.problem is None:
        raise ConfigError("atlas was built for an unknown problem; no exact oracle available")
    return oracle_for(atlas.problem)


def cmd_solve(args) -> int:
    overrides = _overrides(args.set)
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.config:
        cfg = harness.load_config(args.config, overrides)
    else:
        cfg = harness.parse_config("", overrides)
    outdir = args.out or cfg.resolved_output_dir()
    log = (lambda msg: print(msg, file=sys.stderr)) if args.verbose else None
    atlas = harness.solve(cfg, progress=log)
    path = save_atlas(atlas, outdir, config=cfg.as_dict())
    levels = ",".join(f"{r.level:.6g}" for r in atlas.rings)
    print(f"patches={atlas.patch_count} rings={len(atlas.rings)} c0={atlas.c0:.6g} levels={levels} manifest={path}")
    return 0


def _grid(args):
    if args.samples:
        rng = np.random.default_rng(args.seed or 0)
        return rng.uniform(args.lo, args.hi, size=(args.samples, 2))
    return harness.grid_points(args.grid_n, args.lo, args.hi)


def cmd_error_grid(args) -> int:
    atlas = load_atlas(_manifest(args.atlas))
    report = harness.error_grid(atlas, _oracle(atlas), _grid(args))
    if args.csv:
        report.to_csv(args.csv)
    if args.svg:
        with open(args.svg, "w") as fh:
            fh.write(harness.svg_document(atlas, report, lo=args.lo, hi=args.hi))
    print(report.summary())
    return 0


def cmd_sequence_error(args) -> int:
    atlas = load_atlas(_manifest(args.atlas))
    report = harness.sequence_error(atlas, _oracle(atlas))
    if args.csv:
        report.to_csv(args.csv)
    print(report.summary())
    print("ring_max=" + ",".join(f"{e:.3e}" for e in report.ring_max))
    return 0


def cmd_probe(args) -> int:
    problem = get_problem(args.problem)
    report = harness.truncation_probe(problem, oracle_for(problem), args.x, args.direction, args.h, args.d)
    if args.csv:
        report.to_csv(args.csv)
    print(report.summary())
    return 0


def cmd_emit_contours(args) -> int:
    atlas = load_atlas(_manifest(args.atlas))
    report = None
    if args.heatmap:
        report = harness.error_grid(atlas, _oracle(atlas), harness.grid_points(args.grid_n, args.lo, args.hi))
    with open(args.out, "w") as fh:
        fh.write(harness.svg_document(atlas, report, lo=args.lo, hi=args.hi))
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="patchyhjb", description="Patchy power-series solver for planar HJB equations.")
    p.add_argument("--seed", type=int, default=None, help="seed for randomized sampling")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="build an atlas and write it to disk")
    s.add_argument("--config", help="key = value configuration file")
    s.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config entry")
    s.add_argument("--out", help=f"output directory (default: ${harness.OUTPUT_ENV} or config output_dir)")
    s.set_defaults(func=cmd_solve)

    def grid_args(sp):
        sp.add_argument("--grid-n", type=int, default=100)
        sp.add_argument("--lo", type=float, default=-1.0)
        sp.add_argument("--hi", type=float, default=1.0)

    e = sub.add_parser("error-grid", help="compare an atlas with the exact cost on a grid")
    e.add_argument("atlas", help="manifest.json or its directory")
    grid_args(e)
    e.add_argument("--samples", type=int, default=0, help="use this many random points instead of the grid")
    e.add_argument("--csv")
    e.add_argument("--svg")
    e.set_defaults(func=cmd_error_grid)

    q = sub.add_parser("sequence-error", help="errors along the worst parent chain")
    q.add_argument("atlas")
    q.add_argument("--csv")
    q.set_defaults(func=cmd_sequence_error)

    r = sub.add_parser("probe", help="local truncation order of one step")
    r.add_argument("--problem", default="hunt-krener-testproblem")
    r.add_argument("--x", type=_floats, default=[0.3, 0.2])
    r.add_argument("--direction", type=_floats, default=[0.6, 0.8])
    r.add_argument("--h", type=_floats, default=[0.2, 0.1, 0.05, 0.025])
    r.add_argument("--d", type=int, default=3)
    r.add_argument("--csv")
    r.set_defaults(func=cmd_probe)

    c = sub.add_parser("emit-contours", help="write patch boundaries (and optionally an error heatmap) as SVG")
    c.add_argument("atlas")
    c.add_argument("--out", required=True)
    c.add_argument("--heatmap", action="store_true")
    grid_args(c)
    c.set_defaults(func=cmd_emit_contours)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except StageError as exc:
        pid = format_id(exc.patch_id) if isinstance(exc.patch_id, tuple) else exc.patch_id
        print(f"error: stage={exc.stage} patch={pid}: {exc.cause}", file=sys.stderr)
        return 3
    except KeyError as exc:
        msg = exc.args[0] if exc.args else str(exc)
        print(f"error: {msg}", file=sys.stderr)
        return 2
    except (PatchyError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
