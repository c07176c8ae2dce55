"""Experiment plumbing: configuration, error grids, chain errors, truncation probes, SVG output."""

from __future__ import annotations

import configparser
import csv
import math
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Hashable, Sequence

import numpy as np

from .errors import ConfigError
from .partition import ALBREKHT_ID, Atlas, build_atlas, format_id, locate_many
from .patchcore import assemble_patch
from .problem import Problem, get_problem
from .tensorpoly import CoeffSet

OUTPUT_ENV = "PATCHYHJB_OUTPUT_DIR"


@dataclass
class SolveConfig:
    problem: str = "hunt-krener-testproblem"
    d: int = 3
    h: float = 0.54
    rings: int = 4
    albrekht_radius: float = 0.25
    c0: float | None = None
    growth: str = "arclength"  # arclength | doubling
    first_count: int = 8
    counts: list[int] | None = None
    spacing: float | None = None
    rho0: float = 4.0
    max_level: float | None = None
    grid_n: int = 100
    grid_lo: float = -1.0
    grid_hi: float = 1.0
    output_dir: str = "patchy-out"
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not 1 <= self.d <= 3:
            raise ConfigError(f"d = {self.d}: cost degree d + 1 must be at most 4 and d at least 1")
        if not self.h > 0:
            raise ConfigError("h must be positive")
        if self.rings < 1:
            raise ConfigError("ring count must be at least 1")
        if self.growth not in ("arclength", "doubling"):
            raise ConfigError(f"growth must be 'arclength' or 'doubling', got {self.growth!r}")
        if self.counts is not None and len(self.counts) != self.rings:
            raise ConfigError(f"{len(self.counts)} ring counts given for {self.rings} rings")
        if self.grid_n < 2 or not self.grid_hi > self.grid_lo:
            raise ConfigError("grid needs at least 2 points per side and hi > lo")

    def resolved_output_dir(self) -> str:
        return os.environ.get(OUTPUT_ENV) or self.output_dir

    def as_dict(self) -> dict:
        return asdict(self)


def _convert(name: str, text: str, kind):
    text = text.strip()
    if text.lower() in ("", "none"):
        return None
    try:
        if name == "counts":
            return [int(v) for v in text.replace(",", " ").split()]
        if "int" in kind:
            return int(text)
        if "float" in kind:
            return float(text)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {text!r}") from None
    return text


def parse_config(text: str, overrides: dict | None = None) -> SolveConfig:
    """Parse ``key = value`` lines (``#`` comments allowed) into a config."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string("[config]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    raw = dict(parser["config"])
    raw.update({k.replace("-", "_"): v for k, v in (overrides or {}).items()})
    known = {f.name: str(f.type) for f in fields(SolveConfig)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    kwargs = {k: _convert(k, v, known[k]) for k, v in raw.items()}
    kwargs = {k: v for k, v in kwargs.items() if v is not None or k in ("c0", "counts", "spacing", "max_level")}
    return SolveConfig(**kwargs)


def load_config(path: str, overrides: dict | None = None) -> SolveConfig:
    try:
        with open(path) as fh:
            return parse_config(fh.read(), overrides)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None


def solve(config: SolveConfig, progress=None) -> Atlas:
    problem = get_problem(config.problem)
    atlas = build_atlas(
        problem,
        config.d,
        config.h,
        config.rings,
        albrekht_radius=config.albrekht_radius,
        c0=config.c0,
        growth=config.growth,
        first_count=config.first_count,
        counts=config.counts,
        spacing=config.spacing,
        rho0=config.rho0,
        max_level=config.max_level,
        progress=progress,
    )
    return atlas


# reference configurations -------------------------------------------------------------------

REPRODUCTION_CONFIG = """\
# test problem, cost degree 4, 73 patches
problem = hunt-krener-testproblem
d = 3
h = 0.54
rings = 4
albrekht_radius = 0.25
counts = 8, 16, 16, 32
"""

DOUBLING_CONFIG = """\
# five rings, points doubling from 8
problem = hunt-krener-testproblem
d = 3
h = 0.5
rings = 5
albrekht_radius = 0.25
growth = doubling
first_count = 8
"""


def _num(v) -> str:
    return repr(float(v))


# error grid ---------------------------------------------------------------------------------


@dataclass
class ErrorReport:
    points: np.ndarray
    exact: np.ndarray
    approx: np.ndarray
    ids: list
    covered: np.ndarray

    @property
    def abs_error(self) -> np.ndarray:
        return np.abs(self.approx - self.exact)

    @property
    def max_error(self) -> float:
        e = self.abs_error[self.covered]
        return float(e.max()) if e.size else 0.0

    @property
    def mean_error(self) -> float:
        e = self.abs_error[self.covered]
        return float(e.mean()) if e.size else 0.0

    @property
    def coverage(self) -> float:
        return float(self.covered.mean()) if self.covered.size else 0.0

    @property
    def excluded(self) -> int:
        return int((~self.covered).sum())

    def summary(self) -> str:
        return (f"max_abs_error={self.max_error:.6e} mean_abs_error={self.mean_error:.6e} "
                f"coverage={self.coverage:.4f} excluded={self.excluded} points={len(self.points)}")

    def to_csv(self, path: str) -> None:
        """Columns: x1,x2,exact,approx,abs_error,patch (empty when outside the atlas)."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x1", "x2", "exact", "approx", "abs_error", "patch"])
            for x, ex, ap, pid, cov in zip(self.points, self.exact, self.approx, self.ids, self.covered):
                if cov:
                    w.writerow([_num(x[0]), _num(x[1]), _num(ex), _num(ap), _num(abs(ap - ex)), format_id(pid)])
                else:
                    w.writerow([_num(x[0]), _num(x[1]), "", "", "", ""])


def grid_points(n: int = 100, lo: float = -1.0, hi: float = 1.0) -> np.ndarray:
    g = np.linspace(lo, hi, n)
    X1, X2 = np.meshgrid(g, g, indexing="ij")
    return np.stack([X1.ravel(), X2.ravel()], axis=1)


def error_grid(atlas: Atlas, oracle, grid=None) -> ErrorReport:
    """Compare patch values with the exact cost on the points that the atlas covers."""
    X = grid_points() if grid is None else np.atleast_2d(np.asarray(grid, dtype=float))
    ids = locate_many(atlas, X)
    covered = np.array([i is not None for i in ids], dtype=bool)
    exact = np.full(len(X), np.nan)
    approx = np.full(len(X), np.nan)
    if covered.any():
        exact[covered] = oracle.value(X[covered])
    groups: dict = {}
    for i, pid in enumerate(ids):
        if pid is not None:
            groups.setdefault(tuple(pid), []).append(i)
    for pid, rows in groups.items():
        approx[rows] = atlas.patch(pid).cost(X[rows])
    return ErrorReport(X, exact, approx, ids, covered)


# chain errors -------------------------------------------------------------------------------


def coefficient_errors(poly: CoeffSet, exact: CoeffSet) -> np.ndarray:
    """Max absolute partial-derivative error for each order."""
    return np.array([np.max(np.abs(a - b)) for a, b in zip(poly.blocks, exact.blocks)])


@dataclass
class SequenceReport:
    chain: list[Hashable]
    chain_points: np.ndarray
    chain_errors: np.ndarray  # value error at each chain point
    chain_coef_errors: np.ndarray  # (len(chain), degree + 1)
    ring_max: np.ndarray  # worst patch-point error per ring, ring 0 = Al'brekht
    growth_ratio: float
    fit_scale: float
    patch_errors: dict = field(repr=False, default_factory=dict)

    @property
    def terminal_error(self) -> float:
        return float(self.chain_errors[-1])

    def model(self, i) -> np.ndarray:
        """Fitted geometric model ``scale * ratio^i`` of the ring-wise error."""
        return self.fit_scale * self.growth_ratio ** np.asarray(i, dtype=float)

    def within_envelope(self, factor: float = 10.0) -> bool:
        idx = np.arange(len(self.chain))
        return bool(np.all(self.chain_errors[1:] <= factor * self.model(idx[1:])))

    def summary(self) -> str:
        return (f"terminal_error={self.terminal_error:.6e} growth_ratio={self.growth_ratio:.4f} "
                f"chain={'>'.join(format_id(c) for c in self.chain)}")

    def to_csv(self, path: str) -> None:
        """Columns: index,patch,x1,x2,value_error,model,coef_err_0..coef_err_D."""
        D = self.chain_coef_errors.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "patch", "x1", "x2", "value_error", "model"] + [f"coef_err_{j}" for j in range(D)])
            for i, (pid, x, e, ce) in enumerate(zip(self.chain, self.chain_points, self.chain_errors,
                                                     self.chain_coef_errors)):
                w.writerow([i, format_id(pid), _num(x[0]), _num(x[1]), _num(e), _num(self.model(i)),
                            *[_num(v) for v in ce]])


def fit_geometric(values: Sequence[float]) -> tuple[float, float]:
    """Least-squares fit ``v_i ~ scale * ratio^i`` on the positive entries (index from 1)."""
    v = np.asarray(values, dtype=float)
    i = np.arange(1, len(v) + 1)
    tiny = np.finfo(float).tiny
    mask = v > tiny
    if mask.sum() == 0:
        return 1.0, 0.0
    if mask.sum() == 1:
        return 1.0, float(v[mask][0])
    slope, intercept = np.polyfit(i[mask], np.log(v[mask]), 1)
    return float(math.exp(slope)), float(math.exp(intercept))


def sequence_error(atlas: Atlas, oracle) -> SequenceReport:
    """Errors along the parent chain that ends at the worst patch point."""
    errs: dict = {}
    coef: dict = {}
    D = atlas.albrekht.cost.degree
    sources = [(ALBREKHT_ID, np.zeros(2), atlas.albrekht.cost)] + [
        (p.patch_id, p.point, p.cost) for p in atlas.patches()
    ]
    for pid, x, poly in sources:
        exact = oracle.coeffs(x, D)
        ce = coefficient_errors(poly, exact)
        coef[pid] = ce
        errs[pid] = float(ce[0])
    ring_max = np.array([errs[ALBREKHT_ID]] + [max(errs[p.patch_id] for p in r.patches) for r in atlas.rings])
    terminal = max(errs, key=lambda k: (errs[k], k))
    chain = atlas.chain(terminal)
    ratio, scale = fit_geometric(ring_max[1:])
    return SequenceReport(
        chain=chain,
        chain_points=np.array([atlas.point_of(c) for c in chain]),
        chain_errors=np.array([errs[c] for c in chain]),
        chain_coef_errors=np.array([coef[c] for c in chain]),
        ring_max=ring_max,
        growth_ratio=ratio,
        fit_scale=scale,
        patch_errors=errs,
    )


# truncation probe ---------------------------------------------------------------------------


@dataclass
class ProbeReport:
    hs: np.ndarray
    errors: np.ndarray  # (len(hs), D + 1): block error per order
    slopes: list[float | None]  # None where the errors are at rounding level
    residuals: list[float | None]

    def summary(self) -> str:
        parts = []
        for j, (s, r) in enumerate(zip(self.slopes, self.residuals)):
            parts.append(f"order {j}: " + ("exact (not fit)" if s is None else f"slope={s:.3f} fit_residual={r:.2e}"))
        return "\n".join(parts)

    def to_csv(self, path: str) -> None:
        """Columns: h,err_0..err_D."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["h"] + [f"err_{j}" for j in range(self.errors.shape[1])])
            for h, row in zip(self.hs, self.errors):
                w.writerow([_num(h), *[_num(v) for v in row]])


EXACT_FLOOR = 1e-11


def truncation_probe(problem: Problem, oracle, x0, direction, hs=(0.2, 0.1, 0.05, 0.025), d: int = 3) -> ProbeReport:
    """One step of the method fed with exact coefficients, for a list of step lengths.

    Order ``j`` of the new cost polynomial is compared with the exact
    coefficients at ``x0 + h * direction``; the log-log slope of that error
    against ``h`` estimates the local truncation order.
    """
    if oracle is None or not hasattr(oracle, "coeffs"):
        raise ValueError("truncation_probe needs an oracle with exact Taylor coefficients")
    x0 = np.asarray(x0, dtype=float)
    u = np.asarray(direction, dtype=float)
    u = u / np.linalg.norm(u)
    D = d + 1
    source = oracle.coeffs(x0, D)
    hs = np.asarray(hs, dtype=float)
    rows = []
    for h in hs:
        x1 = x0 + h * u
        patch = assemble_patch(source, x1, problem, d)
        rows.append(coefficient_errors(patch.cost, oracle.coeffs(x1, D)))
    E = np.array(rows)
    slopes, resid = [], []
    for j in range(E.shape[1]):
        e = E[:, j]
        if np.max(e) < EXACT_FLOOR:
            slopes.append(None)
            resid.append(None)
            continue
        A = np.vstack([np.log(hs), np.ones_like(hs)]).T
        coef, res, *_ = np.linalg.lstsq(A, np.log(e), rcond=None)
        slopes.append(float(coef[0]))
        resid.append(float(np.sqrt(res[0] / len(hs))) if res.size else 0.0)
    return ProbeReport(hs, E, slopes, resid)


# SVG ---------------------------------------------------------------------------------------


def _color(t: float) -> str:
    """Blue (low) to yellow (high) ramp for t in [0, 1]."""
    stops = [(0.0, (40, 30, 120)), (0.5, (30, 150, 140)), (1.0, (250, 230, 40))]
    t = min(max(t, 0.0), 1.0)
    for (t0, c0), (t1, c1) in zip(stops, stops[1:]):
        if t <= t1:
            s = (t - t0) / (t1 - t0)
            return "#%02x%02x%02x" % tuple(int(round(a + s * (b - a))) for a, b in zip(c0, c1))
    return "#%02x%02x%02x" % stops[-1][1]


def svg_document(atlas: Atlas, report: ErrorReport | None = None, size: int = 600,
                 lo: float = -1.0, hi: float = 1.0) -> str:
    """Static SVG: optional log10 |error| heatmap with patch boundaries and points on top."""
    scale = size / (hi - lo)

    def tx(p):
        return (p[0] - lo) * scale, (hi - p[1]) * scale

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
           f'viewBox="0 0 {size} {size}">', f'<rect width="{size}" height="{size}" fill="white"/>']
    if report is not None and report.covered.any():
        n = int(round(math.sqrt(len(report.points))))
        cell = size / max(n - 1, 1)
        logs = np.log10(np.maximum(report.abs_error[report.covered], 1e-16))
        vmin, vmax = float(logs.min()), float(logs.max())
        span = vmax - vmin or 1.0
        for x, e, cov in zip(report.points, report.abs_error, report.covered):
            if not cov:
                continue
            cx, cy = tx(x)
            t = (math.log10(max(e, 1e-16)) - vmin) / span
            out.append(f'<rect x="{cx - cell / 2:.2f}" y="{cy - cell / 2:.2f}" width="{cell:.2f}" '
                       f'height="{cell:.2f}" fill="{_color(t)}"/>')
        out.append(f'<text x="6" y="16" font-size="12">log10|error| in [{vmin:.2f}, {vmax:.2f}]</text>')

    def polyline(P, closed=True, color="black", width=1.0):
        pts = " ".join("%.2f,%.2f" % tx(p) for p in P)
        tag = "polygon" if closed else "polyline"
        return f'<{tag} points="{pts}" fill="none" stroke="{color}" stroke-width="{width}"/>'

    out.append(polyline(atlas.albrekht_boundary.polygon(), color="red", width=1.5))
    for ring in atlas.rings:
        out.append(polyline(ring.outer.polygon()))
        for a, e in zip(ring.anchors, ring.cut_ends):
            out.append(polyline([a, e], closed=False, color="gray"))
        for p in ring.patches:
            cx, cy = tx(p.point)
            out.append(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="2" fill="black"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
