"""Planar patch geometry: level curves, rings of patches, point location.

A ring is an annulus split into sectors by straight lateral cuts.  Cut ``j``
separates patch ``j`` from patch ``j + 1`` (counterclockwise); it starts at an
anchor on the ring's inner boundary halfway (by arclength) between the two
patch points and runs against the optimal direction there.  The outer
boundary of patch ``j`` is the level curve ``pi_j = c`` between its cuts.

Tie rules: a point on a cut belongs to the counterclockwise patch; a point on
a level boundary belongs to the inner region.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Hashable, Sequence

import numpy as np
import scipy.optimize

from .albrekht import AlbrekhtSolution
from .errors import GeometryError, OutOfRegion, PatchyError
from .patchcore import PatchSolution, assemble_patch
from .problem import Problem
from .tensorpoly import CoeffSet

ALBREKHT_ID = (0, 0)
NEWTON_TOL = 1e-12
NEWTON_MAXIT = 25
CUT_TOL = 1e-12


# level curves -----------------------------------------------------------------


def newton_project(poly: CoeffSet, c: float, x, tol: float = NEWTON_TOL, maxit: int = NEWTON_MAXIT) -> np.ndarray:
    """Move ``x`` along the gradient onto ``poly = c``."""
    x = np.array(x, dtype=float)
    scale = max(1.0, abs(c))
    for _ in range(maxit):
        v = poly(x) - c
        if abs(v) <= tol * scale:
            return x
        g = poly.grad(x)
        gg = g @ g
        if not gg > 0.0:
            raise GeometryError(f"gradient vanishes near {x.tolist()}")
        x = x - (v / gg) * g
    if abs(poly(x) - c) <= tol * scale:
        return x
    raise GeometryError(f"Newton projection onto level {c} did not converge near {x.tolist()}")


def _ccw_tangent(poly: CoeffSet, x) -> np.ndarray:
    g = poly.grad(x)
    norm = np.linalg.norm(g)
    if not norm > 0.0:
        raise GeometryError(f"gradient vanishes on the level curve at {x.tolist()}")
    return np.array([-g[1], g[0]]) / norm


def _step(poly, c, x, ds):
    return newton_project(poly, c, x + ds * _ccw_tangent(poly, x))


def trace_level_curve(poly: CoeffSet, c: float, seed, step: float = 0.02, max_points: int = 200000) -> np.ndarray:
    """Closed counterclockwise polyline on ``poly = c`` around the origin.

    The first point is the Newton projection of ``seed``; the last point is
    within one step of the first (the closing segment is implicit).
    """
    if not c > 0.0:
        raise ValueError("level must be positive")
    start = newton_project(poly, c, seed)
    pts = [start]
    angle = 0.0
    x = start
    while True:
        nxt = _step(poly, c, x, step)
        dtheta = _angle_between(x, nxt)
        if dtheta <= 0.0:
            raise GeometryError("level curve does not wind counterclockwise around the origin")
        if angle + dtheta >= 2.0 * math.pi - 1e-12:
            break
        angle += dtheta
        pts.append(nxt)
        x = nxt
        if len(pts) > max_points:
            raise GeometryError("level curve tracing did not close")
    return np.array(pts)


def trace_arc(poly: CoeffSet, c: float, start, stop: Callable[[np.ndarray], float], end,
              step: float = 0.02, max_points: int = 100000) -> np.ndarray:
    """Trace ``poly = c`` counterclockwise from ``start`` until ``stop`` turns non-negative.

    ``end`` is the known exact stopping point and closes the arc.
    """
    x = newton_project(poly, c, start)
    pts = [x]
    if stop(x) >= 0.0:
        return np.array([x, np.asarray(end, dtype=float)])
    total = 0.0
    while True:
        nxt = _step(poly, c, x, step)
        if stop(nxt) >= 0.0:
            break
        pts.append(nxt)
        total += step
        x = nxt
        if len(pts) > max_points:
            raise GeometryError("arc tracing did not reach its stopping cut")
    pts.append(np.asarray(end, dtype=float))
    return np.array(pts)


def _angle_between(a, b) -> float:
    return math.atan2(a[0] * b[1] - a[1] * b[0], a[0] * b[0] + a[1] * b[1])


def _menger_curvature(p0, p1, p2) -> float:
    a = np.linalg.norm(p1 - p0)
    b = np.linalg.norm(p2 - p1)
    c = np.linalg.norm(p2 - p0)
    area2 = abs((p1[0] - p0[0]) * (p2[1] - p0[1]) - (p1[1] - p0[1]) * (p2[0] - p0[0]))
    denom = a * b * c
    return 2.0 * area2 / denom if denom > 0 else 0.0


def segment_lengths(points: np.ndarray, closed: bool = True) -> np.ndarray:
    """Arc lengths between consecutive vertices of a smooth curve.

    Chords are corrected with the local circle through neighbouring vertices,
    which makes the estimate exact for circles and fourth order otherwise.
    """
    P = np.asarray(points, dtype=float)
    m = len(P)
    nxt = np.roll(P, -1, axis=0) if closed else P[1:]
    cur = P if closed else P[:-1]
    chords = np.linalg.norm(nxt - cur, axis=1)
    kappa = np.zeros(m)
    for i in range(m):
        if closed or 0 < i < m - 1:
            kappa[i] = _menger_curvature(P[i - 1], P[i], P[(i + 1) % m])
    k_next = np.roll(kappa, -1) if closed else kappa[1:]
    k_cur = kappa if closed else kappa[:-1]
    kk = 0.5 * (k_cur + k_next)
    out = chords.copy()
    small = kk * chords < 1.0
    out[small] = np.where(
        kk[small] > 0, 2.0 / np.maximum(kk[small], 1e-300) * np.arcsin(np.clip(0.5 * kk[small] * chords[small], 0, 1)),
        chords[small],
    )
    return out


def curve_length(points: np.ndarray, closed: bool = True) -> float:
    return float(segment_lengths(points, closed).sum())


# boundaries made of level-curve pieces --------------------------------------------


@dataclass
class Piece:
    """Arc of ``poly = level`` owned by one patch."""

    owner: Hashable
    poly: CoeffSet
    level: float
    points: np.ndarray


@dataclass
class Boundary:
    """Closed counterclockwise curve made of level-curve pieces.

    Consecutive pieces may be joined by short straight jumps along a cut.
    """

    pieces: list[Piece]

    def vertices(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """All vertices, owning piece index per vertex, and arclength per segment."""
        pts, owner, seg = [], [], []
        for i, piece in enumerate(self.pieces):
            P = piece.points
            pts.append(P)
            owner.extend([i] * len(P))
            if len(self.pieces) == 1:
                seg.append(segment_lengths(P, closed=True))
            else:
                seg.append(segment_lengths(P, closed=False) if len(P) > 2 else np.linalg.norm(np.diff(P, axis=0), axis=1))
                nxt = self.pieces[(i + 1) % len(self.pieces)].points[0]
                seg.append([np.linalg.norm(nxt - P[-1])])
        return np.vstack(pts), np.array(owner), np.concatenate([np.atleast_1d(s) for s in seg])

    @property
    def length(self) -> float:
        return float(self.vertices()[2].sum())

    def polygon(self) -> np.ndarray:
        return self.vertices()[0]

    def sample(self, s_values: Sequence[float]) -> list[tuple[np.ndarray, int]]:
        """Points at the given arclength positions, projected onto their piece."""
        V, own, seg = self.vertices()
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        L = cum[-1]
        out = []
        for s in s_values:
            s = s % L
            i = min(int(np.searchsorted(cum, s, side="right")) - 1, len(V) - 1)
            t = (s - cum[i]) / seg[i] if seg[i] > 0 else 0.0
            a = V[i]
            b = V[(i + 1) % len(V)]
            pi, pj = own[i], own[(i + 1) % len(V)]
            if pi != pj:
                # on a jump between two pieces: snap to the nearer end
                idx, p = (pi, a) if t < 0.5 else (pj, b)
                out.append((p.copy(), idx))
                continue
            piece = self.pieces[pi]
            p = newton_project(piece.poly, piece.level, (1 - t) * a + t * b)
            out.append((p, pi))
        return out


def place_patch_points(curve, h: float, count: int | None = None, offset: float = 0.0):
    """Evenly spaced points on a closed curve with arclength spacing at most ``h``.

    ``curve`` is a :class:`Boundary` or a closed polyline array.  The count is
    ``max(4, ceil(L / h))`` unless given explicitly.  Returns ``(points,
    piece_index)`` for a boundary and just the points for an array.
    """
    if not h > 0.0:
        raise ValueError("h must be positive")
    if isinstance(curve, Boundary):
        L = curve.length
    else:
        L = curve_length(curve)
    if count is None:
        count = max(4, math.ceil(L / h * (1 - 1e-9)))
    s = (np.arange(count) + offset) * L / count
    if isinstance(curve, Boundary):
        res = curve.sample(s)
        return np.array([p for p, _ in res]), [i for _, i in res]
    return _sample_polyline(curve, s)


def _sample_polyline(P: np.ndarray, s_values) -> np.ndarray:
    seg = segment_lengths(P)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    out = []
    for s in s_values:
        s = s % cum[-1]
        i = min(int(np.searchsorted(cum, s, side="right")) - 1, len(P) - 1)
        t = (s - cum[i]) / seg[i]
        out.append((1 - t) * P[i] + t * P[(i + 1) % len(P)])
    return np.array(out)


# rings ------------------------------------------------------------------------------


@dataclass(frozen=True)
class PatchGeom:
    owner: Hashable
    inner_level: tuple[str, float]
    outer_level: tuple[Hashable, float]
    cw_ray: tuple[np.ndarray, np.ndarray]
    ccw_ray: tuple[np.ndarray, np.ndarray]


@dataclass
class Ring:
    index: int
    inner_level: float
    level: float
    patches: list[PatchSolution]
    anchors: np.ndarray  # cut j between patch j and j + 1
    directions: np.ndarray
    anchor_owner: list[Hashable]  # inner-boundary piece owner per anchor
    inner: Boundary
    outer: Boundary | None = None
    cut_ends: np.ndarray | None = None
    windows: np.ndarray | None = None  # per sector: (start angle, width)
    guard: np.ndarray | None = None  # per patch: max distance to its region boundary

    @property
    def size(self) -> int:
        return len(self.patches)

    def geometry(self, j: int) -> PatchGeom:
        N = self.size
        p = self.patches[j]
        return PatchGeom(
            owner=p.patch_id,
            inner_level=("previous-ring", self.inner_level),
            outer_level=(p.patch_id, self.level),
            cw_ray=(self.anchors[(j - 1) % N], self.directions[(j - 1) % N]),
            ccw_ray=(self.anchors[j], self.directions[j]),
        )

    def side(self, X: np.ndarray) -> np.ndarray:
        """Cross products ``u_j x (x - a_j)`` for every point and cut, shape (M, N)."""
        D = X[:, None, :] - self.anchors[None, :, :]
        U = self.directions
        return U[None, :, 0] * D[:, :, 1] - U[None, :, 1] * D[:, :, 0]

    def sector_mask(self, X: np.ndarray) -> np.ndarray:
        """Boolean (M, N): point inside the lateral wedge of patch ``j``."""
        X = np.atleast_2d(X)
        s = self.side(X)
        # points within rounding of a cut line count as on it
        dist = np.linalg.norm(X[:, None, :] - self.anchors[None, :, :], axis=2)
        on_cut = np.abs(s) <= CUT_TOL * (1.0 + dist)
        s = np.where(on_cut, 0.0, s)
        left_ok = np.roll(s, 1, axis=1) >= 0.0  # ccw of (or on) cut j - 1
        right_ok = s < 0.0  # strictly cw of cut j
        theta = np.arctan2(X[:, 1], X[:, 0])
        start, width = self.windows[:, 0], self.windows[:, 1]
        rel = np.mod(theta[:, None] - start[None, :], 2.0 * math.pi)
        return left_ok & right_ok & (rel <= width[None, :])

    def sector(self, X: np.ndarray) -> np.ndarray:
        """Index of the wedge containing each point, -1 if none."""
        mask = self.sector_mask(X)
        idx = np.argmax(mask, axis=1)
        idx[~mask.any(axis=1)] = -1
        return idx


def _ray_exit(poly: CoeffSet, c: float, a, u, tmax: float, dt: float) -> float:
    """Smallest ``t > 0`` with ``poly(a + t u) = c``, marching then bracketing."""
    f = lambda t: poly(a + t * u) - c
    t0, f0 = 0.0, f(0.0)
    if f0 >= 0.0:
        # anchor already at or beyond the level (inner level above c): no exit
        raise GeometryError(f"ray anchor {np.asarray(a).tolist()} is not inside level {c}")
    t = dt
    while t <= tmax:
        ft = f(t)
        if ft >= 0.0:
            return scipy.optimize.brentq(f, t0, t, xtol=1e-14, rtol=1e-14)
        t0 = t
        t += dt
    raise GeometryError(f"ray from {np.asarray(a).tolist()} does not reach level {c}")


def _cross(u, v) -> float:
    return u[0] * v[1] - u[1] * v[0]


def build_outer(ring: Ring, c: float, step: float, reach: float, problem: Problem | None = None) -> None:
    """Trace the outer boundary of ``ring`` at level ``c`` and fill the lookup data."""
    N = ring.size
    exits = np.zeros((N, 2, 2))  # per patch: exit on cw cut, exit on ccw cut
    dt = reach / 64.0
    for j, patch in enumerate(ring.patches):
        for side, cut in ((0, (j - 1) % N), (1, j)):
            a, u = ring.anchors[cut], ring.directions[cut]
            t = _ray_exit(patch.cost, c, a, u, reach, dt)
            exits[j, side] = a + t * u
    pieces = []
    for j, patch in enumerate(ring.patches):
        a, u = ring.anchors[j], ring.directions[j]
        stop = lambda x, a=a, u=u: _cross(u, x - a)
        pts = trace_arc(patch.cost, c, exits[j, 0], stop, exits[j, 1], step=step)
        pieces.append(Piece(patch.patch_id, patch.cost, c, pts))
    if problem is not None:
        for piece in pieces:
            for p in piece.points:
                if not problem.in_region(p):
                    raise OutOfRegion(f"ring {ring.index} boundary leaves the validity region at {p.tolist()}")
    ring.outer = Boundary(pieces)

    # each cut ends at the farther of its two exits
    ends = np.zeros((N, 2))
    for j in range(N):
        e1, e2 = exits[j, 1], exits[(j + 1) % N, 0]
        a = ring.anchors[j]
        ends[j] = e1 if np.linalg.norm(e1 - a) >= np.linalg.norm(e2 - a) else e2
    ring.cut_ends = ends

    # angular window of sector j spans cut j-1 and cut j, widened slightly
    ang_a = np.arctan2(ring.anchors[:, 1], ring.anchors[:, 0])
    ang_e = np.arctan2(ends[:, 1], ends[:, 0])
    windows = np.zeros((N, 2))
    for j in range(N):
        prev = (j - 1) % N
        lo_candidates = [ang_a[prev], ang_e[prev]]
        hi_candidates = [ang_a[j], ang_e[j]]
        base = lo_candidates[0]
        rel_lo = min(0.0, _wrap(lo_candidates[1] - base))
        rel_hi = max(_wrap_pos(h - base) for h in hi_candidates)
        if N == 1:
            rel_lo, rel_hi = 0.0, 2 * math.pi
        width = rel_hi - rel_lo
        margin = 0.1 * width + 1e-9
        windows[j] = (base + rel_lo - margin, min(width + 2 * margin, 2 * math.pi))
    ring.windows = windows

    # guard radius: farthest boundary sample of each patch region
    guard = np.zeros(N)
    inner_V = ring.inner.polygon()
    for j, patch in enumerate(ring.patches):
        region_pts = [pieces[j].points, ring.anchors[[(j - 1) % N, j]], ends[[(j - 1) % N, j]]]
        mask = ring.sector_mask(inner_V)[:, j]
        if mask.any():
            region_pts.append(inner_V[mask])
        P = np.vstack(region_pts)
        guard[j] = 1.05 * np.max(np.linalg.norm(P - patch.point, axis=1)) + 1e-9
    ring.guard = guard


def _wrap(a: float) -> float:
    return (a + math.pi) % (2 * math.pi) - math.pi


def _wrap_pos(a: float) -> float:
    return a % (2 * math.pi)


def make_ring(
    index: int,
    inner: Boundary,
    inner_level: float,
    sources: dict[Hashable, PatchSolution | CoeffSet],
    problem: Problem,
    d: int,
    h: float,
    count: int | None = None,
    offset: float = 0.0,
    spacing: float | None = None,
) -> Ring:
    """Place patch points on ``inner``, assemble their patches and lateral cuts.

    ``sources`` maps piece owners (patch ids) to the parent cost polynomial.
    The outer level is attached separately by :func:`build_outer`.
    """
    points, piece_idx = place_patch_points(inner, h if spacing is None else spacing, count=count, offset=offset)
    N = len(points)
    L = inner.length
    s_anchor = (np.arange(N) + offset + 0.5) * L / N
    anchor_res = inner.sample(s_anchor)
    anchors = np.array([p for p, _ in anchor_res])
    anchor_owner = [inner.pieces[i].owner for _, i in anchor_res]

    patches = []
    for j, (x, pi) in enumerate(zip(points, piece_idx)):
        owner = inner.pieces[pi].owner
        src = sources[owner]
        src_cost = src.cost if hasattr(src, "cost") else src
        patches.append(assemble_patch(src_cost, x, problem, d, h=h, parent=owner, patch_id=(index, j)))

    directions = np.zeros((N, 2))
    for j in range(N):
        ccw = patches[(j + 1) % N]
        a = anchors[j]
        f, g = problem.f(a), problem.g(a)
        kappa = ccw.control(a)
        v = -(f + g * kappa)
        norm = np.linalg.norm(v)
        if not norm > 0.0:
            raise GeometryError(f"optimal direction vanishes at anchor {a.tolist()}")
        directions[j] = v / norm
    return Ring(index, inner_level, math.nan, patches, anchors, directions, anchor_owner, inner)


def build_ring(atlas: Atlas, c_next: float, count: int | None = None, offset: float = 0.0) -> Ring:
    """Add a ring whose outer level is ``c_next`` to ``atlas`` and return it."""
    cfg = atlas.params
    inner, c_in, sources = atlas.frontier()
    if not c_next > c_in:
        raise ValueError(f"ring level {c_next} must exceed the previous level {c_in}")
    ring = make_ring(len(atlas.rings) + 1, inner, c_in, sources, atlas.problem, cfg.d, cfg.h, count, offset)
    ring.level = c_next
    build_outer(ring, c_next, cfg.trace_step, cfg.reach, atlas.problem)
    atlas.rings.append(ring)
    return ring


# atlas ------------------------------------------------------------------------------------


@dataclass
class AtlasParams:
    d: int
    h: float
    trace_step: float
    reach: float


@dataclass
class Atlas:
    problem: Problem | None
    albrekht: AlbrekhtSolution
    c0: float
    albrekht_boundary: Boundary
    params: AtlasParams
    rings: list[Ring] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def albrekht_guard(self) -> float:
        P = self.albrekht_boundary.polygon()
        return 1.05 * float(np.max(np.linalg.norm(P, axis=1))) + 1e-9

    def frontier(self) -> tuple[Boundary, float, dict]:
        if not self.rings:
            return self.albrekht_boundary, self.c0, {ALBREKHT_ID: self.albrekht.cost}
        last = self.rings[-1]
        return last.outer, last.level, {p.patch_id: p for p in last.patches}

    def patches(self) -> list[PatchSolution]:
        return [p for ring in self.rings for p in ring.patches]

    def patch(self, pid: Hashable) -> PatchSolution | AlbrekhtSolution:
        if tuple(pid) == ALBREKHT_ID:
            return self.albrekht
        k, j = pid
        return self.rings[k - 1].patches[j]

    def point_of(self, pid: Hashable) -> np.ndarray:
        if tuple(pid) == ALBREKHT_ID:
            return np.zeros(2)
        return self.patch(pid).point

    @property
    def patch_count(self) -> int:
        return 1 + sum(r.size for r in self.rings)

    def chain(self, pid: Hashable) -> list[Hashable]:
        """Patch ids from the origin to ``pid`` following parent links."""
        out = [pid]
        seen = {pid}
        while tuple(out[-1]) != ALBREKHT_ID:
            parent = self.patch(out[-1]).parent
            if parent in seen:
                raise PatchyError(f"parent cycle at {parent}")
            seen.add(parent)
            out.append(parent)
        return out[::-1]


def locate_many(atlas: Atlas, X) -> list[Hashable | None]:
    """Owning patch id of each point (``None`` outside the atlas)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    M = len(X)
    result: list[Hashable | None] = [None] * M
    todo = np.ones(M, dtype=bool)
    inside_a = (np.linalg.norm(X, axis=1) <= atlas.albrekht_guard) & (atlas.albrekht.cost(X) <= atlas.c0)
    for i in np.flatnonzero(inside_a):
        result[i] = ALBREKHT_ID
    todo &= ~inside_a
    for ring in atlas.rings:
        idx = np.flatnonzero(todo)
        if idx.size == 0:
            break
        sec = ring.sector(X[idx])
        for j in np.unique(sec):
            if j < 0:
                continue
            sel = idx[sec == j]
            patch = ring.patches[j]
            ok = (np.linalg.norm(X[sel] - patch.point, axis=1) <= ring.guard[j]) & (patch.cost(X[sel]) <= ring.level)
            for i in sel[ok]:
                result[i] = patch.patch_id
            todo[sel[ok]] = False
    return result


def locate(atlas: Atlas, x) -> Hashable | None:
    return locate_many(atlas, np.asarray(x, dtype=float)[None, :])[0]


def containment_matrix(atlas: Atlas, X) -> tuple[np.ndarray, list[Hashable]]:
    """Exhaustive containment test of every point against every patch.

    Each patch's own region is evaluated independently: its wedge, guard
    radius and level test, minus everything claimed by inner rings.  Returns
    a boolean matrix (points x patches) and the patch ids of its columns.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    ids: list[Hashable] = [ALBREKHT_ID]
    cols = []
    alb = (np.linalg.norm(X, axis=1) <= atlas.albrekht_guard) & (atlas.albrekht.cost(X) <= atlas.c0)
    cols.append(alb)
    claimed = alb.copy()
    for ring in atlas.rings:
        mask = ring.sector_mask(X)
        raw = np.zeros_like(mask)
        for j, p in enumerate(ring.patches):
            raw[:, j] = mask[:, j] & (np.linalg.norm(X - p.point, axis=1) <= ring.guard[j]) & (p.cost(X) <= ring.level)
            ids.append(p.patch_id)
        cols.extend((raw & ~claimed[:, None]).T)
        claimed |= raw.any(axis=1)
    return np.array(cols).T, ids


def containing_patches(atlas: Atlas, x) -> list[Hashable]:
    """Every patch whose region contains ``x`` (at most one for a valid atlas)."""
    M, ids = containment_matrix(atlas, np.asarray(x, dtype=float)[None, :])
    return [ids[i] for i in np.flatnonzero(M[0])]


def evaluate_many(atlas: Atlas, X) -> tuple[np.ndarray, np.ndarray, list]:
    """Cost and control from the owning patch; NaN outside the atlas."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    ids = locate_many(atlas, X)
    cost = np.full(len(X), np.nan)
    control = np.full(len(X), np.nan)
    groups: dict = {}
    for i, pid in enumerate(ids):
        if pid is not None:
            groups.setdefault(tuple(pid), []).append(i)
    for pid, rows in groups.items():
        owner = atlas.patch(pid)
        cost[rows] = owner.cost(X[rows])
        control[rows] = owner.control(X[rows])
    return cost, control, ids


def evaluate(atlas: Atlas, x):
    cost, control, ids = evaluate_many(atlas, np.asarray(x, dtype=float)[None, :])
    if ids[0] is None:
        return None
    return float(cost[0]), float(control[0])


def trace_albrekht_boundary(cost: CoeffSet, c0: float, step: float) -> Boundary:
    f = lambda t: cost(np.array([t, 0.0])) - c0
    t = 1e-3
    while f(t) < 0.0:
        t *= 1.5
        if t > 1e3:
            raise GeometryError("Al'brekht level set is unbounded along the x1 axis")
    seed = np.array([scipy.optimize.brentq(f, t / 1.5 if t > 1e-3 else 0.0, t, xtol=1e-14), 0.0])
    pts = trace_level_curve(cost, c0, seed, step=step)
    return Boundary([Piece(ALBREKHT_ID, cost, c0, pts)])


# atlas construction ----------------------------------------------------------------------


def ring_counts(rule: str, rings: int, first: int = 8) -> list[int | None]:
    """Point count per ring: ``None`` means the arclength rule."""
    if rings < 0:
        raise ValueError("ring count must be non-negative")
    if rule == "doubling":
        return [first * 2**k for k in range(rings)]
    if rule == "arclength":
        return [None] * rings
    raise ValueError(f"unknown ring growth rule {rule!r}")


def _next_ring_ok(ring: Ring, h: float, spacing: float, count: int | None) -> bool:
    """Would the next ring's points stay within ``h`` of their parents?"""
    points, piece_idx = place_patch_points(ring.outer, spacing, count=count)
    owners = {p.patch_id: p.point for p in ring.patches}
    for x, pi in zip(points, piece_idx):
        if np.linalg.norm(x - owners[ring.outer.pieces[pi].owner]) > h:
            return False
    # spacing along the ring must also respect h
    return ring.outer.length / len(points) <= spacing


def build_atlas(
    problem: Problem,
    d: int,
    h: float,
    rings: int,
    *,
    albrekht_radius: float | None = None,
    c0: float | None = None,
    growth: str = "arclength",
    first_count: int = 8,
    counts: Sequence[int] | None = None,
    spacing: float | None = None,
    rho0: float = 4.0,
    rho_min: float = 1.001,
    max_level: float | None = None,
    levels: Sequence[float] | None = None,
    trace_step: float | None = None,
    progress: Callable[[str], None] | None = None,
) -> Atlas:
    """Al'brekht patch plus ``rings`` rings of patches.

    The outer level of each ring is ``rho * c_prev``; ``rho`` starts at
    ``rho0`` and ``rho - 1`` is halved until the outer boundary stays in the
    validity region and the next ring's points lie within ``h`` of their
    parents.  Explicit ``levels`` bypass the search.  ``spacing`` is the
    target arclength between neighbours in a ring (default ``h``); explicit
    ``counts`` override the growth rule.
    """
    from .albrekht import albrekht_expand, albrekht_level

    if not h > 0:
        raise ValueError("h must be positive")
    if rings < 0:
        raise ValueError("ring count must be non-negative")
    step = h / 8.0 if trace_step is None else trace_step
    sol = albrekht_expand(problem, d + 1)
    if c0 is None:
        radius = 0.5 * h if albrekht_radius is None else albrekht_radius
        c0 = albrekht_level(sol.cost, radius)
    boundary = trace_albrekht_boundary(sol.cost, c0, step)
    if np.max(np.linalg.norm(boundary.polygon(), axis=1)) > h:
        raise GeometryError("Al'brekht boundary is farther than h from the origin")
    params = AtlasParams(d, h, step, 4.0 * h)
    atlas = Atlas(problem, sol, c0, boundary, params)
    spacing = h if spacing is None else spacing
    if not 0 < spacing <= h:
        raise ValueError("spacing must lie in (0, h]")
    if counts is None:
        counts = ring_counts(growth, rings + 1, first_count)
    else:
        counts = list(counts) + [None]
        if len(counts) < rings + 1:
            raise ValueError(f"{len(counts) - 1} ring counts given for {rings} rings")
    for k in range(rings):
        inner, c_prev, sources = atlas.frontier()
        base = make_ring(k + 1, inner, c_prev, sources, problem, d, h, counts[k], spacing=spacing)
        candidates: list[float]
        if levels is not None:
            candidates = [float(levels[k])]
        else:
            candidates = []
            rho = rho0
            while rho >= rho_min:
                c = rho * c_prev
                if max_level is not None:
                    c = min(c, max_level)
                if c > c_prev and (not candidates or c < candidates[-1]):
                    candidates.append(c)
                rho = 1.0 + 0.5 * (rho - 1.0)
        chosen = None
        for c in candidates:
            ring = Ring(base.index, c_prev, c, base.patches, base.anchors, base.directions, base.anchor_owner, inner)
            try:
                build_outer(ring, c, step, params.reach, problem)
            except PatchyError:
                continue
            if levels is not None or _next_ring_ok(ring, h, spacing, counts[k + 1]):
                chosen = ring
                break
        if chosen is None:
            raise GeometryError(f"no admissible outer level for ring {k + 1} (previous level {c_prev:.6g})")
        atlas.rings.append(chosen)
        if progress is not None:
            progress(f"ring {k + 1}: {chosen.size} patches, level {chosen.level:.6g}")
    atlas.meta.update(growth=growth, first_count=first_count, rho0=rho0, spacing=spacing)
    return atlas


# serialization -------------------------------------------------------------------------------
#
# <dir>/manifest.json   problem name, config echo, levels, per-ring geometry
# <dir>/ring_<k>.csv    coefficient rows; ring 0 holds the Al'brekht patch
#
# ring CSV columns: patch,parent,x1,x2,c_in,c_out,poly,order,e1,e2,value
# (``poly`` is ``cost`` or ``control``; e1, e2 are the multi-index exponents
# and ``value`` the raw partial derivative at the patch point)

RING_COLUMNS = ["patch", "parent", "x1", "x2", "c_in", "c_out", "poly", "order", "e1", "e2", "value"]
MANIFEST_VERSION = 1


def format_id(pid: Hashable) -> str:
    return f"{pid[0]}:{pid[1]}"


def parse_id(text: str) -> tuple[int, int]:
    k, j = text.split(":")
    return int(k), int(j)


def _coef_rows(pid, parent, point, c_in, c_out, kind: str, poly: CoeffSet):
    for order, block in enumerate(poly.blocks):
        from .jet import enumerate_indices

        for alpha, v in zip(enumerate_indices(poly.dim, order), block):
            yield [format_id(pid), "" if parent is None else format_id(parent), repr(float(point[0])),
                   repr(float(point[1])), repr(float(c_in)), repr(float(c_out)), kind, order, *alpha, repr(float(v))]


def save_atlas(atlas: Atlas, outdir, config: dict | None = None) -> str:
    """Write the manifest and one CSV per ring; returns the manifest path."""
    import csv
    import json
    import os

    os.makedirs(outdir, exist_ok=True)
    files = []

    def write_ring(name, rows):
        path = os.path.join(outdir, name)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(RING_COLUMNS)
            w.writerows(rows)
        files.append(name)

    zero = np.zeros(2)
    rows = list(_coef_rows(ALBREKHT_ID, None, zero, 0.0, atlas.c0, "cost", atlas.albrekht.cost))
    rows += list(_coef_rows(ALBREKHT_ID, None, zero, 0.0, atlas.c0, "control", atlas.albrekht.control))
    write_ring("ring_0.csv", rows)
    rings_meta = []
    for ring in atlas.rings:
        rows = []
        for p in ring.patches:
            rows += _coef_rows(p.patch_id, p.parent, p.point, ring.inner_level, ring.level, "cost", p.cost)
            rows += _coef_rows(p.patch_id, p.parent, p.point, ring.inner_level, ring.level, "control", p.control)
        write_ring(f"ring_{ring.index}.csv", rows)
        rings_meta.append({
            "index": ring.index,
            "inner_level": ring.inner_level,
            "level": ring.level,
            "anchors": ring.anchors.tolist(),
            "directions": ring.directions.tolist(),
            "anchor_owner": [format_id(o) for o in ring.anchor_owner],
            "cut_ends": ring.cut_ends.tolist(),
            "windows": ring.windows.tolist(),
            "guard": ring.guard.tolist(),
            "patch_direction": [p.direction.tolist() for p in ring.patches],
            "patch_z": [p.z for p in ring.patches],
            "outer": [p.points.tolist() for p in ring.outer.pieces],
        })
    manifest = {
        "version": MANIFEST_VERSION,
        "problem": getattr(atlas.problem, "name", None),
        "d": atlas.params.d,
        "h": atlas.params.h,
        "trace_step": atlas.params.trace_step,
        "reach": atlas.params.reach,
        "c0": atlas.c0,
        "riccati": atlas.albrekht.riccati.tolist(),
        "albrekht_boundary": atlas.albrekht_boundary.pieces[0].points.tolist(),
        "levels": [r.level for r in atlas.rings],
        "patch_count": atlas.patch_count,
        "meta": atlas.meta,
        "config": config or {},
        "files": files,
        "rings": rings_meta,
    }
    path = os.path.join(outdir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=1)
    return path


def _read_polys(path: str) -> dict:
    import csv
    from .jet import enumerate_indices

    raw: dict = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = row["patch"]
            ent = raw.setdefault(key, {"parent": row["parent"] or None,
                                       "point": np.array([float(row["x1"]), float(row["x2"])]),
                                       "cost": {}, "control": {}})
            ent[row["poly"]][(int(row["e1"]), int(row["e2"]))] = float(row["value"])
    out = {}
    for key, ent in raw.items():
        polys = {}
        for kind in ("cost", "control"):
            vals = ent[kind]
            degree = max(sum(a) for a in vals)
            blocks = tuple(np.array([vals[a] for a in enumerate_indices(2, k)]) for k in range(degree + 1))
            polys[kind] = CoeffSet(blocks, ent["point"])
        out[key] = (ent, polys)
    return out


def load_atlas(manifest_path, problem: Problem | None = None) -> Atlas:
    """Rebuild an atlas written by :func:`save_atlas` (enough to locate and evaluate)."""
    import json
    import os

    from .problem import get_problem
    from .tensorpoly import householder_basis

    with open(manifest_path) as fh:
        man = json.load(fh)
    if man.get("version") != MANIFEST_VERSION:
        raise ValueError(f"unsupported manifest version {man.get('version')}")
    base = os.path.dirname(os.path.abspath(manifest_path))
    if problem is None and man.get("problem"):
        try:
            problem = get_problem(man["problem"])
        except KeyError:
            problem = None
    ring0 = _read_polys(os.path.join(base, "ring_0.csv"))
    _, polys = ring0[format_id(ALBREKHT_ID)]
    sol = AlbrekhtSolution(polys["cost"], polys["control"], np.array(man["riccati"]))
    boundary = Boundary([Piece(ALBREKHT_ID, sol.cost, man["c0"], np.array(man["albrekht_boundary"]))])
    atlas = Atlas(problem, sol, man["c0"], boundary,
                  AtlasParams(man["d"], man["h"], man["trace_step"], man["reach"]), meta=man.get("meta", {}))
    inner = boundary
    for rm in man["rings"]:
        k = rm["index"]
        data = _read_polys(os.path.join(base, f"ring_{k}.csv"))
        patches = []
        for j in range(len(data)):
            ent, polys = data[format_id((k, j))]
            direction = np.array(rm["patch_direction"][j])
            patches.append(PatchSolution(ent["point"], polys["cost"], polys["control"], direction,
                                         rm["patch_z"][j], householder_basis(direction),
                                         parse_id(ent["parent"]), (k, j)))
        ring = Ring(k, rm["inner_level"], rm["level"], patches, np.array(rm["anchors"]),
                    np.array(rm["directions"]), [parse_id(o) for o in rm["anchor_owner"]], inner)
        ring.cut_ends = np.array(rm["cut_ends"])
        ring.windows = np.array(rm["windows"])
        ring.guard = np.array(rm["guard"])
        ring.outer = Boundary([Piece(p.patch_id, p.cost, rm["level"], np.array(pts))
                               for p, pts in zip(patches, rm["outer"])])
        atlas.rings.append(ring)
        inner = ring.outer
    return atlas
