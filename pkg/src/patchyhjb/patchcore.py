"""One step of the patchy method: new cost/control polynomials at a new patch point.

Given the cost polynomial of a previous patch and a new point ``x``:

* the value is inherited from the previous polynomial;
* the gradient keeps the previous gradient direction and its length solves
  the scalar HJB quadratic;
* in the frame ``x + V xi`` whose first axis is the optimal direction, every
  partial whose index tuple contains the first axis is fixed by the HJB
  equations, and the rest are inherited from the previous polynomial;
* control partials come from the differentiated control equation.

Partials in the rotated frame are mapped back to state coordinates at the end.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Hashable

import numpy as np

from .errors import LyapunovViolation, PatchyError, StageError
from .jet import Jet, enumerate_indices, index_table
from .problem import Problem, ProblemJets, hjb_jets
from .tensorpoly import CoeffSet, affine_change, householder_basis, recover_partials

G_ZERO_RTOL = 1e-12


@dataclass(frozen=True)
class ZInputs:
    f_n: float
    g_n: float
    q: float
    r: float
    f_norm: float = 0.0
    g_norm: float = 0.0


def scalar_hjb_residual(z: float, inp: ZInputs) -> float:
    """Relative residual of ``-g_n^2 z^2 / (2r) + f_n z + q = 0``."""
    terms = (-inp.g_n**2 * z**2 / (2.0 * inp.r), inp.f_n * z, inp.q)
    scale = max(abs(t) for t in terms)
    return abs(sum(terms)) / scale if scale > 0 else 0.0


def solve_scalar_hjb(inp: ZInputs) -> float:
    """The strictly positive root ``z+`` of the scalar HJB quadratic.

    ``g_n`` counts as zero when ``|g_n| <= 1e-12 (1 + |g|)``; the equation is
    then linear and needs ``f_n < 0``.
    """
    f, g, q, r = inp.f_n, inp.g_n, inp.q, inp.r
    if not r > 0.0:
        raise ValueError("r must be positive")
    if q < 0.0:
        raise ValueError("q must be non-negative")
    g_zero = abs(g) <= G_ZERO_RTOL * (1.0 + inp.g_norm)
    f_zero = abs(f) <= G_ZERO_RTOL * (1.0 + inp.f_norm)
    if g_zero:
        if f_zero:
            raise LyapunovViolation("both f_n and g_n vanish")
        if f > 0.0:
            raise LyapunovViolation(f"g_n = 0 and f_n = {f} >= 0: no descent direction")
        z = -q / f
    else:
        s = math.sqrt(f * f + 2.0 * (q / r) * g * g)
        # pick the cancellation-free form of the positive root
        z = 2.0 * q / (s - f) if f <= 0.0 else (f + s) * r / (g * g)
    if not z > 0.0:
        raise LyapunovViolation(f"no strictly positive root (f_n={f}, g_n={g}, q={q}, r={r})")
    return z


@dataclass(frozen=True)
class FirstOrder:
    value: float
    gradient: np.ndarray
    control: float
    direction: np.ndarray
    z: float


def new_first_order(source: CoeffSet, x, problem: Problem, data: ProblemJets | None = None) -> FirstOrder:
    """Value, gradient, control and optimal direction at the new point ``x``."""
    x = np.asarray(x, dtype=float)
    data = problem.jet_eval(x, 0) if data is None else data
    value = source(x)
    src_grad = source.grad(x)
    norm = np.linalg.norm(src_grad)
    if not norm > 0.0:
        raise LyapunovViolation(f"source gradient vanishes at {x.tolist()}")
    nvec = src_grad / norm
    f = np.array([j.value for j in data.f])
    g = np.array([j.value for j in data.g])
    q, r = data.q.value, data.r.value
    z = solve_scalar_hjb(ZInputs(nvec @ f, nvec @ g, q, r, np.linalg.norm(f), np.linalg.norm(g)))
    grad = z * nvec
    control = -(grad @ g) / r
    direction = f + g * control
    if not np.linalg.norm(direction) > 0.0:
        raise LyapunovViolation(f"optimal direction vanishes at {x.tolist()}")
    return FirstOrder(value, grad, control, direction, z)


@dataclass
class PatchContext:
    """Working state in the rotated frame ``x = point + basis @ xi``.

    ``cost`` is complete through ``cost_order`` and ``control`` through
    ``control_order``; higher blocks are zero.
    """

    point: np.ndarray
    basis: np.ndarray
    speed: float
    data: ProblemJets
    cost: Jet
    control: Jet
    cost_order: int = 1
    control_order: int = 0

    @property
    def degree(self) -> int:
        return self.cost.degree


def rotate_data(data: ProblemJets, V: np.ndarray) -> ProblemJets:
    """Problem jets in rotated coordinates: ``V^T f(x + V xi)`` and so on."""
    x = data.point
    n = x.size
    zero = np.zeros(n)

    def rot(j: Jet) -> Jet:
        return affine_change(CoeffSet.from_jet(j, zero), V, zero).to_jet(j.degree)

    f = [rot(j) for j in data.f]
    g = [rot(j) for j in data.g]
    fh = [sum((V[i, a] * f[i] for i in range(n)), Jet(f[0].table)) for a in range(n)]
    gh = [sum((V[i, a] * g[i] for i in range(n)), Jet(g[0].table)) for a in range(n)]
    return ProblemJets(zero, fh, gh, rot(data.q), rot(data.r))


def _zero_from(jet: Jet, k: int) -> Jet:
    out = jet.copy()
    if k <= jet.degree:
        out.coef[jet.table.offsets[k] :] = 0.0
    return out


def characteristic_cost_partials(k: int, ctx: PatchContext) -> dict[tuple[int, ...], float]:
    """Order-``k`` cost partials whose index tuple contains the first axis.

    The order ``k - 1`` Taylor coefficients of the cost equation are linear in
    these unknowns with coefficient ``|x'|`` (the drift is ``|x'| e1`` at the
    patch point); control partials of order ``k - 1`` drop out because the
    control equation holds at the point.
    """
    if k < 2 or k > ctx.degree:
        raise ValueError(f"characteristic order must be in 2..{ctx.degree}")
    if ctx.cost_order < k - 1 or ctx.control_order < k - 2:
        raise PatchyError(f"order-{k} characteristic partials need lower-order cost and control data")
    if not ctx.speed > 0.0:
        raise LyapunovViolation("optimal direction has zero length")
    cost = _zero_from(ctx.cost, k)
    control = _zero_from(ctx.control, k - 1)
    first, _ = hjb_jets(cost, control, ctx.data)
    res = first.taylor_block(k - 1)
    out = {}
    for beta, rb in zip(enumerate_indices(ctx.basis.shape[0], k - 1), res):
        alpha = (beta[0] + 1, *beta[1:])
        taylor = -rb / (ctx.speed * alpha[0])
        out[alpha] = taylor * math.prod(math.factorial(a) for a in alpha)
    return out


def control_partials(k: int, ctx: PatchContext) -> np.ndarray:
    """Order-``k`` control partials in the rotated frame (graded-lex block)."""
    if k < 1 or k > ctx.degree - 1:
        raise ValueError(f"control order must be in 1..{ctx.degree - 1}")
    if ctx.cost_order < k + 1 or ctx.control_order < k - 1:
        raise PatchyError(f"order-{k} control partials need cost partials through order {k + 1}")
    r0 = ctx.data.r.value
    if not r0 > 0.0:
        raise PatchyError("r must be positive at the patch point")
    control = _zero_from(ctx.control, k)
    _, second = hjb_jets(ctx.cost, control, ctx.data)
    sl = ctx.cost.table.block(k)
    return -second.coef[sl] / r0 * ctx.cost.table.factorial[sl]


def inherit_noncharacteristic(source: CoeffSet, V, x, k: int, rotated: CoeffSet | None = None
                              ) -> dict[tuple[int, ...], float]:
    """Order-``k`` partials of ``xi -> source(x + V xi)`` at 0 whose indices avoid the first axis."""
    if rotated is None:
        rotated = affine_change(source, V, x)
    if k > rotated.degree:
        raise ValueError(f"source polynomial has degree {rotated.degree} < {k}")
    return {
        alpha: float(v)
        for alpha, v in zip(enumerate_indices(rotated.dim, k), rotated.blocks[k])
        if alpha[0] == 0
    }


@dataclass(frozen=True, eq=False)
class PatchSolution:
    point: np.ndarray
    cost: CoeffSet
    control: CoeffSet
    direction: np.ndarray
    z: float
    basis: np.ndarray = field(repr=False)
    parent: Hashable = None
    patch_id: Hashable = None

    @property
    def speed(self) -> float:
        return float(np.linalg.norm(self.direction))


def _stage(name: str, patch_id):
    class _Guard:
        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            if exc is not None and not isinstance(exc, StageError) and isinstance(exc, Exception):
                raise StageError(name, patch_id, exc) from exc
            return False

    return _Guard()


def assemble_patch(
    source: CoeffSet,
    x,
    problem: Problem,
    d: int,
    *,
    h: float | None = None,
    basis: np.ndarray | None = None,
    parent: Hashable = None,
    patch_id: Hashable = None,
) -> PatchSolution:
    """Cost polynomial of degree ``d + 1`` and control of degree ``d`` centred at ``x``.

    ``source`` is the previous patch's cost polynomial.  ``basis`` overrides
    the Householder completion of the optimal direction (its first column
    must be the normalised direction).
    """
    D = d + 1
    if not 1 <= d <= 3:
        raise ValueError(f"control degree d must be in 1..3, got {d}")
    if source.degree < D:
        raise ValueError(f"source polynomial degree {source.degree} < {D}")
    x = np.asarray(x, dtype=float)
    n = x.size
    if h is not None and np.linalg.norm(x - source.center) > h * (1 + 1e-12):
        raise StageError("placement", patch_id,
                         f"distance {np.linalg.norm(x - source.center):.4g} exceeds h = {h}")

    with _stage("problem-data", patch_id):
        data = problem.jet_eval(x, D)
    with _stage("first-order", patch_id):
        first = new_first_order(source, x, problem, data)
        if not first.gradient @ first.direction < 0.0:
            raise LyapunovViolation("computed direction is not a strict descent direction")
    with _stage("basis", patch_id):
        speed = float(np.linalg.norm(first.direction))
        if basis is None:
            V = householder_basis(first.direction)
        else:
            V = np.asarray(basis, dtype=float)
            if (np.max(np.abs(V.T @ V - np.eye(n))) > 1e-12
                    or np.max(np.abs(V[:, 0] - first.direction / speed)) > 1e-12):
                raise ValueError("basis must be orthogonal with the optimal direction first")
        rotated = affine_change(source, V, x)
        data_hat = rotate_data(data, V)

    table = index_table(n, D)
    cost = Jet(table)
    cost.coef[0] = first.value
    cost.coef[table.block(1)] = V.T @ first.gradient
    control = Jet(table)
    control.coef[0] = first.control
    ctx = PatchContext(x, V, speed, data_hat, cost, control)

    for k in range(2, D + 1):
        with _stage(f"cost-order-{k}", patch_id):
            values = inherit_noncharacteristic(source, V, x, k, rotated=rotated)
            values.update(characteristic_cost_partials(k, ctx))
            sl = table.block(k)
            raw = np.array([values[a] for a in enumerate_indices(n, k)])
            cost.coef[sl] = raw / table.factorial[sl]
            ctx.cost_order = k
        with _stage(f"control-order-{k - 1}", patch_id):
            sl = table.block(k - 1)
            control.coef[sl] = control_partials(k - 1, ctx) / table.factorial[sl]
            ctx.control_order = k - 1

    with _stage("recovery", patch_id):
        cost_blocks = recover_partials([cost.partials(j) for j in range(D + 1)], V)
        control_blocks = recover_partials([control.partials(j) for j in range(D)], V)
    return PatchSolution(
        point=x,
        cost=CoeffSet(tuple(cost_blocks), x),
        control=CoeffSet(tuple(control_blocks), x),
        direction=first.direction,
        z=first.z,
        basis=V,
        parent=parent,
        patch_id=patch_id,
    )
