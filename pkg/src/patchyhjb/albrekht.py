"""Power-series solution of the HJB equations at the origin.

The quadratic cost and linear feedback come from the Riccati equation.  Each
further pair (cost degree ``k``, control degree ``k - 1``) solves a linear
system whose operator is the Lie derivative along the linear closed loop;
the control terms of degree ``k - 1`` drop out of the degree-``k`` cost
equation because the lower-order pair already satisfies the control equation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.optimize

from .errors import AlbrekhtError, RiccatiError
from .jet import Jet, dot, index_table
from .problem import LinearData, Problem, hjb_jets, linearize
from .tensorpoly import CoeffSet, kron_to_sym

MAX_COST_DEGREE = 4


@dataclass(frozen=True, eq=False)
class AlbrekhtSolution:
    cost: CoeffSet
    control: CoeffSet
    riccati: np.ndarray

    @property
    def degree(self) -> int:
        return self.cost.degree


def are_residual(lin: LinearData, P: np.ndarray) -> np.ndarray:
    F, G, Q, R = lin.F, lin.G, lin.Q, lin.R
    return F.T @ P + P @ F - P @ G @ np.linalg.solve(R, G.T) @ P + Q


def solve_are(lin: LinearData, newton_steps: int = 3) -> np.ndarray:
    """Stabilising solution of ``F'P + PF - PGR^-1G'P + Q = 0``.

    Ordered real Schur form of the Hamiltonian, followed by a few Newton
    (Kleinman) refinement steps.
    """
    F, G, Q, R = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (lin.F, lin.G, lin.Q, lin.R))
    n = F.shape[0]
    S = G @ np.linalg.solve(R, G.T)
    H = np.block([[F, -S], [-Q, -F.T]])
    T, U, sdim = scipy.linalg.schur(H, output="real", sort="lhp")
    eigs = np.linalg.eigvals(H)
    if sdim != n or np.min(np.abs(eigs.real)) < 1e-12 * max(1.0, np.max(np.abs(eigs))):
        raise RiccatiError("Hamiltonian has eigenvalues on the imaginary axis; "
                           "(F, G) not stabilisable or (Q, F) not detectable")
    U11, U21 = U[:n, :n], U[n:, :n]
    if np.linalg.cond(U11) > 1e12:
        raise RiccatiError("no stabilising Riccati solution (singular invariant subspace basis)")
    P = np.linalg.solve(U11.T, U21.T).T
    P = 0.5 * (P + P.T)

    lin = LinearData(F, G, Q, R)
    for _ in range(newton_steps):
        K = np.linalg.solve(R, G.T @ P)
        Acl = F - G @ K
        P_new = scipy.linalg.solve_continuous_lyapunov(Acl.T, -(Q + K.T @ R @ K))
        P_new = 0.5 * (P_new + P_new.T)
        if np.linalg.norm(are_residual(lin, P_new)) > np.linalg.norm(are_residual(lin, P)):
            break
        P = P_new

    K = np.linalg.solve(R, G.T @ P)
    if np.max(np.linalg.eigvals(F - G @ K).real) >= 0.0:
        raise RiccatiError("closed loop is not Hurwitz")
    if np.linalg.norm(are_residual(lin, P)) > 1e-8 * max(1.0, np.linalg.norm(P)):
        raise RiccatiError("Riccati residual did not converge")
    return P


def _set_block(jet: Jet, k: int, taylor: np.ndarray) -> None:
    jet.coef[jet.table.block(k)] = taylor


def albrekht_expand(problem: Problem, D: int) -> AlbrekhtSolution:
    """Degree-``D`` cost and degree-``D - 1`` control series at the origin."""
    if D not in (2, 3, 4):
        raise ValueError(f"cost degree must be 2, 3 or 4, got {D}")
    n = problem.dim
    lin = linearize(problem)
    if lin.G.shape[1] != 1:
        raise ValueError("only scalar controls are supported")
    P = solve_are(lin)
    K = np.linalg.solve(lin.R, lin.G.T @ P)[0]

    data = problem.jet_eval(np.zeros(n), D)
    table = index_table(n, D)
    cost = Jet(table)
    cost.coef[table.block(2)] = kron_to_sym(P.ravel(), n) / table.factorial[table.block(2)]
    control = Jet(table)
    control.coef[table.block(1)] = -K
    r0 = data.r.value

    # closed-loop linear drift (F - G K) x as jets
    Acl = lin.F - lin.G @ K[None, :]
    coords = [Jet.variable(n, D, i) for i in range(n)]
    drift = [sum((Acl[i, j] * coords[j] for j in range(n)), Jet(table)) for i in range(n)]

    for k in range(3, D + 1):
        sl = table.block(k)
        first, _ = hjb_jets(cost, control, data)
        rhs = -first.coef[sl]
        # Lie derivative of each degree-k monomial along the closed loop
        L = np.zeros((sl.stop - sl.start, sl.stop - sl.start))
        for col, idx in enumerate(range(sl.start, sl.stop)):
            mono = Jet(table)
            mono.coef[idx] = 1.0
            L[:, col] = dot(mono.gradient(), drift).coef[sl]
        try:
            if np.linalg.cond(L) > 1e13:
                raise np.linalg.LinAlgError("ill-conditioned")
            _set_block(cost, k, np.linalg.solve(L, rhs))
        except np.linalg.LinAlgError as exc:
            raise AlbrekhtError(f"singular cost system: {exc}", k) from None
        _, second = hjb_jets(cost, control, data)
        ctl = table.block(k - 1)
        _set_block(control, k - 1, -second.coef[ctl] / r0)

    return AlbrekhtSolution(
        cost=CoeffSet.from_jet(cost, np.zeros(n)),
        control=CoeffSet.from_jet(control.truncate(D - 1), np.zeros(n)),
        riccati=P,
    )


def residual_coefficients(problem: Problem, sol: AlbrekhtSolution) -> tuple[np.ndarray, np.ndarray]:
    """Taylor coefficients of both HJB residuals at the origin.

    The cost equation is checked through degree ``D`` and the control
    equation through ``D - 1``.
    """
    D = sol.degree
    n = problem.dim
    data = problem.jet_eval(np.zeros(n), D)
    cost = sol.cost.to_jet(D)
    control = sol.control.to_jet(D)
    first, second = hjb_jets(cost, control, data)
    table = index_table(n, D)
    return first.coef.copy(), second.coef[: table.offsets[D]].copy()


def albrekht_level(cost: CoeffSet, radius: float, samples: int = 720) -> float:
    """Largest ``c`` whose sublevel set ``{cost <= c}`` around 0 stays inside ``radius``.

    This is the minimum of the cost over the circle of that radius, which
    assumes the cost increases along rays inside the ball.
    """
    if cost.dim != 2:
        raise ValueError("albrekht_level is implemented for planar problems")
    theta = np.linspace(0.0, 2.0 * math.pi, samples, endpoint=False)
    ring = radius * np.stack([np.cos(theta), np.sin(theta)], axis=1)
    vals = cost(ring)
    i = int(np.argmin(vals))
    step = 2.0 * math.pi / samples
    res = scipy.optimize.minimize_scalar(
        lambda t: cost(radius * np.array([math.cos(t), math.sin(t)])),
        bounds=(theta[i] - step, theta[i] + step),
        method="bounded",
        options={"xatol": 1e-12},
    )
    return float(min(res.fun, vals[i]))
