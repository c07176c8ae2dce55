"""Optimal control problems with dynamics ``f(x) + g(x) u`` and running cost ``q(x) + r(x) u^2 / 2``.

A problem is written once as Taylor-jet arithmetic on the state coordinates;
:meth:`Problem.jet_eval` then yields exact partial derivatives of
``f``, ``g``, ``q`` and ``r`` at any admissible point and to any order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg

from .errors import OutOfRegion, RestPointError
from .jet import Jet, dot
from .tensorpoly import CoeffSet, sym_to_kron

__all__ = [
    "Problem",
    "ProblemJets",
    "LinearData",
    "LQR2D",
    "HuntKrenerTestProblem",
    "linearize",
    "hjb_residual",
    "hjb_jets",
    "TestProblemOracle",
    "QuadraticOracle",
    "oracle_for",
    "register_problem",
    "get_problem",
    "BUILTINS",
]


@dataclass(frozen=True)
class ProblemJets:
    """Taylor jets of the problem data about one point."""

    point: np.ndarray
    f: list[Jet]
    g: list[Jet]
    q: Jet
    r: Jet

    @property
    def order(self) -> int:
        return self.q.degree

    def coeffsets(self) -> dict[str, list[CoeffSet] | CoeffSet]:
        """The same data as raw partial-derivative blocks."""
        c = self.point
        return {
            "f": [CoeffSet.from_jet(j, c) for j in self.f],
            "g": [CoeffSet.from_jet(j, c) for j in self.g],
            "q": CoeffSet.from_jet(self.q, c),
            "r": CoeffSet.from_jet(self.r, c),
        }


class Problem:
    """Base class: subclasses implement :meth:`expressions` on coordinate jets."""

    name = "custom"
    dim = 2

    def expressions(self, x: list[Jet]):
        """Return ``(f, g, q, r)`` built from the coordinate jets ``x``.

        ``f`` and ``g`` are length-``dim`` sequences; entries and ``q``, ``r``
        may be jets or plain numbers.
        """
        raise NotImplementedError

    def in_region(self, x) -> bool:
        return bool(np.all(np.isfinite(x)))

    def check_point(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.size != self.dim:
            raise ValueError(f"{self.name}: point has {x.size} coordinates, expected {self.dim}")
        if not self.in_region(x):
            raise OutOfRegion(f"{self.name}: point {x.tolist()} is outside the validity region")
        return x

    def jet_eval(self, x, m: int) -> ProblemJets:
        x = self.check_point(x)
        n = self.dim
        coords = [Jet.variable(n, m, i, x[i]) for i in range(n)]
        f, g, q, r = self.expressions(coords)

        def lift(v) -> Jet:
            return v if isinstance(v, Jet) else Jet.constant(n, m, float(v))

        jets = ProblemJets(x, [lift(v) for v in f], [lift(v) for v in g], lift(q), lift(r))
        if not jets.r.value > 0.0:
            raise OutOfRegion(f"{self.name}: r(x) = {jets.r.value} is not positive at {x.tolist()}")
        if jets.q.value < 0.0:
            raise OutOfRegion(f"{self.name}: q(x) = {jets.q.value} is negative at {x.tolist()}")
        return jets

    # pointwise helpers
    def f(self, x) -> np.ndarray:
        return np.array([j.value for j in self.jet_eval(x, 0).f])

    def g(self, x) -> np.ndarray:
        return np.array([j.value for j in self.jet_eval(x, 0).g])

    def q(self, x) -> float:
        return self.jet_eval(x, 0).q.value

    def r(self, x) -> float:
        return self.jet_eval(x, 0).r.value

    def __repr__(self) -> str:
        return f"{type(self).__name__}(name={self.name!r}, dim={self.dim})"


@dataclass(frozen=True)
class LinearData:
    F: np.ndarray
    G: np.ndarray
    Q: np.ndarray
    R: np.ndarray


class LQR2D(Problem):
    """Double integrator ``x1' = x2, x2' = u`` with ``l = (|x|^2 + u^2) / 2``."""

    name = "lqr2d"
    dim = 2
    F = np.array([[0.0, 1.0], [0.0, 0.0]])
    G = np.array([[0.0], [1.0]])
    Q = np.eye(2)
    R = np.array([[1.0]])

    def expressions(self, x):
        f = [sum(self.F[i, j] * x[j] for j in range(2)) for i in range(2)]
        g = list(self.G[:, 0])
        q = 0.5 * (x[0] * x[0] * self.Q[0, 0] + 2.0 * self.Q[0, 1] * x[0] * x[1] + self.Q[1, 1] * x[1] * x[1])
        return f, g, q, float(self.R[0, 0])


class HuntKrenerTestProblem(Problem):
    """Nonlinear problem that becomes the double-integrator LQR under
    ``y = (sin x1, x2 - x1^3 / 3)``.

    The data blow up at ``x1 = +-pi/2``; jets are only served for
    ``|x1| <= x1_limit``.
    """

    name = "hunt-krener-testproblem"
    dim = 2

    def __init__(self, x1_limit: float = 1.5):
        if not 0.0 < x1_limit < math.pi / 2:
            raise ValueError("x1_limit must lie in (0, pi/2)")
        self.x1_limit = x1_limit

    def in_region(self, x) -> bool:
        return bool(np.all(np.isfinite(x)) and abs(x[0]) <= self.x1_limit)

    def expressions(self, x):
        x1, x2 = x
        y2 = x2 - x1 * x1 * x1 * (1.0 / 3.0)
        sec = x1.sec()
        f1 = y2 * sec
        f2 = x1 * x1 * f1
        s = x1.sin()
        q = 0.5 * (s * s + y2 * y2)
        return [f1, f2], [0.0, 1.0], q, 1.0


BUILTINS: dict[str, Callable[[], Problem]] = {
    "lqr2d": LQR2D,
    "hunt-krener-testproblem": HuntKrenerTestProblem,
}


def register_problem(name: str, factory: Callable[[], Problem]) -> None:
    BUILTINS[name] = factory


def get_problem(name: str, **kwargs) -> Problem:
    try:
        factory = BUILTINS[name]
    except KeyError:
        raise KeyError(f"unknown problem {name!r}; builtins: {', '.join(sorted(BUILTINS))}") from None
    return factory(**kwargs)


def _hessian(block, n: int) -> np.ndarray:
    return sym_to_kron(block, n).reshape(n, n)


def linearize(problem: Problem, tol: float = 1e-10) -> LinearData:
    """Linear-quadratic part ``(F, G, Q, R)`` of the problem at the origin."""
    n = problem.dim
    jets = problem.jet_eval(np.zeros(n), 2)
    f0 = np.array([j.value for j in jets.f])
    if np.max(np.abs(f0)) > tol:
        raise RestPointError(f"f(0) = {f0.tolist()} is not zero")
    if abs(jets.q.value) > tol or np.max(np.abs(jets.q.partials(1))) > tol:
        raise RestPointError("q or its gradient does not vanish at the origin")
    F = np.array([j.partials(1) for j in jets.f])
    G = np.array([[j.value] for j in jets.g])
    Q = _hessian(jets.q.partials(2), n)
    R = np.array([[jets.r.value]])
    return LinearData(F, G, Q, R)


def hjb_residual(problem: Problem, x, grad) -> float:
    """Residual of ``grad.(f + g k) + q + r k^2 / 2`` with ``k = -(grad.g)/r``."""
    jets = problem.jet_eval(x, 0)
    f = np.array([j.value for j in jets.f])
    g = np.array([j.value for j in jets.g])
    q, r = jets.q.value, jets.r.value
    grad = np.asarray(grad, dtype=float)
    kappa = -(grad @ g) / r
    return float(grad @ (f + g * kappa) + q + 0.5 * r * kappa**2)


class TestProblemOracle:
    """Exact optimal cost of :class:`HuntKrenerTestProblem`.

    ``pi(x) = T(x)^T P T(x) / 2`` with ``T(x) = (sin x1, x2 - x1^3/3)`` and
    ``P`` the stabilising Riccati solution of the double integrator.
    """

    __test__ = False  # not a pytest class

    def __init__(self):
        lin = LQR2D()
        self.P = scipy.linalg.solve_continuous_are(lin.F, lin.G, lin.Q, lin.R)

    @staticmethod
    def _check(x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if np.any(np.abs(x[..., 0]) >= math.pi / 2):
            raise OutOfRegion("oracle is defined only for |x1| < pi/2")
        return x

    def transform(self, x) -> np.ndarray:
        x = self._check(x)
        x1, x2 = x[..., 0], x[..., 1]
        return np.stack([np.sin(x1), x2 - x1**3 / 3.0], axis=-1)

    def value(self, x):
        y = self.transform(x)
        return 0.5 * np.einsum("...i,ij,...j->...", y, self.P, y)

    def gradient(self, x) -> np.ndarray:
        x = self._check(x)
        y = self.transform(x)
        x1 = x[..., 0]
        Py = y @ self.P
        # dT/dx = [[cos x1, 0], [-x1^2, 1]]
        return np.stack([Py[..., 0] * np.cos(x1) - Py[..., 1] * x1**2, Py[..., 1]], axis=-1)

    def __call__(self, x):
        return self.value(x), self.gradient(x)

    def control(self, x, problem: Problem | None = None):
        grad = self.gradient(x)
        return -grad[..., 1]  # g = (0, 1), r = 1

    def jet(self, x, degree: int) -> Jet:
        x = self._check(np.asarray(x, dtype=float).reshape(-1))
        x1 = Jet.variable(2, degree, 0, x[0])
        x2 = Jet.variable(2, degree, 1, x[1])
        y = [x1.sin(), x2 - x1 * x1 * x1 * (1.0 / 3.0)]
        Py = [self.P[i, 0] * y[0] + self.P[i, 1] * y[1] for i in range(2)]
        return 0.5 * dot(y, Py)

    def coeffs(self, x, degree: int) -> CoeffSet:
        """Exact partials of the optimal cost at ``x`` through ``degree``."""
        return CoeffSet.from_jet(self.jet(x, degree), np.asarray(x, dtype=float))


def hjb_jets(cost: Jet, control: Jet, data: ProblemJets) -> tuple[Jet, Jet]:
    """Taylor expansions of both HJB equations for a candidate cost and control.

    Returns ``(grad.(f + g k) + q + r k^2 / 2,  grad.g + r k)``.
    """
    grad = cost.gradient()
    gk = [gi * control for gi in data.g]
    drift = [fi + gki for fi, gki in zip(data.f, gk)]
    first = dot(grad, drift) + data.q + 0.5 * data.r * control * control
    second = dot(grad, data.g) + data.r * control
    return first, second


class QuadraticOracle:
    """Exact cost ``x^T P x / 2`` of a linear-quadratic problem."""

    __test__ = False

    def __init__(self, P):
        self.P = np.asarray(P, dtype=float)

    @classmethod
    def for_problem(cls, problem: Problem) -> "QuadraticOracle":
        lin = linearize(problem)
        return cls(scipy.linalg.solve_continuous_are(lin.F, lin.G, lin.Q, lin.R))

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return 0.5 * np.einsum("...i,ij,...j->...", x, self.P, x)

    def gradient(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.P

    def __call__(self, x):
        return self.value(x), self.gradient(x)

    def coeffs(self, x, degree: int) -> CoeffSet:
        x = np.asarray(x, dtype=float).reshape(-1)
        n = x.size
        coords = [Jet.variable(n, degree, i, x[i]) for i in range(n)]
        Px = [sum((self.P[i, j] * coords[j] for j in range(n)), Jet(coords[0].table)) for i in range(n)]
        return CoeffSet.from_jet(0.5 * dot(coords, Px), x)


def oracle_for(problem: Problem):
    """Exact-cost oracle for a builtin problem (``KeyError`` if none is known)."""
    if isinstance(problem, HuntKrenerTestProblem):
        return TestProblemOracle()
    if isinstance(problem, LQR2D):
        return QuadraticOracle.for_problem(problem)
    raise KeyError(f"no exact oracle for problem {problem.name!r}")
