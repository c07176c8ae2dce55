from __future__ import annotations

import math

import numpy as np
import pytest

from patchyhjb.errors import OutOfRegion, RestPointError
from patchyhjb.jet import Jet
from patchyhjb.problem import (
    LQR2D,
    HuntKrenerTestProblem,
    Problem,
    QuadraticOracle,
    TestProblemOracle,
    get_problem,
    hjb_residual,
    linearize,
    oracle_for,
    register_problem,
)

import frozen_values as fv
from oracles import fd_block


class Shifted(Problem):
    name = "shifted"

    def expressions(self, x):
        return [x[1] + 0.1, -x[0]], [0.0, 1.0], 0.5 * (x[0] * x[0] + x[1] * x[1]), 1.0


def test_lqr_jets_are_linear_quadratic(lqr, rng):
    jets = lqr.jet_eval(rng.normal(size=2), 2)
    for fj in jets.f:
        assert np.all(fj.partials(2) == 0.0)
    np.testing.assert_allclose(jets.q.partials(2), [1.0, 0.0, 1.0])
    assert jets.r.value == 1.0 and np.all(jets.r.partials(1) == 0.0)


def test_test_problem_at_rest_point(test_problem):
    jets = test_problem.jet_eval(np.zeros(2), 0)
    assert [j.value for j in jets.f] == [0.0, 0.0]
    assert [j.value for j in jets.g] == [0.0, 1.0]
    assert jets.q.value == 0.0 and jets.r.value == 1.0


def test_test_problem_jets_match_symbolic_partials(test_problem):
    jets = test_problem.jet_eval(np.array([0.7, -0.4]), 3)
    for k in range(4):
        np.testing.assert_allclose(jets.f[0].partials(k), fv.F1_AT_POINT[k], rtol=1e-13, atol=1e-13)
        np.testing.assert_allclose(jets.f[1].partials(k), fv.F2_AT_POINT[k], rtol=1e-13, atol=1e-13)
        np.testing.assert_allclose(jets.q.partials(k), fv.Q_AT_POINT[k], rtol=1e-13, atol=1e-13)


def _closed_forms(x):
    x1, x2 = x
    y2 = x2 - x1**3 / 3
    f1 = y2 / math.cos(x1)
    return f1, x1**2 * f1, 0.5 * (math.sin(x1) ** 2 + y2**2)


def test_test_problem_jets_match_finite_differences(test_problem, rng):
    for x in np.column_stack([rng.uniform(-1.4, 1.4, 5), rng.uniform(-1, 1, 5)]):
        jets = test_problem.jet_eval(x, 3)
        for comp, jet in enumerate([jets.f[0], jets.f[1], jets.q]):
            fun = lambda p, c=comp: _closed_forms(p)[c]
            for k in (1, 2, 3):
                ref = fd_block(fun, x, k, h=4e-3, richardson=True)
                scale = max(1.0, np.abs(ref).max())
                np.testing.assert_allclose(jet.partials(k), ref, rtol=1e-6, atol=1e-6 * scale)


def test_validity_region(test_problem):
    with pytest.raises(OutOfRegion):
        test_problem.jet_eval([1.55, 0.0], 1)
    with pytest.raises(OutOfRegion):
        test_problem.jet_eval([-math.pi / 2, 0.0], 1)
    with pytest.raises(ValueError):
        HuntKrenerTestProblem(x1_limit=2.0)
    assert HuntKrenerTestProblem(x1_limit=1.0).in_region([0.9, 5.0])


def test_linearize_builtins(test_problem, lqr):
    lin = linearize(test_problem)
    np.testing.assert_allclose(lin.F, [[0.0, 1.0], [0.0, 0.0]], atol=1e-15)
    np.testing.assert_allclose(lin.G, [[0.0], [1.0]])
    np.testing.assert_allclose(lin.Q, np.eye(2), atol=1e-15)
    np.testing.assert_allclose(lin.R, [[1.0]])
    lq = linearize(lqr)
    for a, b in ((lq.F, lqr.F), (lq.G, lqr.G), (lq.Q, lqr.Q), (lq.R, lqr.R)):
        np.testing.assert_array_equal(a, b)


def test_linearize_rejects_shifted_rest_point():
    with pytest.raises(RestPointError):
        linearize(Shifted())


def test_registry():
    assert isinstance(get_problem("lqr2d"), LQR2D)
    with pytest.raises(KeyError, match="hunt-krener-testproblem"):
        get_problem("nonexistent")
    register_problem("shifted-test", Shifted)
    assert get_problem("shifted-test").name == "shifted"


def test_oracle_riccati_matrix():
    np.testing.assert_allclose(TestProblemOracle().P, fv.RICCATI, rtol=1e-14)


def test_oracle_rest_point_and_unit_transform():
    orc = TestProblemOracle()
    v, g = orc(np.zeros(2))
    assert v == 0.0 and np.all(g == 0.0)
    # T(x) = (1, 0): sin x1 = 1 needs x1 = pi/2 which is outside; use the transform directly
    y = np.array([1.0, 0.0])
    assert 0.5 * y @ orc.P @ y == pytest.approx(0.5 * math.sqrt(3))
    # a point with T(x) = (s, 0): value P11 s^2 / 2
    x1 = 0.8
    x = np.array([x1, x1**3 / 3])
    assert orc.value(x) == pytest.approx(0.5 * math.sqrt(3) * math.sin(x1) ** 2, rel=1e-14)


def test_oracle_satisfies_hjb(test_problem, rng):
    orc = TestProblemOracle()
    for x in rng.uniform(-1, 1, size=(100, 2)):
        assert abs(hjb_residual(test_problem, x, orc.gradient(x))) < 1e-10


def test_oracle_is_strict_lyapunov(test_problem, rng):
    orc = TestProblemOracle()
    for x in rng.uniform(-1, 1, size=(500, 2)):
        if np.linalg.norm(x) < 1e-6:
            continue
        grad = orc.gradient(x)
        kappa = -grad[1]
        assert grad @ (test_problem.f(x) + test_problem.g(x) * kappa) < 0.0


def test_oracle_jets_match_symbolic():
    orc = TestProblemOracle()
    C = orc.coeffs([0.3, 0.2], 4)
    for k in range(5):
        np.testing.assert_allclose(C.blocks[k], fv.COST_AT_POINT[k], rtol=1e-12, atol=1e-12)
    with pytest.raises(OutOfRegion):
        orc.value(np.array([1.6, 0.0]))


def test_quadratic_oracle(lqr):
    orc = oracle_for(lqr)
    assert isinstance(orc, QuadraticOracle)
    np.testing.assert_allclose(orc.P, fv.RICCATI, rtol=1e-14)
    C = orc.coeffs([0.5, -0.25], 3)
    np.testing.assert_allclose(C.blocks[2], [orc.P[0, 0], orc.P[0, 1], orc.P[1, 1]])
    assert np.all(C.blocks[3] == 0.0)
    with pytest.raises(KeyError):
        oracle_for(Shifted())


def test_jet_eval_is_deterministic(test_problem):
    a = test_problem.jet_eval([0.2, 0.1], 4)
    b = test_problem.jet_eval([0.2, 0.1], 4)
    assert all(np.array_equal(x.coef, y.coef) for x, y in zip(a.f + [a.q], b.f + [b.q]))


def test_negative_cost_is_rejected():
    class Bad(Problem):
        def expressions(self, x):
            return [x[1], -x[0]], [0.0, 1.0], -1.0 + 0 * x[0], 1.0

    with pytest.raises(OutOfRegion):
        Bad().jet_eval([0.1, 0.1], 1)
    assert isinstance(Jet.constant(2, 1, 1.0), Jet)


def test_competing_closed_form_fails_residual(test_problem, rng):
    # sqrt(3)/2 [(s + y2)^2 + 2/3 y2^2] with s = sin x1, y2 = x2 - x1^3/3
    def grad(x):
        x1, x2 = x
        s, y2 = math.sin(x1), x2 - x1**3 / 3
        a = math.sqrt(3.0) * (s + y2)
        b = a + math.sqrt(3.0) * (2.0 / 3.0) * y2
        return np.array([a * math.cos(x1) - b * x1**2, b])

    worst = max(abs(hjb_residual(test_problem, x, grad(x))) for x in rng.uniform(-1, 1, size=(50, 2)))
    assert worst > 1e-2
