"""Regenerate tests/frozen_values.py with sympy (run by hand; not part of the suite).

Everything here is computed symbolically and independently of the package.
"""

from __future__ import annotations

import itertools
import math
import pprint
from pathlib import Path

import sympy as sp

x1, x2 = sp.symbols("x1 x2", real=True)


def graded_lex(n, k):
    return [a for a in itertools.product(range(k, -1, -1), repeat=n) if sum(a) == k]


def partial_blocks(expr, point, degree):
    out = []
    for k in range(degree + 1):
        row = []
        for a in graded_lex(2, k):
            e = expr
            if a[0]:
                e = sp.diff(e, x1, a[0])
            if a[1]:
                e = sp.diff(e, x2, a[1])
            row.append(float(sp.N(e.subs({x1: point[0], x2: point[1]}), 30)))
        out.append(row)
    return out


# stabilising Riccati solution of the double integrator, by hand: P = [[a, b], [b, c]]
a, b, c = sp.symbols("a b c", positive=True)
F = sp.Matrix([[0, 1], [0, 0]])
G = sp.Matrix([[0], [1]])
P = sp.Matrix([[a, b], [b, c]])
eqs = F.T * P + P * F - P * G * G.T * P + sp.eye(2)
sol = sp.solve([eqs[0, 0], eqs[0, 1], eqs[1, 1]], [a, b, c], dict=True)
sol = [s for s in sol if all(v.is_positive for v in s.values())][0]
Pm = P.subs(sol)

y = sp.Matrix([sp.sin(x1), x2 - x1**3 / 3])
cost = sp.Rational(1, 2) * (y.T * Pm * y)[0]

y2 = x2 - x1**3 / 3
f1 = y2 / sp.cos(x1)
f2 = x1**2 * f1
q = sp.Rational(1, 2) * (sp.sin(x1) ** 2 + y2**2)

values = {
    "RICCATI": [[float(Pm[i, j]) for j in range(2)] for i in range(2)],
    "COST_AT_ORIGIN": partial_blocks(cost, (0, 0), 4),
    "COST_AT_POINT": partial_blocks(cost, (sp.Rational(3, 10), sp.Rational(1, 5)), 4),
    "F1_AT_POINT": partial_blocks(f1, (sp.Rational(7, 10), -sp.Rational(2, 5)), 3),
    "F2_AT_POINT": partial_blocks(f2, (sp.Rational(7, 10), -sp.Rational(2, 5)), 3),
    "Q_AT_POINT": partial_blocks(q, (sp.Rational(7, 10), -sp.Rational(2, 5)), 3),
}

header = '''"""Reference values computed symbolically by tests/tools/freeze_values.py.

COST_*: raw partials (graded-lex blocks) of the exact test-problem cost.
*_AT_POINT for f1, f2, q: partials at (0.7, -0.4); COST_AT_POINT at (0.3, 0.2).
"""

'''
body = "".join(f"{k} = {pprint.pformat(v, width=100)}\n\n" for k, v in values.items())
Path(__file__).resolve().parents[1].joinpath("frozen_values.py").write_text(header + body.rstrip() + "\n")
print(Pm)
