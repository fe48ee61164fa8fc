"""Ratio of the pipeline W4 to the closed-form generalized invariant along random EL solutions."""
import argparse

import numpy as np
import sympy as sp

from varode.classifier import random_solutions
from varode.expr import X, Y, compile_exprs, parse_expr
from varode.jets import Lagrangian, euler_lagrange, linearize_along, make_grid
from varode.wilczynski import generalized_wilczynski_order6, generalized_wilczynski_order8, invariants_along

DEFAULTS = [(3, "y3^4 + y1*y3^2"), (3, "y3^3 + y2^2*y3 + y0*y3^2"), (4, "y4^3 + y2*y4^2"),
            (4, "y4^4 + y1*y4^2 + y2^2*y4")]


def ratios(n, text, seed, count):
    E = euler_lagrange(Lagrangian(n, parse_expr(text)))
    closed = generalized_wilczynski_order6(E) if n == 3 else generalized_wilczynski_order8(E)
    fn = compile_exprs([closed], [X] + [Y(i) for i in range(2 * n)])
    out = []
    for tr, w in random_solutions(E, seed, count, make_grid(0, 0.5, 17),
                                  accept=lambda tr: invariants_along(linearize_along(E, tr, E.N + 4))):
        out.append(w.values[4] / np.asarray(fn(tr.x, *tr.samples.T)[0], float))
    return np.concatenate(out)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--solutions", type=int, default=3)
    args = ap.parse_args()
    expected = {3: sp.Integer(864), 4: sp.Rational(190080, 7)}
    print(f"{'n':>2}  {'lagrangian':<28} {'mean ratio':>16} {'rel spread':>11}  expected")
    for n, text in DEFAULTS:
        r = ratios(n, text, args.seed, args.solutions)
        spread = (r.max() - r.min()) / abs(r.mean())
        print(f"{n:>2}  {text:<28} {r.mean():>16.10g} {spread:>11.2e}  {expected[n]}")


if __name__ == "__main__":
    main()
