"""Projective comparison of the Jacobi curve of the distribution with the linearization curve Lin^1."""
import argparse

import numpy as np

from varode.classifier import random_solutions
from varode.distribution import (compare_projective, integrate_abnormal, jacobi_consistency, jacobi_curve,
                                 transport_linearization_curve)
from varode.expr import parse_expr
from varode.jets import Lagrangian, euler_lagrange, make_grid
from varode.legendre import matched_abnormal_state
from varode.wilczynski import canonicalize, coefficients_from_jets, wilczynski_invariants

DEFAULTS = ["y3^2", "y3^2 + y0^2", "y3^4 + y1*y3^2", "y3^(1/3)"]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("lagrangians", nargs="*", default=DEFAULTS)
    ap.add_argument("--n", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--grid", default="0:0.5:17")
    args = ap.parse_args()
    a, b, c = args.grid.split(":")
    grid = make_grid(float(a), float(b), int(c))
    print(f"{'lagrangian':<20} {'match resid':>12} {'osc. gap':>10}  sup|W_k| of the Jacobi curve")
    for text in args.lagrangians:
        L = Lagrangian(args.n, parse_expr(text))
        E = euler_lagrange(L)
        (tr, _), = random_solutions(E, args.seed, 1, grid)
        ext = integrate_abnormal(L, matched_abnormal_state(L, grid[0], tr.samples[0]), grid)
        jc = jacobi_curve(L, ext)
        m = compare_projective(transport_linearization_curve(E, tr), jc)
        gap = jacobi_consistency(L, ext, jc)
        w = wilczynski_invariants(canonicalize(coefficients_from_jets(jc.meta["jets"], jc.t)))
        sups = " ".join(f"W{k}={np.max(np.abs(v)):.3g}" for k, v in w.values.items())
        print(f"{text:<20} {m.residual:>12.2e} {gap:>10.2e}  {sups}")


if __name__ == "__main__":
    main()
