"""Classify a list of Lagrangians and print verdict, decisive witness and expected symmetry dimensions."""
import argparse

from varode.classifier import ClassifyOptions, classify
from varode.expr import parse_expr
from varode.jets import Lagrangian

DEFAULTS = [(3, "y3^2"), (3, "y3^(1/3)"), (3, "y3^2 + y0^2"), (3, "y3^2 + 2*y1^2 - y2^2"),
            (3, "y3^4 + y1*y3^2"), (4, "y4^2"), (4, "y4^2 + y0^2"), (2, "y2^(1/3)")]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--solutions", type=int, default=3)
    args = ap.parse_args()
    opts = ClassifyOptions(seed=args.seed, solutions=args.solutions)
    for n, text in DEFAULTS:
        rep = classify(Lagrangian(n, parse_expr(text)), options=opts, label=text)
        hit = next((e for e in rep.evidence if e.decisive and e.status == "nonzero"), None)
        why = f"{hit.name} = {hit.witness}" if hit else "-"
        why = why if len(why) <= 40 else why[:37] + "..."
        row = rep.expected_symmetry_dims.get("table_row", {})
        print(f"n={n}  {text:<24} {rep.verdict:<26} {why:<40} {row.get('equation', '')}")


if __name__ == "__main__":
    main()
