"""Command-line front end: ``varode {el,classify,invariants,geometry,syzygy,selfdual}``."""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import sympy as sp

from .expr import ParseError, Y, parse_expr, to_text
from .jets import (
    DegenerateLagrangianError,
    IntegrationError,
    Lagrangian,
    Nondegeneracy,
    OrdODE,
    SingularityError,
    check_nondegenerate,
    euler_lagrange,
    linearize_along,
    make_grid,
    solve_ivp,
    weighted_degree_check,
)

EXIT_PARSE, EXIT_DEGENERATE, EXIT_INTEGRATION = 2, 3, 4


class CliError(Exception):
    def __init__(self, code, message, partial=None):
        super().__init__(message)
        self.code = code
        self.partial = partial or {}


@dataclass
class RunConfig:
    subcommand: str
    lagrangian: str | None = None
    ode: str | None = None
    n: int | None = None
    order: int | None = None
    seed: int = 0
    tol: float = 1e-6
    probe_tol: float = 1e-9
    grid: tuple = (0.0, 1.0, 64)
    solutions: int = 3
    init: tuple | None = None
    json_path: str | None = None
    csv_path: str | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.tol > 0 or not self.probe_tol > 0:
            raise ValueError("tolerances must be positive")
        if int(self.grid[2]) < 16:
            raise ValueError("grid needs at least 16 samples")
        if self.solutions < 1:
            raise ValueError("solution count must be at least 1")


def _fmt(v):
    if isinstance(v, dict):
        return {str(k): _fmt(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_fmt(x) for x in v]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return float(f"{v:.17g}") if math.isfinite(v) else repr(v)
    if isinstance(v, sp.Basic):
        return to_text(v)
    if hasattr(v, "value") and isinstance(getattr(v, "value"), str):
        return v.value
    return v


def dumps(obj) -> str:
    return json.dumps(_fmt(obj), sort_keys=True, indent=2)


def _parse_grid(text: str):
    try:
        a, b, c = text.split(":")
        return float(a), float(b), int(c)
    except ValueError as exc:
        raise argparse.ArgumentTypeError("grid must look like x0:x1:count") from exc


def _parse_init(text: str):
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError("init must be comma-separated numbers") from exc


# ---------------------------------------------------------------------------
# input handling
# ---------------------------------------------------------------------------
def _lagrangian(cfg: RunConfig) -> Lagrangian:
    if cfg.lagrangian is None:
        raise CliError(EXIT_PARSE, "this subcommand needs --lagrangian")
    if cfg.n is None:
        raise CliError(EXIT_PARSE, "--n is required with --lagrangian")
    try:
        f = parse_expr(cfg.lagrangian)
        return Lagrangian(cfg.n, f)
    except ParseError as exc:
        raise CliError(EXIT_PARSE, f"parse error: {exc}") from exc
    except ValueError as exc:
        raise CliError(EXIT_PARSE, str(exc)) from exc


def _ode(cfg: RunConfig) -> OrdODE:
    order = cfg.order or (2 * cfg.n if cfg.n else None)
    if order is None:
        raise CliError(EXIT_PARSE, "--order (or --n) is required with --ode")
    text = cfg.ode
    if "=" in text:
        lhs, text = text.split("=", 1)
        if lhs.strip() != f"y{order}":
            raise CliError(EXIT_PARSE, f"left-hand side must be y{order}")
    try:
        return OrdODE(order, parse_expr(text))
    except ParseError as exc:
        raise CliError(EXIT_PARSE, f"parse error: {exc}") from exc
    except ValueError as exc:
        raise CliError(EXIT_PARSE, str(exc)) from exc


def _source(cfg: RunConfig):
    """``(L or None, E)`` from the config."""
    if cfg.lagrangian is not None:
        L = _lagrangian(cfg)
        if check_nondegenerate(L) is not Nondegeneracy.OK:
            raise CliError(EXIT_DEGENERATE, "degenerate Lagrangian: f_{y_n y_n} vanishes")
        try:
            return L, euler_lagrange(L)
        except DegenerateLagrangianError as exc:
            raise CliError(EXIT_DEGENERATE, str(exc)) from exc
    if cfg.ode is not None:
        return None, _ode(cfg)
    raise CliError(EXIT_PARSE, "give --lagrangian or --ode")


def _grid(cfg):
    return make_grid(cfg.grid[0], cfg.grid[1], int(cfg.grid[2]))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------
def cmd_el(cfg: RunConfig) -> dict:
    L = _lagrangian(cfg)
    nd = check_nondegenerate(L)
    if nd is not Nondegeneracy.OK:
        raise CliError(EXIT_DEGENERATE, "degenerate Lagrangian: f_{y_n y_n} vanishes",
                       {"lagrangian": cfg.lagrangian, "n": cfg.n, "nondegeneracy": nd.value})
    try:
        E = euler_lagrange(L)
    except DegenerateLagrangianError as exc:
        raise CliError(EXIT_DEGENERATE, str(exc)) from exc
    w = weighted_degree_check(E, L.order)
    return {
        "lagrangian": cfg.lagrangian, "n": L.order, "order": E.order,
        "F": to_text(E.rhs), "equation": f"y{E.order} = {to_text(E.rhs)}",
        "nondegeneracy": nd.value,
        "weighted_degree": {"value": w.weighted_degree, "passed": w.passed,
                            "polynomial_in_high_jets": w.is_polynomial_in_high_jets, "witness": w.witness},
    }


def cmd_classify(cfg: RunConfig) -> dict:
    from .classifier import ClassifyOptions, classify, n2_caveat_demo

    L, E = _source(cfg)
    opts = ClassifyOptions(seed=cfg.seed, solutions=cfg.solutions, grid=cfg.grid, tol=cfg.tol)
    label = cfg.lagrangian if L is not None else cfg.ode
    rep = classify(L if L is not None else E, options=opts, label=label)
    out = rep.as_dict()
    if any("numeric stage failed" in s for s in rep.notes):
        raise CliError(EXIT_INTEGRATION, "integration failure", out)
    if rep.n == 2 and L is not None and sp.simplify(L.f - Y(2) ** sp.Rational(1, 3)) == 0:
        out["n2_caveat"] = n2_caveat_demo(seed=cfg.seed, solutions=cfg.solutions, tol=cfg.tol)
    return out


def _solutions(cfg, E):
    """Initial jets: the user's ``--init`` or seeded random draws."""
    from .classifier import invariants_along_solutions

    grid = _grid(cfg)
    if cfg.init is not None:
        from .wilczynski import canonicalize, wilczynski_invariants

        if len(cfg.init) != E.N + 1:
            raise CliError(EXIT_PARSE, f"--init needs {E.N + 1} values")
        tr = solve_ivp(E, cfg.init, grid)
        w = wilczynski_invariants(canonicalize(linearize_along(E, tr, E.N + 4)))
        return [(list(cfg.init), tr.x, w)]
    return [(s.init, s.x, s.values) for s in invariants_along_solutions(E, cfg.seed, cfg.solutions, grid)]


def _csv_paths(path, count):
    if count == 1:
        return [Path(path)]
    p = Path(path)
    return [p.with_name(f"{p.stem}.{i}{p.suffix or '.csv'}") for i in range(count)]


def cmd_invariants(cfg: RunConfig) -> dict:
    from .expr import Verdict
    from .wilczynski import invariant_status

    _, E = _source(cfg)
    sols = _solutions(cfg, E)
    ks = list(range(3, E.N + 2))
    summary = {"order": E.order, "solutions": [], "sup": {}, "status": {}}
    texts = []
    for init, x, w in sols:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["x"] + [f"W{k}" for k in ks])
        for m, xv in enumerate(x):
            wr.writerow([f"{xv:.17g}"] + [f"{float(w.values[k][m]):.17g}" for k in ks])
        texts.append(buf.getvalue())
        summary["solutions"].append({"init": init, "sup": {f"W{k}": float(np.max(np.abs(w.values[k]))) for k in ks}})
    for k in ks:
        summary["sup"][f"W{k}"] = max(s["sup"][f"W{k}"] for s in summary["solutions"])
        bad = any(invariant_status(w, k, cfg.tol) is Verdict.NONZERO for _, _, w in sols)
        summary["status"][f"W{k}"] = "nonzero" if bad else "probably_zero"
    if cfg.csv_path:
        for path, text in zip(_csv_paths(cfg.csv_path, len(texts)), texts):
            path.write_bytes(text.encode())
        summary["csv"] = [str(p) for p in _csv_paths(cfg.csv_path, len(texts))]
    return summary


def cmd_geometry(cfg: RunConfig) -> dict:
    from . import distribution as dist
    from . import legendre as leg

    L, E = _source(cfg)
    if L is None:
        raise CliError(EXIT_PARSE, "geometry needs --lagrangian")
    n = L.order
    out = {"lagrangian": cfg.lagrangian, "n": n}
    D = dist.build_distribution(L)
    point = dist.random_point(D.chart, cfg.seed)
    out["growth_vector"] = list(dist.derived_flag(D, point, seed=cfg.seed).growth)
    out["z_symmetry"] = dist.verify_z_symmetry(D, seed=cfg.seed)
    cls = dist.distribution_class(L, point[: n + 2], seed=cfg.seed)
    out["class"] = cls.m
    out["maximal_class"] = cls.maximal_class
    out["J_dims"] = {str(k): v for k, v in sorted(cls.dims.items())}
    w = leg.omega_form(L, E)
    out["omega"] = json.loads(w.to_json())
    out["omega_checks"] = leg.verify_omega_properties(L, omega=w, E=E).as_dict()
    try:
        leg.anderson_thompson_coeffs(L, omega=w)
        out["anderson_thompson_support"] = True
    except leg.SupportViolation as exc:
        out["anderson_thompson_support"] = False
        out["anderson_thompson_error"] = str(exc)
    try:
        rng = np.random.default_rng(cfg.seed)
        grid = _grid(cfg)
        init = rng.uniform(-1, 1, 2 * n)
        tr = solve_ivp(E, init, grid)
        push = leg.legendre_pushforward_check(L, tr, E=E)
        out["legendre_pushforward"] = {"residual": push.residual, "fiberwise": push.fiberwise, "ok": push.ok}
        st = leg.matched_abnormal_state(L, grid[0], init)
        ext = dist.integrate_abnormal(L, st, grid)
        jc = dist.jacobi_curve(L, ext)
        lin = dist.transport_linearization_curve(E, tr)
        match = dist.compare_projective(lin, jc, tol=cfg.tol)
        out["jacobi_vs_lin_residual"] = match.residual
        out["jacobi_vs_lin_match"] = match.matched
    except (SingularityError, IntegrationError, ArithmeticError) as exc:
        raise CliError(EXIT_INTEGRATION, f"extremal stage failed: {exc}", out) from exc
    return out


def cmd_syzygy(cfg: RunConfig) -> dict:
    from .classifier import syzygy_check_n3, syzygy_check_n4

    L, E = _source(cfg)
    if L is None or L.order not in (3, 4):
        raise CliError(EXIT_PARSE, "syzygy needs --lagrangian with n = 3 or 4")
    fn = syzygy_check_n3 if L.order == 3 else syzygy_check_n4
    r = fn(L, tol=cfg.probe_tol, E=E)
    return {"lagrangian": cfg.lagrangian, "n": L.order, "residual": to_text(sp.simplify(r.residual)),
            "status": r.verdict.value, "closed_forms": {k: v.value for k, v in r.closed_forms.items()},
            "values": {k: to_text(v) for k, v in r.values.items()}}


def cmd_selfdual(cfg: RunConfig) -> dict:
    from .classifier import random_solutions
    from .wilczynski import AmbiguousDualityError, fundamental_system, selfdual_test

    _, E = _source(cfg)
    grid = _grid(cfg)
    if cfg.init is not None:
        trajs = [solve_ivp(E, cfg.init, grid)]
    else:
        trajs = [tr for tr, _ in random_solutions(E, cfg.seed, cfg.solutions, grid)]
    results = []
    for tr in trajs:
        init = tr.samples[0]
        g = fundamental_system(linearize_along(E, tr), grid)
        entry = {"init": list(map(float, init)), "min_frame_det": g.min_abs_det()}
        try:
            form = selfdual_test(g, tol=cfg.tol)
        except AmbiguousDualityError as exc:
            entry.update({"selfdual": None, "ambiguous": True, "witness": exc.witness})
        else:
            entry["selfdual"] = form is not None
            if form is not None:
                entry["residual"] = form.residual
                entry["form"] = form.B.tolist()
        results.append(entry)
    return {"order": E.order, "results": results, "all_selfdual": all(r.get("selfdual") for r in results)}


COMMANDS = {"el": cmd_el, "classify": cmd_classify, "invariants": cmd_invariants,
            "geometry": cmd_geometry, "syzygy": cmd_syzygy, "selfdual": cmd_selfdual}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="varode", description="Variational ODEs, Wilczynski invariants and rank-2 distributions.")
    sub = p.add_subparsers(dest="subcommand", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        src = s.add_mutually_exclusive_group()
        src.add_argument("--lagrangian", help="density f(x, y0..yn)")
        src.add_argument("--ode", help="right-hand side F (or 'yN = F')")
        s.add_argument("--n", type=int, help="Lagrangian order")
        s.add_argument("--order", type=int, help="ODE order")
        s.add_argument("--seed", type=int, default=None)
        s.add_argument("--tol", type=float, default=1e-6)
        s.add_argument("--grid", type=_parse_grid, default=(0.0, 1.0, 64))
        s.add_argument("--solutions", type=int, default=3)
        s.add_argument("--init", type=_parse_init, default=None, help="initial jet y0..yN (comma-separated)")
        s.add_argument("--json", dest="json_path")
        s.add_argument("--csv", dest="csv_path")
    return p


def config_from_args(args) -> RunConfig:
    seed = args.seed
    if seed is None:
        seed = int(os.environ.get("VARODE_SEED", "0"))
    return RunConfig(subcommand=args.subcommand, lagrangian=args.lagrangian, ode=args.ode, n=args.n,
                     order=args.order, seed=seed, tol=args.tol, grid=args.grid, solutions=args.solutions,
                     init=args.init, json_path=args.json_path, csv_path=args.csv_path)


def _emit(payload, cfg: RunConfig | None):
    text = dumps(payload) + "\n"
    sys.stdout.write(text)
    if cfg is not None and cfg.json_path:
        Path(cfg.json_path).write_bytes(text.encode())


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
    except ValueError as exc:
        _emit({"error": str(exc)}, None)
        return EXIT_PARSE
    try:
        payload = COMMANDS[cfg.subcommand](cfg)
    except CliError as exc:
        _emit({**exc.partial, "error": str(exc), "exit_code": exc.code}, cfg)
        return exc.code
    except DegenerateLagrangianError as exc:
        _emit({"error": str(exc), "exit_code": EXIT_DEGENERATE}, cfg)
        return EXIT_DEGENERATE
    except (SingularityError, IntegrationError) as exc:
        _emit({"error": str(exc), "exit_code": EXIT_INTEGRATION}, cfg)
        return EXIT_INTEGRATION
    _emit(payload, cfg)
    return 0


if __name__ == "__main__":
    sys.exit(main())
