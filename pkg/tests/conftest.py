import random

import pytest
import sympy as sp

from varode.expr import Y
from varode.jets import Lagrangian


def random_poly_lagrangian(rng: random.Random, n: int = 3, degree: int = 4) -> Lagrangian:
    """Integer polynomial in y0..yn with f_{y_n y_n} not identically zero."""
    while True:
        f = rng.randint(1, 3) * Y(n) ** 2
        for _ in range(rng.randint(1, 3)):
            mono = sp.Integer(rng.choice([-2, -1, 1, 2]))
            for _ in range(rng.randint(1, 2)):
                mono *= Y(rng.randint(0, n))
            f += mono
        if degree >= 3 and rng.random() < 0.7:
            f += rng.choice([-1, 1]) * Y(n) ** rng.randint(3, degree)
        f = sp.expand(f)
        if sp.diff(f, Y(n), 2) != 0:
            return Lagrangian(n, f)


def random_y3_poly(rng: random.Random, degree: int = 4, n: int = 3) -> Lagrangian:
    """Polynomial in y_n only, f_nn not identically zero."""
    while True:
        coeffs = [rng.randint(-3, 3) for _ in range(degree + 1)]
        f = sum(c * Y(n) ** k for k, c in enumerate(coeffs))
        if sp.diff(f, Y(n), 2) != 0:
            return Lagrangian(n, f)


@pytest.fixture
def rng():
    return random.Random(12345)


# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int("".join(c for c in k if c.isdigit())), k)):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {key}: {detail}")
