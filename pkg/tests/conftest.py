from __future__ import annotations

import sys
from functools import lru_cache

import numpy as np
import pytest

from sprest.adaptivity import AdaptiveConfig, run_adaptive, uniform_sequence
from sprest.benchmarks import get_benchmark, polynomial_solution
from sprest.fem import assemble_and_solve
from sprest.geometry import refine_elements
from sprest.recovery import recover

# uniform sequences used for effectivity checks: divisions 4, 8, 16
SEQ_START = 4
SEQ_MESHES = 3


@lru_cache(maxsize=None)
def sequence(benchmark: str, order: str, start: int = SEQ_START, meshes: int = SEQ_MESHES):
    return tuple(uniform_sequence(benchmark, order, start, meshes))


@lru_cache(maxsize=None)
def adaptive(benchmark: str, order: str, target: float, stop_on: str, divisions: int = 2):
    return run_adaptive(AdaptiveConfig(benchmark, order, target, stop_on,
                                       initial_divisions=divisions))


@lru_cache(maxsize=None)
def solved(benchmark: str, order: str, divisions: int, hanging: bool = False):
    sol = get_benchmark(benchmark)
    mesh = sol.mesh(divisions, order)
    if hanging:
        mesh = refine_elements(refine_elements(mesh, [0, 1]), [0])
    fe = assemble_and_solve(mesh, sol.material, sol.load_case())
    return sol, fe, recover(fe)


# fields that lie in the FE space, so the FE solution is exact
IN_SPACE = {
    "Q4": ({(1, 0): 1e-3, (0, 1): 5e-4, (1, 1): 2e-3, (0, 0): 1e-4},
           {(1, 0): -2e-4, (0, 1): 1e-3, (1, 1): 1e-3}),
    "Q8": ({(2, 0): 1e-3, (1, 1): 1e-3, (2, 1): 2e-3, (1, 2): -1e-3},
           {(0, 2): -1e-3, (1, 0): 1e-3, (2, 1): 1e-3, (1, 2): 3e-3}),
}
# global polynomials of degree p + 1
GLOBAL_POLY = {
    "Q4": ({(2, 0): 1e-3, (1, 1): 2e-3, (0, 2): -1e-3, (1, 0): 1e-3},
           {(2, 0): -2e-3, (1, 1): 1e-3, (0, 2): 3e-3, (0, 1): 1e-3}),
    "Q8": ({(3, 0): 1e-3, (2, 1): 2e-3, (1, 2): -1e-3, (0, 3): 1e-3, (2, 0): 1e-3},
           {(3, 0): -1e-3, (2, 1): 1e-3, (1, 2): 3e-3, (0, 3): -2e-3, (0, 2): 1e-3}),
}
LINEAR = ({(1, 0): 1e-3, (0, 1): 4e-4, (0, 0): 2e-4}, {(1, 0): 6e-4, (0, 1): -3e-4})


def manufactured(kind: str, order: str):
    table = {"in_space": IN_SPACE, "global": GLOBAL_POLY}
    ux, uy = LINEAR if kind == "linear" else table[kind][order]
    return polynomial_solution(ux, uy, name=f"{kind}-{order}")


@lru_cache(maxsize=None)
def manufactured_solved(kind: str, order: str, divisions: int = 2, hanging: bool = True):
    sol = manufactured(kind, order)
    mesh = sol.mesh(divisions, order)
    if hanging:
        mesh = refine_elements(mesh, [0])
    fe = assemble_and_solve(mesh, sol.material, sol.load_case())
    return sol, fe, recover(fe)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
