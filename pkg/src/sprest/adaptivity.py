"""h-adaptive loops stopped either on the FE error or on the recovered-solution error."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from sprest.benchmarks import AnalyticSolution, get_benchmark
from sprest.estimators import CSV_COLUMNS, ErrorReport, estimate
from sprest.quadrature import DEFAULT_ERROR_ORDER
from sprest.fem import assemble_and_solve
from sprest.geometry import DEFAULT_MAX_LEVEL, QuadMesh, parse_order, refine_elements
from sprest.recovery import recover

log = logging.getLogger(__name__)

STOP_CRITERIA = ("fe", "recovered")

TRACE_COLUMNS = CSV_COLUMNS + (
    "iteration", "stop_on", "rel_fe", "rel_recovered", "exact_rel_fe", "exact_rel_recovered",
    "n_marked", "max_level", "stop", "seconds",
)
WALL_CLOCK_COLUMNS = ("seconds",)


def relative_error(report: ErrorReport, which: str) -> float:
    """Relative estimated error in percent for the FE or the recovered solution."""
    if which == "fe":
        est, energy = report.zz2, report.energy_fe2
    elif which == "recovered":
        est, energy = report.E3, report.energy_rec2
    else:
        raise ValueError(f"unknown error measure {which!r}")
    total = est + energy
    if total <= 0:
        raise ValueError("zero total energy; relative error undefined")
    return 100.0 * math.sqrt(est / total)


def equal_distribution_marking(report: ErrorReport, target: float) -> np.ndarray:
    """Elements whose FE error share exceeds the equal-distribution budget."""
    nel = len(report.zz2_elem)
    budget = (target / 100.0) ** 2 * (report.energy_fe2 + report.zz2) / nel
    return np.nonzero(report.zz2_elem > budget)[0]


def mark_elements(report: ErrorReport, mesh: QuadMesh, target: float,
                  strategy: Callable = equal_distribution_marking,
                  fallback_fraction: float = 0.1) -> np.ndarray:
    """Element ids to refine, always taken from the FE error map.

    If the strategy marks nothing while the FE error is above target, the
    top ``fallback_fraction`` of elements by error are marked instead.
    """
    if len(report.zz2_elem) != mesh.n_elements:
        raise ValueError("error map does not match the mesh")
    marked = np.asarray(strategy(report, target), dtype=np.int64)
    if len(marked) == 0 and relative_error(report, "fe") > target:
        n = max(1, int(math.ceil(fallback_fraction * mesh.n_elements)))
        order = np.lexsort((np.arange(mesh.n_elements), -report.zz2_elem))
        marked = np.sort(order[:n])
    return np.sort(marked)


@dataclass
class AdaptiveConfig:
    benchmark: str = "pipe"
    order: str = "Q4"
    target: float = 1.0
    stop_on: str = "recovered"
    initial_divisions: int = 2
    max_level: int = DEFAULT_MAX_LEVEL
    max_iterations: int = 30
    fallback_fraction: float = 0.1
    marking: Callable = equal_distribution_marking
    compute_exact: bool = True
    error_order: int = DEFAULT_ERROR_ORDER

    def __post_init__(self):
        self.order = parse_order(self.order)
        if not (0 < self.target <= 100):
            raise ValueError("target must be in (0, 100] percent")
        if self.stop_on not in STOP_CRITERIA:
            raise ValueError(f"stop_on must be one of {STOP_CRITERIA}")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.initial_divisions < 1:
            raise ValueError("initial_divisions must be >= 1")


@dataclass
class TraceStep:
    mesh: QuadMesh
    report: ErrorReport
    rel_fe: float
    rel_recovered: float
    n_marked: int
    seconds: float


@dataclass
class AdaptiveTrace:
    config: AdaptiveConfig
    steps: list[TraceStep] = field(default_factory=list)
    stop_reason: str = ""
    warnings: list[str] = field(default_factory=list)
    anomalies: list[str] = field(default_factory=list)

    @property
    def final_dofs(self) -> int:
        return self.steps[-1].report.ndof if self.steps else 0

    @property
    def total_seconds(self) -> float:
        return math.fsum(s.seconds for s in self.steps)

    def rows(self) -> list[dict]:
        out = []
        for i, st in enumerate(self.steps):
            row = st.report.csv_row()
            r = st.report
            u2 = r.exact_u2
            row.update(
                iteration=i, stop_on=self.config.stop_on, rel_fe=st.rel_fe,
                rel_recovered=st.rel_recovered,
                exact_rel_fe=None if u2 is None else 100 * math.sqrt(r.exact_e2 / u2),
                exact_rel_recovered=None if u2 is None else 100 * math.sqrt(r.exact_estar2 / u2),
                n_marked=st.n_marked, max_level=int(st.mesh.levels.max()),
                stop=int(i == len(self.steps) - 1), seconds=st.seconds)
            out.append(row)
        return out

    def summary(self) -> dict:
        return {"stop_reason": self.stop_reason, "final_dofs": self.final_dofs,
                "iterations": len(self.steps), "total_seconds": self.total_seconds,
                "stop_on": self.config.stop_on, "target": self.config.target,
                "benchmark": self.config.benchmark, "order": self.config.order,
                "warnings": list(self.warnings), "anomalies": list(self.anomalies)}


def run_adaptive(config: AdaptiveConfig, analytic: AnalyticSolution | None = None,
                 mesh: QuadMesh | None = None) -> AdaptiveTrace:
    """Solve, recover, estimate, test the stop criterion, mark and refine."""
    sol = analytic or get_benchmark(config.benchmark)
    if mesh is None:
        mesh = sol.mesh(config.initial_divisions, config.order, max_level=config.max_level)
    trace = AdaptiveTrace(config)
    load = sol.load_case()
    for it in range(config.max_iterations):
        t0 = time.perf_counter()
        fe = assemble_and_solve(mesh, sol.material, load)
        rec = recover(fe)
        rep = estimate(fe, rec, sol if config.compute_exact else None, mesh_index=it,
                       order=config.error_order)
        rel_fe = relative_error(rep, "fe")
        rel_rec = relative_error(rep, "recovered")
        if rep.E3 > rep.zz2:
            msg = f"iteration {it}: recovered estimate exceeds the FE estimate"
            trace.anomalies.append(msg)
            log.info(msg)
        governing = rel_fe if config.stop_on == "fe" else rel_rec
        done = governing <= config.target
        marked = np.zeros(0, dtype=np.int64)
        if not done and it + 1 < config.max_iterations:
            marked = mark_elements(rep, mesh, config.target, config.marking,
                                   config.fallback_fraction)
        trace.steps.append(TraceStep(mesh, rep, rel_fe, rel_rec, len(marked),
                                     time.perf_counter() - t0))
        if done:
            trace.stop_reason = "target reached"
            break
        if it + 1 == config.max_iterations:
            trace.stop_reason = "max iterations"
            trace.warnings.append("maximum number of iterations reached above target")
            log.warning(trace.warnings[-1])
            break
        new = refine_elements(mesh, marked)
        if new.skipped:
            trace.warnings.extend(new.warnings)
        if len(new.skipped) == len(marked):
            trace.stop_reason = "level cap"
            trace.warnings.append("all marked elements are at the refinement level cap")
            break
        mesh = new
    if len(trace.steps) >= 2:
        key = "rel_fe" if config.stop_on == "fe" else "rel_recovered"
        a, b = (getattr(s, key) for s in trace.steps[-2:])
        if b > a and trace.stop_reason != "max iterations":
            trace.warnings.append("governing error increased over the final two iterations")
    return trace


def paired_runs(config: AdaptiveConfig) -> dict:
    """Run the same problem stopped on the FE error and on the recovered error."""
    out = {}
    for crit in STOP_CRITERIA:
        cfg = AdaptiveConfig(**{**config.__dict__, "stop_on": crit})
        out[crit] = run_adaptive(cfg)
    fe, rc = out["fe"].final_dofs, out["recovered"].final_dofs
    out["dof_ratio"] = fe / rc if rc else float("inf")
    return out


def uniform_sequence(benchmark: str | AnalyticSolution, order: str, divisions: int,
                     n_meshes: int, error_order: int = DEFAULT_ERROR_ORDER,
                     max_level: int = DEFAULT_MAX_LEVEL):
    """Reports on ``n_meshes`` uniformly refined meshes starting at ``divisions``.

    Returns a list of (mesh, FE field, recovered field, report).
    """
    sol = get_benchmark(benchmark) if isinstance(benchmark, str) else benchmark
    load = sol.load_case()
    out = []
    for i in range(n_meshes):
        mesh = sol.mesh(divisions * 2 ** i, order, max_level=max_level)
        fe = assemble_and_solve(mesh, sol.material, load)
        rec = recover(fe)
        out.append((mesh, fe, rec, estimate(fe, rec, sol, mesh_index=i, order=error_order)))
    return out
