"""Command-line entry point.

``sprest <command> --benchmark NAME --order q4|q8 [--divisions N | --target PCT
--stop-on fe|recovered] --out DIR``

Exit codes: 0 success, 1 usage, 2 verification failure, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

from sprest.adaptivity import (TRACE_COLUMNS, AdaptiveConfig, run_adaptive,
                               uniform_sequence)
from sprest.benchmarks import BENCHMARKS, get_benchmark, verify_consistency
from sprest.estimators import CSV_COLUMNS
from sprest.fem import NumericalError, assemble_and_solve
from sprest.geometry import DEFAULT_MAX_LEVEL
from sprest.mesh_io import error_cell_data, field_point_data, write_mesh_json, write_vtk
from sprest.quadrature import DEFAULT_ERROR_ORDER
from sprest.recovery import recover
from sprest.reporting import (adapt_plot, effectivity_plot, format_table, write_csv,
                              write_json)

EXIT_OK, EXIT_USAGE, EXIT_VERIFY, EXIT_NUMERIC = 0, 1, 2, 3
COMMANDS = ("verify", "solve", "estimate", "adapt")
ORDERS = ("q4", "q8")

log = logging.getLogger("sprest")


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    benchmark: str = "square4"
    order: str = "q4"
    divisions: int = 2
    meshes: int = 3
    target: float = 1.0
    stop_on: str = "both"
    out: Path = Path("out")
    max_level: int = DEFAULT_MAX_LEVEL
    max_iterations: int = 30
    error_quadrature: int = DEFAULT_ERROR_ORDER
    stiffness_quadrature: int | None = None
    benchmarks: list = field(default_factory=list)

    def validate(self):
        if self.command not in COMMANDS:
            raise UsageError(f"unknown command {self.command!r}")
        if self.benchmark not in BENCHMARKS:
            raise UsageError(f"unknown benchmark {self.benchmark!r}; "
                             f"expected one of {', '.join(BENCHMARKS)}")
        if self.order.lower() not in ORDERS:
            raise UsageError(f"unknown order {self.order!r}; expected q4 or q8")
        if self.divisions < 1 or self.meshes < 1:
            raise UsageError("divisions and meshes must be >= 1")
        if not (0 < self.target <= 100):
            raise UsageError("target must be in (0, 100]")
        if self.stop_on not in ("fe", "recovered", "both"):
            raise UsageError("stop-on must be fe, recovered or both")
        if self.error_quadrature < 1:
            raise UsageError("error-quadrature must be >= 1")
        if self.stiffness_quadrature is not None and self.stiffness_quadrature < 1:
            raise UsageError("stiffness-quadrature must be >= 1")


_TYPES = {"benchmark": str, "order": str, "divisions": int, "meshes": int, "target": float,
          "stop_on": str, "out": Path, "max_level": int, "max_iterations": int,
          "error_quadrature": int, "stiffness_quadrature": int}


def read_config_file(path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from exc
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key = value")
        key, value = (p.strip() for p in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _TYPES:
            raise UsageError(f"{path}:{n}: unknown key {key!r}")
        try:
            out[key] = _TYPES[key](value)
        except ValueError as exc:
            raise UsageError(f"{path}:{n}: bad value for {key}: {value!r}") from exc
    return out


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sprest", description="Displacement recovery error estimation.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="flat key = value file; command-line options win")
    p.add_argument("--benchmark")
    p.add_argument("--order", type=str.lower)
    p.add_argument("--divisions", type=int)
    p.add_argument("--meshes", type=int, help="number of uniform meshes (estimate)")
    p.add_argument("--target", type=float, help="target relative error in percent (adapt)")
    p.add_argument("--stop-on", dest="stop_on", choices=("fe", "recovered", "both"))
    p.add_argument("--out", type=Path)
    p.add_argument("--max-level", dest="max_level", type=int)
    p.add_argument("--max-iterations", dest="max_iterations", type=int)
    p.add_argument("--error-quadrature", dest="error_quadrature", type=int)
    p.add_argument("--stiffness-quadrature", dest="stiffness_quadrature", type=int)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def parse_config(argv) -> tuple[RunConfig, bool]:
    args = build_parser().parse_args(argv)
    values = read_config_file(args.config) if args.config else {}
    for key in _TYPES:
        v = getattr(args, key)
        if v is not None:
            values[key] = v
    cfg = RunConfig(command=args.command, **values)
    cfg.order = cfg.order.lower()
    cfg.validate()
    return cfg, args.verbose


def _prepare_out(cfg: RunConfig) -> Path:
    try:
        cfg.out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"output directory not writable: {exc}") from exc
    return cfg.out


def cmd_verify(cfg: RunConfig, solutions=None) -> int:
    sols = solutions if solutions is not None else [get_benchmark(b) for b in BENCHMARKS]
    ok = True
    for sol in sols:
        rep = verify_consistency(sol)
        for line in rep.lines():
            print(line)
        ok &= rep.passed
    print("verify:", "PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_solve(cfg: RunConfig) -> int:
    out = _prepare_out(cfg)
    sol = get_benchmark(cfg.benchmark)
    mesh = sol.mesh(cfg.divisions, cfg.order, max_level=cfg.max_level)
    fe = assemble_and_solve(mesh, sol.material, sol.load_case(), cfg.stiffness_quadrature)
    rec = recover(fe)
    pdata = field_point_data(fe, rec)
    write_mesh_json(out / "solution.json", mesh, pdata)
    write_vtk(out / "solution.vtk", mesh, pdata, title=f"{sol.name} {mesh.order}")
    summary = {"benchmark": sol.name, "order": mesh.order, "divisions": cfg.divisions,
               "ndof": fe.ndof, "n_elements": mesh.n_elements,
               "strain_energy": fe.strain_energy(), "solver_residual": fe.residual,
               "fallback_patches": rec.n_fallback}
    write_json(out / "solve.json", summary)
    print(f"{sol.name} {mesh.order}: {mesh.n_elements} elements, {fe.ndof} dofs, "
          f"strain energy {summary['strain_energy']:.10g}")
    return EXIT_OK


def cmd_estimate(cfg: RunConfig) -> int:
    out = _prepare_out(cfg)
    seq = uniform_sequence(cfg.benchmark, cfg.order, cfg.divisions, cfg.meshes,
                           cfg.error_quadrature, cfg.max_level)
    rows = []
    reports = []
    for i, (mesh, fe, rec, rep) in enumerate(seq):
        rows.append(rep.csv_row())
        reports.append(rep.to_json())
        write_vtk(out / f"estimate_mesh{i}.vtk", mesh, field_point_data(fe, rec),
                  error_cell_data(rep), title=f"{cfg.benchmark} mesh {i}")
        for note in rep.notes:
            log.warning("mesh %d: %s", i, note)
    write_csv(out / "estimates.csv", rows, CSV_COLUMNS)
    write_json(out / "estimates.json", reports)
    effectivity_plot(out / "effectivity.svg", rows,
                     f"{cfg.benchmark} {cfg.order.upper()} effectivity")
    print(format_table(rows, ("ndof", "zz2", "E1", "E2", "E3", "exact_estar2", "theta_E3")))
    return EXIT_OK


def cmd_adapt(cfg: RunConfig) -> int:
    out = _prepare_out(cfg)
    crits = ("fe", "recovered") if cfg.stop_on == "both" else (cfg.stop_on,)
    traces = {}
    for crit in crits:
        ac = AdaptiveConfig(cfg.benchmark, cfg.order, cfg.target, crit,
                            initial_divisions=cfg.divisions, max_level=cfg.max_level,
                            max_iterations=cfg.max_iterations,
                            error_order=cfg.error_quadrature)
        traces[crit] = run_adaptive(ac)
    rows = [r for tr in traces.values() for r in tr.rows()]
    write_csv(out / "adapt.csv", rows, TRACE_COLUMNS)
    longest = max(traces.values(), key=lambda tr: len(tr.steps))
    adapt_plot(out / "adapt.svg", longest.rows(), cfg.target,
               f"{cfg.benchmark} {cfg.order.upper()} adaptive refinement")
    summary = {crit: tr.summary() for crit, tr in traces.items()}
    if len(traces) == 2:
        fe, rc = traces["fe"].final_dofs, traces["recovered"].final_dofs
        summary["dof_ratio"] = fe / rc
    write_json(out / "adapt_summary.json", summary)
    for crit, tr in traces.items():
        last = tr.steps[-1]
        write_vtk(out / f"adapt_{crit}_final.vtk", last.mesh, cell_data=error_cell_data(last.report),
                  title=f"{cfg.benchmark} final mesh, {crit} stop")
        print(f"stop on {crit}: {tr.stop_reason}, {tr.final_dofs} dofs, "
              f"{len(tr.steps)} iterations, {tr.total_seconds:.1f} s")
        for w in tr.warnings:
            log.warning("%s: %s", crit, w)
    if "dof_ratio" in summary:
        print(f"dof ratio fe/recovered: {summary['dof_ratio']:.2f}")
    return EXIT_OK


HANDLERS = {"verify": cmd_verify, "solve": cmd_solve, "estimate": cmd_estimate,
            "adapt": cmd_adapt}


def main(argv=None) -> int:
    try:
        cfg, verbose = parse_config(sys.argv[1:] if argv is None else argv)
    except UsageError as exc:
        print(f"sprest: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return HANDLERS[cfg.command](cfg)
    except UsageError as exc:
        print(f"sprest: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, FloatingPointError, ArithmeticError) as exc:
        print(f"sprest: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
