"""Batch front end: convergence studies, single runs, Rayleigh sweeps, cavity and Benard runs.

Exit codes: 0 on success, 2 when a run finished but did not converge, 1 on
errors (including usage errors).
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import bench
from .assembly import ProblemConfig, make_system
from .fem import FeSystem, FieldSolution, cell_divergence
from .iterate import Solver, SolveReport
from .mesh import Mesh, unit_square

log = logging.getLogger(__name__)

COMMANDS = ("convergence", "run", "sweep-ra", "cavity", "benard")
BENCHMARKS = ("smooth", "lshape")
CLI_METHODS = ("stokes", "newton", "oseen")
DEFAULT_LEVELS = (8, 16, 32, 64)
DEFAULT_SWEEP = (1e1, 1e2, 1e3, 1e4, 1e5, 1e6)
SWEEP_COLUMNS = ("Ra", "status", "iters", "final_diff", "max_divJ")

EXIT_OK, EXIT_ERROR, EXIT_NOT_CONVERGED = 0, 1, 2


class UsageError(ValueError):
    pass


@dataclass
class RunSpec:
    command: str
    benchmark: str = "smooth"
    method: str | None = None
    n: int | None = None
    levels: tuple[int, ...] = DEFAULT_LEVELS
    ra: tuple[float, ...] = ()
    pr: float | None = None
    kappa: float | None = None
    b3: float | None = None
    tol: float = 1e-8
    max_iter: int = 100
    heating: str = "uniform"
    out: Path = Path("out")
    timing: bool = True
    vtk: bool = True

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise UsageError(f"unknown command {self.command!r}")
        if self.benchmark not in BENCHMARKS:
            raise UsageError(f"unknown benchmark {self.benchmark!r}")
        if self.method is not None and self.method not in CLI_METHODS:
            raise UsageError(f"unknown method {self.method!r}")
        if self.command == "convergence" and len(self.levels) < 2:
            raise UsageError("convergence needs at least two levels")
        if any(k < 1 for k in self.levels) or (self.n is not None and self.n < 1):
            raise UsageError("mesh levels must be positive")
        if self.command in ("cavity", "benard") and len(self.ra) > 1:
            raise UsageError(f"{self.command} takes a single --ra")
        for r in self.ra:
            if not r > 0:
                raise UsageError("Ra values must be positive")
        # let ProblemConfig check the physical overrides
        try:
            ProblemConfig(**self.physics(), **self.controls())
        except ValueError as exc:
            raise UsageError(str(exc)) from exc

    def physics(self) -> dict:
        kw = {"Pr": self.pr, "kappa": self.kappa, "B3": self.b3}
        return {k: v for k, v in kw.items() if v is not None}

    def controls(self) -> dict:
        return {"tol": self.tol, "max_iter": self.max_iter}


# ---- parsing -------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="timhd", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", type=Path, help="flat key=value file; command-line flags win")
    p.add_argument("--benchmark", choices=BENCHMARKS)
    p.add_argument("--method", choices=CLI_METHODS)
    p.add_argument("--n", type=int)
    p.add_argument("--levels", type=_int_list)
    p.add_argument("--ra", type=_float_list, help="one value, or a comma list for sweep-ra")
    p.add_argument("--pr", type=float)
    p.add_argument("--kappa", type=float)
    p.add_argument("--b3", type=float)
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iter", type=int)
    p.add_argument("--heating", choices=("uniform", "sinusoidal"))
    p.add_argument("--out", type=Path)
    p.add_argument("--no-timing", action="store_true", default=None,
                   help="leave the seconds column empty so outputs are byte-reproducible")
    p.add_argument("--no-vtk", action="store_true", default=None)
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


_CONFIG_TYPES = {
    "benchmark": str, "method": str, "n": int, "levels": _int_list, "ra": _float_list,
    "pr": float, "kappa": float, "b3": float, "tol": float, "max_iter": int,
    "heating": str, "out": Path,
    "no_timing": lambda s: s.strip().lower() in ("1", "true", "yes"),
    "no_vtk": lambda s: s.strip().lower() in ("1", "true", "yes"),
}


def read_config(path) -> dict:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_").lower()
        if key not in _CONFIG_TYPES:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            out[key] = _CONFIG_TYPES[key](value)
        except (ValueError, argparse.ArgumentTypeError) as exc:
            raise UsageError(f"{path}:{lineno}: {exc}") from exc
    return out


def parse_cli(argv=None) -> RunSpec:
    """Turn command-line arguments into a validated RunSpec.

    Raises UsageError on an invalid combination; argparse itself exits with
    status 1 on unknown flags or malformed values.
    """
    ns = vars(_build_parser().parse_args(argv))
    merged = read_config(ns["config"]) if ns["config"] is not None else {}
    merged.update({k: v for k, v in ns.items() if v is not None and k in _CONFIG_TYPES})
    kw = {"command": ns["command"]}
    names = {f.name for f in fields(RunSpec)}
    for k, v in merged.items():
        if k == "no_timing":
            kw["timing"] = not v
        elif k == "no_vtk":
            kw["vtk"] = not v
        elif k in names:
            kw[k] = v
    if "n" in kw and "levels" not in kw and ns["command"] == "convergence":
        raise UsageError("convergence takes --levels, not --n")
    return RunSpec(**kw)


# ---- VTK output ------------------------------------------------------------------

def _vtk_header(fh, mesh: Mesh, title: str) -> None:
    V, T = len(mesh.vertices), len(mesh.triangles)
    fh.write(f"# vtk DataFile Version 3.0\n{title}\nASCII\nDATASET UNSTRUCTURED_GRID\n")
    fh.write(f"POINTS {V} double\n")
    for x, y in mesh.vertices:
        fh.write(f"{x:.17g} {y:.17g} 0\n")
    fh.write(f"CELLS {T} {4 * T}\n")
    for a, b, c in mesh.triangles:
        fh.write(f"3 {a} {b} {c}\n")
    fh.write(f"CELL_TYPES {T}\n")
    fh.write("5\n" * T)


def _scalars(fh, name, values) -> None:
    fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
    fh.writelines(f"{v:.17g}\n" for v in values)


def _vectors(fh, name, values) -> None:
    fh.write(f"VECTORS {name} double\n")
    fh.writelines(f"{a:.17g} {b:.17g} 0\n" for a, b in values)


def write_mesh_vtk(mesh: Mesh, path) -> None:
    """Dump the triangulation alone as a legacy ASCII unstructured grid."""
    with open(path, "w") as fh:
        _vtk_header(fh, mesh, "mesh")


def cell_current(sys: FeSystem, J: np.ndarray) -> np.ndarray:
    """Cell average of the RT0 field (its value at the centroid), shape (T, 2)."""
    m = sys.mesh
    P = m.vertices[m.triangles]
    arm = m.centroid[:, None, :] - P  # centroid minus the vertex opposite each local edge
    return np.einsum("tk,tk,tkd->td", sys.rt_coef, J[m.tri_edges], arm)


def write_vtk(solution: FieldSolution, sys: FeSystem, path) -> None:
    """Write velocity, pressure and temperature at vertices and phi, J, div J per cell.

    The velocity is the vertex (P1) part; bubble coefficients vanish at vertices.
    """
    m = sys.mesh
    V = len(m.vertices)
    u = solution.u
    uv = np.column_stack([u[:V], u[len(u) // 2:len(u) // 2 + V]])
    with open(path, "w") as fh:
        _vtk_header(fh, m, "timhd solution")
        fh.write(f"POINT_DATA {V}\n")
        _vectors(fh, "velocity", uv)
        _scalars(fh, "pressure", solution.p)
        _scalars(fh, "temperature", solution.theta)
        fh.write(f"CELL_DATA {len(m.triangles)}\n")
        _scalars(fh, "potential", solution.phi)
        _vectors(fh, "current", cell_current(sys, solution.J))
        _scalars(fh, "divJ", cell_divergence(sys, solution.x))


# ---- commands ----------------------------------------------------------------------

def _exact(spec: RunSpec, **extra):
    make = bench.manufactured_smooth_2d if spec.benchmark == "smooth" else bench.lshape_singular
    return make(**spec.physics(), **extra)


def _write_sweep(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for ra, rep in rows:
            last = rep.history[-1].rel if rep.history else float("nan")
            w.writerow([f"{ra:g}", rep.status, rep.iterations, f"{last:.6e}", f"{rep.max_divJ:.6e}"])


def _finish(sol, sys, report: SolveReport, spec: RunSpec, stem: str) -> None:
    report.write_history(spec.out / f"{stem}_history.csv")
    if spec.vtk:
        write_vtk(sol, sys, spec.out / f"{stem}.vtk")


def _run_convergence(spec: RunSpec) -> bool:
    method = spec.method or "oseen"
    rows = bench.convergence_study(_exact(spec), method, spec.levels, **spec.controls())
    bench.write_study_csv(rows, spec.out / f"convergence_{spec.benchmark}_{method}.csv", spec.timing)
    for r in rows:
        log.info("n=%d status=%s", r.n, r.status)
    return all(r.status == "converged" for r in rows)


def _run_single(spec: RunSpec) -> bool:
    method = spec.method or "oseen"
    extra = {"Ra": spec.ra[0]} if spec.ra else {}
    exact = _exact(spec, **extra)
    n = spec.n or 16
    sys_, sol, report = bench.solve_benchmark(exact, n, method, **spec.controls())
    rows = [bench.StudyRow(n, sys_.mesh.h, bench.error_norms(sol, exact, sys_), report.status, report)]
    rows[0].errors.iters = report.iterations
    rows[0].errors.seconds = report.seconds
    bench.write_study_csv(rows, spec.out / f"run_{spec.benchmark}_{method}_n{n}.csv", spec.timing)
    _finish(sol, sys_, report, spec, f"run_{spec.benchmark}_{method}_n{n}")
    return report.converged


def _run_sweep(spec: RunSpec) -> bool:
    method = spec.method or "oseen"
    n = spec.n or 32
    mesh = unit_square(n)
    rows = []
    for ra in spec.ra or DEFAULT_SWEEP:
        cfg = _exact(spec, Ra=ra).config(method, **spec.controls())
        sys_ = make_system(mesh, cfg)
        _, report = Solver(sys_, cfg).run()
        report.write_history(spec.out / f"sweep_{method}_Ra{ra:g}_history.csv")
        rows.append((ra, report))
        log.info("Ra=%g %s after %d iterations", ra, report.status, report.iterations)
    _write_sweep(rows, spec.out / f"sweep_{method}.csv")
    return all(rep.converged for _, rep in rows)


def _run_cavity(spec: RunSpec) -> bool:
    ra = spec.ra[0] if spec.ra else 1e4
    n = spec.n or 32
    cfg = bench.cavity_setup(ra, method=spec.method or "newton", **spec.physics(), **spec.controls())
    sys_ = make_system(unit_square(n), cfg)
    sol, report = Solver(sys_, cfg).run()
    stem = f"cavity_Ra{ra:g}"
    bench.write_profiles_csv(bench.midline_profiles(sol, sys_), spec.out / f"{stem}_profiles.csv")
    _finish(sol, sys_, report, spec, stem)
    return report.converged


def _run_benard(spec: RunSpec) -> bool:
    ra = spec.ra[0] if spec.ra else 1e4
    cfg = bench.benard_setup(ra, spec.heating, method=spec.method or "oseen",
                             **spec.physics(), **spec.controls())
    ny = spec.n or 20
    sys_ = make_system(bench.benard_mesh(5 * ny, ny), cfg)
    sol, report = Solver(sys_, cfg).run()
    stem = f"benard_{spec.heating}_Ra{ra:g}"
    prof = bench.midline_profiles(sol, sys_, rect=bench.BENARD_RECT)
    bench.write_profiles_csv(prof, spec.out / f"{stem}_profiles.csv")
    _finish(sol, sys_, report, spec, stem)
    return report.converged


_DISPATCH = {"convergence": _run_convergence, "run": _run_single, "sweep-ra": _run_sweep,
             "cavity": _run_cavity, "benard": _run_benard}


def run_command(spec: RunSpec) -> int:
    """Execute a RunSpec and map its outcome to an exit code."""
    try:
        spec.out.mkdir(parents=True, exist_ok=True)
        ok = _DISPATCH[spec.command](spec)
    except Exception:
        log.exception("%s failed", spec.command)
        return EXIT_ERROR
    return EXIT_OK if ok else EXIT_NOT_CONVERGED


def main(argv=None) -> int:
    verbose = argv if argv is not None else sys.argv[1:]
    level = logging.DEBUG if "-vv" in verbose else logging.INFO if "-v" in verbose else logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        spec = parse_cli(argv)
    except UsageError as exc:
        print(f"timhd: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return run_command(spec)


if __name__ == "__main__":
    raise SystemExit(main())
