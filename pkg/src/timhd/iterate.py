"""Initialization and the Stokes / Newton / Oseen fixed-point loops."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .assembly import LinearParts, ProblemConfig, build_method_system, linear_parts
from .fem import FeSystem, FieldSolution, NormMatrices, cell_divergence, quad_norm
from .linsolve import Factorization, LinearSolveError, LinearSolveStats

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ("iter", "diff_u", "diff_theta", "diff_p", "diff_phi", "divJ")


class Diverged(RuntimeError):
    pass


@dataclass
class IterState:
    solution: FieldSolution
    n: int = 0


@dataclass
class IterRecord:
    iter: int
    diff_u: float
    diff_theta: float
    diff_p: float
    diff_phi: float
    divJ: float
    rel: float


@dataclass
class SolveReport:
    method: str
    status: str = "max_iter"
    iterations: int = 0
    history: list[IterRecord] = field(default_factory=list)
    linear_stats: list[LinearSolveStats] = field(default_factory=list)
    divJ_init: float = 0.0
    seconds: float = 0.0

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    @property
    def diffs(self) -> np.ndarray:
        return np.array([r.rel for r in self.history])

    @property
    def max_divJ(self) -> float:
        return max([self.divJ_init] + [r.divJ for r in self.history])

    def write_history(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(HISTORY_COLUMNS)
            for r in self.history:
                w.writerow([r.iter] + [repr(float(getattr(r, c))) for c in HISTORY_COLUMNS[1:]])


class Solver:
    """Holds the iteration-independent pieces for one (system, config) pair."""

    def __init__(self, sys: FeSystem, cfg: ProblemConfig):
        self.sys = sys
        self.cfg = cfg
        self.parts: LinearParts = linear_parts(sys, cfg)
        self.norms = NormMatrices(sys)
        self._static = None  # init and Stokes share one matrix

    # -- norms ------------------------------------------------------------
    def energy_norm(self, x) -> float:
        """|grad u| + |J|_div over a full vector."""
        s = self.sys
        u = x[s.field_slice("velocity")]
        J = x[s.field_slice("current")]
        return quad_norm(self.norms.vel_h1, u) + np.sqrt(
            quad_norm(self.norms.rt_mass, J) ** 2 + quad_norm(self.norms.rt_divdiv, J) ** 2
        )

    def theta_norm(self, x) -> float:
        return quad_norm(self.norms.p1_h1, x[self.sys.field_slice("temperature")])

    def div_norm(self, x) -> float:
        d = cell_divergence(self.sys, x)
        return float(np.sqrt(np.sum(self.sys.area * d**2)))

    # -- steps ---------------------------------------------------------------
    def _solve(self, method, prev, report: SolveReport | None):
        A, b = build_method_system(self.sys, self.cfg, prev, method=method, parts=self.parts)
        if method in ("init", "stokes"):
            if self._static is None:
                self._static = Factorization(A, self.sys.n_borders)
            lu = self._static
        else:
            lu = Factorization(A, self.sys.n_borders)
        x, stats = lu.solve(b)
        if report is not None:
            report.linear_stats.append(stats)
        return x

    def initialize(self, report: SolveReport | None = None) -> IterState:
        x = self._solve("init", None, report)
        return IterState(FieldSolution(self.sys, x), 0)

    def step(self, state: IterState, report: SolveReport | None = None, method: str | None = None) -> IterState:
        method = method or self.cfg.method
        x = self._solve(method, state.solution.x, report)
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > self.cfg.divergence_cap:
            raise Diverged(f"iterate {state.n + 1} left the divergence cap")
        return IterState(FieldSolution(self.sys, x), state.n + 1)

    def record(self, old: IterState, new: IterState) -> IterRecord:
        s = self.sys
        d = new.solution.x - old.solution.x
        x = new.solution.x
        diff_u = self.energy_norm(d)
        diff_t = self.theta_norm(d)
        diff_p = quad_norm(self.norms.p1_mass, d[s.field_slice("pressure")])
        diff_phi = quad_norm(self.norms.p0_mass, d[s.field_slice("potential")])
        rel = max(diff_u / max(self.energy_norm(x), 1.0), diff_t / max(self.theta_norm(x), 1.0))
        return IterRecord(new.n, diff_u, diff_t, diff_p, diff_phi, self.div_norm(x), rel)

    def run(self, state: IterState | None = None):
        """Initialize (unless a state is given) and iterate until converged, stalled or diverged."""
        cfg = self.cfg
        report = SolveReport(cfg.method)
        t0 = time.perf_counter()
        if state is None:
            state = self.initialize(report)
        report.divJ_init = self.div_norm(state.solution.x)
        for _ in range(cfg.max_iter):
            try:
                new = self.step(state, report)
            except (Diverged, LinearSolveError) as exc:
                log.info("%s: diverged at iteration %d (%s)", cfg.method, state.n + 1, exc)
                report.status = "diverged"
                break
            rec = self.record(state, new)
            report.history.append(rec)
            state = new
            log.debug("%s it %d rel %.3e", cfg.method, rec.iter, rec.rel)
            if not np.isfinite(rec.rel):
                report.status = "diverged"
                break
            if rec.rel <= cfg.tol:
                report.status = "converged"
                break
        report.iterations = state.n
        report.seconds = time.perf_counter() - t0
        return state.solution, report


def initialize(sys: FeSystem, cfg: ProblemConfig) -> IterState:
    return Solver(sys, cfg).initialize()


def step(sys: FeSystem, cfg: ProblemConfig, state: IterState) -> IterState:
    return Solver(sys, cfg).step(state)


def run(sys: FeSystem, cfg: ProblemConfig):
    return Solver(sys, cfg).run()


def roundoff_floor(solver: Solver, state: IterState, steps: int = 3) -> float:
    """Largest relative difference produced by extra steps from a converged state.

    This is the level below which successive differences carry no information
    about the convergence order.
    """
    worst = 0.0
    for _ in range(steps):
        new = solver.step(state)
        worst = max(worst, solver.record(state, new).rel)
        state = new
    return worst


def convergence_slope(diffs, floor: float = 1e-13, last: int | None = None) -> float:
    """Least-squares slope of log d[n+1] against log d[n] over entries above `floor`.

    Pass ``floor`` well above the round-off level (see ``roundoff_floor``);
    differences in the noise band would otherwise flatten the slope of a
    quadratically convergent sequence.
    """
    d = np.asarray(diffs, float)
    d = d[d > floor]
    if last is not None:
        d = d[-last:]
    if len(d) < 3:
        return float("nan")
    x, y = np.log(d[:-1]), np.log(d[1:])
    return float(np.polyfit(x, y, 1)[0])
