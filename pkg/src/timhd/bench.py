"""Benchmark problems, error norms and convergence-rate studies."""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
import sympy as sp

from .assembly import ProblemConfig, make_system
from .fem import FeSystem, FieldSolution, cell_divergence, evaluate_velocity, p1_at, rt0_at, velocity_at
from .iterate import Solver
from .mesh import Mesh, build_lshape, build_structured_rect, unit_square

STUDY_COLUMNS = (
    "h", "err_u_h1", "rate_u", "err_p_l2", "rate_p", "err_J_div", "rate_J",
    "err_phi_l2", "rate_phi", "err_theta_h1", "rate_theta", "divJ", "iters", "seconds",
)
PROFILE_COLUMNS = ("s", "u2_mid_height", "u1_mid_width")

_X, _Y = sp.symbols("x y", real=True)
_PR, _RA, _KAP, _B3, _I1, _I2 = sp.symbols("Pr Ra kappa B3 i1 i2", real=True)


def _angle(y, x):
    """Polar angle in [0, 2 pi), continuous across the negative x-axis."""
    return np.mod(np.arctan2(y, x), 2 * np.pi)


def _lambdify(expr, params=False):
    args = (_X, _Y, _PR, _RA, _KAP, _B3, _I1, _I2) if params else (_X, _Y)
    fn = sp.lambdify(args, expr, modules=[{"atan2": _angle}, "numpy"], cse=True)
    return fn


def _scalar(fn):
    def call(x, y, *a):
        x = np.asarray(x, float)
        return np.broadcast_to(np.asarray(fn(x, y, *a), float), x.shape).copy()
    return call


def _vector(fns):
    f1, f2 = (_scalar(f) for f in fns)

    def call(x, y, *a):
        return np.stack([f1(x, y, *a), f2(x, y, *a)])
    return call


def _zero_at_origin(fn):
    """Wrap a field that vanishes like r**mu at the corner, where 0 * inf would give nan."""
    def call(x, y, *a):
        x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
        at0 = (x == 0.0) & (y == 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            v = fn(x, y, *a)
        return np.where(at0, 0.0, v)
    return call


def _bind(fn, values):
    def call(x, y):
        return fn(x, y, *values)
    return call


@dataclass
class ExactSolution:
    """Closed-form fields with the sources that make them solve the coupled system.

    Every callable takes ``(x, y)`` arrays. Vector fields return arrays of
    shape ``(2, ...)``; ``grad_u`` returns ``(2, 2, ...)`` indexed
    [component, direction].
    """

    name: str
    u: Callable
    grad_u: Callable
    p: Callable
    J: Callable
    div_J: Callable
    phi: Callable
    theta: Callable
    grad_theta: Callable
    f: Callable
    g: Callable
    varphi: Callable
    Pr: float
    Ra: float
    kappa: float
    B3: float
    i_dir: tuple[float, float] = (0.0, 1.0)
    boundary_mode: str = "insulating"
    extras: dict = field(default_factory=dict)

    def mesh(self, n: int) -> Mesh:
        if self.name == "lshape":
            return build_lshape(n)
        return unit_square(n)

    def config(self, method: str = "oseen", **overrides) -> ProblemConfig:
        kw = dict(
            Pr=self.Pr, Ra=self.Ra, kappa=self.kappa, B3=self.B3, i_dir=self.i_dir,
            f=self.f, g=self.g, varphi=self.varphi,
            u_dirichlet=lambda x, y: self.u(x, y),
            theta_dirichlet=self.theta,
            boundary_mode=self.boundary_mode, method=method, label=self.name,
        )
        kw.update(overrides)
        return ProblemConfig(**kw)


@lru_cache(maxsize=None)
def _derive(name: str):
    """Symbolic fields and sources for a named benchmark; returns lambdified callables."""
    x, y = _X, _Y
    pi = sp.pi
    if name == "smooth":
        u1 = 2 * pi * sp.sin(pi * x) ** 2 * sp.cos(pi * y) * sp.sin(pi * y)
        u2 = -2 * pi * sp.sin(pi * y) ** 2 * sp.cos(pi * x) * sp.sin(pi * x)
        J1 = pi / 20 * sp.sin(pi * x) * sp.cos(pi * y)
        J2 = -pi / 20 * sp.cos(pi * x) * sp.sin(pi * y)
        p = sp.cos(pi * y) * sp.cos(pi * x)
        phi = x - sp.Rational(1, 2)
        extras = {}
    elif name == "lshape":
        mu = corner_exponent()
        w = 3 * sp.pi / 2
        r = sp.sqrt(x**2 + y**2)
        t = sp.atan2(y, x)
        s = sp.Symbol("s", real=True)
        m = sp.Float(mu, 30)
        cw = sp.cos(m * w)
        psi = (sp.sin((1 + m) * s) * cw / (1 + m) - sp.cos((1 + m) * s)
               - sp.sin((1 - m) * s) * cw / (1 - m) + sp.cos((1 - m) * s))
        d1 = sp.diff(psi, s)
        d3 = sp.diff(psi, s, 3)
        u1 = r**m * ((1 + m) * sp.sin(t) * psi.subs(s, t) + sp.cos(t) * d1.subs(s, t))
        u2 = r**m * (sp.sin(t) * d1.subs(s, t) - (1 + m) * sp.cos(t) * psi.subs(s, t))
        p = -r ** (m - 1) * ((1 + m) ** 2 * d1.subs(s, t) + d3.subs(s, t)) / (1 - m)
        pot = r ** sp.Rational(2, 3) * sp.sin(sp.Rational(2, 3) * t)
        J1, J2 = sp.diff(pot, x), sp.diff(pot, y)
        phi = sp.Integer(0)
        extras = {"mu": mu}
    else:
        raise KeyError(name)
    theta = u1 + u2

    def lap(e):
        return sp.diff(e, x, 2) + sp.diff(e, y, 2)

    conv = lambda e: u1 * sp.diff(e, x) + u2 * sp.diff(e, y)  # noqa: E731
    # momentum: -Pr lap u + (u.grad)u + Pr grad p - kappa J x B - Pr Ra theta i
    f1 = -_PR * lap(u1) + conv(u1) + _PR * sp.diff(p, x) - _KAP * _B3 * J2 - _PR * _RA * theta * _I1
    f2 = -_PR * lap(u2) + conv(u2) + _PR * sp.diff(p, y) + _KAP * _B3 * J1 - _PR * _RA * theta * _I2
    # Ohm: J + grad phi - u x B, with u x B = B3 (u2, -u1)
    g1 = J1 + sp.diff(phi, x) - _B3 * u2
    g2 = J2 + sp.diff(phi, y) + _B3 * u1
    vphi = -lap(theta) + conv(theta)

    L = _lambdify
    out = dict(
        u=_vector([L(u1), L(u2)]),
        grad_u_fns=[_scalar(L(sp.diff(c, d))) for c in (u1, u2) for d in (x, y)],
        p=_scalar(L(p)),
        J=_vector([L(J1), L(J2)]),
        div_J=_scalar(L(sp.diff(J1, x) + sp.diff(J2, y))),
        phi=_scalar(L(phi)),
        theta=_scalar(L(theta)),
        grad_theta=_vector([L(sp.diff(theta, x)), L(sp.diff(theta, y))]),
        f=_vector([L(f1, True), L(f2, True)]),
        g=_vector([L(g1, True), L(g2, True)]),
        varphi=_scalar(L(vphi, True)),
        extras=extras,
    )
    if name == "lshape":
        out["u"] = _zero_at_origin(out["u"])
        out["theta"] = _zero_at_origin(out["theta"])
    return out


def _build(name, Pr, Ra, kappa, B3, i_dir, boundary_mode) -> ExactSolution:
    d = _derive(name)
    vals = (Pr, Ra, kappa, B3, i_dir[0], i_dir[1])
    gu = d["grad_u_fns"]

    def grad_u(x, y):
        return np.stack([np.stack([gu[0](x, y), gu[1](x, y)]), np.stack([gu[2](x, y), gu[3](x, y)])])

    return ExactSolution(
        name=name, u=d["u"], grad_u=grad_u, p=d["p"], J=d["J"], div_J=d["div_J"], phi=d["phi"],
        theta=d["theta"], grad_theta=d["grad_theta"],
        f=_bind(d["f"], vals), g=_bind(d["g"], vals), varphi=_bind(d["varphi"], vals),
        Pr=Pr, Ra=Ra, kappa=kappa, B3=B3, i_dir=tuple(i_dir), boundary_mode=boundary_mode,
        extras=dict(d["extras"]),
    )


def manufactured_smooth_2d(Pr=1.0, Ra=1.0, kappa=1.0, B3=1.0, i_dir=(0.0, 1.0)) -> ExactSolution:
    """Smooth trigonometric solution on the unit square with insulating walls.

    The current density is the divergence-free field
    (pi/20) (sin(pi x) cos(pi y), -cos(pi x) sin(pi y)), tangential on the boundary.
    """
    return _build("smooth", Pr, Ra, kappa, B3, i_dir, "insulating")


def corner_exponent(alpha: float = 1.5 * math.pi, tol: float = 1e-14) -> float:
    """Smallest positive root of mu sin(alpha) + sin(mu alpha) = 0, by bisection on (0, 1)."""
    def F(m):
        return m * math.sin(alpha) + math.sin(m * alpha)

    lo, hi = 1e-3, 1.0
    flo = F(lo)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        fm = F(mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def lshape_singular(Pr=1.0, Ra=1.0, kappa=1.0, B3=1.0, i_dir=(0.0, 1.0)) -> ExactSolution:
    """Corner-singular flow on the L-shaped domain with conducting walls (phi = 0)."""
    return _build("lshape", Pr, Ra, kappa, B3, i_dir, "conducting")


def cavity_setup(Ra: float, Pr: float = 0.71, method: str = "newton", **overrides) -> ProblemConfig:
    """Differentially heated square cavity: hot left wall, cold right wall, insulated top and bottom."""
    if not Ra > 0:
        raise ValueError("Ra must be positive")
    kw = dict(
        Pr=Pr, Ra=Ra, kappa=1.0, B3=1.0,
        theta_dirichlet=lambda x, y: np.where(x < 0.5, 1.0, 0.0),
        theta_walls=("left", "right"), method=method, label="cavity",
    )
    kw.update(overrides)
    return ProblemConfig(**kw)


BENARD_RECT = ((0.0, 5.0), (0.0, 1.0))


def benard_setup(Ra: float, heating: str = "uniform", method: str = "oseen", **overrides) -> ProblemConfig:
    """Rayleigh-Benard layer on [0, 5] x [0, 1]; heated bottom, cold top, adiabatic sides."""
    if not Ra > 0:
        raise ValueError("Ra must be positive")
    if heating == "uniform":
        def bottom(x):
            return np.ones_like(x)
    elif heating == "sinusoidal":
        def bottom(x):
            return np.sin(x / 5.0)
    else:
        raise ValueError(f"unknown heating {heating!r}")
    kw = dict(
        Pr=1.0, Ra=Ra, kappa=1.0, B3=1.0,
        theta_dirichlet=lambda x, y: np.where(y < 0.5, bottom(x), 0.0),
        theta_walls=("bottom", "top"), method=method, label=f"benard-{heating}",
    )
    kw.update(overrides)
    return ProblemConfig(**kw)


def benard_mesh(nx: int = 100, ny: int = 20) -> Mesh:
    return build_structured_rect(nx, ny, BENARD_RECT)


# ---- errors ------------------------------------------------------------------

@dataclass
class ErrorReport:
    err_u_h1: float
    err_p_l2: float
    err_J_div: float
    err_phi_l2: float
    err_theta_h1: float
    divJ: float
    iters: int = 0
    seconds: float = 0.0

    def as_dict(self):
        return dict(
            err_u_h1=self.err_u_h1, err_p_l2=self.err_p_l2, err_J_div=self.err_J_div,
            err_phi_l2=self.err_phi_l2, err_theta_h1=self.err_theta_h1, divJ=self.divJ,
        )


def _l2_mod_mean(wq, diff, remove_mean):
    if remove_mean:
        diff = diff - np.sum(wq * diff) / np.sum(wq)
    return float(np.sqrt(np.sum(wq * diff**2)))


def error_norms(solution: FieldSolution, exact: ExactSolution, sys: FeSystem | None = None,
                degree: int = 8) -> ErrorReport:
    """Errors of a discrete solution against closed-form fields, by quadrature.

    Pressure errors are taken modulo constants; so are potential errors in
    insulating mode, where the potential is only fixed up to a constant.
    """
    sys = solution.sys if sys is None else sys
    x = solution.x
    ed = sys.element_data(degree)
    X, Y = ed.xq[..., 0], ed.xq[..., 1]
    wq = ed.wq
    _, ug = velocity_at(sys, x, ed)
    gu = np.moveaxis(exact.grad_u(X, Y), (0, 1), (-2, -1))
    e_u = float(np.sqrt(np.sum(wq[..., None, None] * (gu - ug) ** 2)))

    ph, _ = p1_at(sys, solution.p, ed)
    e_p = _l2_mod_mean(wq, exact.p(X, Y) - ph, True)

    Jh = rt0_at(sys, solution.J, ed)
    Je = np.moveaxis(exact.J(X, Y), 0, -1)
    divh = cell_divergence(sys, x)
    e_J0 = np.sum(wq[..., None] * (Je - Jh) ** 2)
    e_Jd = np.sum(wq * (exact.div_J(X, Y) - divh[:, None]) ** 2)
    e_J = float(np.sqrt(e_J0 + e_Jd))

    phh = solution.phi[:, None]
    e_phi = _l2_mod_mean(wq, exact.phi(X, Y) - phh, sys.boundary_mode == "insulating")

    _, tg = p1_at(sys, solution.theta, ed)
    te = np.moveaxis(exact.grad_theta(X, Y), 0, -1)
    e_t = float(np.sqrt(np.sum(wq[..., None] * (te - tg[:, None, :]) ** 2)))

    divJ = float(np.sqrt(np.sum(sys.area * divh**2)))
    return ErrorReport(e_u, e_p, e_J, e_phi, e_t, divJ)


# ---- studies -------------------------------------------------------------------

@dataclass
class StudyRow:
    n: int
    h: float
    errors: ErrorReport | None
    status: str
    report: object = None
    rates: dict = field(default_factory=dict)


_RATE_KEYS = (("err_u_h1", "rate_u"), ("err_p_l2", "rate_p"), ("err_J_div", "rate_J"),
              ("err_phi_l2", "rate_phi"), ("err_theta_h1", "rate_theta"))


def solve_benchmark(exact: ExactSolution, n: int, method: str = "oseen", **overrides):
    mesh = exact.mesh(n)
    cfg = exact.config(method, **overrides)
    sys = make_system(mesh, cfg)
    solver = Solver(sys, cfg)
    sol, report = solver.run()
    return sys, sol, report


def convergence_study(exact: ExactSolution, method: str, levels, **overrides) -> list[StudyRow]:
    """Solve on each refinement level and compute observed rates between consecutive levels."""
    levels = list(levels)
    if len(levels) < 2:
        raise ValueError("a convergence study needs at least two levels")
    rows: list[StudyRow] = []
    for n in levels:
        t0 = time.perf_counter()
        try:
            sys, sol, report = solve_benchmark(exact, n, method, **overrides)
        except Exception as exc:  # a failed level is reported, not fatal
            rows.append(StudyRow(n, float("nan"), None, f"failed: {exc}"))
            continue
        err = error_norms(sol, exact, sys)
        err.iters = report.iterations
        err.seconds = time.perf_counter() - t0
        rows.append(StudyRow(n, sys.mesh.h, err, report.status, report))
    for prev, cur in zip(rows, rows[1:]):
        if prev.errors is None or cur.errors is None:
            continue
        scale = math.log(prev.h / cur.h)
        for ek, rk in _RATE_KEYS:
            a, b = getattr(prev.errors, ek), getattr(cur.errors, ek)
            cur.rates[rk] = math.log(a / b) / scale if a > 0 and b > 0 else float("nan")
    return rows


def _fmt(v):
    return "" if v is None else f"{v:.6e}"


def write_study_csv(rows: list[StudyRow], path, timing: bool = True) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STUDY_COLUMNS)
        for r in rows:
            if r.errors is None:
                w.writerow([_fmt(r.h)] + ["failed"] + [""] * (len(STUDY_COLUMNS) - 2))
                continue
            e = r.errors
            vals = {"h": _fmt(r.h), "divJ": _fmt(e.divJ), "iters": str(e.iters),
                    "seconds": f"{e.seconds:.3f}" if timing else ""}
            for ek, rk in _RATE_KEYS:
                vals[ek] = _fmt(getattr(e, ek))
                vals[rk] = _fmt(r.rates.get(rk))
            w.writerow([vals[c] for c in STUDY_COLUMNS])


def midline_profiles(solution: FieldSolution, sys: FeSystem | None = None, npts: int = 101,
                     rect=((0.0, 1.0), (0.0, 1.0))) -> dict:
    """Vertical velocity along y = mid-height and horizontal velocity along x = mid-width."""
    sys = solution.sys if sys is None else sys
    (x0, x1), (y0, y1) = rect
    s = np.linspace(0.0, 1.0, npts)
    xs = x0 + s * (x1 - x0)
    ys = y0 + s * (y1 - y0)
    horiz = np.column_stack([xs, np.full(npts, 0.5 * (y0 + y1))])
    vert = np.column_stack([np.full(npts, 0.5 * (x0 + x1)), ys])
    u_h = evaluate_velocity(sys, solution.x, horiz)
    u_v = evaluate_velocity(sys, solution.x, vert)
    return {"s": s, "x": xs, "y": ys, "u2_mid_height": u_h[:, 1], "u1_mid_width": u_v[:, 0]}


def write_profiles_csv(profiles: dict, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PROFILE_COLUMNS)
        for row in zip(*(profiles[c] for c in PROFILE_COLUMNS)):
            w.writerow([repr(float(v)) for v in row])
