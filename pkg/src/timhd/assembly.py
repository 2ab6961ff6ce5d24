"""Monolithic sparse systems for the coupled velocity/current/pressure/potential/temperature problem.

Weak form, per test function (v, K, q, psi, r):

    Pr(grad u, grad v) + c(w, u, v) - Pr(p, div v) - kappa(J x B, v) - Pr Ra (theta, v.i) = <f, v>
    kappa(J, K) + kappa(K x B, u) - kappa(phi, div K)                                   = kappa(g, K)
    -Pr(q, div u) = 0,   -kappa(psi, div J) = 0
    (grad theta, grad r) + h(w, theta, r)                                               = <varphi, r>

with c and h the skew-symmetrized convection forms. In 2D, J x B = B3 (J2, -J1).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import sparse

from .fem import FeSystem, p1_at, velocity_at

METHODS = ("init", "stokes", "newton", "oseen")

LOW_DEGREE = 4  # exact for every bilinear form here
HIGH_DEGREE = 8  # exact for the trilinear convection forms


class UnknownMethod(ValueError):
    pass


@dataclass
class ProblemConfig:
    """Physical parameters, data and iteration controls for one run.

    Source and boundary callables take ``(x, y)`` arrays; vector-valued ones
    return a pair ``(c1, c2)``. ``None`` means identically zero.
    """

    Pr: float = 1.0
    Ra: float = 1.0
    kappa: float = 1.0
    B3: float = 1.0
    i_dir: tuple[float, float] = (0.0, 1.0)
    f: Callable | None = None
    g: Callable | None = None
    varphi: Callable | None = None
    u_dirichlet: Callable | None = None
    theta_dirichlet: Callable | None = None
    theta_walls: tuple | None = None
    boundary_mode: str = "insulating"
    method: str = "oseen"
    tol: float = 1e-8
    max_iter: int = 100
    divergence_cap: float = 1e10
    label: str = field(default="", compare=False)

    def __post_init__(self):
        if not self.Pr > 0:
            raise ValueError("Pr must be positive")
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if not self.Ra >= 0:
            raise ValueError("Ra must be non-negative")
        if abs(np.hypot(*self.i_dir) - 1.0) > 1e-12:
            raise ValueError("buoyancy direction must be a unit vector")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.method not in METHODS[1:]:
            raise UnknownMethod(f"unknown method {self.method!r}")
        if self.boundary_mode not in ("insulating", "conducting"):
            raise ValueError(f"unknown boundary mode {self.boundary_mode!r}")


def make_system(mesh, cfg: ProblemConfig) -> FeSystem:
    return FeSystem(mesh, cfg.boundary_mode, cfg.theta_walls)


# ---- triplet helpers -----------------------------------------------------

def _pairs(rows: np.ndarray, cols: np.ndarray):
    """Broadcast per-element row (T, a) and column (T, b) DOFs to (T, a, b)."""
    R = np.broadcast_to(rows[:, :, None], rows.shape + (cols.shape[1],))
    C = np.broadcast_to(cols[:, None, :], (rows.shape[0], rows.shape[1], cols.shape[1]))
    return R, C


def _csr(n, *blocks) -> sparse.csr_matrix:
    rows, cols, vals = [], [], []
    for r, c, v in blocks:
        R, C = _pairs(r, c)
        rows.append(R.ravel())
        cols.append(C.ravel())
        vals.append(np.broadcast_to(v, R.shape).ravel())
    if not rows:
        return sparse.csr_matrix((n, n))
    A = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    return A.tocsr()


def _full(sys: FeSystem, w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, float)
    if w.shape == (sys.ndof,):
        return w
    out = np.zeros(sys.ndof)
    if w.shape == (sys.sizes["velocity"],):
        out[sys.field_slice("velocity")] = w
        return out
    raise ValueError("expected a full coefficient vector or a velocity vector")


def _vector_velocity_block(S: np.ndarray) -> np.ndarray:
    """Block-diagonal (T, 8, 8) from a scalar (T, 4, 4) local matrix."""
    T = S.shape[0]
    out = np.zeros((T, 8, 8))
    out[:, :4, :4] = S
    out[:, 4:, 4:] = S
    return out


# ---- bilinear forms --------------------------------------------------------

def assemble_A0(sys: FeSystem, cfg: ProblemConfig) -> sparse.csr_matrix:
    """Viscous, current mass and Lorentz/Ohm coupling blocks."""
    ed = sys.element_data(LOW_DEGREE)
    K = cfg.Pr * np.einsum("tq,tqad,tqbd->tab", ed.wq, ed.dN, ed.dN)
    M = cfg.kappa * np.einsum("tq,tqad,tqbd->tab", ed.wq, ed.rt, ed.rt)
    blocks = [(sys.vel_dofs, sys.vel_dofs, _vector_velocity_block(K)),
              (sys.j_dofs, sys.j_dofs, M)]
    if cfg.B3 != 0.0:
        # S[t, a, e, d] = int N_a * phi_e[d]
        S = np.einsum("tq,qa,tqed->taed", ed.wq, ed.N, ed.rt)
        kb = cfg.kappa * cfg.B3
        C = np.empty((S.shape[0], 8, 3))
        C[:, :4, :] = -kb * S[..., 1]  # test v = N_a e_x: -kappa B3 int J2 N_a
        C[:, 4:, :] = kb * S[..., 0]  # test v = N_a e_y: +kappa B3 int J1 N_a
        blocks.append((sys.vel_dofs, sys.j_dofs, C))
        blocks.append((sys.j_dofs, sys.vel_dofs, -C.transpose(0, 2, 1)))
    return _csr(sys.ndof, *blocks)


def assemble_B(sys: FeSystem, cfg: ProblemConfig) -> sparse.csr_matrix:
    """Divergence constraints for (p, u) and (phi, J) plus zero-mean borders."""
    ed = sys.element_data(LOW_DEGREE)
    # D[t, i, c, a] = int lam_i * d_c N_a
    D = np.einsum("tq,qi,tqac->tica", ed.wq, ed.lam, ed.dN)
    Bs = -cfg.Pr * D.reshape(-1, 3, 8)
    Bm = (-cfg.kappa * sys.area[:, None] * sys.rt_div)[:, None, :]
    phi = sys.phi_dofs[:, None]
    blocks = [
        (sys.p_dofs, sys.vel_dofs, Bs),
        (sys.vel_dofs, sys.p_dofs, Bs.transpose(0, 2, 1)),
        (phi, sys.j_dofs, Bm),
        (sys.j_dofs, phi, Bm.transpose(0, 2, 1)),
    ]
    A = _csr(sys.ndof, *blocks)
    n = sys.ndof
    rows, cols, vals = [], [], []
    bp = sys.border_offset
    pidx = np.arange(sys.sizes["pressure"]) + sys.offsets["pressure"]
    mp = sys.p1_mean_vector
    rows += [np.full_like(pidx, bp), pidx]
    cols += [pidx, np.full_like(pidx, bp)]
    vals += [mp, mp]
    if sys.boundary_mode == "insulating":
        bf = bp + 1
        fidx = sys.phi_dofs
        mf = sys.p0_mean_vector
        rows += [np.full_like(fidx, bf), fidx]
        cols += [fidx, np.full_like(fidx, bf)]
        vals += [mf, mf]
    border = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    return (A + border).tocsr()


def assemble_Q(sys: FeSystem, cfg: ProblemConfig) -> sparse.csr_matrix:
    """Buoyancy: momentum rows against temperature columns."""
    if cfg.Ra == 0.0:
        return sparse.csr_matrix((sys.ndof, sys.ndof))
    ed = sys.element_data(LOW_DEGREE)
    S = np.einsum("tq,qa,qj->taj", ed.wq, ed.N, ed.lam)
    s = -cfg.Pr * cfg.Ra
    blk = np.concatenate([s * cfg.i_dir[0] * S, s * cfg.i_dir[1] * S], axis=1)
    return _csr(sys.ndof, (sys.vel_dofs, sys.theta_dofs, blk))


def assemble_diffusion_theta(sys: FeSystem) -> sparse.csr_matrix:
    G = sys.grad_lam
    K = sys.area[:, None, None] * np.einsum("tad,tbd->tab", G, G)
    return _csr(sys.ndof, (sys.theta_dofs, sys.theta_dofs, K))


# ---- trilinear forms -------------------------------------------------------

def assemble_convection(sys: FeSystem, w, target: str = "momentum") -> sparse.csr_matrix:
    """Matrix of c(w, ., .) on velocity or h(w, ., .) on temperature.

    Antisymmetrized element by element, so x^T N(w) x vanishes for any x.
    """
    w = _full(sys, w)
    ed = sys.element_data(HIGH_DEGREE)
    wv, _ = velocity_at(sys, w, ed)
    if target == "momentum":
        adv = np.einsum("tqd,tqbd->tqb", wv, ed.dN)  # w . grad N_b
        H = 0.5 * np.einsum("tq,qa,tqb->tab", ed.wq, ed.N, adv)
        C = H - H.transpose(0, 2, 1)
        return _csr(sys.ndof, (sys.vel_dofs, sys.vel_dofs, _vector_velocity_block(C)))
    if target == "temperature":
        adv = np.einsum("tqd,tjd->tqj", wv, sys.grad_lam)
        H = 0.5 * np.einsum("tq,qi,tqj->tij", ed.wq, ed.lam, adv)
        C = H - H.transpose(0, 2, 1)
        return _csr(sys.ndof, (sys.theta_dofs, sys.theta_dofs, C))
    raise ValueError(f"unknown convection target {target!r}")


def assemble_newton_momentum(sys: FeSystem, w) -> sparse.csr_matrix:
    """Matrix of c(u, w, v) with u the trial velocity and w frozen."""
    w = _full(sys, w)
    ed = sys.element_data(HIGH_DEGREE)
    wv, wg = velocity_at(sys, w, ed)  # wg[t,q,c,d] = d_d w_c
    # 1/2 int N_b (d_d w_c) N_a - 1/2 int N_b (d_d N_a) w_c ; test (c,a), trial (d,b)
    E1 = 0.5 * np.einsum("tq,qa,qb,tqcd->tcadb", ed.wq, ed.N, ed.N, wg)
    E2 = 0.5 * np.einsum("tq,qb,tqad,tqc->tcadb", ed.wq, ed.N, ed.dN, wv)
    blk = (E1 - E2).reshape(-1, 8, 8)
    return _csr(sys.ndof, (sys.vel_dofs, sys.vel_dofs, blk))


def assemble_newton_temperature(sys: FeSystem, w) -> sparse.csr_matrix:
    """Matrix of h(u, theta0, r): temperature rows against velocity trial columns.

    `w` is a full coefficient vector; its temperature part is theta0.
    """
    w = _full(sys, w)
    ed = sys.element_data(LOW_DEGREE)
    th, gth = p1_at(sys, w[sys.field_slice("temperature")], ed)
    # 1/2 int N_b (d_d th) lam_i - 1/2 int N_b (d_d lam_i) th ; test i, trial (d,b)
    E1 = 0.5 * np.einsum("tq,qb,td,qi->tidb", ed.wq, ed.N, gth, ed.lam)
    E2 = 0.5 * np.einsum("tq,qb,tid,tq->tidb", ed.wq, ed.N, sys.grad_lam, th)
    blk = (E1 - E2).reshape(-1, 3, 8)
    return _csr(sys.ndof, (sys.theta_dofs, sys.vel_dofs, blk))


def assemble_convection_load(sys: FeSystem, w1, w2, target: str = "momentum") -> np.ndarray:
    """Vector of c(w1, w2, v) over velocity tests, or h(w1, theta(w2), r) over temperature tests."""
    w1 = _full(sys, w1)
    w2 = _full(sys, w2)
    ed = sys.element_data(HIGH_DEGREE)
    a, _ = velocity_at(sys, w1, ed)
    out = np.zeros(sys.ndof)
    if target == "momentum":
        b, bg = velocity_at(sys, w2, ed)
        conv = np.einsum("tqd,tqcd->tqc", a, bg)  # (w1 . grad) w2
        adv = np.einsum("tqd,tqad->tqa", a, ed.dN)  # w1 . grad N_a
        loc = 0.5 * (
            np.einsum("tq,tqc,qa->tca", ed.wq, conv, ed.N)
            - np.einsum("tq,tqa,tqc->tca", ed.wq, adv, b)
        )
        np.add.at(out, sys.vel_dofs.ravel(), loc.reshape(-1))
        return out
    if target == "temperature":
        th, gth = p1_at(sys, w2[sys.field_slice("temperature")], ed)
        conv = np.einsum("tqd,td->tq", a, gth)
        adv = np.einsum("tqd,tid->tqi", a, sys.grad_lam)
        loc = 0.5 * (
            np.einsum("tq,tq,qi->ti", ed.wq, conv, ed.lam)
            - np.einsum("tq,tqi,tq->ti", ed.wq, adv, th)
        )
        np.add.at(out, sys.theta_dofs.ravel(), loc.ravel())
        return out
    raise ValueError(f"unknown convection target {target!r}")


def assemble_loads(sys: FeSystem, cfg: ProblemConfig) -> np.ndarray:
    ed = sys.element_data(HIGH_DEGREE)
    X, Y = ed.xq[..., 0], ed.xq[..., 1]
    out = np.zeros(sys.ndof)
    if cfg.f is not None:
        f1, f2 = (np.broadcast_to(np.asarray(c, float), X.shape) for c in cfg.f(X, Y))
        loc = np.concatenate(
            [np.einsum("tq,tq,qa->ta", ed.wq, f1, ed.N), np.einsum("tq,tq,qa->ta", ed.wq, f2, ed.N)],
            axis=1,
        )
        np.add.at(out, sys.vel_dofs.ravel(), loc.ravel())
    if cfg.g is not None:
        g1, g2 = (np.broadcast_to(np.asarray(c, float), X.shape) for c in cfg.g(X, Y))
        gv = np.stack([g1, g2], axis=-1)
        loc = cfg.kappa * np.einsum("tq,tqd,tqed->te", ed.wq, gv, ed.rt)
        np.add.at(out, sys.j_dofs.ravel(), loc.ravel())
    if cfg.varphi is not None:
        s = np.broadcast_to(np.asarray(cfg.varphi(X, Y), float), X.shape)
        loc = np.einsum("tq,tq,qi->ti", ed.wq, s, ed.lam)
        np.add.at(out, sys.theta_dofs.ravel(), loc.ravel())
    return out


# ---- boundary conditions ---------------------------------------------------

def boundary_values(sys: FeSystem, cfg: ProblemConfig) -> np.ndarray:
    """Full-length vector holding the essential data on constrained DOFs, zero elsewhere."""
    g = np.zeros(sys.ndof)
    m = sys.mesh
    if cfg.u_dirichlet is not None:
        vs = sys.velocity_bc_vertices
        u1, u2 = cfg.u_dirichlet(m.vertices[vs, 0], m.vertices[vs, 1])
        ix, iy = sys.velocity_vertex_dofs(vs)
        g[ix] = u1
        g[iy] = u2
    if cfg.theta_dirichlet is not None:
        vs = sys.theta_bc_vertices
        g[sys.offsets["temperature"] + vs] = cfg.theta_dirichlet(m.vertices[vs, 0], m.vertices[vs, 1])
    return g


def apply_essential_bc(A, rhs, sys: FeSystem, values: np.ndarray):
    """Symmetric elimination of the constrained DOFs.

    Constrained rows and columns are zeroed with a unit diagonal, their RHS
    entries take the prescribed values and the known columns move to the RHS
    of the free rows.
    """
    A = sparse.csr_matrix(A)
    bc = sys.constrained_dofs
    mask = np.zeros(sys.ndof)
    mask[bc] = 1.0
    g = np.where(mask > 0, values, 0.0)
    b = rhs - A @ g
    b[bc] = g[bc]
    free = sparse.diags(1.0 - mask)
    A = (free @ A @ free + sparse.diags(mask)).tocsr()
    return A, b


def symmetrize_pattern(A) -> sparse.csr_matrix:
    """Add explicit zeros so the sparsity pattern is structurally symmetric."""
    A = A.tocoo()
    B = sparse.coo_matrix(
        (np.concatenate([A.data, np.zeros_like(A.data)]),
         (np.concatenate([A.row, A.col]), np.concatenate([A.col, A.row]))),
        shape=A.shape,
    ).tocsr()
    B.sort_indices()
    return B


# ---- per-method systems ----------------------------------------------------

@dataclass
class LinearParts:
    """Iteration-independent operator A0 + B + Q + e and load vector."""

    K: sparse.csr_matrix
    F: np.ndarray
    bc_values: np.ndarray


def linear_parts(sys: FeSystem, cfg: ProblemConfig) -> LinearParts:
    K = (assemble_A0(sys, cfg) + assemble_B(sys, cfg) + assemble_Q(sys, cfg)
         + assemble_diffusion_theta(sys)).tocsr()
    return LinearParts(K, assemble_loads(sys, cfg), boundary_values(sys, cfg))


def build_method_system(sys: FeSystem, cfg: ProblemConfig, prev=None, method: str | None = None,
                        parts: LinearParts | None = None, apply_bc: bool = True):
    """Matrix and RHS of one linear step.

    `prev` is the previous iterate as a full coefficient vector (or anything
    with an ``x`` attribute); it is ignored for ``method="init"``.
    """
    method = cfg.method if method is None else method
    if method not in METHODS:
        raise UnknownMethod(f"unknown method {method!r}")
    parts = linear_parts(sys, cfg) if parts is None else parts
    A = parts.K
    rhs = parts.F.copy()
    if method != "init":
        w = np.zeros(sys.ndof) if prev is None else _full(sys, getattr(prev, "x", prev))
        if method == "stokes":
            rhs -= assemble_convection_load(sys, w, w, "momentum")
            rhs -= assemble_convection_load(sys, w, w, "temperature")
        elif method == "oseen":
            A = A + assemble_convection(sys, w, "momentum") + assemble_convection(sys, w, "temperature")
        elif method == "newton":
            A = (A + assemble_convection(sys, w, "momentum") + assemble_newton_momentum(sys, w)
                 + assemble_convection(sys, w, "temperature") + assemble_newton_temperature(sys, w))
            rhs += assemble_convection_load(sys, w, w, "momentum")
            rhs += assemble_convection_load(sys, w, w, "temperature")
    A = A.tocsr()
    if apply_bc:
        A, rhs = apply_essential_bc(A, rhs, sys, parts.bc_values)
    return symmetrize_pattern(A), rhs


def nonlinear_residual(sys: FeSystem, cfg: ProblemConfig, x, parts: LinearParts | None = None) -> np.ndarray:
    """Residual of the discrete nonlinear problem at x, on unconstrained rows."""
    x = _full(sys, getattr(x, "x", x))
    A, rhs = build_method_system(sys, cfg, x, method="oseen", parts=parts, apply_bc=False)
    r = A @ x - rhs
    r[sys.constrained_dofs] = 0.0
    return r
