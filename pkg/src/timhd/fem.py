"""Finite element spaces on a triangulation.

Velocity: Mini element (P1 plus one cubic bubble per triangle, each component).
Pressure and temperature: continuous P1. Current density: lowest-order
Raviart-Thomas (RT0). Potential: piecewise constants (P0).

Local conventions
-----------------
Barycentric coordinate ``lam[k]`` belongs to local vertex ``k``; local edge
``k`` is opposite local vertex ``k``. The RT0 function of local edge ``k`` is

    phi_k(x) = s_k |e_k| / (2|T|) (x - P_k),

with ``s_k`` the orientation sign stored on the mesh. Its normal component
along the global edge normal is 1 on ``e_k`` and 0 on the other two edges, so
an RT0 coefficient is the mean normal component of the field on that edge.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import sparse

from .mesh import Mesh, Tag

FIELDS = ("velocity", "pressure", "current", "potential", "temperature")
MAX_QUAD_DEGREE = 10


class UnsupportedDegree(ValueError):
    pass


class DegenerateTriangle(ValueError):
    pass


@dataclass(frozen=True)
class QuadratureRule:
    """Rule on the reference triangle; weights sum to its area 1/2."""

    points: np.ndarray  # (Q, 3) barycentric
    weights: np.ndarray  # (Q,)
    degree: int


_QUAD_CACHE: dict[int, QuadratureRule] = {}


def quad_rule(min_degree: int) -> QuadratureRule:
    """Collapsed (Duffy) Gauss-Legendre rule exact for polynomials of degree `min_degree`.

    All weights are positive. Degrees above ``MAX_QUAD_DEGREE`` are rejected.
    """
    if min_degree < 0 or min_degree > MAX_QUAD_DEGREE:
        raise UnsupportedDegree(f"no rule for degree {min_degree}")
    if min_degree in _QUAD_CACHE:
        return _QUAD_CACHE[min_degree]
    ns = (min_degree + 3) // 2  # s-direction carries the extra Jacobian factor
    nt = (min_degree + 2) // 2
    gs, ws = np.polynomial.legendre.leggauss(ns)
    gt, wt = np.polynomial.legendre.leggauss(nt)
    s, wsu = 0.5 * (gs + 1), 0.5 * ws
    t, wtu = 0.5 * (gt + 1), 0.5 * wt
    S, T = np.meshgrid(s, t, indexing="ij")
    xi = S.ravel()
    eta = (T * (1 - S)).ravel()
    w = (np.outer(wsu, wtu) * (1 - S)).ravel()
    pts = np.column_stack([1 - xi - eta, xi, eta])
    rule = QuadratureRule(pts, w, min_degree)
    _QUAD_CACHE[min_degree] = rule
    return rule


def velocity_shape(lam: np.ndarray) -> np.ndarray:
    """Values of the 3 hats and the bubble at barycentric points, shape (..., 4)."""
    b = 27.0 * lam[..., 0] * lam[..., 1] * lam[..., 2]
    return np.concatenate([lam, b[..., None]], axis=-1)


def barycentric_gradients(P: np.ndarray):
    """Gradients of the barycentric coordinates of triangles P (..., 3, 2)."""
    d1 = P[..., 1, :] - P[..., 0, :]
    d2 = P[..., 2, :] - P[..., 0, :]
    det = d1[..., 0] * d2[..., 1] - d1[..., 1] * d2[..., 0]
    if np.any(np.abs(det) <= 1e-300):
        raise DegenerateTriangle("zero-area triangle")
    # columns of inverse Jacobian transpose
    g1 = np.stack([d2[..., 1], -d2[..., 0]], axis=-1) / det[..., None]
    g2 = np.stack([-d1[..., 1], d1[..., 0]], axis=-1) / det[..., None]
    g0 = -g1 - g2
    return np.stack([g0, g1, g2], axis=-2), 0.5 * det


def eval_velocity_basis(P: np.ndarray, lam: np.ndarray):
    """Scalar Mini shape functions on one triangle P (3, 2) at barycentric points lam (Q, 3).

    Returns values (Q, 4) and physical gradients (Q, 4, 2). Each velocity
    component uses the same four functions, giving the 8 local velocity
    shape functions.
    """
    G, _ = barycentric_gradients(np.asarray(P, float))
    lam = np.atleast_2d(lam)
    vals = velocity_shape(lam)
    grads = np.empty(lam.shape[:-1] + (4, 2))
    grads[..., :3, :] = G
    grads[..., 3, :] = 27.0 * (
        (lam[..., 1] * lam[..., 2])[..., None] * G[0]
        + (lam[..., 0] * lam[..., 2])[..., None] * G[1]
        + (lam[..., 0] * lam[..., 1])[..., None] * G[2]
    )
    return vals, grads


def eval_rt0_basis(P: np.ndarray, sign, k: int, x: np.ndarray):
    """RT0 function of local edge k on triangle P at physical points x (..., 2).

    Returns (values, divergence).
    """
    P = np.asarray(P, float)
    _, area = barycentric_gradients(P)
    ia, ib = (k + 1) % 3, (k + 2) % 3
    elen = np.hypot(*(P[ib] - P[ia]))
    c = sign * elen / (2 * area)
    return c * (np.asarray(x, float) - P[k]), 2 * c


@dataclass
class ElementData:
    """Per-triangle geometry and basis values at the points of one quadrature rule."""

    rule: QuadratureRule
    xq: np.ndarray  # (T, Q, 2)
    wq: np.ndarray  # (T, Q) physical weights
    N: np.ndarray  # (Q, 4) velocity scalar shapes
    dN: np.ndarray  # (T, Q, 4, 2)
    lam: np.ndarray  # (Q, 3)
    rt: np.ndarray  # (T, Q, 3, 2)


class FeSystem:
    """DOF layout and element data for the coupled five-field problem.

    Global ordering: velocity x (V vertex + T bubble), velocity y (same),
    pressure (V), current (E), potential (T), temperature (V), then the
    scalar borders: pressure mean, potential mean (insulating mode only).

    Parameters
    ----------
    mesh : Mesh
    boundary_mode : {"insulating", "conducting"}
        Insulating fixes J.n = 0 on every boundary edge and adds a zero-mean
        border for the potential. Conducting leaves the RT0 space free.
    theta_walls : sequence of wall names or tags, optional
        Walls carrying temperature Dirichlet data; default is the whole boundary.
    """

    def __init__(self, mesh: Mesh, boundary_mode: str = "insulating", theta_walls=None):
        if boundary_mode not in ("insulating", "conducting"):
            raise ValueError(f"unknown boundary mode {boundary_mode!r}")
        self.mesh = mesh
        self.boundary_mode = boundary_mode
        V, T, E = mesh.n_vertices, mesh.n_triangles, mesh.n_edges
        self.sizes = {
            "velocity": 2 * (V + T),
            "pressure": V,
            "current": E,
            "potential": T,
            "temperature": V,
        }
        off = 0
        self.offsets = {}
        for name in FIELDS:
            self.offsets[name] = off
            off += self.sizes[name]
        self.n_borders = 2 if boundary_mode == "insulating" else 1
        self.border_offset = off
        self.ndof = off + self.n_borders

        bverts = mesh.boundary_vertices
        if theta_walls is None:
            self.theta_bc_vertices = bverts
        else:
            self.theta_bc_vertices = mesh.wall_vertices(theta_walls)
        self.velocity_bc_vertices = bverts
        if boundary_mode == "insulating":
            self.current_bc_edges = mesh.boundary_edges
        else:
            self.current_bc_edges = np.empty(0, dtype=np.int64)
        self._element_data: dict[int, ElementData] = {}

    # ---- slices and local-to-global maps -------------------------------
    def field_slice(self, name: str) -> slice:
        o = self.offsets[name]
        return slice(o, o + self.sizes[name])

    @cached_property
    def vel_dofs(self) -> np.ndarray:
        """(T, 8) global velocity DOFs: x-component hats+bubble, then y-component."""
        m = self.mesh
        V, T = m.n_vertices, m.n_triangles
        base = np.column_stack([m.triangles, V + np.arange(T)])
        o = self.offsets["velocity"]
        return np.hstack([o + base, o + V + T + base])

    @cached_property
    def p_dofs(self) -> np.ndarray:
        return self.offsets["pressure"] + self.mesh.triangles

    @cached_property
    def j_dofs(self) -> np.ndarray:
        return self.offsets["current"] + self.mesh.tri_edges

    @cached_property
    def phi_dofs(self) -> np.ndarray:
        return self.offsets["potential"] + np.arange(self.mesh.n_triangles)

    @cached_property
    def theta_dofs(self) -> np.ndarray:
        return self.offsets["temperature"] + self.mesh.triangles

    def velocity_vertex_dofs(self, verts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        o = self.offsets["velocity"]
        s = self.mesh.n_vertices + self.mesh.n_triangles
        return o + verts, o + s + verts

    @cached_property
    def constrained_dofs(self) -> np.ndarray:
        ux, uy = self.velocity_vertex_dofs(self.velocity_bc_vertices)
        parts = [
            ux,
            uy,
            self.offsets["current"] + self.current_bc_edges,
            self.offsets["temperature"] + self.theta_bc_vertices,
        ]
        return np.unique(np.concatenate(parts))

    # ---- geometry -------------------------------------------------------
    @cached_property
    def grad_lam(self) -> np.ndarray:
        G, _ = barycentric_gradients(self.mesh.vertices[self.mesh.triangles])
        return G

    @cached_property
    def area(self) -> np.ndarray:
        return self.mesh.area

    @cached_property
    def rt_coef(self) -> np.ndarray:
        """s_k |e_k| / (2|T|) per triangle and local edge, shape (T, 3)."""
        m = self.mesh
        elen = m.edge_length[m.tri_edges]
        return m.tri_signs * elen / (2 * self.area[:, None])

    @cached_property
    def rt_div(self) -> np.ndarray:
        """Constant divergence of each local RT0 function, shape (T, 3)."""
        return 2 * self.rt_coef

    def element_data(self, degree: int = 6) -> ElementData:
        if degree in self._element_data:
            return self._element_data[degree]
        rule = quad_rule(degree)
        m = self.mesh
        P = m.vertices[m.triangles]  # (T, 3, 2)
        lam = rule.points
        xq = np.einsum("qk,tkd->tqd", lam, P)
        wq = 2 * self.area[:, None] * rule.weights[None, :]
        N = velocity_shape(lam)
        G = self.grad_lam
        T, Q = len(P), len(lam)
        dN = np.empty((T, Q, 4, 2))
        dN[:, :, :3, :] = G[:, None, :, :]
        dN[:, :, 3, :] = 27.0 * (
            (lam[:, 1] * lam[:, 2])[None, :, None] * G[:, None, 0, :]
            + (lam[:, 0] * lam[:, 2])[None, :, None] * G[:, None, 1, :]
            + (lam[:, 0] * lam[:, 1])[None, :, None] * G[:, None, 2, :]
        )
        rt = self.rt_coef[:, None, :, None] * (xq[:, :, None, :] - P[:, None, :, :])
        ed = ElementData(rule, xq, wq, N, dN, lam, rt)
        self._element_data[degree] = ed
        return ed

    # ---- constraint vectors ----------------------------------------------
    @cached_property
    def p1_mean_vector(self) -> np.ndarray:
        """Integrals of the P1 hats."""
        V = self.mesh.n_vertices
        return np.bincount(
            self.mesh.triangles.ravel(), weights=np.repeat(self.area / 3, 3), minlength=V
        )

    @property
    def p0_mean_vector(self) -> np.ndarray:
        return self.area


# ---- interpolation and evaluation ---------------------------------------

def _as_vec(fn, x, y):
    c1, c2 = fn(x, y)
    shape = np.shape(x)
    return np.stack([np.broadcast_to(np.asarray(c, float), shape) for c in (c1, c2)])


def _as_scalar(fn, x, y):
    return np.broadcast_to(np.asarray(fn(x, y), dtype=float), np.shape(x))


def interpolate(sys: FeSystem, kind: str, fn) -> np.ndarray:
    """Canonical interpolant of an analytic function into one of the five spaces.

    `fn(x, y)` returns a scalar array, or a stacked pair ``(f1, f2)`` for
    vector fields. Velocity bubbles are set to zero; RT0 coefficients are edge
    means of the normal component (two-point Gauss on each edge).
    """
    m = sys.mesh
    X, Y = m.vertices[:, 0], m.vertices[:, 1]
    if kind in ("pressure", "temperature"):
        return np.array(_as_scalar(fn, X, Y), dtype=float)
    if kind == "potential":
        c = m.centroid
        return np.array(_as_scalar(fn, c[:, 0], c[:, 1]), dtype=float)
    if kind == "velocity":
        V, T = m.n_vertices, m.n_triangles
        u = _as_vec(fn, X, Y)
        out = np.zeros(2 * (V + T))
        out[:V] = u[0]
        out[V + T : 2 * V + T] = u[1]
        return out
    if kind == "current":
        a = m.vertices[m.edges[:, 0]]
        b = m.vertices[m.edges[:, 1]]
        n = m.edge_normal
        g = 0.5 / np.sqrt(3.0)
        acc = np.zeros(m.n_edges)
        for s in (0.5 - g, 0.5 + g):
            p = a + s * (b - a)
            f = _as_vec(fn, p[:, 0], p[:, 1])
            acc += 0.5 * (f[0] * n[:, 0] + f[1] * n[:, 1])
        return acc
    raise ValueError(f"unknown field kind {kind!r}")


class FieldSolution:
    """Coefficient vector in the FeSystem layout, with per-field views."""

    def __init__(self, sys: FeSystem, x: np.ndarray | None = None):
        self.sys = sys
        self.x = np.zeros(sys.ndof) if x is None else np.asarray(x, dtype=float)
        if self.x.shape != (sys.ndof,):
            raise ValueError("coefficient vector does not match the DOF layout")

    def __getitem__(self, name: str) -> np.ndarray:
        return self.x[self.sys.field_slice(name)]

    @property
    def u(self):
        return self["velocity"]

    @property
    def p(self):
        return self["pressure"]

    @property
    def J(self):
        return self["current"]

    @property
    def phi(self):
        return self["potential"]

    @property
    def theta(self):
        return self["temperature"]

    def copy(self) -> "FieldSolution":
        return FieldSolution(self.sys, self.x.copy())

    def cell_divergence(self) -> np.ndarray:
        return cell_divergence(self.sys, self.x)


def velocity_at(sys: FeSystem, x: np.ndarray, ed: ElementData):
    """Velocity values (T, Q, 2) and gradients (T, Q, 2, 2) [component, direction]."""
    c = x[sys.vel_dofs].reshape(-1, 2, 4)  # (T, comp, local)
    val = np.einsum("qa,tca->tqc", ed.N, c)
    grad = np.einsum("tqad,tca->tqcd", ed.dN, c)
    return val, grad


def p1_at(sys: FeSystem, coeffs: np.ndarray, ed: ElementData):
    """P1 field values (T, Q) and gradients (T, 2) from vertex coefficients."""
    c = coeffs[sys.mesh.triangles]
    val = c @ ed.lam.T
    grad = np.einsum("tk,tkd->td", c, sys.grad_lam)
    return val, grad


def rt0_at(sys: FeSystem, coeffs: np.ndarray, ed: ElementData):
    c = coeffs[sys.mesh.tri_edges]
    return np.einsum("tqkd,tk->tqd", ed.rt, c)


def cell_divergence(sys: FeSystem, x: np.ndarray) -> np.ndarray:
    """Per-triangle divergence of the RT0 part of a full coefficient vector."""
    J = x[sys.field_slice("current")]
    return np.sum(sys.rt_div * J[sys.mesh.tri_edges], axis=1)


def locate(mesh: Mesh, pts: np.ndarray, tol: float = 1e-12):
    """Containing triangle and barycentric coordinates for each point."""
    pts = np.atleast_2d(np.asarray(pts, float))
    P = mesh.vertices[mesh.triangles]
    G, _ = barycentric_gradients(P)
    out_t = np.empty(len(pts), dtype=np.int64)
    out_l = np.empty((len(pts), 3))
    for i, x in enumerate(pts):
        lam = np.einsum("tkd,td->tk", G, x[None, :] - P[:, 0, :])
        lam[:, 0] += 1.0
        ok = np.flatnonzero(np.all(lam >= -tol, axis=1))
        if len(ok) == 0:
            raise ValueError(f"point {tuple(x)} outside the mesh")
        out_t[i] = ok[0]
        out_l[i] = lam[ok[0]]
    return out_t, out_l


def evaluate_velocity(sys: FeSystem, x: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Point values (n, 2) of the discrete velocity."""
    tri, lam = locate(sys.mesh, pts)
    N = velocity_shape(lam)  # (n, 4)
    c = x[sys.vel_dofs[tri]].reshape(-1, 2, 4)
    return np.einsum("na,nca->nc", N, c)


def evaluate_p1(sys: FeSystem, coeffs: np.ndarray, pts: np.ndarray) -> np.ndarray:
    tri, lam = locate(sys.mesh, pts)
    return np.sum(coeffs[sys.mesh.triangles[tri]] * lam, axis=1)


# ---- matrices used for norms -------------------------------------------

def _scatter(rows, cols, vals, n):
    return sparse.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n)).tocsr()


class NormMatrices:
    """Field-local Gram matrices for the H1-seminorm, L2 and H(div) norms."""

    def __init__(self, sys: FeSystem):
        ed = sys.element_data(4)
        T = sys.mesh.n_triangles
        V, E = sys.mesh.n_vertices, sys.mesh.n_edges
        K4 = np.einsum("tq,tqad,tqbd->tab", ed.wq, ed.dN, ed.dN)
        base = np.column_stack([sys.mesh.triangles, V + np.arange(T)])
        nv = V + T
        Ks = _scatter(
            np.repeat(base, 4, axis=1).reshape(T, 4, 4),
            np.tile(base, (1, 4)).reshape(T, 4, 4),
            K4,
            nv,
        )
        self.vel_h1 = sparse.block_diag([Ks, Ks], format="csr")
        tri = sys.mesh.triangles
        r3 = np.repeat(tri, 3, axis=1).reshape(T, 3, 3)
        c3 = np.tile(tri, (1, 3)).reshape(T, 3, 3)
        G = sys.grad_lam
        self.p1_h1 = _scatter(r3, c3, sys.area[:, None, None] * np.einsum("tad,tbd->tab", G, G), V)
        M1 = sys.area[:, None, None] * (np.ones((3, 3)) + np.eye(3)) / 12.0
        self.p1_mass = _scatter(r3, c3, M1, V)
        te = sys.mesh.tri_edges
        re = np.repeat(te, 3, axis=1).reshape(T, 3, 3)
        ce = np.tile(te, (1, 3)).reshape(T, 3, 3)
        Mrt = np.einsum("tq,tqad,tqbd->tab", ed.wq, ed.rt, ed.rt)
        self.rt_mass = _scatter(re, ce, Mrt, E)
        Drt = sys.area[:, None, None] * sys.rt_div[:, :, None] * sys.rt_div[:, None, :]
        self.rt_divdiv = _scatter(re, ce, Drt, E)
        self.p0_mass = sparse.diags(sys.area).tocsr()


def quad_norm(M, v) -> float:
    return float(np.sqrt(max(v @ (M @ v), 0.0)))
