"""Conforming triangulations of rectangles and the L-shaped domain.

Edges carry a global orientation (low vertex index -> high vertex index) and
each triangle records, per local edge, whether its outward normal agrees with
the edge's global normal. That sign fixes the Raviart-Thomas conventions for
the whole mesh.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

GEOM_TOL = 1e-12


class Tag(IntEnum):
    INTERIOR = 0
    LEFT = 1
    RIGHT = 2
    BOTTOM = 3
    TOP = 4
    REENTRANT = 5


# corner vertices take the first matching wall in this order
_VERTEX_PRIORITY = (Tag.REENTRANT, Tag.LEFT, Tag.RIGHT, Tag.BOTTOM, Tag.TOP)


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class Wall:
    """A straight boundary segment from `a` to `b` carrying one tag."""

    tag: Tag
    a: tuple[float, float]
    b: tuple[float, float]

    def contains(self, pts: np.ndarray, tol: float = GEOM_TOL) -> np.ndarray:
        a = np.asarray(self.a, dtype=float)
        b = np.asarray(self.b, dtype=float)
        d = b - a
        L = np.hypot(*d)
        rel = pts - a
        dist = np.abs(rel[:, 0] * d[1] - rel[:, 1] * d[0]) / L
        s = (rel @ d) / L**2
        return (dist <= tol) & (s >= -tol) & (s <= 1 + tol)


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray
    tri_edges: np.ndarray
    tri_signs: np.ndarray
    vertex_tags: np.ndarray
    edge_tags: np.ndarray
    walls: tuple[Wall, ...] = field(repr=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def area(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def edge_length(self) -> np.ndarray:
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    @property
    def edge_normal(self) -> np.ndarray:
        """Unit global normals: low->high edge vector rotated by -90 degrees."""
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        n = np.column_stack([d[:, 1], -d[:, 0]])
        return n / np.hypot(n[:, 0], n[:, 1])[:, None]

    @property
    def edge_midpoint(self) -> np.ndarray:
        return 0.5 * (self.vertices[self.edges[:, 0]] + self.vertices[self.edges[:, 1]])

    @property
    def centroid(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    @property
    def h(self) -> float:
        """Largest circumdiameter."""
        p = self.vertices[self.triangles]
        a = np.linalg.norm(p[:, 1] - p[:, 2], axis=1)
        b = np.linalg.norm(p[:, 2] - p[:, 0], axis=1)
        c = np.linalg.norm(p[:, 0] - p[:, 1], axis=1)
        return float(np.max(a * b * c / (2.0 * self.area)))

    @property
    def edge_triangle_count(self) -> np.ndarray:
        return np.bincount(self.tri_edges.ravel(), minlength=self.n_edges)

    @property
    def boundary_edges(self) -> np.ndarray:
        return np.flatnonzero(self.edge_tags != Tag.INTERIOR)

    @property
    def boundary_vertices(self) -> np.ndarray:
        return np.unique(self.edges[self.boundary_edges])

    def wall_vertices(self, tags) -> np.ndarray:
        """Vertices lying on any boundary edge tagged with one of `tags` (corners included)."""
        tags = [Tag(t) if not isinstance(t, str) else Tag[t.upper()] for t in tags]
        sel = np.isin(self.edge_tags, tags)
        return np.unique(self.edges[sel])

    def wall_edges(self, tags) -> np.ndarray:
        tags = [Tag(t) if not isinstance(t, str) else Tag[t.upper()] for t in tags]
        return np.flatnonzero(np.isin(self.edge_tags, tags))


def _edge_table(triangles: np.ndarray):
    # local edge k is opposite local vertex k
    a = triangles[:, [1, 2, 0]]
    b = triangles[:, [2, 0, 1]]
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    pairs = np.stack([lo.ravel(), hi.ravel()], axis=1)
    edges, inv = np.unique(pairs, axis=0, return_inverse=True)
    tri_edges = inv.reshape(-1, 3)
    # CCW traversal a->b has outward normal = (b - a) rotated by -90 degrees
    signs = np.where(a < b, 1, -1).astype(np.int8)
    return edges, tri_edges, signs


def classify_boundary(vertices, edges, tri_edges, walls):
    """Tag boundary vertices and edges by wall; raise if a boundary edge is on no wall."""
    counts = np.bincount(tri_edges.ravel(), minlength=len(edges))
    if np.any((counts < 1) | (counts > 2)):
        raise MeshError("non-manifold edge table")
    bnd = np.flatnonzero(counts == 1)
    edge_tags = np.zeros(len(edges), dtype=np.int8)
    unassigned = np.ones(len(bnd), dtype=bool)
    for wall in walls:
        on = wall.contains(vertices[edges[bnd, 0]]) & wall.contains(vertices[edges[bnd, 1]])
        take = on & unassigned
        edge_tags[bnd[take]] = wall.tag
        unassigned &= ~take
    if np.any(unassigned):
        e = bnd[np.flatnonzero(unassigned)[0]]
        raise MeshError(f"boundary edge {tuple(edges[e])} lies on no declared wall")

    vertex_tags = np.zeros(len(vertices), dtype=np.int8)
    for tag in reversed(_VERTEX_PRIORITY):
        vs = edges[bnd[edge_tags[bnd] == tag]].ravel()
        vertex_tags[vs] = tag
    return vertex_tags, edge_tags


def mesh_from_arrays(vertices, triangles, walls) -> Mesh:
    """Build a Mesh from vertex coordinates, CCW triangles and the boundary walls."""
    vertices = np.ascontiguousarray(vertices, dtype=float)
    triangles = np.ascontiguousarray(triangles, dtype=np.int64)
    edges, tri_edges, signs = _edge_table(triangles)
    vtags, etags = classify_boundary(vertices, edges, tri_edges, walls)
    mesh = Mesh(vertices, triangles, edges, tri_edges, signs, vtags, etags, tuple(walls))
    if np.any(mesh.area <= 0):
        raise MeshError("triangle with non-positive area")
    for arr in (vertices, triangles, edges, tri_edges, signs, vtags, etags):
        arr.setflags(write=False)
    return mesh


def _grid(nx, ny, x0, x1, y0, y1):
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    verts = np.column_stack([X.ravel(), Y.ravel()])
    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    i, j = i.ravel(), j.ravel()
    v00 = j * (nx + 1) + i
    v10 = v00 + 1
    v01 = v00 + nx + 1
    v11 = v01 + 1
    # each square split along its lower-left to upper-right diagonal
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    tris = np.stack([lower, upper], axis=1).reshape(-1, 3)
    return verts, tris


def rect_walls(x0, x1, y0, y1) -> tuple[Wall, ...]:
    return (
        Wall(Tag.LEFT, (x0, y0), (x0, y1)),
        Wall(Tag.RIGHT, (x1, y0), (x1, y1)),
        Wall(Tag.BOTTOM, (x0, y0), (x1, y0)),
        Wall(Tag.TOP, (x0, y1), (x1, y1)),
    )


def build_structured_rect(nx: int, ny: int, rect=((0.0, 1.0), (0.0, 1.0))) -> Mesh:
    """Uniform nx-by-ny grid of squares, each cut into two triangles."""
    (x0, x1), (y0, y1) = rect
    if nx < 1 or ny < 1:
        raise MeshError("cell counts must be positive")
    if not (x0 < x1 and y0 < y1):
        raise MeshError(f"invalid extent {rect!r}")
    verts, tris = _grid(nx, ny, x0, x1, y0, y1)
    return mesh_from_arrays(verts, tris, rect_walls(x0, x1, y0, y1))


def unit_square(n: int) -> Mesh:
    return build_structured_rect(n, n)


LSHAPE_WALLS = (
    Wall(Tag.REENTRANT, (0.0, -0.5), (0.0, 0.0)),
    Wall(Tag.REENTRANT, (0.0, 0.0), (0.5, 0.0)),
    Wall(Tag.LEFT, (-0.5, -0.5), (-0.5, 0.5)),
    Wall(Tag.RIGHT, (0.5, 0.0), (0.5, 0.5)),
    Wall(Tag.BOTTOM, (-0.5, -0.5), (0.0, -0.5)),
    Wall(Tag.TOP, (-0.5, 0.5), (0.5, 0.5)),
)


def build_lshape(n: int) -> Mesh:
    """(-0.5, 0.5)^2 minus [0, 0.5) x (-0.5, 0], three n-by-n blocks glued together."""
    if n < 1:
        raise MeshError("n must be positive")
    blocks = [(-0.5, 0.0, -0.5, 0.0), (-0.5, 0.0, 0.0, 0.5), (0.0, 0.5, 0.0, 0.5)]
    verts, tris, offset = [], [], 0
    for x0, x1, y0, y1 in blocks:
        v, t = _grid(n, n, x0, x1, y0, y1)
        verts.append(v)
        tris.append(t + offset)
        offset += len(v)
    verts = np.vstack(verts)
    tris = np.vstack(tris)
    key = np.round(verts / GEOM_TOL).astype(np.int64)
    _, first, inv = np.unique(key, axis=0, return_index=True, return_inverse=True)
    merged = verts[first]
    return mesh_from_arrays(merged, inv.ravel()[tris], LSHAPE_WALLS)
