import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from timhd.mesh import (
    LSHAPE_WALLS, MeshError, Tag, Wall, build_lshape, build_structured_rect, classify_boundary,
    mesh_from_arrays, unit_square,
)


@pytest.mark.parametrize("n", [1, 2, 5, 8])
def test_unit_square_counts(n):
    # [DERIVED] V = (n+1)^2, T = 2n^2; Euler V - E + T = 1 gives E = 3n^2 + 2n
    m = unit_square(n)
    assert m.n_vertices == (n + 1) ** 2
    assert m.n_triangles == 2 * n * n
    assert m.n_edges == 3 * n * n + 2 * n
    assert len(m.boundary_edges) == 4 * n


@given(st.integers(1, 12), st.integers(1, 12))
@settings(max_examples=30, deadline=None)
def test_rect_euler_and_area(nx, ny):
    # [DERIVED] Euler characteristic 1 and the rectangle area
    m = build_structured_rect(nx, ny, ((0.0, 2.0), (-1.0, 0.5)))
    assert m.n_vertices - m.n_edges + m.n_triangles == 1
    assert np.all(m.area > 0)
    assert np.isclose(m.area.sum(), 3.0, rtol=0, atol=1e-13)
    # each interior edge bounded by two triangles, boundary edges by one
    cnt = m.edge_triangle_count
    assert set(np.unique(cnt)) <= {1, 2}
    assert np.sum(cnt == 1) == 2 * (nx + ny)


def test_diagonal_direction():
    # [TRIVIAL] each square is cut from its lower-left to its upper-right corner
    m = unit_square(1)
    interior = m.edges[m.edge_tags == Tag.INTERIOR]
    assert interior.tolist() == [[0, 3]]
    assert m.vertices[3].tolist() == [1.0, 1.0]


def test_h_is_hypotenuse():
    # [DERIVED] the circumdiameter of a right triangle is its hypotenuse
    for n in (2, 7):
        assert np.isclose(unit_square(n).h, np.sqrt(2) / n, rtol=1e-14)


@pytest.mark.parametrize("mesh", [unit_square(5), build_lshape(3)], ids=["square", "lshape"])
def test_orientation_conventions(mesh):
    # [DERIVED] outward normals from edge midpoints against opposite vertices
    e = mesh.edges
    assert np.all(e[:, 0] < e[:, 1])
    # sign +1 iff the global normal points out of the triangle
    opp = mesh.vertices[mesh.triangles]  # local edge k opposite vertex k
    mid = mesh.edge_midpoint[mesh.tri_edges]
    n = mesh.edge_normal[mesh.tri_edges]
    outward = np.sum(n * (mid - opp), axis=2) > 0
    assert np.array_equal(outward, mesh.tri_signs > 0)
    # interior edges see opposite signs from their two triangles
    s = np.zeros(mesh.n_edges)
    np.add.at(s, mesh.tri_edges.ravel(), mesh.tri_signs.ravel().astype(float))
    interior = mesh.edge_triangle_count == 2
    assert np.all(s[interior] == 0)


def test_lshape_counts_and_geometry():
    for n in (1, 2, 4):
        m = build_lshape(n)
        # [DERIVED] three (n+1)^2 blocks sharing two interfaces of n+1 vertices
        assert m.n_vertices == 3 * (n + 1) ** 2 - 2 * (n + 1)
        assert m.n_triangles == 6 * n * n
        assert np.isclose(m.area.sum(), 0.75, atol=1e-14)
        assert np.sum(m.edge_tags == Tag.REENTRANT) == 2 * n
        assert m.n_vertices - m.n_edges + m.n_triangles == 1
        assert len(np.unique(np.round(m.vertices, 12), axis=0)) == m.n_vertices


def test_lshape_excludes_fourth_quadrant():
    # [TRIVIAL] the removed quadrant has no cells
    m = build_lshape(4)
    c = m.centroid
    assert not np.any((c[:, 0] > 0) & (c[:, 1] < 0))


def test_wall_tags_and_corner_priority():
    # [TRIVIAL] tag priority and per-wall vertex counts
    m = unit_square(4)
    v = m.vertices
    assert m.vertex_tags[np.flatnonzero((v == [0, 0]).all(1))[0]] == Tag.LEFT
    assert m.vertex_tags[np.flatnonzero((v == [1, 1]).all(1))[0]] == Tag.RIGHT
    top = m.wall_vertices(["top"])
    assert np.allclose(v[top, 1], 1.0) and len(top) == 5  # corners included
    assert len(m.wall_edges([Tag.LEFT, Tag.RIGHT])) == 8


def test_lshape_origin_is_reentrant():
    # [TRIVIAL] the origin is the re-entrant corner
    m = build_lshape(2)
    i = np.flatnonzero(np.all(np.abs(m.vertices) < 1e-14, axis=1))
    assert len(i) == 1 and m.vertex_tags[i[0]] == Tag.REENTRANT


def test_missing_wall_raises():
    # [TRIVIAL] error path
    m = unit_square(2)
    walls = [w for w in m.walls if w.tag != Tag.TOP]
    with pytest.raises(MeshError, match="no declared wall"):
        classify_boundary(m.vertices, m.edges, m.tri_edges, walls)


def test_clockwise_triangle_rejected():
    # [TRIVIAL] error path
    v = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    walls = [Wall(Tag.BOTTOM, (0, 0), (1, 0)), Wall(Tag.LEFT, (0, 0), (0, 1)),
             Wall(Tag.TOP, (1, 0), (0, 1))]
    mesh_from_arrays(v, np.array([[0, 1, 2]]), walls)
    with pytest.raises(MeshError):
        mesh_from_arrays(v, np.array([[0, 2, 1]]), walls)


def test_invalid_sizes():
    # [TRIVIAL] error path
    with pytest.raises(MeshError):
        unit_square(0)
    with pytest.raises(MeshError):
        build_lshape(0)
    with pytest.raises(MeshError):
        build_structured_rect(2, 2, ((1.0, 0.0), (0.0, 1.0)))


def test_arrays_read_only():
    # [TRIVIAL] immutability
    m = unit_square(2)
    with pytest.raises(ValueError):
        m.vertices[0, 0] = 5.0
    with pytest.raises(ValueError):
        m.tri_signs[0, 0] = 0


def test_lshape_walls_cover_boundary_length():
    # [DERIVED] the L-shape perimeter is 4
    m = build_lshape(3)
    total = m.edge_length[m.boundary_edges].sum()
    walls = sum(np.hypot(*np.subtract(w.b, w.a)) for w in LSHAPE_WALLS)
    assert np.isclose(total, walls) and np.isclose(total, 4.0)
