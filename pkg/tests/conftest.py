import numpy as np
import pytest

from timhd import bench
from timhd.mesh import mesh_from_arrays, rect_walls, unit_square


def perturbed_square(n, shift=(0.0, 0.0), seed=None):
    """unit_square(n) with interior vertices moved; boundary vertices stay put."""
    base = unit_square(n)
    v = np.array(base.vertices)
    inner = np.setdiff1d(np.arange(len(v)), base.boundary_vertices)
    if seed is not None:
        rng = np.random.default_rng(seed)
        v[inner] += rng.uniform(-0.2, 0.2, size=(len(inner), 2)) / n
    else:
        v[inner] += np.asarray(shift) / n
    return mesh_from_arrays(v, np.array(base.triangles), rect_walls(0.0, 1.0, 0.0, 1.0))


@pytest.fixture(scope="session")
def smooth():
    return bench.manufactured_smooth_2d()


@pytest.fixture(scope="session")
def lshape():
    return bench.lshape_singular()


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
