import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from timhd.assembly import ProblemConfig, boundary_values, linear_parts, make_system
from timhd.fem import FeSystem
from timhd.iterate import (
    HISTORY_COLUMNS, Diverged, IterState, Solver, convergence_slope, initialize, roundoff_floor, run,
    step,
)
from timhd.mesh import unit_square

from oracle import oracle_matrix


def test_zero_data_gives_zero_state():
    # [TRIVIAL] zero data, zero solution
    cfg = ProblemConfig()
    sys = make_system(unit_square(4), cfg)
    st_ = initialize(sys, cfg)
    assert st_.n == 0 and np.all(st_.solution.x == 0)


def test_decoupled_temperature():
    # [TRIVIAL: decoupling] no buoyancy, no field, no force: u = 0 and theta solves Laplace
    cfg = ProblemConfig(Ra=0.0, B3=0.0, varphi=lambda x, y: np.ones_like(x))
    sys = make_system(unit_square(6), cfg)
    sol = initialize(sys, cfg).solution
    assert np.max(np.abs(sol.u)) < 1e-13
    # independent P1 Laplace solve on the free vertices
    m = sys.mesh
    V = m.n_vertices
    K = np.zeros((V, V))
    G = sys.grad_lam
    for t, tri in enumerate(m.triangles):
        K[np.ix_(tri, tri)] += m.area[t] * G[t] @ G[t].T
    b = np.bincount(m.triangles.ravel(), np.repeat(m.area / 3, 3), V)
    free = np.setdiff1d(np.arange(V), m.boundary_vertices)
    th = np.zeros(V)
    th[free] = np.linalg.solve(K[np.ix_(free, free)], b[free])
    assert np.allclose(sol.theta, th, atol=1e-13)
    # [DERIVED] the discrete maximum at the centre is near the Poisson value 0.0737
    assert 0.06 < sol.theta.max() < 0.08


def test_init_matches_dense_oracle(smooth):
    # [DERIVED] dense solve of the oracle's linear system
    cfg = smooth.config("oseen")
    sys = make_system(unit_square(8), cfg)
    x = initialize(sys, cfg).solution.x
    assert np.isfinite(x).all() and np.linalg.norm(x) > 0
    A = oracle_matrix(sys, cfg)
    parts = linear_parts(sys, cfg)
    b = parts.F.copy()
    bc = sys.constrained_dofs
    g = boundary_values(sys, cfg)
    A[bc] = 0
    A[bc, bc] = 1
    b[bc] = g[bc]
    xd = np.linalg.solve(A, b)
    assert np.max(np.abs(x - xd)) <= 1e-9


def test_step_and_divergence_cap(smooth):
    # [TRIVIAL] a tiny cap forces the diverged path
    cfg = smooth.config("oseen")
    sys = make_system(unit_square(4), cfg)
    s0 = initialize(sys, cfg)
    s1 = step(sys, cfg, s0)
    assert s1.n == 1
    tiny = smooth.config("oseen", divergence_cap=1e-6)
    with pytest.raises(Diverged):
        Solver(sys, tiny).step(s0)


def test_status_and_history(smooth, tmp_path):
    # [TRIVIAL] status strings and history rows
    cfg = smooth.config("oseen", max_iter=2)
    sys = make_system(unit_square(4), cfg)
    sol, rep = run(sys, cfg)
    assert rep.status == "max_iter" and rep.iterations == 2 and len(rep.history) == 2
    cfg = smooth.config("oseen", tol=1e-10)
    sol, rep = Solver(sys, cfg).run()
    assert rep.converged and rep.history[-1].rel <= 1e-10
    assert all(r.rel > 1e-10 for r in rep.history[:-1])
    assert [r.iter for r in rep.history] == list(range(1, rep.iterations + 1))
    assert rep.max_divJ < 1e-12
    assert len(rep.linear_stats) == rep.iterations + 1
    path = tmp_path / "h.csv"
    rep.write_history(path)
    rows = list(csv.reader(open(path)))
    assert tuple(rows[0]) == HISTORY_COLUMNS and len(rows) == rep.iterations + 1


def test_stokes_diverges_at_high_rayleigh():
    # [PAPER] the explicit treatment only suits small Rayleigh numbers
    from timhd.bench import manufactured_smooth_2d
    cfg = manufactured_smooth_2d(Ra=1e6).config("stokes")
    sys = make_system(unit_square(8), cfg)
    _, rep = Solver(sys, cfg).run()
    assert rep.status == "diverged"


@pytest.mark.parametrize("method", ["stokes", "oseen", "newton"])
def test_fixed_point_is_stationary(smooth, method):
    # [DERIVED] a converged iterate is a fixed point of every method
    cfg = smooth.config(method, tol=1e-11)
    sys = make_system(unit_square(6), cfg)
    solver = Solver(sys, cfg)
    sol, rep = solver.run()
    assert rep.converged
    assert roundoff_floor(solver, IterState(sol, rep.iterations), steps=1) <= 1e-9


def test_slope_of_model_sequences():
    # [DERIVED] geometric and squaring sequences have slopes 1 and 2
    geo = 0.3 ** np.arange(1, 15)
    assert np.isclose(convergence_slope(geo), 1.0)
    quad = [1e-1, 1e-2, 1e-4, 1e-8]
    assert np.isclose(convergence_slope(quad), 2.0)
    assert np.isnan(convergence_slope([1e-1, 1e-2]))
    # values under the floor are ignored
    assert np.isclose(convergence_slope(quad + [3e-14], floor=1e-12), 2.0)


@given(st.floats(0.01, 0.5), st.floats(1.2, 3.0))
@settings(max_examples=30, deadline=None)
def test_slope_recovers_order(d0, p):
    # [DERIVED] log d[n+1] = p log d[n] exactly
    # d[n+1] = d[n]**p; p = 1 would be a constant sequence with no defined slope
    d = [d0]
    while len(d) < 6 and d[-1] ** p > 1e-200:
        d.append(d[-1] ** p)
    if len(d) >= 3:
        assert np.isclose(convergence_slope(d, floor=0.0), p, rtol=1e-8)
