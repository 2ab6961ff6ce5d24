"""Stokes, Newton and Oseen iterations side by side.

Successive differences on the smooth problem at h = 1/16 show the linear
versus quadratic contraction, and a short Rayleigh sweep shows where each
iteration stops converging.
"""
from timhd import bench
from timhd.assembly import make_system
from timhd.iterate import Solver, convergence_slope
from timhd.mesh import unit_square

exact = bench.manufactured_smooth_2d()
for method in ("stokes", "oseen", "newton"):
    cfg = exact.config(method, tol=1e-12)
    sol, rep = Solver(make_system(unit_square(16), cfg), cfg).run()
    print(f"{method:7s} {rep.iterations:3d} iterations, slope {convergence_slope(rep.diffs, floor=2e-12):.2f}")
    print("        ", " ".join(f"{d:.1e}" for d in rep.diffs))

mesh = unit_square(16)
for ra in (1e2, 1e3, 1e4):
    line = []
    for method in ("stokes", "newton", "oseen"):
        cfg = bench.manufactured_smooth_2d(Ra=ra).config(method)
        _, rep = Solver(make_system(mesh, cfg), cfg).run()
        line.append(f"{method} {rep.status} ({rep.iterations})")
    print(f"Ra {ra:g}: " + ", ".join(line))
