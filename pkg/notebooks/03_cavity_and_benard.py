"""Differentially heated cavity and a Rayleigh-Benard layer.

Writes midline velocity profiles and a VTK file per run into ./out.
"""
from pathlib import Path

from timhd import bench, cli
from timhd.assembly import make_system
from timhd.iterate import Solver
from timhd.mesh import unit_square

out = Path("out")
out.mkdir(exist_ok=True)
for ra in (1e3, 1e4, 1e5):
    cfg = bench.cavity_setup(ra)
    sys = make_system(unit_square(32), cfg)
    sol, rep = Solver(sys, cfg).run()
    prof = bench.midline_profiles(sol, sys)
    bench.write_profiles_csv(prof, out / f"cavity_Ra{ra:g}_profiles.csv")
    cli.write_vtk(sol, sys, out / f"cavity_Ra{ra:g}.vtk")
    print(f"cavity Ra {ra:g}: {rep.status} in {rep.iterations}, "
          f"max u2 at mid-height {abs(prof['u2_mid_height']).max():.2f}")

# coarse Benard layer, conduction-dominated below onset
cfg = bench.benard_setup(1e3, "uniform")
sys = make_system(bench.benard_mesh(50, 10), cfg)
sol, rep = Solver(sys, cfg).run()
print(f"benard Ra 1e3: {rep.status}, max |u| {abs(sol.u).max():.1e}")
