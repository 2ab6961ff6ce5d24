"""Convergence rates on the smooth and L-shaped manufactured solutions.

Run with ``python3 notebooks/01_convergence_rates.py``. Takes a few minutes.
"""
from timhd import bench

for name, exact in (("smooth", bench.manufactured_smooth_2d()), ("lshape", bench.lshape_singular())):
    rows = bench.convergence_study(exact, "newton", [8, 16, 32, 64])
    print(f"\n{name}")
    print(f"{'n':>4} {'u H1':>10} {'rate':>6} {'J div':>10} {'rate':>6} {'theta H1':>10} {'rate':>6}")
    for r in rows:
        e, q = r.errors, r.rates
        print(f"{r.n:4d} {e.err_u_h1:10.3e} {q.get('rate_u', float('nan')):6.2f} "
              f"{e.err_J_div:10.3e} {q.get('rate_J', float('nan')):6.2f} "
              f"{e.err_theta_h1:10.3e} {q.get('rate_theta', float('nan')):6.2f}")
    # div J_h stays at round-off on every level
    print("max |div J_h|:", max(r.report.max_divJ for r in rows))
