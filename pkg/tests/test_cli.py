import csv
import filecmp

import numpy as np
import pytest

from timhd import bench, cli
from timhd.assembly import make_system
from timhd.fem import FeSystem, FieldSolution, interpolate
from timhd.iterate import Solver
from timhd.mesh import unit_square


def test_parse_convergence_levels():
    # [TRIVIAL] argument parsing
    spec = cli.parse_cli(["convergence", "--levels", "8,16", "--method", "oseen"])
    assert spec.levels == (8, 16) and spec.method == "oseen" and spec.command == "convergence"


@pytest.mark.parametrize("argv", [["run", "--method", "euler"], ["run", "--bogus"],
                                  ["transmogrify"], ["run", "--levels", "8,x"]])
def test_usage_errors_exit_nonzero(argv, capsys):
    # [TRIVIAL] usage errors exit 1
    with pytest.raises(SystemExit) as exc:
        cli.parse_cli(argv)
    assert exc.value.code == cli.EXIT_ERROR
    assert "error" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [["convergence", "--levels", "8"], ["run", "--pr", "-1"],
                                  ["cavity", "--ra", "1e3,1e4"], ["sweep-ra", "--ra", "0"],
                                  ["run", "--max-iter", "0"], ["convergence", "--n", "8"]])
def test_invariant_violations(argv):
    # [TRIVIAL] validation
    with pytest.raises(cli.UsageError):
        cli.parse_cli(argv)
    assert cli.main(argv) == cli.EXIT_ERROR


def test_cavity_defaults_to_air():
    spec = cli.parse_cli(["cavity", "--ra", "1e4"])
    assert spec.ra == (1e4,) and spec.pr is None
    cfg = bench.cavity_setup(spec.ra[0], **spec.physics())
    assert cfg.Pr == 0.71  # [PAPER]


def test_config_file_and_override(tmp_path):
    # [TRIVIAL] flags override the file
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# study\nmethod = newton\nlevels = 4,8\ntol = 1e-9\nmax-iter = 7\nno_timing = yes\n")
    spec = cli.parse_cli(["convergence", "--config", str(cfg), "--method", "stokes"])
    assert spec.method == "stokes" and spec.levels == (4, 8) and spec.tol == 1e-9
    assert spec.max_iter == 7 and spec.timing is False
    bad = tmp_path / "bad.cfg"
    bad.write_text("colour = blue\n")
    with pytest.raises(cli.UsageError, match="unknown key"):
        cli.parse_cli(["run", "--config", str(bad)])
    bad.write_text("just words\n")
    with pytest.raises(cli.UsageError, match="key = value"):
        cli.parse_cli(["run", "--config", str(bad)])


def test_convergence_command_writes_schema(tmp_path):
    # [TRIVIAL] CSV header
    out = tmp_path / "new" / "dir"
    code = cli.main(["convergence", "--levels", "2,4", "--method", "newton", "--out", str(out)])
    assert code == cli.EXIT_OK
    rows = list(csv.reader(open(out / "convergence_smooth_newton.csv")))
    assert tuple(rows[0]) == bench.STUDY_COLUMNS and len(rows) == 3


def test_sweep_nonconvergence_exit_code(tmp_path):
    # [PAPER] the explicit method fails at large Rayleigh numbers
    code = cli.main(["sweep-ra", "--ra", "1e6", "--method", "stokes", "--n", "8", "--out", str(tmp_path)])
    assert code == cli.EXIT_NOT_CONVERGED
    rows = list(csv.reader(open(tmp_path / "sweep_stokes.csv")))
    assert tuple(rows[0]) == cli.SWEEP_COLUMNS and rows[1][1] == "diverged"


def test_run_command_outputs(tmp_path):
    # [TRIVIAL] output files exist
    code = cli.main(["run", "--n", "4", "--method", "oseen", "--out", str(tmp_path)])
    assert code == cli.EXIT_OK
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == ["run_smooth_oseen_n4.csv", "run_smooth_oseen_n4.vtk", "run_smooth_oseen_n4_history.csv"]


def test_error_exit_code(tmp_path, monkeypatch):
    # [TRIVIAL] runtime errors exit 1
    def boom(spec):
        raise RuntimeError("disk on fire")
    monkeypatch.setitem(cli._DISPATCH, "run", boom)
    assert cli.main(["run", "--out", str(tmp_path)]) == cli.EXIT_ERROR


def test_byte_identical_reruns(tmp_path):
    # [DERIVED] deterministic arithmetic gives identical bytes
    argv = ["convergence", "--levels", "2,4", "--method", "oseen", "--no-timing"]
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(argv + ["--out", str(a)]) == 0
    assert cli.main(argv + ["--out", str(b)]) == 0
    f = "convergence_smooth_oseen.csv"
    assert filecmp.cmp(a / f, b / f, shallow=False)


# ---- VTK -----------------------------------------------------------------------

def _read_vtk(path):
    lines = open(path).read().splitlines()
    assert lines[0].startswith("# vtk DataFile") and lines[2] == "ASCII"
    assert lines[3] == "DATASET UNSTRUCTURED_GRID"
    out, i = {}, 4
    while i < len(lines):
        head = lines[i].split()
        if head[0] == "POINTS":
            n = int(head[1])
            out["points"] = np.array([l.split() for l in lines[i + 1:i + 1 + n]], float)
            i += n + 1
        elif head[0] == "CELLS":
            n = int(head[1])
            out["cells"] = np.array([l.split() for l in lines[i + 1:i + 1 + n]], int)
            assert int(head[2]) == out["cells"].size
            i += n + 1
        elif head[0] == "CELL_TYPES":
            n = int(head[1])
            out["types"] = np.array(lines[i + 1:i + 1 + n], int)
            i += n + 1
        elif head[0] in ("POINT_DATA", "CELL_DATA"):
            out[head[0]] = int(head[1])
            size = out[head[0]]
            i += 1
        elif head[0] == "SCALARS":
            out[head[1]] = np.array(lines[i + 2:i + 2 + size], float)
            i += size + 2
        elif head[0] == "VECTORS":
            out[head[1]] = np.array([l.split() for l in lines[i + 1:i + 1 + size]], float)
            i += size + 1
        else:
            raise AssertionError(f"unexpected line {lines[i]!r}")
    return out


def test_vtk_zero_solution(tmp_path):
    # [TRIVIAL] zero fields
    sys = FeSystem(unit_square(3))
    p = tmp_path / "z.vtk"
    cli.write_vtk(FieldSolution(sys), sys, p)
    d = _read_vtk(p)
    V, T = sys.mesh.n_vertices, sys.mesh.n_triangles
    assert len(d["points"]) == V and len(d["cells"]) == T and d["POINT_DATA"] == V and d["CELL_DATA"] == T
    assert np.all(d["types"] == 5) and np.all(d["cells"][:, 0] == 3)
    for k in ("velocity", "pressure", "temperature", "potential", "current", "divJ"):
        assert np.all(d[k] == 0), k


def test_vtk_values_roundtrip(tmp_path):
    # [DERIVED] %.17g round-trips doubles exactly
    sys = FeSystem(unit_square(3))
    x = np.zeros(sys.ndof)
    x[sys.field_slice("velocity")] = interpolate(sys, "velocity", lambda x, y: (x, -y))
    x[sys.field_slice("current")] = interpolate(sys, "current", lambda x, y: (2 * x - 1, 2 * y + 0.5))
    x[sys.field_slice("temperature")] = interpolate(sys, "temperature", lambda x, y: x * y)
    p = tmp_path / "f.vtk"
    cli.write_vtk(FieldSolution(sys, x), sys, p)
    d = _read_vtk(p)
    v = d["points"]
    assert np.array_equal(d["velocity"][:, :2], np.column_stack([v[:, 0], -v[:, 1]]))
    assert np.array_equal(d["temperature"], v[:, 0] * v[:, 1])
    c = sys.mesh.centroid
    # (2x - 1, 2y + 1/2) lies in RT0, so the centroid value is exact and div = 4
    assert np.allclose(d["current"][:, :2], np.column_stack([2 * c[:, 0] - 1, 2 * c[:, 1] + 0.5]), atol=1e-13)
    assert np.allclose(d["divJ"], 4.0, atol=1e-12)


def test_vtk_converged_divergence(tmp_path, smooth):
    # [DERIVED] div J of a converged run is at round-off
    cfg = smooth.config("newton")
    sys = make_system(unit_square(8), cfg)
    sol, rep = Solver(sys, cfg).run()
    p = tmp_path / "s.vtk"
    cli.write_vtk(sol, sys, p)
    assert np.max(np.abs(_read_vtk(p)["divJ"])) <= 1e-10


def test_mesh_dump(tmp_path):
    # [TRIVIAL] point and cell counts
    m = unit_square(2)
    p = tmp_path / "m.vtk"
    cli.write_mesh_vtk(m, p)
    d = _read_vtk(p)
    assert np.array_equal(d["points"][:, :2], m.vertices) and np.array_equal(d["cells"][:, 1:], m.triangles)


def test_vtk_io_error(tmp_path):
    # [TRIVIAL] error path
    sys = FeSystem(unit_square(1))
    with pytest.raises(OSError):
        cli.write_vtk(FieldSolution(sys), sys, tmp_path / "missing" / "x.vtk")
