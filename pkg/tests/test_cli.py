import json

import pytest

import wg_sfem.analysis as analysis
from wg_sfem.cli import main
from wg_sfem.localspaces import dim_pk
from wg_sfem.polymesh import read_mesh
from wg_sfem.wgsolve import SolverError


def run_cli(args):
    return main(list(args))


# ---------------------------------------------------------------- mesh


def test_mesh_square_level3(tmp_path, capsys):
    out = tmp_path / "mesh.json"
    code = run_cli(["mesh", "--family", "square", "--level", "3", "--out", str(out)])
    assert code == 0
    line = capsys.readouterr().out
    assert "cells=16" in line
    mesh = read_mesh(out)
    assert mesh.n_cells == 16


def test_mesh_hex_contains_hexagon(tmp_path):
    out = tmp_path / "hex.json"
    assert run_cli(["mesh", "--family", "hex", "--level", "1", "--out", str(out)]) == 0
    payload = json.loads(out.read_text())
    assert any(len(cell) == 6 for cell in payload["cells"])


def test_mesh_level_guard_exits_2(tmp_path):
    with pytest.raises(SystemExit) as exc:
        run_cli(["mesh", "--family", "square", "--level", "99",
                 "--out", str(tmp_path / "x.json")])
    assert exc.value.code == 2


def test_hex_level_cap_is_7(tmp_path):
    with pytest.raises(SystemExit) as exc:
        run_cli(["mesh", "--family", "hex", "--level", "8",
                 "--out", str(tmp_path / "x.json")])
    assert exc.value.code == 2


# ---------------------------------------------------------------- solve


def test_solve_summary_matches_run_level(tmp_path, capsys):
    out = tmp_path / "sol.json"
    code = run_cli(["solve", "--family", "square", "--level", "4",
                    "--degree", "1", "--case", "sin2d", "--out", str(out)])
    assert code == 0
    line = capsys.readouterr().out.strip()
    fields = dict(part.split("=") for part in line.split())
    rep = analysis.run_level("square", 4, 1, analysis.get_case("sin2d"))
    assert int(fields["dofs"]) == rep.dofs
    assert float(fields["l2_err"]) == pytest.approx(rep.l2_err, rel=2e-3)
    assert float(fields["energy_err"]) == pytest.approx(rep.energy_err, rel=2e-3)

    payload = json.loads(out.read_text())
    assert set(payload) == {"k", "u0", "ub", "residual"}
    assert payload["k"] == 1
    mesh_cells = 8 * 8
    assert len(payload["u0"]) == mesh_cells
    assert len(payload["u0"][0]) == dim_pk(1)
    assert len(payload["ub"][0]) == 2
    assert payload["residual"] <= 1e-12


def test_solve_patch_case_reports_tiny_errors(capsys):
    code = run_cli(["solve", "--family", "hex", "--level", "2",
                    "--degree", "0", "--case", "patch-linear"])
    assert code == 0
    line = capsys.readouterr().out.strip()
    fields = dict(part.split("=") for part in line.split())
    assert float(fields["l2_err"]) <= 1e-8
    assert float(fields["energy_err"]) <= 1e-8


def test_solve_from_mesh_file(tmp_path, capsys):
    mesh_path = tmp_path / "m.json"
    run_cli(["mesh", "--family", "quad", "--level", "2", "--out", str(mesh_path)])
    capsys.readouterr()
    code = run_cli(["solve", "--mesh", str(mesh_path), "--degree", "0",
                    "--case", "sin2d"])
    assert code == 0
    assert "l2_err=" in capsys.readouterr().out


def test_solve_degree_cap_exits_2():
    with pytest.raises(SystemExit) as exc:
        run_cli(["solve", "--family", "square", "--level", "2", "--degree", "7",
                 "--case", "sin2d"])
    assert exc.value.code == 2


def test_solve_mesh_and_family_conflict_exits_2(tmp_path):
    with pytest.raises(SystemExit) as exc:
        run_cli(["solve", "--mesh", str(tmp_path / "m.json"), "--family", "square",
                 "--level", "2", "--degree", "0"])
    assert exc.value.code == 2


def test_solve_requires_some_mesh_source():
    with pytest.raises(SystemExit) as exc:
        run_cli(["solve", "--degree", "0"])
    assert exc.value.code == 2


# ---------------------------------------------------------------- convergence


def test_convergence_square_k0_rows_and_csv(tmp_path, capsys):
    out = tmp_path / "table.csv"
    code = run_cli(["convergence", "--family", "square", "--degree", "0",
                    "--levels", "4:6", "--format", "csv", "--out", str(out)])
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "level,l2_err,l2_rate,energy_err,energy_rate"
    assert len(lines) == 4
    final = lines[3].split(",")
    assert float(final[2]) == pytest.approx(2.0, abs=0.25)
    assert capsys.readouterr().out == out.read_text()


def test_convergence_hex_k3_superconvergent_l2(capsys):
    code = run_cli(["convergence", "--family", "hex", "--degree", "3",
                    "--levels", "2:4", "--format", "json"])
    assert code == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["rows"][-1]["l2_rate"] == pytest.approx(5.0, abs=0.6)


def test_convergence_range_too_short_exits_2():
    with pytest.raises(SystemExit) as exc:
        run_cli(["convergence", "--family", "square", "--degree", "0",
                 "--levels", "4:4"])
    assert exc.value.code == 2


def test_convergence_bad_range_spec_exits_2():
    with pytest.raises(SystemExit) as exc:
        run_cli(["convergence", "--family", "square", "--degree", "0",
                 "--levels", "4-6"])
    assert exc.value.code == 2


def test_convergence_deterministic_bytes(tmp_path):
    args = ["convergence", "--family", "quad", "--degree", "1", "--levels", "2:4",
            "--format", "csv"]
    out1, out2 = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run_cli(args + ["--out", str(out1)]) == 0
    assert run_cli(args + ["--out", str(out2)]) == 0
    assert out1.read_bytes() == out2.read_bytes()


def test_convergence_partial_failure_exits_4(tmp_path, capsys, monkeypatch):
    real_run_level = analysis.run_level

    def failing(family, level, k, case, tol=1e-12):
        if level >= 4:
            raise SolverError("injected failure")
        return real_run_level(family, level, k, case, tol=tol)

    monkeypatch.setattr(analysis, "run_level", failing)
    out = tmp_path / "partial.csv"
    code = run_cli(["convergence", "--family", "square", "--degree", "0",
                    "--levels", "3:5", "--format", "csv", "--out", str(out)])
    assert code == 4
    captured = capsys.readouterr()
    assert "injected failure" in captured.err
    lines = out.read_text().splitlines()
    assert len(lines) == 2  # header + the one completed level


def test_solve_solver_failure_exits_3(capsys, monkeypatch):
    import wg_sfem.cli as cli

    def boom(mesh, k, case, tol=1e-12, cache=None):
        raise SolverError("injected solver failure")

    monkeypatch.setattr(cli, "solve_case", boom)
    code = run_cli(["solve", "--family", "square", "--level", "2", "--degree", "0"])
    assert code == 3
    assert "injected solver failure" in capsys.readouterr().err
