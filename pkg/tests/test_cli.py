import pytest

import app
from src.errors import AdmmError, SparseSolveError
from src.fem.mesh import read_mesh

SMALL = ["--set", "mesh.level=1", "--set", "eit.q=2", "--set", "admm.max_global_iter=1",
         "--set", "incg.max_iter=1", "--set", "study.report=false"]


def test_subcommand_is_required():
    with pytest.raises(SystemExit) as excinfo:
        app.main([])
    assert excinfo.value.code == app.EXIT_USAGE


def test_unknown_flag():
    with pytest.raises(SystemExit) as excinfo:
        app.main(["invert", "--sources", "3"])
    assert excinfo.value.code == app.EXIT_USAGE


def test_missing_config_file(tmp_path):
    assert app.main(["invert", "--config", str(tmp_path / "missing.ini")]) == app.EXIT_USAGE


def test_bad_override():
    assert app.main(["mesh", "--set", "mesh.level=many"]) == app.EXIT_USAGE


def test_mesh_command(tmp_path):
    assert app.main(["mesh", "--out", str(tmp_path), "--set", "mesh.level=2"]) == app.EXIT_OK
    assert read_mesh(str(tmp_path / "mesh.txt")).n_vertices == 81


def test_synth_command(tmp_path):
    assert app.main(["synth", "--out", str(tmp_path), "--seed", "3"] + SMALL) == app.EXIT_OK
    assert (tmp_path / "fields" / "data_1.field").exists()
    assert "seed = 3" in (tmp_path / "config.ini").read_text()


def test_invert_command(tmp_path):
    assert app.main(["invert", "--out", str(tmp_path)] + SMALL) == app.EXIT_OK
    assert (tmp_path / "summary.csv").exists()
    assert (tmp_path / "runs" / "run" / "history.csv").exists()


def test_failed_inversion_exits_with_2(tmp_path, monkeypatch):
    def refuse(*args, **kwargs):
        raise AdmmError("all 2 subproblems failed at iteration 1")

    monkeypatch.setattr("src.optim.admm.run", refuse)
    assert app.main(["invert", "--out", str(tmp_path)] + SMALL) == app.EXIT_SOLVER


def test_solver_errors_exit_with_2(tmp_path, monkeypatch):
    def explode(*args, **kwargs):
        raise SparseSolveError("singular system", residual=1.0)

    monkeypatch.setattr(app, "run_study", explode)
    assert app.main(["study", "--out", str(tmp_path)]) == app.EXIT_SOLVER


@pytest.mark.slow
def test_check_command(capsys):
    assert app.main(["check", "--seed", "0"]) == app.EXIT_OK
    out = capsys.readouterr().out
    assert "FAIL" not in out
    assert "checks passed" in out
