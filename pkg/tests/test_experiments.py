import logging
import os

import numpy as np
import pandas as pd
import pytest

from src.errors import AdmmError, ConfigError, FieldError, ForwardModelError
from src.experiments.config_loader import load_config
from src.experiments.metrics import region_relative_error, relative_error, state_misfit
from src.experiments.monolithic import monolithic_solve
from src.experiments.phantoms import Ellipse, EllipsePhantomSpec, phantom, qpact_phantom
from src.experiments.studies import (Problem, RunPlan, build_problem, execute_run, run_study, study_plans,
                                     synthesize_to_directory)
from src.experiments.synthetic import synthesize_data
from src.fem.mesh import build_unit_disc_mesh, read_mesh
from src.fem.space import Field, read_field
from src.models.eit import EitModel, equispaced_sources
from src.models.qpact import ChromophoreTable, QpactModel
from src.optim.incg import IncgSettings
from src.regularization.total_variation import TotalVariation, TvSettings

SMALL_EIT = ["mesh.level=2", "eit.q=2", "admm.max_global_iter=2", "incg.max_iter=2",
             "study.monolithic_max_iter=2", "study.report=false"]
SMALL_QPACT = ["mesh.divisions=6", "admm.max_global_iter=1", "incg.max_iter=1", "study.monolithic_max_iter=1",
               "study.report=false"]


def _origin(mesh):
    return int(np.argmin(np.linalg.norm(mesh.vertices, axis=1)))


# phantoms

def test_empty_phantom_is_the_background(disc2):
    values = phantom(disc2, EllipsePhantomSpec(ellipses=(), background=0.3)).values
    np.testing.assert_array_equal(values, np.full(disc2.n_vertices, 0.3))


def test_overlapping_ellipses_add(disc2):
    spec = EllipsePhantomSpec(ellipses=(Ellipse(1.0, 0.5, 0.5), Ellipse(0.5, 0.3, 0.2, phi_deg=30.0)))
    values = phantom(disc2, spec).values
    assert values[_origin(disc2)] == pytest.approx(1.5)
    assert values[disc2.ground_node] == 0.0


def test_head_phantom_range(disc3):
    values = phantom(disc3).values
    assert values.min() >= -1e-12 and values.max() <= 1.0 + 1e-12
    assert values[_origin(disc3)] == pytest.approx(0.2)


def test_ellipse_axes_must_be_positive():
    with pytest.raises(ConfigError):
        Ellipse(1.0, 0.0, 0.5)


def test_qpact_phantom(square):
    params, masks = qpact_phantom(square)
    assert set(masks) == {"global", "artery", "vein"}
    assert masks["global"].all()
    assert masks["artery"].any() and masks["vein"].any()
    assert not np.any(masks["artery"] & masks["vein"])
    np.testing.assert_allclose(params.s.values[masks["artery"]], 0.95)
    np.testing.assert_allclose(params.c_thb.values[masks["vein"]], 2.0)
    outside = ~(masks["artery"] | masks["vein"])
    np.testing.assert_allclose(params.s.values[outside], 0.6)


# synthetic data

def _eit_models(mesh, q):
    return [EitModel(mesh, source) for source in equispaced_sources(q)]


def test_noiseless_data_equals_the_forward_solution(disc2):
    truth = phantom(disc2).values
    models = _eit_models(disc2, 2)
    data = synthesize_data(models, truth, 0.0, seed=1)
    for model, field in zip(models, data):
        assert model.counters.forward == 0
        np.testing.assert_array_equal(field.values, model.observe(truth))


def test_noise_is_deterministic_per_seed(disc2):
    truth = phantom(disc2).values
    first = synthesize_data(_eit_models(disc2, 2), truth, 0.05, seed=7)
    again = synthesize_data(_eit_models(disc2, 2), truth, 0.05, seed=7)
    other = synthesize_data(_eit_models(disc2, 2), truth, 0.05, seed=8)
    np.testing.assert_array_equal(first[0].values, again[0].values)
    np.testing.assert_array_equal(first[1].values, again[1].values)
    assert not np.array_equal(first[0].values, other[0].values)
    assert not np.array_equal(first[0].values, first[1].values)


def test_eit_noise_level_and_support(disc3):
    truth = phantom(disc3).values
    model = _eit_models(disc3, 1)[0]
    clean = model.observe(truth)
    noisy = synthesize_data([model], truth, 0.1, seed=3)[0].values
    nodes = disc3.boundary_vertices[disc3.boundary_vertices != model.ground_node]
    interior = np.setdiff1d(np.arange(disc3.n_vertices), nodes)
    np.testing.assert_array_equal(noisy[interior], clean[interior])
    relative_std = np.std(noisy[nodes] - clean[nodes]) / np.max(np.abs(clean[nodes]))
    assert 0.06 < relative_std < 0.14


def test_qpact_data_stays_positive(square, caplog):
    params, _ = qpact_phantom(square)
    model = QpactModel(square, ChromophoreTable.from_mapping(), 800)
    with caplog.at_level(logging.WARNING):
        data = synthesize_data([model], params, 5.0, seed=0)[0].values
    assert np.all(data > 0)
    assert "clamped to the positivity floor" in caplog.text


def test_synthesize_rejects_bad_input(disc2):
    with pytest.raises(FieldError):
        synthesize_data(_eit_models(disc2, 1), phantom(disc2), -0.1, seed=0)
    with pytest.raises(TypeError):
        synthesize_data([object()], phantom(disc2), 0.1, seed=0)


# metrics

def test_relative_error(disc2, rng):
    truth = Field(disc2, rng.normal(size=disc2.n_vertices))
    assert relative_error(truth, truth) == 0.0
    assert relative_error(Field.constant(disc2, 0.0), truth) == pytest.approx(1.0)
    m = Field(disc2, rng.normal(size=disc2.n_vertices))
    scaled = relative_error(Field(disc2, 3.0 * m.values), Field(disc2, 3.0 * truth.values))
    assert scaled == pytest.approx(relative_error(m, truth))


def test_relative_error_failures(disc1, disc2):
    with pytest.raises(FieldError, match="zero field"):
        relative_error(Field.constant(disc2, 1.0), Field.constant(disc2, 0.0))
    with pytest.raises(FieldError, match="different meshes"):
        relative_error(Field.constant(disc1, 1.0), Field.constant(disc2, 1.0))


def test_region_relative_error(disc2):
    truth = np.ones(disc2.n_vertices)
    found = truth.copy()
    mask = np.zeros(disc2.n_vertices, dtype=bool)
    assert np.isnan(region_relative_error(disc2, found, truth, mask))
    mask[:10] = True
    found[10:] = 5.0
    assert region_relative_error(disc2, found, truth, mask) == 0.0


def test_state_misfit_sums_over_models(disc2):
    truth = phantom(disc2).values
    models = _eit_models(disc2, 3)
    synthesize_data(models, truth, 0.0, seed=0)
    assert state_misfit(models, truth) == pytest.approx(0.0, abs=1e-20)
    m = np.zeros(disc2.n_vertices)
    assert state_misfit(models, m) == pytest.approx(sum(2.0 * model.cost(m) for model in models))


# monolithic baseline

def test_monolithic_solve_decreases_the_objective(disc2):
    truth = phantom(disc2).values
    models = _eit_models(disc2, 2)
    synthesize_data(models, truth, 0.01, seed=0)
    reg = TotalVariation(disc2, TvSettings())
    result = monolithic_solve(models, reg, IncgSettings(max_iter=3))
    assert result.iterations >= 1
    assert result.cost_history[-1] < result.cost_history[0]
    assert result.counters.forward >= result.iterations


# studies

def test_study_plans():
    config = load_config()
    assert [p.name for p in study_plans(config, "norm")] == ["admm_h1", "admm_l2"]
    assert [p.name for p in study_plans(config, "inexact")] == ["admm_inexact", "admm_exact"]
    names = [p.name for p in study_plans(config.with_overrides(["study.q_values=2, 4"]), "scaling_q")]
    assert names == ["admm_q2", "monolithic_q2", "admm_q4", "monolithic_q4"]
    levels = [p.level for p in study_plans(config.with_overrides(["study.mesh_levels=1,2"]), "scaling_mesh")]
    assert levels == [1, 1, 2, 2]
    qpact = load_config(problem="qpact")
    assert [(p.name, p.method) for p in study_plans(qpact, "qpact")] == [("qpact_admm", "admm"),
                                                                        ("qpact_monolithic", "monolithic")]
    with pytest.raises(ConfigError):
        study_plans(config, "qpact")
    with pytest.raises(ConfigError):
        study_plans(load_config(problem="qpact"), "scaling_q")


def test_build_eit_problem():
    config = load_config(overrides=SMALL_EIT)
    problem = build_problem(config)
    assert problem.kind == "eit" and problem.q == 2
    assert all(model.data is not None for model in problem.models)
    assert problem.error(problem.truth) == 0.0
    assert problem.region_errors(problem.truth) == {}


def test_build_qpact_problem():
    config = load_config(problem="qpact", overrides=SMALL_QPACT)
    problem = build_problem(config)
    assert problem.q == 3
    assert problem.truth.shape == (3 * problem.mesh.n_vertices,)
    assert problem.error(problem.truth) == pytest.approx(0.0, abs=1e-12)
    errors = problem.region_errors(problem.truth)
    assert set(errors) == {f"err_{b}_{r}" for b in ("s", "c_thb") for r in ("global", "artery", "vein")}
    assert problem.error(problem.m0) > 0.0


def test_single_eit_run_writes_its_outputs(tmp_path):
    config = load_config(overrides=SMALL_EIT)
    result = run_study(config, output_dir=str(tmp_path), kind="single")
    assert not result.failed
    record = result.records[0]
    assert record.iterations == 2 and record.forward_solves > 0
    run_dir = tmp_path / "runs" / "run"
    assert (run_dir / "history.csv").exists()
    mesh = build_unit_disc_mesh(2)
    assert len(read_field(str(run_dir / "fields" / "m.field"), mesh)) == mesh.n_vertices
    assert (run_dir / "fields" / "truth_m.field").exists()
    summary = pd.read_csv(tmp_path / "summary.csv")
    assert list(summary["name"]) == ["run"]
    assert "[run]" in (tmp_path / "config.ini").read_text()


@pytest.mark.parametrize("method", ["admm", "monolithic"])
def test_reruns_write_identical_files(tmp_path, method):
    config = load_config(overrides=SMALL_EIT + [f"run.method={method}"])
    first = run_study(config, output_dir=str(tmp_path / "a"), kind="single").summary
    second = run_study(config, output_dir=str(tmp_path / "b"), kind="single").summary
    for name in ("history.csv", os.path.join("fields", "m.field")):
        assert (tmp_path / "a" / "runs" / "run" / name).read_bytes() == \
            (tmp_path / "b" / "runs" / "run" / name).read_bytes()
    pd.testing.assert_frame_equal(first.drop(columns="solution_time"), second.drop(columns="solution_time"))


def test_failing_metrics_are_recorded_and_the_study_goes_on(tmp_path, monkeypatch):
    def diverge(models, m):
        raise ForwardModelError("forward solve diverged")

    monkeypatch.setattr("src.experiments.studies.state_misfit", diverge)
    config = load_config(overrides=SMALL_EIT)
    result = run_study(config, output_dir=str(tmp_path), kind="norm")
    assert [record.status for record in result.records] == ["failed", "failed"]
    assert all("diverged" in record.message for record in result.records)
    assert (tmp_path / "summary.csv").exists()


def test_failed_run_is_recorded_and_the_study_goes_on(tmp_path, monkeypatch):
    def refuse(*args, **kwargs):
        raise AdmmError("all 2 subproblems failed at iteration 1")

    monkeypatch.setattr("src.optim.admm.run", refuse)
    config = load_config(overrides=SMALL_EIT + ["study.q_values=2"])
    result = run_study(config, output_dir=str(tmp_path), kind="scaling_q")
    statuses = {record.name: record.status for record in result.records}
    assert statuses == {"admm_q2": "failed", "monolithic_q2": "ok"}
    assert list(result.histories) == ["monolithic_q2"]


def test_execute_run_resets_counters(tmp_path):
    config = load_config(overrides=SMALL_EIT)
    problem = build_problem(config)
    for model in problem.models:
        model.counters.forward = 1000
    record, x = execute_run(problem, RunPlan("again", "monolithic"), config, str(tmp_path))
    assert record.forward_solves < 1000
    assert x.shape == problem.truth.shape


def test_qpact_study_with_report(tmp_path):
    config = load_config(problem="qpact", overrides=SMALL_QPACT[:-1])
    result = run_study(config, output_dir=str(tmp_path))
    assert result.kind == "qpact"
    assert "err_s_artery" in result.summary.columns
    assert (tmp_path / "report.pdf").read_bytes().startswith(b"%PDF")
    assert "plotly" in (tmp_path / "convergence.html").read_text()
    fields = os.listdir(tmp_path / "runs" / "qpact_admm" / "fields")
    assert {"s.field", "c_thb.field", "mus.field", "truth_s.field"} <= set(fields)
    assert [record.method for record in result.records] == ["admm", "monolithic"]
    assert (tmp_path / "runs" / "qpact_monolithic" / "fields" / "c_thb.field").exists()


def test_synthesize_to_directory(tmp_path):
    config = load_config(overrides=SMALL_EIT)
    problem = synthesize_to_directory(config, str(tmp_path))
    assert isinstance(problem, Problem)
    mesh = read_mesh(str(tmp_path / "mesh.txt"))
    assert mesh.n_vertices == problem.mesh.n_vertices
    for index in range(problem.q):
        data = read_field(str(tmp_path / "fields" / f"data_{index}.field"), mesh)
        np.testing.assert_allclose(data.values, problem.models[index].data)
    assert (tmp_path / "fields" / "truth_m.field").exists()
