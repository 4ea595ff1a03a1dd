"""Study harness: build synthetic problems from a config and run ADMM / monolithic comparisons.

Study kinds
    single        one run with run.method
    norm          ADMM with H1 and with L2 consensus
    inexact       ADMM with few and with many Newton iterations per subproblem
    scaling_q     ADMM and monolithic for every q in study.q_values (EIT)
    scaling_mesh  ADMM and monolithic for every level in study.mesh_levels (EIT)
    qpact         ADMM and monolithic on the multi-wavelength qPACT problem

Every run writes runs/<name>/history.csv and runs/<name>/fields/*.field; the
study writes summary.csv, config.ini and, when study.report is on, report.pdf
and convergence.html. A failed run is recorded in the summary and the study
goes on.
"""
import logging
import os
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import pandas as pd

from src.config import (CHARTS_FILENAME, FIELDS_SUBDIR, HISTORY_FILENAME, REPORT_FILENAME,
                        RUNS_SUBDIR, SNAPSHOT_FILENAME, SUMMARY_FILENAME)
from src.errors import AdmmInvertError, ConfigError
from src.experiments.metrics import region_relative_error, relative_error, state_misfit
from src.experiments.monolithic import monolithic_solve
from src.experiments.phantoms import phantom, qpact_phantom
from src.experiments.synthetic import synthesize_data
from src.fem.mesh import build_unit_disc_mesh, build_unit_square_mesh, read_mesh, write_mesh
from src.fem.space import Field, write_field
from src.logger.history_logger import INCG_HISTORY_COLUMNS, HistoryLogger
from src.logger.plots import write_convergence_html
from src.logger.report_generator import ReportGenerator
from src.models.base import total_counters
from src.models.eit import EitModel, equispaced_sources
from src.models.qpact import ChromophoreTable, QpactModel, physical_transform
from src.optim import admm
from src.optim.incg import IncgSettings
from src.regularization.qpact_regularizer import BLOCK_NAMES, QpactRegularizer, QpactRegSettings
from src.regularization.total_variation import TotalVariation, TvSettings
from src.regularization.transforms import TransformedRegularizer
from src.utils import ensure_directories, load_dataframe, save_dataframe

logger = logging.getLogger(__name__)

QPACT_ERROR_BLOCKS = ("s", "c_thb")


@dataclass
class Problem:
    """Synthetic inverse problem: models with data, regularizer, truth and start (inversion coordinates)"""
    kind: str
    mesh: object
    models: list
    regularizer: object
    truth: np.ndarray
    m0: np.ndarray
    masks: dict = field(default_factory=dict)
    transform: object = None

    @property
    def q(self):
        return len(self.models)

    def physical_blocks(self, x):
        if self.transform is None:
            return {"m": np.asarray(x, dtype=float)}
        return dict(zip(BLOCK_NAMES, np.split(self.transform.to_physical(x), 3)))

    def error(self, x):
        """Relative L2 error; for qPACT the mean over the s and c_thb blocks"""
        found = self.physical_blocks(x)
        truth = self.physical_blocks(self.truth)
        names = ("m",) if self.transform is None else QPACT_ERROR_BLOCKS
        errors = [relative_error(Field(self.mesh, found[name]), Field(self.mesh, truth[name])) for name in names]
        return float(np.mean(errors))

    def region_errors(self, x):
        if self.transform is None:
            return {}
        found = self.physical_blocks(x)
        truth = self.physical_blocks(self.truth)
        return {f"err_{name}_{region}": region_relative_error(self.mesh, found[name], truth[name], mask)
                for name in QPACT_ERROR_BLOCKS for region, mask in self.masks.items()}

    def write_fields(self, x, directory, prefix=""):
        ensure_directories(directory)
        for name, values in self.physical_blocks(x).items():
            write_field(Field(self.mesh, values), os.path.join(directory, f"{prefix}{name}.field"))


def build_mesh(config, level=None):
    if level is None and config.mesh_file:
        return read_mesh(config.mesh_file)
    if config.problem == "eit":
        return build_unit_disc_mesh(config.get("mesh", "level") if level is None else level)
    return build_unit_square_mesh(config.get("mesh", "divisions"))


def _eit_problem(config, mesh, q):
    truth = phantom(mesh).values
    sources = equispaced_sources(q, config.get("eit", "gamma"), config.get("eit", "beta"))
    models = [EitModel(mesh, source) for source in sources]
    synthesize_data(models, truth, config.get("eit", "noise_level"), config.seed)
    reg = config.values["regularization"]
    regularizer = TotalVariation(mesh, TvSettings(reg["alpha_tv"], reg["alpha_tk"], reg["eps"], reg["m_ref"]))
    m0 = np.full(mesh.n_vertices, config.get("eit", "m0"))
    return Problem("eit", mesh, models, regularizer, truth, m0)


def _qpact_problem(config, mesh):
    params, masks = qpact_phantom(mesh)
    table = ChromophoreTable.from_mapping(config.extinction_table())
    illumination = config.get("qpact", "illumination")
    models = [QpactModel(mesh, table, wavelength, illumination=illumination) for wavelength in table.wavelengths]
    synthesize_data(models, params, config.get("qpact", "noise_level"), config.seed)
    reg = config.values["regularization"]
    settings = QpactRegSettings(reg["gamma_s"], reg["delta_s"], reg["gamma_cthb"], reg["delta_cthb"],
                                reg["gamma_mus"], reg["delta_mus"], reg["qpact_eps"])
    transform = physical_transform(mesh)
    regularizer = TransformedRegularizer(QpactRegularizer(mesh, settings), transform)
    n = mesh.n_vertices
    start = np.concatenate([np.full(n, config.get("qpact", key)) for key in ("s0", "cthb0", "mus0")])
    return Problem("qpact", mesh, models, regularizer, transform.from_physical(params.stacked()),
                   transform.from_physical(start), masks, transform)


def build_problem(config, mesh=None, q=None):
    """Mesh, phantom, forward models with noisy data, and the regularizer for ``config``"""
    mesh = mesh or build_mesh(config)
    if config.problem == "eit":
        return _eit_problem(config, mesh, q or config.get("eit", "q"))
    return _qpact_problem(config, mesh)


def incg_settings(config, **changes):
    return replace(IncgSettings(**config.values["incg"]), **changes)


def monolithic_settings(config):
    study = config.values["study"]
    return incg_settings(config, max_iter=study["monolithic_max_iter"],
                         grad_abs_tol=study["monolithic_grad_abs_tol"],
                         grad_rel_tol=study["monolithic_grad_rel_tol"])


def admm_settings(config, consensus_norm=None, subproblem=None):
    values = config.values["admm"]
    norm_kind = consensus_norm or values["consensus_norm"]
    return admm.AdmmSettings(
        rho0=values["rho0_h1"] if norm_kind == "H1" else values["rho0_l2"],
        mu=values["mu"], tau=values["tau"], eps_abs=values["eps_abs"], eps_rel=values["eps_rel"],
        max_global_iter=values["max_global_iter"], consensus_norm=norm_kind,
        subproblem=subproblem or incg_settings(config),
        z_solver=admm.NewtonSettings(**config.values["zsolver"]),
        z_update=values["z_update"],
        workers=config.get("run", "workers") or None)


@dataclass
class RunPlan:
    name: str
    method: str
    consensus_norm: str = None
    subproblem_iter: int = None
    q: int = None
    level: int = None


@dataclass
class RunRecord:
    name: str
    method: str
    consensus_norm: str
    q: int
    n_vertices: int
    iterations: int = 0
    converged: bool = False
    solution_time: float = np.nan
    rel_error: float = np.nan
    state_misfit: float = np.nan
    forward_solves: int = 0
    adjoint_solves: int = 0
    incremental_solves: int = 0
    status: str = "ok"
    message: str = ""
    extra: dict = field(default_factory=dict)

    def as_row(self):
        row = asdict(self)
        row.update(row.pop("extra"))
        return row


@dataclass
class StudyResult:
    kind: str
    output_dir: str
    records: list
    summary: pd.DataFrame
    histories: dict

    @property
    def failed(self):
        return [record for record in self.records if record.status != "ok"]


def execute_run(problem, plan, config, run_dir):
    """One reconstruction; returns (RunRecord, final iterate or None on failure)"""
    consensus_norm = plan.consensus_norm or config.get("admm", "consensus_norm")
    record = RunRecord(plan.name, plan.method, consensus_norm if plan.method == "admm" else "",
                       problem.q, problem.mesh.n_vertices)
    for model in problem.models:
        model.counters.reset()
        model.clear_cache()
    logger.info("run %s: %s, q=%d, %d vertices", plan.name, plan.method, problem.q, problem.mesh.n_vertices)
    start = time.perf_counter()
    try:
        if plan.method == "admm":
            subproblem = incg_settings(config)
            if plan.subproblem_iter is not None:
                subproblem = replace(subproblem, max_iter=plan.subproblem_iter)
            state = admm.run(problem.models, problem.regularizer, admm_settings(config, consensus_norm, subproblem),
                             m0=problem.m0, error=problem.error, run_name=plan.name)
            x, history = state.z, state.history
            record.iterations, record.converged = state.k, state.converged
            if state.failures:
                record.message = f"{len(state.failures)} subproblem solves failed"
        else:
            history = HistoryLogger(plan.name, INCG_HISTORY_COLUMNS)
            result = monolithic_solve(problem.models, problem.regularizer, monolithic_settings(config),
                                      norm_kind="L2", m0=problem.m0, m_prior=problem.m0,
                                      workers=config.get("run", "workers") or 1, error=problem.error,
                                      history=history)
            x = result.m_final
            record.iterations, record.converged = result.iterations, result.converged
            record.message = result.reason
        record.solution_time = time.perf_counter() - start

        counters = total_counters(problem.models)
        record.forward_solves = counters.forward
        record.adjoint_solves = counters.adjoint
        record.incremental_solves = counters.incremental
        record.rel_error = problem.error(x)
        record.state_misfit = state_misfit(problem.models, x)
        record.extra = problem.region_errors(x)
    except AdmmInvertError as exc:
        logger.error("run %s failed: %s", plan.name, exc)
        record.status, record.message = "failed", str(exc)
        record.solution_time = time.perf_counter() - start
        return record, None

    history.save(os.path.join(run_dir, HISTORY_FILENAME))
    fields_dir = os.path.join(run_dir, FIELDS_SUBDIR)
    problem.write_fields(x, fields_dir)
    problem.write_fields(problem.truth, fields_dir, prefix="truth_")
    stats = history.get_history_stats()
    logger.info("run %s: %d iterations, relative error %.4f, %d incremental solves, final cost %.6e",
                plan.name, stats["iterations"], record.rel_error, record.incremental_solves,
                stats.get("final_cost", np.nan))
    return record, x


def study_plans(config, kind):
    study = config.values["study"]
    if kind == "single":
        return [RunPlan(config.get("run", "name"), config.method)]
    if kind == "norm":
        return [RunPlan("admm_h1", "admm", consensus_norm="H1"), RunPlan("admm_l2", "admm", consensus_norm="L2")]
    if kind == "inexact":
        return [RunPlan("admm_inexact", "admm", subproblem_iter=study["inexact_iter"]),
                RunPlan("admm_exact", "admm", subproblem_iter=study["exact_iter"])]
    if kind in ("scaling_q", "scaling_mesh") and config.problem != "eit":
        raise ConfigError(f"study kind {kind} needs run.problem = eit")
    if kind == "scaling_q":
        return [RunPlan(f"{method}_q{q}", method, q=q)
                for q in config.number_list("study", "q_values", int) for method in ("admm", "monolithic")]
    if kind == "scaling_mesh":
        return [RunPlan(f"{method}_level{level}", method, level=level)
                for level in config.number_list("study", "mesh_levels", int) for method in ("admm", "monolithic")]
    if kind == "qpact":
        if config.problem != "qpact":
            raise ConfigError("study kind qpact needs run.problem = qpact")
        return [RunPlan("qpact_admm", "admm"), RunPlan("qpact_monolithic", "monolithic")]
    raise ConfigError(f"unknown study kind {kind!r}")


def run_study(config, output_dir=None, kind=None):
    """Run every planned reconstruction of the study and write its report files"""
    kind = kind or config.get("study", "kind")
    output_dir = output_dir or config.output_dir
    plans = study_plans(config, kind)
    ensure_directories(output_dir, os.path.join(output_dir, RUNS_SUBDIR))
    config.save_snapshot(os.path.join(output_dir, SNAPSHOT_FILENAME))
    logger.info("study %s: %d runs into %s", kind, len(plans), output_dir)

    problems = {}
    records, histories = [], {}
    for plan in plans:
        key = (plan.level, plan.q)
        if key not in problems:
            mesh = build_mesh(config, plan.level) if plan.level is not None else None
            problems[key] = build_problem(config, mesh, plan.q)
        run_dir = os.path.join(output_dir, RUNS_SUBDIR, plan.name)
        record, _ = execute_run(problems[key], plan, config, run_dir)
        records.append(record)
        history_path = os.path.join(run_dir, HISTORY_FILENAME)
        if record.status == "ok" and os.path.exists(history_path):
            histories[plan.name] = load_dataframe(history_path)

    summary = pd.DataFrame([record.as_row() for record in records])
    save_dataframe(summary, os.path.join(output_dir, SUMMARY_FILENAME))
    if config.get("study", "report"):
        ReportGenerator().generate_study_report(kind, summary, histories, config,
                                                os.path.join(output_dir, REPORT_FILENAME))
        write_convergence_html(histories, os.path.join(output_dir, CHARTS_FILENAME), title=f"{kind} study",
                               summary=summary)
    result = StudyResult(kind, output_dir, records, summary, histories)
    if result.failed:
        logger.warning("study %s: %d of %d runs failed", kind, len(result.failed), len(records))
    return result


def synthesize_to_directory(config, output_dir=None):
    """Write the phantom, the mesh and each model's noisy data; returns the Problem"""
    output_dir = output_dir or config.output_dir
    problem = build_problem(config)
    fields_dir = os.path.join(output_dir, FIELDS_SUBDIR)
    problem.write_fields(problem.truth, fields_dir, prefix="truth_")
    for index, model in enumerate(problem.models):
        write_field(Field(problem.mesh, model.data), os.path.join(fields_dir, f"data_{index}.field"))
    write_mesh(problem.mesh, os.path.join(output_dir, "mesh.txt"))
    config.save_snapshot(os.path.join(output_dir, SNAPSHOT_FILENAME))
    logger.info("wrote %d data fields to %s", problem.q, fields_dir)
    return problem
