"""Scaled consensus ADMM over several PDE models sharing one parameter.

Per global iteration:
    m_i <- argmin (1/q) (misfit_i(m) + rho/2 |m - z + u_i|_W^2)   (Newton-CG, in parallel)
    z   <- argmin R(z) + rho/2 |mean(m) + mean(u) - z|_W^2         (damped Newton)
    u_i <- u_i + m_i - z
then the residuals decide convergence and the penalty update. Scaled duals are
multiplied by rho_old / rho_new whenever rho changes.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from src.config import (ADMM_EPS_ABS, ADMM_EPS_REL, ADMM_MAX_GLOBAL_ITER, ADMM_MU, ADMM_TAU,
                        CONSENSUS_NORM, RHO0_H1, Z_GRAD_ABS_TOL, Z_GRAD_REL_TOL, Z_MAX_ITER,
                        Z_UPDATE_MODE)
from src.errors import AdmmError, ConfigError, FieldError, SolverError
from src.fem.linear_solver import solve_sparse
from src.fem.space import P1Space, check_norm_kind
from src.logger.history_logger import ADMM_HISTORY_COLUMNS, HistoryLogger
from src.models.base import total_counters
from src.optim import incg
from src.optim.objectives import ConsensusObjective, SubproblemObjective

logger = logging.getLogger(__name__)

Z_UPDATE_MODES = ("mean", "direct")


@dataclass(frozen=True)
class NewtonSettings:
    grad_abs_tol: float = Z_GRAD_ABS_TOL
    grad_rel_tol: float = Z_GRAD_REL_TOL
    max_iter: int = Z_MAX_ITER
    c_armijo: float = 1e-4
    max_backtrack: int = 20


@dataclass(frozen=True)
class AdmmSettings:
    rho0: float = RHO0_H1
    mu: float = ADMM_MU
    tau: float = ADMM_TAU
    eps_abs: float = ADMM_EPS_ABS
    eps_rel: float = ADMM_EPS_REL
    max_global_iter: int = ADMM_MAX_GLOBAL_ITER
    consensus_norm: str = CONSENSUS_NORM
    subproblem: incg.IncgSettings = field(default_factory=incg.IncgSettings)
    z_solver: NewtonSettings = field(default_factory=NewtonSettings)
    z_update: str = Z_UPDATE_MODE
    workers: int = None

    def __post_init__(self):
        if not self.rho0 > 0:
            raise ConfigError(f"rho0 must be positive, got {self.rho0}")
        if not (self.mu > 1 and self.tau > 1):
            raise ConfigError("mu and tau must both exceed 1")
        if not (self.eps_abs > 0 and self.eps_rel > 0):
            raise ConfigError("ADMM tolerances must be positive")
        if self.max_global_iter < 1:
            raise ConfigError("max_global_iter must be at least 1")
        check_norm_kind(self.consensus_norm)
        if self.z_update not in Z_UPDATE_MODES:
            raise ConfigError(f"z_update must be one of {Z_UPDATE_MODES}")


@dataclass
class ZUpdateInfo:
    converged: bool
    iterations: int
    grad_norm: float


@dataclass
class AdmmState:
    m_list: list
    z: np.ndarray
    u_list: list
    rho: float
    k: int = 0
    converged: bool = False
    history: HistoryLogger = field(default_factory=lambda: HistoryLogger("admm", ADMM_HISTORY_COLUMNS))
    failures: list = field(default_factory=list)

    @property
    def q(self):
        return len(self.m_list)

    def history_frame(self):
        return self.history.get_history_dataframe()


def _values(x):
    return np.asarray(getattr(x, "values", x), dtype=float)


def subproblem_solve(model, z, u_i, rho, q, settings, norm_kind="H1", m_start=None, norm=None):
    """Approximate minimizer of (1/q)(misfit_i(m) + rho/2 |m - z + u_i|^2) by Newton-CG"""
    m, _, _ = _solve_subproblem(model, z, u_i, rho, q, settings, norm_kind, m_start, norm)
    return m


def _solve_subproblem(model, z, u_i, rho, q, settings, norm_kind, m_start, norm):
    norm = norm or P1Space.for_mesh(model.mesh).norm_operator(norm_kind, model.blocks)
    z, u_i = _values(z), _values(u_i)
    start = z - u_i if m_start is None else _values(m_start)
    objective = SubproblemObjective(model, z, u_i, rho, q, norm)
    result = incg.solve(objective, start, settings, norm=norm)
    return result.m_final, objective.misfit_at(result.m_final), result


def _newton_minimize(objective, start, settings, norm):
    z = start.copy()
    cost = objective.cost(z)
    g = objective.gradient(z)
    grad_norm0 = grad_norm = norm.dual_norm(g)
    tol = max(settings.grad_abs_tol, settings.grad_rel_tol * grad_norm0)
    for it in range(settings.max_iter + 1):
        if grad_norm <= tol:
            return z, ZUpdateInfo(True, it, grad_norm)
        if it == settings.max_iter:
            break
        step = solve_sparse(objective.newton_matrix(z), -g)
        gdm = float(g @ step)
        if gdm >= 0:
            step, gdm = -norm.riesz(g), -grad_norm ** 2
        alpha = 1.0
        for _ in range(settings.max_backtrack):
            trial = z + alpha * step
            trial_cost = objective.cost(trial)
            if trial_cost <= cost + settings.c_armijo * alpha * gdm:
                break
            alpha *= 0.5
        else:
            logger.warning("z-update line search stalled at |g| = %.3e", grad_norm)
            return z, ZUpdateInfo(False, it, grad_norm)
        z, cost = trial, trial_cost
        g = objective.gradient(z)
        grad_norm = norm.dual_norm(g)
    logger.warning("z-update Newton did not converge in %d iterations (|g| = %.3e)", settings.max_iter, grad_norm)
    return z, ZUpdateInfo(False, settings.max_iter, grad_norm)


def z_update(m_bar, u_bar, rho, reg, norm_kind="H1", settings=None, norm=None, return_info=False):
    """Mean-based consensus update: argmin R(z) + rho/2 |m_bar + u_bar - z|_W^2"""
    settings = settings or NewtonSettings()
    norm = norm or P1Space.for_mesh(reg.mesh).norm_operator(norm_kind, reg.blocks)
    w = _values(m_bar) + _values(u_bar)
    z, info = _newton_minimize(ConsensusObjective(reg, [w], rho, norm, q=1), w, settings, norm)
    return (z, info) if return_info else z


def z_update_direct(m_list, u_list, rho, reg, norm_kind="H1", settings=None, norm=None, return_info=False):
    """Consensus update with all q terms: argmin R(z) + rho/(2q) sum_i |m_i + u_i - z|_W^2"""
    settings = settings or NewtonSettings()
    norm = norm or P1Space.for_mesh(reg.mesh).norm_operator(norm_kind, reg.blocks)
    targets = [_values(m) + _values(u) for m, u in zip(m_list, u_list)]
    start = np.mean(targets, axis=0)
    z, info = _newton_minimize(ConsensusObjective(reg, targets, rho, norm), start, settings, norm)
    return (z, info) if return_info else z


def residuals(state, z_prev, norm_kind="H1", norm=None):
    """(r, s): root-mean-square primal residual over models and rho |z - z_prev|"""
    norm = norm or _state_norm(state, norm_kind)
    z = _values(state.z)
    r = np.sqrt(np.mean([norm.inner(_values(m) - z, _values(m) - z) for m in state.m_list]))
    s = state.rho * norm.norm(z - _values(z_prev))
    return float(r), float(s)


def _state_norm(state, norm_kind):
    mesh = getattr(state.z, "mesh", None)
    if mesh is None:
        raise FieldError("pass a norm operator when the state holds plain arrays")
    return P1Space.for_mesh(mesh).norm_operator(norm_kind)


def update_rho(rho, r_norm, s_norm, mu, tau):
    """Residual balancing; returns (new rho, factor rho_old / rho_new for the scaled duals)"""
    if r_norm > mu * s_norm:
        new = rho * tau
    elif s_norm > mu * r_norm:
        new = rho / tau
    else:
        new = rho
    return new, rho / new


def check_convergence(r_norm, s_norm, m_norms, z_norm, eps_abs, eps_rel):
    m_norm = float(np.sqrt(np.mean(np.square(m_norms))))
    return bool(r_norm <= eps_abs + eps_rel * m_norm and s_norm <= eps_abs + eps_rel * z_norm)


def _safe_cost(model, m):
    try:
        return model.cost(m)
    except SolverError:
        return np.nan


def augmented_lagrangian(models, reg, state, norm, misfits=None):
    """(1/q) sum_i [misfit_i(m_i) + rho/2 |m_i - z + u_i|^2 - rho/2 |u_i|^2] + R(z)

    ``misfits`` holds misfit_i(m_i) when already known, saving the forward solves.
    """
    total = 0.0
    z = _values(state.z)
    if misfits is None:
        misfits = [model.cost(_values(m)) for model, m in zip(models, state.m_list)]
    for misfit, m, u in zip(misfits, state.m_list, state.u_list):
        d = _values(m) - z + _values(u)
        total += misfit + 0.5 * state.rho * (norm.inner(d, d) - norm.inner(_values(u), _values(u)))
    return total / len(models) + reg.cost(z)


def run(models, reg, settings=None, m0=None, error=None, run_name="admm"):
    """Consensus ADMM from m_i = z = m0, u_i = 0, rho = rho0.

    ``error(z)`` (optional) fills the rel_error history column. Failed
    subproblems keep their previous iterate; AdmmError is raised only when all
    of them fail in the same iteration.
    """
    settings = settings or AdmmSettings()
    models = list(models)
    q = len(models)
    if q < 1:
        raise AdmmError("at least one model is required")
    mesh = models[0].mesh
    if any(model.mesh is not mesh for model in models) or reg.mesh is not mesh:
        raise FieldError("all models and the regularizer must share one mesh")
    blocks = models[0].blocks
    norm = P1Space.for_mesh(mesh).norm_operator(settings.consensus_norm, blocks)
    m0 = np.zeros(models[0].size) if m0 is None else _values(m0)

    state = AdmmState([m0.copy() for _ in range(q)], m0.copy(), [np.zeros_like(m0) for _ in range(q)],
                      settings.rho0, history=HistoryLogger(run_name, ADMM_HISTORY_COLUMNS))
    logger.info("ADMM %s: q=%d, %s consensus, rho0=%.3g", run_name, q, settings.consensus_norm, settings.rho0)

    with ThreadPoolExecutor(max_workers=settings.workers or q) as pool:
        while state.k < settings.max_global_iter:
            futures = [pool.submit(_solve_subproblem, model, state.z, u, state.rho, q, settings.subproblem,
                                   settings.consensus_norm, m, norm)
                       for model, m, u in zip(models, state.m_list, state.u_list)]
            misfits = []
            failed = 0
            for i, future in enumerate(futures):
                try:
                    m_new, misfit, _ = future.result()
                    state.m_list[i] = m_new
                except SolverError as exc:
                    failed += 1
                    state.failures.append((state.k + 1, i, str(exc)))
                    logger.warning("subproblem %d failed at iteration %d: %s", i, state.k + 1, exc)
                    misfit = np.nan
                misfits.append(misfit)
            if failed == q:
                raise AdmmError(f"all {q} subproblems failed at iteration {state.k + 1}")
            for i, misfit in enumerate(misfits):
                if np.isnan(misfit):
                    misfits[i] = _safe_cost(models[i], state.m_list[i])

            z_prev = state.z
            if settings.z_update == "mean":
                m_bar = np.mean(state.m_list, axis=0)
                u_bar = np.mean(state.u_list, axis=0)
                state.z, info = z_update(m_bar, u_bar, state.rho, reg, settings.consensus_norm,
                                         settings.z_solver, norm, return_info=True)
            else:
                state.z, info = z_update_direct(state.m_list, state.u_list, state.rho, reg,
                                                settings.consensus_norm, settings.z_solver, norm, return_info=True)
            state.u_list = [u + m - state.z for u, m in zip(state.u_list, state.m_list)]
            state.k += 1

            r_norm, s_norm = residuals(state, z_prev, norm=norm)
            counters = total_counters(models)
            state.history.log_iteration(
                k=state.k, rho=state.rho, r_norm=r_norm, s_norm=s_norm,
                cost=float(np.nanmean(misfits) + reg.cost(state.z)),
                lagrangian=augmented_lagrangian(models, reg, state, norm, misfits),
                rel_error=error(state.z) if error else np.nan,
                forward_solves=counters.forward, adjoint_solves=counters.adjoint,
                incremental_solves=counters.incremental)
            logger.info("ADMM %s k=%d rho=%.3g |r|=%.3e |s|=%.3e", run_name, state.k, state.rho, r_norm, s_norm)

            m_norms = [norm.norm(m) for m in state.m_list]
            if check_convergence(r_norm, s_norm, m_norms, norm.norm(state.z), settings.eps_abs, settings.eps_rel):
                state.converged = True
                break
            new_rho, scale = update_rho(state.rho, r_norm, s_norm, settings.mu, settings.tau)
            if new_rho != state.rho:
                state.u_list = [u * scale for u in state.u_list]
                state.rho = new_rho
    logger.info("ADMM %s finished after %d iterations (converged=%s)", run_name, state.k, state.converged)
    return state
