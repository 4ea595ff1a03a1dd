"""Inexact Newton-CG with Armijo backtracking.

Each Newton system H dm = -g is solved by preconditioned CG up to the
Eisenstat-Walker tolerance eta = min(cap, sqrt(|g| / |g0|)). CG stops early on
negative curvature. Gradient norms are dual norms sqrt(g^T W^-1 g) of the
declared norm kind.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from src.config import (HESSIAN_MODE, INCG_C_ARMIJO, INCG_FORCING_CAP, INCG_GDM_TOL,
                        INCG_GRAD_ABS_TOL, INCG_GRAD_REL_TOL, INCG_MAX_BACKTRACK,
                        INCG_MAX_CG_ITER, INCG_MAX_ITER)
from src.errors import ConfigError, SolverError
from src.fem.space import P1Space, check_norm_kind
from src.models.base import HESSIAN_MODES
from src.logger.history_logger import INCG_HISTORY_COLUMNS, HistoryLogger

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class IncgSettings:
    max_iter: int = INCG_MAX_ITER
    grad_abs_tol: float = INCG_GRAD_ABS_TOL
    grad_rel_tol: float = INCG_GRAD_REL_TOL
    max_cg_iter: int = INCG_MAX_CG_ITER
    c_armijo: float = INCG_C_ARMIJO
    max_backtrack: int = INCG_MAX_BACKTRACK
    hessian_mode: str = HESSIAN_MODE
    forcing_cap: float = INCG_FORCING_CAP
    gdm_tol: float = INCG_GDM_TOL

    def __post_init__(self):
        if self.max_iter < 0 or self.max_cg_iter < 1:
            raise ConfigError("max_iter must be >= 0 and max_cg_iter >= 1")
        if not (self.grad_abs_tol > 0 and self.grad_rel_tol > 0):
            raise ConfigError("gradient tolerances must be positive")
        if not 0 < self.c_armijo < 0.5:
            raise ConfigError(f"c_armijo must lie in (0, 1/2), got {self.c_armijo}")
        if self.max_backtrack < 1:
            raise ConfigError("max_backtrack must be at least 1")
        if self.hessian_mode not in HESSIAN_MODES:
            raise ConfigError(f"hessian_mode must be one of {HESSIAN_MODES}")
        if not self.forcing_cap > 0:
            raise ConfigError("forcing_cap must be positive")


@dataclass
class IncgIteration:
    k: int
    cost: float
    grad_norm: float
    alpha: float
    gdm: float
    eta: float
    cg_iterations: int
    cg_reason: str
    backtracks: int


@dataclass
class IncgResult:
    m_final: np.ndarray
    converged: bool
    reason: str
    iterations: int
    final_grad_norm: float
    grad_norm0: float
    cost_history: list = field(default_factory=list)
    grad_norm_history: list = field(default_factory=list)
    cg_iteration_history: list = field(default_factory=list)
    records: list = field(default_factory=list)
    counters: object = None

    @property
    def final_cost(self):
        return self.cost_history[-1] if self.cost_history else None


def eisenstat_walker_forcing(grad_norm, grad_norm0, cap=INCG_FORCING_CAP):
    if not grad_norm0 > 0:
        raise SolverError("initial gradient norm must be positive")
    return min(cap, np.sqrt(grad_norm / grad_norm0))


def preconditioned_cg(apply_hessian, rhs, precondition, eta, max_iter):
    """Truncated PCG for H x = rhs, stopped when |r|_P <= eta |rhs|_P.

    Returns (x, iterations, reason). On negative curvature the current iterate
    is returned, or the preconditioned steepest-descent direction when it
    appears in the first iteration.
    """
    x = np.zeros_like(rhs)
    r = rhs.copy()
    z = precondition(r)
    rz = float(r @ z)
    r0 = np.sqrt(max(rz, 0.0))
    if r0 == 0.0:
        return x, 0, "zero right-hand side"
    target = eta * r0
    p = z.copy()
    for i in range(max_iter):
        Hp = apply_hessian(p)
        curvature = float(p @ Hp)
        if curvature <= 0.0:
            if i == 0:
                return z, 1, "negative curvature"
            return x, i + 1, "negative curvature"
        alpha = rz / curvature
        x += alpha * p
        r -= alpha * Hp
        z = precondition(r)
        rz_new = float(r @ z)
        if np.sqrt(max(rz_new, 0.0)) <= target:
            return x, i + 1, "forcing tolerance"
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, max_iter, "iteration cap"


def cg_residual_certificate(objective, m, step, gradient, eta, mode=HESSIAN_MODE, precondition=None):
    """Post-hoc |H dm + g|_P <= eta |g|_P check with one extra Hessian action"""
    precondition = precondition or objective.preconditioner(m)
    residual = objective.hessian_action(m, step, mode) + gradient
    lhs = np.sqrt(max(float(residual @ precondition(residual)), 0.0))
    rhs = np.sqrt(max(float(gradient @ precondition(gradient)), 0.0))
    return lhs <= eta * rhs * (1.0 + 1e-8), lhs, rhs


def armijo_holds(cost_new, cost_old, alpha, gdm, c_armijo):
    return cost_new < cost_old + alpha * c_armijo * gdm


def solve(objective, m0, settings=None, norm_kind="L2", norm=None, history=None):
    """Minimize ``objective`` from ``m0``.

    ``objective`` provides ``cost(m)``, ``gradient(m)``,
    ``hessian_action(m, v, mode)``, ``preconditioner(m)`` and, optionally,
    ``counters()`` and ``error(m)``. Iterations are appended to ``history``
    (a HistoryLogger) when given.
    """
    settings = settings or IncgSettings()
    if norm is None:
        check_norm_kind(norm_kind)
        norm = P1Space.for_mesh(objective.mesh).norm_operator(norm_kind, objective.blocks)
    history = history if history is not None else HistoryLogger("incg", INCG_HISTORY_COLUMNS)
    counters = getattr(objective, "counters", None)
    error = getattr(objective, "error", None)

    m = np.array(getattr(m0, "values", m0), dtype=float)
    cost = objective.cost(m)
    result = IncgResult(m, False, "maximum iterations", 0, np.nan, np.nan, cost_history=[cost])
    grad_norm0 = None
    tol = None
    precondition = objective.preconditioner(m)

    def record(k, grad_norm, alpha=np.nan, gdm=np.nan, eta=np.nan, cg_iterations=0, cg_reason="", backtracks=0):
        snapshot = counters() if counters else None
        history.log_iteration(
            k=k, cost=result.cost_history[-1], grad_norm=grad_norm, alpha=alpha, gdm=gdm, eta=eta,
            cg_iterations=cg_iterations, cg_reason=cg_reason, backtracks=backtracks,
            rel_error=error(m) if error else np.nan,
            forward_solves=snapshot.forward if snapshot else np.nan,
            adjoint_solves=snapshot.adjoint if snapshot else np.nan,
            incremental_solves=snapshot.incremental if snapshot else np.nan)

    k = 0
    step_info = {}
    while True:
        g = objective.gradient(m)
        grad_norm = norm.dual_norm(g)
        result.grad_norm_history.append(grad_norm)
        if grad_norm0 is None:
            grad_norm0 = grad_norm
            tol = settings.grad_abs_tol + settings.grad_rel_tol * grad_norm0
        record(k, grad_norm, **step_info)
        if grad_norm <= tol:
            result.converged, result.reason = True, "gradient norm below tolerance"
            break
        if k >= settings.max_iter:
            break

        eta = eisenstat_walker_forcing(grad_norm, grad_norm0, settings.forcing_cap)
        step, cg_iterations, cg_reason = preconditioned_cg(
            lambda v: objective.hessian_action(m, v, settings.hessian_mode),
            -g, precondition, eta, settings.max_cg_iter)
        result.cg_iteration_history.append(cg_iterations)
        gdm = float(g @ step)
        if -gdm <= settings.gdm_tol:
            result.converged, result.reason = True, "directional derivative below tolerance"
            break

        alpha = 1.0
        accepted = False
        cost_old = result.cost_history[-1]
        for backtracks in range(settings.max_backtrack):
            trial = m + alpha * step
            try:
                cost_new = objective.cost(trial)
            except SolverError as exc:
                logger.debug("trial step alpha=%.3e failed: %s", alpha, exc)
                cost_new = np.inf
            if armijo_holds(cost_new, cost_old, alpha, gdm, settings.c_armijo):
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            result.reason = f"line search failed after {settings.max_backtrack} backtracks"
            logger.warning("INCG stopped at iteration %d: %s", k, result.reason)
            break

        k += 1
        m = trial
        result.cost_history.append(cost_new)
        result.records.append(IncgIteration(k, cost_new, grad_norm, alpha, gdm, eta,
                                            cg_iterations, cg_reason, backtracks))
        logger.debug("INCG it %d: cost %.6e |g| %.3e alpha %.3g eta %.3g cg %d (%s)",
                     k, cost_new, grad_norm, alpha, eta, cg_iterations, cg_reason)
        step_info = dict(alpha=alpha, gdm=gdm, eta=eta, cg_iterations=cg_iterations,
                         cg_reason=cg_reason, backtracks=backtracks)

    result.m_final = m
    result.iterations = k
    result.final_grad_norm = result.grad_norm_history[-1]
    result.grad_norm0 = grad_norm0
    result.counters = counters() if counters else None
    return result
