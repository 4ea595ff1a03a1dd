"""Objectives handed to the Newton-CG solver.

Every objective exposes ``mesh``, ``blocks``, ``cost``, ``gradient``,
``hessian_action(m, v, mode)``, ``preconditioner(m)`` and ``counters()``.
"""
import logging
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from src.errors import SparseSolveError
from src.fem.linear_solver import FactorizedOperator
from src.fem.space import P1Space
from src.models.base import SolveCounters, total_counters

logger = logging.getLogger(__name__)

PRECONDITIONER_SHIFT = 1e-8


def regularizer_preconditioner(regularizer, m_prior, norm):
    """Solve with the regularizer Hessian at the prior, shifted by a small multiple of W"""
    H = regularizer.hessian_matrix(m_prior)
    W = norm.matrix
    scale = H.diagonal().mean() / W.diagonal().mean()
    if not scale > 0:
        return norm.riesz
    try:
        factor = FactorizedOperator(H + PRECONDITIONER_SHIFT * scale * W)
    except SparseSolveError as exc:
        logger.warning("regularizer preconditioner unavailable (%s), using the norm operator", exc)
        return norm.riesz
    return factor.solve


class SubproblemObjective:
    """(1/q) (misfit_i(m) + rho/2 |m - z + u_i|_W^2)"""

    def __init__(self, model, z, u, rho, q, norm):
        self.model = model
        self.mesh = model.mesh
        self.blocks = model.blocks
        self.shift = np.asarray(u, dtype=float) - np.asarray(z, dtype=float)
        self.rho = float(rho)
        self.q = q
        self.norm = norm
        self._misfit = {}

    def cost(self, m):
        misfit = self.model.cost(m)
        self._misfit = {"key": np.asarray(m, dtype=float).tobytes(), "value": misfit}
        d = m + self.shift
        return (misfit + 0.5 * self.rho * self.norm.inner(d, d)) / self.q

    def misfit_at(self, m):
        """Misfit cached by the last cost evaluation, recomputed when m differs"""
        if self._misfit.get("key") != np.asarray(m, dtype=float).tobytes():
            self.cost(m)
        return self._misfit["value"]

    def gradient(self, m):
        return (self.model.gradient(m) + self.rho * self.norm.apply(m + self.shift)) / self.q

    def hessian_action(self, m, direction, mode="full"):
        return (self.model.hessian_action(m, direction, mode) + self.rho * self.norm.apply(direction)) / self.q

    def preconditioner(self, m):
        return self.norm.riesz

    def counters(self):
        return self.model.counters.snapshot()


class MonolithicObjective:
    """(1/q) sum_i misfit_i(m) + R(m), with per-model terms evaluated in a thread pool"""

    def __init__(self, models, regularizer, m_prior=None, norm=None, workers=None, error=None):
        self.models = list(models)
        self.q = len(self.models)
        self.regularizer = regularizer
        self.mesh = regularizer.mesh
        self.blocks = regularizer.blocks
        self.norm = norm
        self.workers = workers or 1
        self.m_prior = m_prior
        self.error = error

    def _map(self, fn):
        if self.workers <= 1 or self.q == 1:
            return [fn(model) for model in self.models]
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            return list(pool.map(fn, self.models))

    def misfit(self, m):
        return sum(self._map(lambda model: model.cost(m))) / self.q

    def cost(self, m):
        return self.misfit(m) + self.regularizer.cost(m)

    def gradient(self, m):
        return sum(self._map(lambda model: model.gradient(m))) / self.q + self.regularizer.gradient(m)

    def hessian_action(self, m, direction, mode="full"):
        actions = self._map(lambda model: model.hessian_action(m, direction, mode))
        return sum(actions) / self.q + self.regularizer.hessian_action(m, direction)

    def preconditioner(self, m):
        norm = self.norm or P1Space.for_mesh(self.mesh).norm_operator("L2", self.blocks)
        prior = m if self.m_prior is None else self.m_prior
        return regularizer_preconditioner(self.regularizer, prior, norm)

    def counters(self):
        return total_counters(self.models) if self.models else SolveCounters()


class ConsensusObjective:
    """R(z) + rho / (2 q) sum_i |w_i - z|_W^2 (with a single target this is the mean-based form)"""

    def __init__(self, regularizer, targets, rho, norm, q=None):
        self.regularizer = regularizer
        self.mesh = regularizer.mesh
        self.blocks = regularizer.blocks
        self.targets = [np.asarray(w, dtype=float) for w in targets]
        self.q = q or len(self.targets)
        self.rho = float(rho)
        self.norm = norm

    def cost(self, z):
        penalty = sum(self.norm.inner(w - z, w - z) for w in self.targets)
        return self.regularizer.cost(z) + 0.5 * self.rho * penalty / self.q

    def gradient(self, z):
        pull = sum(self.norm.apply(z - w) for w in self.targets)
        return self.regularizer.gradient(z) + self.rho * pull / self.q

    def newton_matrix(self, z):
        weight = self.rho * len(self.targets) / self.q
        return (self.regularizer.hessian_matrix(z) + weight * self.norm.matrix).tocsr()
