import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, asdict

import numpy as np

from src.errors import FieldError

logger = logging.getLogger(__name__)

HESSIAN_MODES = ("full", "gauss_newton")


@dataclass
class SolveCounters:
    """Number of PDE solves of each kind performed by one model"""
    forward: int = 0
    adjoint: int = 0
    incremental: int = 0

    def snapshot(self):
        return SolveCounters(self.forward, self.adjoint, self.incremental)

    def reset(self):
        self.forward = self.adjoint = self.incremental = 0

    def as_dict(self):
        return asdict(self)

    def __add__(self, other):
        return SolveCounters(self.forward + other.forward, self.adjoint + other.adjoint,
                             self.incremental + other.incremental)

    def __sub__(self, other):
        return SolveCounters(self.forward - other.forward, self.adjoint - other.adjoint,
                             self.incremental - other.incremental)


def total_counters(models):
    total = SolveCounters()
    for model in models:
        total = total + model.counters
    return total


class InversionModel(ABC):
    """One PDE experiment: misfit cost, adjoint gradient and Hessian action.

    Parameter vectors are plain arrays of length ``size`` (``blocks`` stacked
    nodal fields). States computed at the last parameter are cached, so a
    gradient following a cost at the same parameter reuses the forward solve.
    """

    blocks = 1

    def __init__(self, mesh):
        self.mesh = mesh
        self.counters = SolveCounters()
        self._key = None

    @property
    def size(self):
        return self.blocks * self.mesh.n_vertices

    def _check(self, m):
        m = np.asarray(getattr(m, "values", m), dtype=float)
        if m.shape != (self.size,):
            raise FieldError(f"parameter has shape {m.shape}, expected ({self.size},)")
        if not np.all(np.isfinite(m)):
            raise FieldError("parameter has non-finite entries")
        return m

    def _same_point(self, m):
        return self._key is not None and self._key == m.tobytes()

    def _remember(self, m):
        self._key = m.tobytes()

    def clear_cache(self):
        self._key = None

    @abstractmethod
    def cost(self, m):
        """Misfit at m (one forward solve unless the state is cached)"""

    @abstractmethod
    def gradient(self, m):
        """Assembled gradient of the misfit (forward + adjoint solve)"""

    @abstractmethod
    def hessian_action(self, m, direction, mode="full"):
        """Hessian (or Gauss-Newton Hessian) of the misfit applied to a direction"""

    @abstractmethod
    def state_misfit(self, m):
        """Squared data mismatch reported in study summaries"""

    @abstractmethod
    def observe(self, m):
        """Noise-free data generated at m"""
