"""Electrical impedance tomography on a disc with one grounded boundary vertex.

Forward problem for log-conductivity m and the i-th injected current g:

    -div(e^m grad u) = 0 in the domain,  e^m du/dn = g on the boundary,  u(ground) = 0

Misfit: 1/2 (u - d)^T M_b (u - d) over the observation boundary.
"""
import logging
from dataclasses import dataclass

import numpy as np

from src.config import BOUNDARY_MARKER, EIT_BETA, EIT_GAMMA, EIT_GROUND_ANGLE
from src.errors import ConfigError, FieldError, MeshError
from src.fem.assembly import assemble_stiffness, gradient_products, scatter_to_vertices
from src.fem.linear_solver import FactorizedOperator
from src.fem.mesh import nearest_boundary_vertex
from src.fem.space import Field, P1Space
from src.models.base import HESSIAN_MODES, InversionModel

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SourceSpec:
    theta_i: float
    gamma: float = EIT_GAMMA
    beta: float = EIT_BETA
    ground_node: int = None
    observation_marker: int = BOUNDARY_MARKER

    def __post_init__(self):
        if self.gamma < 0:
            raise ConfigError(f"source amplitude gamma must be nonnegative, got {self.gamma}")
        if not self.beta > 0:
            raise ConfigError(f"source decay beta must be positive, got {self.beta}")


def wrap_angle(angle):
    """Map angles to (-pi, pi]"""
    wrapped = np.pi - np.mod(np.pi - np.asarray(angle, dtype=float), 2.0 * np.pi)
    return wrapped if np.ndim(wrapped) else float(wrapped)


def boundary_current(spec, theta):
    return spec.gamma * np.exp(-spec.beta * wrap_angle(np.asarray(theta) - spec.theta_i) ** 2)


def equispaced_sources(q, gamma=EIT_GAMMA, beta=EIT_BETA, ground_node=None):
    """q sources centred half a spacing off the ground angle, evenly around the circle"""
    if q < 1:
        raise ConfigError("at least one source is required")
    return [SourceSpec(EIT_GROUND_ANGLE + 2.0 * np.pi * (i + 0.5) / q, gamma, beta, ground_node)
            for i in range(q)]


class EitModel(InversionModel):
    def __init__(self, mesh, source, data=None):
        super().__init__(mesh)
        self.source = source
        self.space = P1Space.for_mesh(mesh)
        ground = source.ground_node
        if ground is None:
            ground = mesh.ground_node if mesh.ground_node is not None else \
                nearest_boundary_vertex(mesh, EIT_GROUND_ANGLE)
        if ground not in set(mesh.boundary_vertices.tolist()):
            raise MeshError(f"ground node {ground} is not a boundary vertex")
        self.ground_node = int(ground)
        self.boundary_mass = self.space.boundary_mass(source.observation_marker)
        current = boundary_current(source, mesh.vertex_angles())
        self.load = self.boundary_mass @ current
        self._data = np.zeros(mesh.n_vertices)
        if data is not None:
            self.data = data
        self._m = None
        self._factor = None
        self._u = None
        self._p = None

    @property
    def data(self):
        return self._data

    @data.setter
    def data(self, values):
        values = np.asarray(getattr(values, "values", values), dtype=float)
        if values.shape != (self.mesh.n_vertices,) or not np.all(np.isfinite(values)):
            raise FieldError("EIT data must be a finite nodal vector")
        self._data = values.copy()
        self._p = None

    def clear_cache(self):
        super().clear_cache()
        self._factor = self._u = self._p = None

    def _operator(self, m):
        if not self._same_point(m):
            self._m = m.copy()
            self._factor = FactorizedOperator(assemble_stiffness(self.mesh, np.exp(m)), [self.ground_node])
            self._u = self._p = None
            self._remember(m)
        return self._factor

    def forward(self, m):
        m = self._check(m)
        factor = self._operator(m)
        if self._u is None:
            self._u = factor.solve(self.load)
            self.counters.forward += 1
        return self._u

    def misfit(self, u):
        r = np.asarray(u, dtype=float) - self._data
        return 0.5 * float(r @ (self.boundary_mass @ r))

    def cost(self, m):
        return self.misfit(self.forward(m))

    def _coupling(self, m, a, b):
        """Vector with entries sum over elements of (e^{m_j}/3) A_e grad(a).grad(b)"""
        return np.exp(m) * scatter_to_vertices(self.mesh, gradient_products(self.mesh, a, b))

    def adjoint(self, m):
        u = self.forward(m)
        if self._p is None:
            self._p = self._factor.solve(-(self.boundary_mass @ (u - self._data)))
            self.counters.adjoint += 1
        return self._p

    def gradient(self, m):
        m = self._check(m)
        p = self.adjoint(m)
        return self._coupling(m, self._u, p)

    def hessian_action(self, m, direction, mode="full"):
        if mode not in HESSIAN_MODES:
            raise ConfigError(f"unknown Hessian mode {mode!r}")
        m = self._check(m)
        v = np.asarray(direction, dtype=float)
        p = self.adjoint(m)
        u = self._u
        K_dir = assemble_stiffness(self.mesh, np.exp(m) * v, require_positive=False)
        u_hat = self._factor.solve(-(K_dir @ u))
        rhs = -(self.boundary_mass @ u_hat)
        if mode == "full":
            rhs -= K_dir @ p
        p_hat = self._factor.solve(rhs)
        self.counters.incremental += 2
        action = self._coupling(m, u, p_hat)
        if mode == "full":
            action += self._coupling(m, u, p) * v + self._coupling(m, u_hat, p)
        return action

    def state_misfit(self, m):
        return 2.0 * self.cost(m)

    def observe(self, m):
        return self.forward(m).copy()


def forward_solve(model, m):
    return Field(model.mesh, model.forward(m.values))


def misfit(model, u):
    return model.misfit(u.values)


def gradient(model, m):
    return Field(model.mesh, model.gradient(m.values))


def hessian_action(model, m, direction, mode="full"):
    return Field(model.mesh, model.hessian_action(m.values, direction.values, mode))
