"""Smoothed total variation plus Tikhonov regularization on P1 fields.

    R(m) = alpha_tv * sum_e A_e sqrt(|grad(m - m_ref)|^2 + eps)
           + alpha_tk / 2 * (m - m_ref)^T M (m - m_ref)

Gradients are element-wise constant so every integral is exact.
"""
import logging
from dataclasses import dataclass

import numpy as np

from src.config import ALPHA_TK, ALPHA_TV, M_REF, TV_EPS
from src.errors import ConfigError, FieldError
from src.fem.assembly import assemble_tensor_stiffness, element_geometry, element_gradients
from src.fem.space import Field, P1Space

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TvSettings:
    alpha_tv: float = ALPHA_TV
    alpha_tk: float = ALPHA_TK
    eps: float = TV_EPS
    m_ref: object = M_REF  # scalar, nodal array or Field

    def __post_init__(self):
        if not self.eps > 0:
            raise ConfigError(f"TV smoothing eps must be positive, got {self.eps}")
        if self.alpha_tv < 0 or self.alpha_tk < 0:
            raise ConfigError("alpha_tv and alpha_tk must be nonnegative")


def _scatter_element_vectors(mesh, local):
    out = np.zeros(mesh.n_vertices)
    np.add.at(out, mesh.triangles.ravel(), local.ravel())
    return out


class TotalVariation:
    """Value, gradient and Hessian of the smoothed TV + Tikhonov functional on one mesh"""

    blocks = 1

    def __init__(self, mesh, settings=None):
        self.mesh = mesh
        self.settings = settings or TvSettings()
        self.space = P1Space.for_mesh(mesh)
        self._geo = element_geometry(mesh)
        ref = getattr(self.settings.m_ref, "values", self.settings.m_ref)
        if np.isscalar(ref):
            self.m_ref = np.full(mesh.n_vertices, float(ref))
        else:
            self.m_ref = np.asarray(ref, dtype=float)
            if self.m_ref.shape != (mesh.n_vertices,):
                raise FieldError("m_ref does not match the mesh")

    @property
    def size(self):
        return self.mesh.n_vertices

    def _state(self, m):
        g = element_gradients(self.mesh, np.asarray(m, dtype=float) - self.m_ref)
        n = np.sqrt(np.einsum("ta,ta->t", g, g) + self.settings.eps)
        return g, n

    def tv_term(self, m):
        _, n = self._state(m)
        return float(self.settings.alpha_tv * np.sum(self._geo.areas * n))

    def cost(self, m):
        d = np.asarray(m, dtype=float) - self.m_ref
        value = self.tv_term(m)
        if self.settings.alpha_tk:
            value += 0.5 * self.settings.alpha_tk * float(d @ (self.space.mass @ d))
        return value

    def gradient(self, m):
        g, n = self._state(m)
        flux = (self.settings.alpha_tv * self._geo.areas / n)[:, None] * g
        out = _scatter_element_vectors(self.mesh, np.einsum("tia,ta->ti", self._geo.gradients, flux))
        if self.settings.alpha_tk:
            out += self.settings.alpha_tk * (self.space.mass @ (np.asarray(m, dtype=float) - self.m_ref))
        return out

    def hessian_tensors(self, m):
        """Per-element 2x2 second derivative alpha_tv * (I / n - g g^T / n^3)"""
        g, n = self._state(m)
        eye = np.broadcast_to(np.eye(2), (len(n), 2, 2))
        outer = np.einsum("ta,tb->tab", g, g)
        return self.settings.alpha_tv * (eye / n[:, None, None] - outer / (n ** 3)[:, None, None])

    def hessian_action(self, m, direction):
        D = self.hessian_tensors(m)
        gv = element_gradients(self.mesh, direction)
        flux = self._geo.areas[:, None] * np.einsum("tab,tb->ta", D, gv)
        out = _scatter_element_vectors(self.mesh, np.einsum("tia,ta->ti", self._geo.gradients, flux))
        if self.settings.alpha_tk:
            out += self.settings.alpha_tk * (self.space.mass @ np.asarray(direction, dtype=float))
        return out

    def hessian_matrix(self, m):
        H = assemble_tensor_stiffness(self.mesh, self.hessian_tensors(m))
        if self.settings.alpha_tk:
            H = H + self.settings.alpha_tk * self.space.mass
        return H.tocsr()


def tv_eval(m, settings):
    return TotalVariation(m.mesh, settings).cost(m.values)


def tv_gradient(m, settings):
    return Field(m.mesh, TotalVariation(m.mesh, settings).gradient(m.values))


def tv_hessian_action(m, direction, settings):
    return Field(m.mesh, TotalVariation(m.mesh, settings).hessian_action(m.values, direction.values))
