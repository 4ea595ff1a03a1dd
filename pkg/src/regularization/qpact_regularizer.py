"""Composite regularizer for the three qPACT fields (s, c_thb, mus).

Parameters are stacked as x = [s, c_thb, mus]. Quadratic terms carry no 1/2:

    gamma_s |grad s|^2 + delta_s |s|^2
    + gamma_c  int sqrt(|grad c|^2 + eps) + delta_c int sqrt(c^2 + eps)
    + gamma_mus |grad mus|^2 + delta_mus |mus|^2

The value term on c_thb is integrated with lumped (vertex) quadrature.
"""
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from src.config import (QPACT_DELTA_CTHB, QPACT_DELTA_MUS, QPACT_DELTA_S, QPACT_EPS,
                        QPACT_GAMMA_CTHB, QPACT_GAMMA_MUS, QPACT_GAMMA_S)
from src.errors import ConfigError, FieldError
from src.fem.space import Field, P1Space
from src.regularization.total_variation import TotalVariation, TvSettings

BLOCK_NAMES = ("s", "c_thb", "mus")


@dataclass(frozen=True)
class QpactRegSettings:
    gamma_s: float = QPACT_GAMMA_S
    delta_s: float = QPACT_DELTA_S
    gamma_cthb: float = QPACT_GAMMA_CTHB
    delta_cthb: float = QPACT_DELTA_CTHB
    gamma_mus: float = QPACT_GAMMA_MUS
    delta_mus: float = QPACT_DELTA_MUS
    eps: float = QPACT_EPS

    def __post_init__(self):
        weights = (self.gamma_s, self.delta_s, self.gamma_cthb, self.delta_cthb, self.gamma_mus, self.delta_mus)
        if min(weights) < 0:
            raise ConfigError("qPACT regularization weights must be nonnegative")
        if not self.eps > 0:
            raise ConfigError(f"qPACT smoothing eps must be positive, got {self.eps}")


class QpactRegularizer:
    blocks = 3

    def __init__(self, mesh, settings=None):
        self.mesh = mesh
        self.settings = settings or QpactRegSettings()
        space = P1Space.for_mesh(mesh)
        self._M = space.mass
        self._K = space.stiffness
        self._lumped = space.lumped_mass
        self._tv = TotalVariation(mesh, TvSettings(alpha_tv=self.settings.gamma_cthb, alpha_tk=0.0,
                                                   eps=self.settings.eps, m_ref=0.0))

    @property
    def size(self):
        return 3 * self.mesh.n_vertices

    def split(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.size,):
            raise FieldError(f"stacked qPACT vector has shape {x.shape}, expected ({self.size},)")
        return np.split(x, 3)

    def _quadratic(self, gamma, delta):
        return gamma * self._K + delta * self._M

    def cost(self, x):
        s, c, mus = self.split(x)
        st = self.settings
        value = float(s @ (self._quadratic(st.gamma_s, st.delta_s) @ s))
        value += self._tv.cost(c)
        value += st.delta_cthb * float(self._lumped @ np.sqrt(c * c + st.eps))
        value += float(mus @ (self._quadratic(st.gamma_mus, st.delta_mus) @ mus))
        return value

    def gradient(self, x):
        s, c, mus = self.split(x)
        st = self.settings
        g_s = 2.0 * (self._quadratic(st.gamma_s, st.delta_s) @ s)
        g_c = self._tv.gradient(c) + st.delta_cthb * self._lumped * c / np.sqrt(c * c + st.eps)
        g_mus = 2.0 * (self._quadratic(st.gamma_mus, st.delta_mus) @ mus)
        return np.concatenate([g_s, g_c, g_mus])

    def _value_curvature(self, c):
        st = self.settings
        return st.delta_cthb * self._lumped * st.eps / (c * c + st.eps) ** 1.5

    def hessian_action(self, x, direction):
        s, c, mus = self.split(x)
        v_s, v_c, v_mus = self.split(direction)
        st = self.settings
        h_s = 2.0 * (self._quadratic(st.gamma_s, st.delta_s) @ v_s)
        h_c = self._tv.hessian_action(c, v_c) + self._value_curvature(c) * v_c
        h_mus = 2.0 * (self._quadratic(st.gamma_mus, st.delta_mus) @ v_mus)
        return np.concatenate([h_s, h_c, h_mus])

    def hessian_matrix(self, x):
        _, c, _ = self.split(x)
        st = self.settings
        H_c = self._tv.hessian_matrix(c) + sp.diags(self._value_curvature(c))
        return sp.block_diag([2.0 * self._quadratic(st.gamma_s, st.delta_s), H_c,
                              2.0 * self._quadratic(st.gamma_mus, st.delta_mus)], format="csr")


def _stack(s, c_thb, mus):
    if not (s.mesh is c_thb.mesh is mus.mesh):
        raise FieldError("qPACT fields live on different meshes")
    return np.concatenate([s.values, c_thb.values, mus.values])


def qpact_reg_eval(s, c_thb, mus, settings):
    return QpactRegularizer(s.mesh, settings).cost(_stack(s, c_thb, mus))


def qpact_reg_gradient(s, c_thb, mus, settings):
    grad = QpactRegularizer(s.mesh, settings).gradient(_stack(s, c_thb, mus))
    return tuple(Field(s.mesh, block) for block in np.split(grad, 3))


def qpact_reg_hessian_action(s, c_thb, mus, directions, settings):
    reg = QpactRegularizer(s.mesh, settings)
    action = reg.hessian_action(_stack(s, c_thb, mus), _stack(*directions))
    return tuple(Field(s.mesh, block) for block in np.split(action, 3))
