"""Quantitative photoacoustic tomography in the diffusion approximation.

For one wavelength, with mu_a = c_thb * (eps_hb + s * (eps_hbo2 - eps_hb)) and
D = 1 / (3 (mu_a + mus)) averaged per element, the fluence solves

    int D grad(phi).grad(v) + int mu_a phi v + 1/2 int_boundary phi v = 1/2 int_boundary phi0 v

The reaction term uses element-averaged mu_a with a lumped element mass. Data
are d = mu_a * phi (Grueneisen coefficient 1) and the misfit is the L2 norm of
the log residual ln(mu_a phi) - ln(d), without a 1/2.

The ``InversionModel`` interface works on transformed variables
x = [logit(s), log(c_thb), log(mus)]; the ``physical_*`` methods work on
p = [s, c_thb, mus].
"""
import logging
from dataclasses import dataclass

import numpy as np

from src.config import (ANISOTROPY_G, CTHB_MIN, EXTINCTION_TABLE, GRUNEISEN, ILLUMINATION,
                        MUS_MIN, S_BOUNDS)
from src.errors import ConfigError, FieldError, ForwardModelError
from src.fem.assembly import (assemble_lumped_mass, assemble_stiffness, element_average,
                              element_geometry, gradient_products, scatter_to_vertices)
from src.fem.linear_solver import FactorizedOperator
from src.fem.space import Field, P1Space
from src.models.base import HESSIAN_MODES, InversionModel
from src.regularization.transforms import ParameterTransform

logger = logging.getLogger(__name__)

QPACT_TRANSFORMS = ("logit", "log", "log")


@dataclass(frozen=True)
class ChromophoreTable:
    wavelengths: tuple
    extinction_hb: tuple
    extinction_hbo2: tuple

    def __post_init__(self):
        if not (len(self.wavelengths) == len(self.extinction_hb) == len(self.extinction_hbo2)):
            raise ConfigError("chromophore table columns differ in length")
        if len(self.wavelengths) == 0:
            raise ConfigError("chromophore table is empty")
        if np.any(np.diff(self.wavelengths) <= 0):
            raise ConfigError("chromophore wavelengths must be strictly increasing")
        if min(self.extinction_hb) <= 0 or min(self.extinction_hbo2) <= 0:
            raise ConfigError("extinction coefficients must be positive")

    @classmethod
    def from_mapping(cls, table=None):
        table = EXTINCTION_TABLE if table is None else table
        wavelengths = tuple(sorted(table))
        return cls(wavelengths,
                   tuple(float(table[w][0]) for w in wavelengths),
                   tuple(float(table[w][1]) for w in wavelengths))

    def coefficients(self, wavelength):
        """(eps_hb, eps_hbo2) at ``wavelength``"""
        for w, hb, hbo2 in zip(self.wavelengths, self.extinction_hb, self.extinction_hbo2):
            if np.isclose(w, wavelength):
                return hb, hbo2
        raise ConfigError(f"wavelength {wavelength} is not in the chromophore table {list(self.wavelengths)}")


@dataclass(frozen=True, eq=False)
class QpactParams:
    s: Field
    c_thb: Field
    mus: Field

    def __post_init__(self):
        if not (self.s.mesh is self.c_thb.mesh is self.mus.mesh):
            raise FieldError("qPACT fields live on different meshes")

    @property
    def mesh(self):
        return self.s.mesh

    def stacked(self):
        return np.concatenate([self.s.values, self.c_thb.values, self.mus.values])

    @classmethod
    def from_stacked(cls, mesh, p):
        s, c, mus = np.split(np.asarray(p, dtype=float), 3)
        return cls(Field(mesh, s), Field(mesh, c), Field(mesh, mus))


def reduced_scattering(mu_s, g=ANISOTROPY_G):
    return (1.0 - g) * np.asarray(mu_s, dtype=float)


def mua_from_chromophores(params, table, wavelength):
    eps_hb, eps_hbo2 = table.coefficients(wavelength)
    s, c = params.s.values, params.c_thb.values
    return Field(params.mesh, eps_hb * (1.0 - s) * c + eps_hbo2 * s * c)


def clamp_physical(s, c_thb, mus):
    """Clip to the admissible box and report how many nodes moved"""
    clipped_s = np.clip(s, *S_BOUNDS)
    clipped_c = np.maximum(c_thb, CTHB_MIN)
    clipped_mus = np.maximum(mus, MUS_MIN)
    moved = int(np.sum(clipped_s != s) + np.sum(clipped_c != c_thb) + np.sum(clipped_mus != mus))
    if moved:
        logger.warning("clamped %d qPACT parameter values into the admissible range", moved)
    return clipped_s, clipped_c, clipped_mus


def physical_transform(mesh):
    return ParameterTransform(QPACT_TRANSFORMS, mesh.n_vertices)


class QpactModel(InversionModel):
    blocks = 3

    def __init__(self, mesh, table, wavelength, data=None, illumination=ILLUMINATION):
        super().__init__(mesh)
        self.table = table
        self.wavelength = wavelength
        self.eps_hb, self.eps_hbo2 = table.coefficients(wavelength)
        self.space = P1Space.for_mesh(mesh)
        self.transform = physical_transform(mesh)
        self._robin = 0.5 * self.space.boundary_mass()
        phi0 = np.broadcast_to(np.asarray(illumination, dtype=float), (mesh.n_vertices,))
        self.illumination = np.array(phi0)
        self.load = self._robin @ self.illumination
        self._lumped_local = element_geometry(mesh).areas / 3.0
        self._data = None
        if data is not None:
            self.data = data
        self._state = None
        self._adjoint = None

    # parameters and data

    @property
    def data(self):
        return self._data

    @data.setter
    def data(self, values):
        values = np.asarray(getattr(values, "values", values), dtype=float)
        if values.shape != (self.mesh.n_vertices,):
            raise FieldError("qPACT data must be a nodal vector")
        bad = np.flatnonzero(~(values > 0))
        if len(bad):
            raise ForwardModelError(f"qPACT data must be strictly positive, vertex {int(bad[0])} is {values[bad[0]]}")
        self._data = values.copy()
        self._log_data = np.log(values)
        self._adjoint = None

    def clear_cache(self):
        super().clear_cache()
        self._state = self._adjoint = None

    def absorption(self, s, c_thb):
        return c_thb * (self.eps_hb + s * (self.eps_hbo2 - self.eps_hb))

    # physical-coordinate forward model

    def _physical_state(self, p):
        p = np.asarray(p, dtype=float)
        key = p.tobytes()
        if self._state is not None and self._state["key"] == key:
            return self._state
        s, c, mus = clamp_physical(*np.split(p, 3))
        a = self.absorption(s, c)
        sigma = a + mus
        bad = np.flatnonzero(~(sigma > 0))
        if len(bad):
            raise ForwardModelError(f"nonpositive diffusion at vertex {int(bad[0])}")
        D = 1.0 / (3.0 * sigma)
        A = (assemble_stiffness(self.mesh, element_average(self.mesh, D))
             + assemble_lumped_mass(self.mesh, a) + self._robin)
        factor = FactorizedOperator(A)
        phi = factor.solve(self.load)
        self.counters.forward += 1
        self._state = {"key": key, "s": s, "c": c, "mus": mus, "a": a, "D": D,
                       "factor": factor, "phi": phi}
        self._adjoint = None
        return self._state

    def fluence(self, p):
        return self._physical_state(p)["phi"].copy()

    def _residual(self, state):
        if self._data is None:
            raise ForwardModelError("qPACT model has no data")
        h = state["a"] * state["phi"]
        bad = np.flatnonzero(~(h > 0))
        if len(bad):
            raise ForwardModelError(f"log of nonpositive value {h[bad[0]]:.3e} at vertex {int(bad[0])}")
        return np.log(h) - self._log_data

    def log_misfit(self, state):
        r = self._residual(state)
        return float(r @ (self.space.mass @ r))

    def physical_cost(self, p):
        return self.log_misfit(self._physical_state(p))

    def _element_terms(self, lam, phi):
        """(k, w): A_e grad(lam).grad(phi) and lam^T M_e^lumped phi per element"""
        k = gradient_products(self.mesh, lam, phi)
        w = self._lumped_local * (lam * phi)[self.mesh.triangles].sum(axis=1)
        return k, w

    def _coefficient_gradients(self, state, lam, phi):
        """Derivatives of lam^T A(a, mus) phi with respect to nodal a and mus"""
        k, w = self._element_terms(lam, phi)
        dD = -3.0 * state["D"] ** 2
        diffusion = dD * scatter_to_vertices(self.mesh, k)
        return diffusion + scatter_to_vertices(self.mesh, w), diffusion

    def _adjoint_state(self, state):
        if self._adjoint is None:
            r = self._residual(state)
            Mr = self.space.mass @ r
            lam = state["factor"].solve(-2.0 * Mr / state["phi"])
            self.counters.adjoint += 1
            self._adjoint = {"key": state["key"], "r": r, "Mr": Mr, "lam": lam}
        return self._adjoint

    def _absorption_gradient(self, state):
        adj = self._adjoint_state(state)
        g_a, g_mus = self._coefficient_gradients(state, adj["lam"], state["phi"])
        g_a = g_a + 2.0 * adj["Mr"] / state["a"]
        return g_a, g_mus

    def physical_gradient(self, p):
        state = self._physical_state(p)
        g_a, g_mus = self._absorption_gradient(state)
        delta = self.eps_hbo2 - self.eps_hb
        g_s = state["c"] * delta * g_a
        g_c = (self.eps_hb + state["s"] * delta) * g_a
        return np.concatenate([g_s, g_c, g_mus])

    def physical_hessian_action(self, p, direction, mode="full"):
        if mode not in HESSIAN_MODES:
            raise ConfigError(f"unknown Hessian mode {mode!r}")
        full = mode == "full"
        state = self._physical_state(p)
        g_a, _ = self._absorption_gradient(state)
        adj = self._adjoint
        s, c, a, D, phi = state["s"], state["c"], state["a"], state["D"], state["phi"]
        lam, Mr = adj["lam"], adj["Mr"]
        factor = state["factor"]
        M = self.space.mass
        delta = self.eps_hbo2 - self.eps_hb

        v_s, v_c, v_mus = np.split(np.asarray(direction, dtype=float), 3)
        a_hat = c * delta * v_s + (self.eps_hb + s * delta) * v_c
        sigma_hat = a_hat + v_mus
        dD = -3.0 * D ** 2

        # derivative of the operator in the direction (a_hat, mus_hat)
        A_dir = (assemble_stiffness(self.mesh, element_average(self.mesh, dD * sigma_hat), require_positive=False)
                 + assemble_lumped_mass(self.mesh, a_hat))
        phi_hat = factor.solve(-(A_dir @ phi))

        r_hat = phi_hat / phi + a_hat / a
        rhs = -2.0 * (M @ r_hat) / phi
        if full:
            rhs += 2.0 * Mr * phi_hat / phi ** 2
            rhs -= A_dir @ lam
        lam_hat = factor.solve(rhs)
        self.counters.incremental += 2

        h_a, h_mus = self._coefficient_gradients(state, lam_hat, phi)
        h_a = h_a + 2.0 * (M @ r_hat) / a
        if full:
            h_a -= 2.0 * Mr * a_hat / a ** 2
            k, _ = self._element_terms(lam, phi)
            curvature = 18.0 * D ** 3 * scatter_to_vertices(self.mesh, k) * sigma_hat
            t_a, t_mus = self._coefficient_gradients(state, lam, phi_hat)
            h_a = h_a + curvature + t_a
            h_mus = h_mus + curvature + t_mus

        h_s = c * delta * h_a
        h_c = (self.eps_hb + s * delta) * h_a
        if full:
            h_s += g_a * delta * v_c
            h_c += g_a * delta * v_s
        return np.concatenate([h_s, h_c, h_mus])

    # transformed-coordinate interface used by the optimizers

    def cost(self, x):
        return self.physical_cost(self.transform.to_physical(self._check(x)))

    def gradient(self, x):
        x = self._check(x)
        return self.transform.first_derivative(x) * self.physical_gradient(self.transform.to_physical(x))

    def hessian_action(self, x, direction, mode="full"):
        x = self._check(x)
        p = self.transform.to_physical(x)
        d1 = self.transform.first_derivative(x)
        v = np.asarray(direction, dtype=float)
        action = d1 * self.physical_hessian_action(p, d1 * v, mode)
        if mode == "full":
            action += self.physical_gradient(p) * self.transform.second_derivative(x) * v
        return action

    def state_misfit(self, x):
        return self.cost(x)

    def observe(self, x):
        """Noise-free data mu_a * phi at transformed parameters x"""
        p = self.transform.to_physical(self._check(x))
        return self.observe_physical(p)

    def observe_physical(self, p):
        state = self._physical_state(p)
        return GRUNEISEN * state["a"] * state["phi"]


def forward_solve(model, params):
    return Field(model.mesh, model.fluence(params.stacked()))


def log_misfit(model, params, phi):
    """Log misfit of a given fluence ``phi`` at ``params``"""
    p = params.stacked()
    s, c, _ = np.split(p, 3)
    a = model.absorption(s, c)
    state = {"a": a, "phi": np.asarray(phi.values, dtype=float)}
    return model.log_misfit(state)


def gradient(model, params):
    grad = model.physical_gradient(params.stacked())
    return tuple(Field(model.mesh, block) for block in np.split(grad, 3))


def hessian_action(model, params, directions, mode="full"):
    direction = np.concatenate([d.values for d in directions])
    action = model.physical_hessian_action(params.stacked(), direction, mode)
    return tuple(Field(model.mesh, block) for block in np.split(action, 3))
