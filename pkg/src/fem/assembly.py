"""Vectorized P1 assembly on triangles.

All operators are returned as ``scipy.sparse.csr_matrix``. Nodal coefficient
fields are reduced per element by averaging the three vertex values.
"""
import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from src.errors import AssemblyError

logger = logging.getLogger(__name__)

_LOCAL_MASS = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0
_LOCAL_FACET_MASS = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0


@dataclass(frozen=True, eq=False)
class ElementGeometry:
    areas: np.ndarray       # (T,)
    gradients: np.ndarray   # (T, 3, 2) gradients of the three hat functions


@lru_cache(maxsize=32)
def element_geometry(mesh):
    v = mesh.vertices
    t = mesh.triangles
    x = v[t, 0]
    y = v[t, 1]
    areas = 0.5 * ((x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0])
                   - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0]))
    scale = np.max(np.ptp(v, axis=0)) ** 2 if len(v) else 1.0
    degenerate = np.flatnonzero(areas <= 1e-14 * scale)
    if len(degenerate):
        raise AssemblyError(f"triangle {int(degenerate[0])} has zero area")
    b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    gradients = np.stack([b, c], axis=2) / (2.0 * areas)[:, None, None]
    areas.setflags(write=False)
    gradients.setflags(write=False)
    return ElementGeometry(areas, gradients)


def _scatter(mesh, local):
    t = mesh.triangles
    n_loc = t.shape[1]
    rows = np.broadcast_to(t[:, :, None], (len(t), n_loc, n_loc)).ravel()
    cols = np.broadcast_to(t[:, None, :], (len(t), n_loc, n_loc)).ravel()
    n = mesh.n_vertices
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def element_average(mesh, nodal):
    return np.asarray(nodal, dtype=float)[mesh.triangles].mean(axis=1)


def scatter_to_vertices(mesh, element_values):
    """Adjoint of ``element_average``: vertex i receives sum of x_e / 3 over its elements"""
    t = mesh.triangles
    out = np.zeros(mesh.n_vertices)
    np.add.at(out, t.ravel(), np.repeat(np.asarray(element_values, dtype=float) / 3.0, 3))
    return out


def element_gradients(mesh, nodal):
    """Constant gradient of a P1 field on each element, shape (T, 2)"""
    geo = element_geometry(mesh)
    return np.einsum("tia,ti->ta", geo.gradients, np.asarray(nodal, dtype=float)[mesh.triangles])


def gradient_products(mesh, u, p):
    """A_e * grad(u) . grad(p) per element"""
    geo = element_geometry(mesh)
    return geo.areas * np.einsum("ta,ta->t", element_gradients(mesh, u), element_gradients(mesh, p))


def _element_coefficient(mesh, coeff, require_positive):
    if np.isscalar(coeff):
        values = np.full(mesh.n_triangles, float(coeff))
    else:
        arr = np.asarray(getattr(coeff, "values", coeff), dtype=float)
        if arr.shape == (mesh.n_vertices,):
            values = element_average(mesh, arr)
        elif arr.shape == (mesh.n_triangles,):
            values = arr
        else:
            raise AssemblyError(f"coefficient of shape {arr.shape} matches neither vertices nor triangles")
    if not np.all(np.isfinite(values)):
        raise AssemblyError("coefficient is not finite")
    if require_positive:
        bad = np.flatnonzero(values <= 0)
        if len(bad):
            raise AssemblyError(f"nonpositive coefficient {values[bad[0]]:.3g} on triangle {int(bad[0])}")
    return values


def assemble_mass(mesh, coeff=None):
    geo = element_geometry(mesh)
    weights = geo.areas
    if coeff is not None:
        weights = weights * _element_coefficient(mesh, coeff, require_positive=False)
    return _scatter(mesh, weights[:, None, None] * _LOCAL_MASS)


def assemble_stiffness(mesh, coeff=1.0, require_positive=True):
    """K_ij = sum_e c_e A_e grad(phi_i) . grad(phi_j)

    ``coeff`` may be a scalar, a nodal array/Field (averaged per element) or an
    array of element values.
    """
    geo = element_geometry(mesh)
    c = _element_coefficient(mesh, coeff, require_positive)
    local = (c * geo.areas)[:, None, None] * np.einsum("tia,tja->tij", geo.gradients, geo.gradients)
    return _scatter(mesh, local)


def assemble_tensor_stiffness(mesh, tensors):
    """Stiffness with a symmetric 2x2 coefficient per element, ``tensors`` of shape (T, 2, 2)"""
    geo = element_geometry(mesh)
    local = geo.areas[:, None, None] * np.einsum("tia,tab,tjb->tij", geo.gradients, tensors, geo.gradients)
    return _scatter(mesh, local)


def assemble_lumped_mass(mesh, coeff=None):
    """Diagonal mass with row-sum lumping: entry i is sum over e of c_e A_e / 3"""
    geo = element_geometry(mesh)
    weights = geo.areas if coeff is None else geo.areas * _element_coefficient(mesh, coeff, False)
    return sp.diags(scatter_to_vertices(mesh, weights), format="csr")


def assemble_boundary_mass(mesh, marker=None):
    """(M_b)_ij = integral over marked facets of phi_i phi_j ds; ``None`` takes every facet"""
    facets = mesh.boundary_facets
    if marker is not None:
        selected = mesh.facet_markers == marker
        if not np.any(selected):
            raise AssemblyError(f"no boundary facet carries marker {marker}")
        facets = facets[selected]
    lengths = np.linalg.norm(mesh.vertices[facets[:, 0]] - mesh.vertices[facets[:, 1]], axis=1)
    local = lengths[:, None, None] * _LOCAL_FACET_MASS
    rows = np.broadcast_to(facets[:, :, None], local.shape).ravel()
    cols = np.broadcast_to(facets[:, None, :], local.shape).ravel()
    n = mesh.n_vertices
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))
