import numpy as np

from src.errors import FieldError
from src.fem.space import P1Space


def _mass_norm(mesh, values):
    M = P1Space.for_mesh(mesh).mass
    return float(np.sqrt(max(values @ (M @ values), 0.0)))


def relative_error(m, m_true):
    """|m_true - m|_L2 / |m_true|_L2"""
    if m.mesh is not m_true.mesh:
        raise FieldError("fields live on different meshes")
    reference = _mass_norm(m_true.mesh, m_true.values)
    if reference == 0.0:
        raise FieldError("relative error against a zero field")
    return _mass_norm(m.mesh, m_true.values - m.values) / reference


def region_relative_error(mesh, values, truth, mask):
    """Relative L2 error restricted to the vertices in ``mask``"""
    weights = np.where(mask, 1.0, 0.0)
    reference = _mass_norm(mesh, weights * truth)
    if reference == 0.0:
        return np.nan
    return _mass_norm(mesh, weights * (truth - values)) / reference


def state_misfit(models, m):
    """Sum of squared data mismatches over models"""
    m = np.asarray(getattr(m, "values", m), dtype=float)
    return float(sum(model.state_misfit(m) for model in models))
