import logging

import numpy as np

from src.config import CLAMP_WARN_FRACTION, DATA_FLOOR_FRACTION
from src.errors import FieldError
from src.fem.space import Field
from src.models.eit import EitModel
from src.models.qpact import QpactModel, QpactParams

logger = logging.getLogger(__name__)


def _observation_nodes(model):
    nodes = model.mesh.boundary_vertices
    return nodes[nodes != model.ground_node]


def synthesize_data(models, truth, noise_level, seed):
    """Noisy data for every model, stored on the models and returned as Fields.

    Model i draws from default_rng(seed + i); the noise std is noise_level times
    the largest clean value. Solve counters are reset afterwards.
    """
    if noise_level < 0:
        raise FieldError("noise level must be nonnegative")
    data = []
    for index, model in enumerate(models):
        rng = np.random.default_rng(seed + index)
        if isinstance(model, EitModel):
            m = np.asarray(getattr(truth, "values", truth), dtype=float)
            clean = model.observe(m)
            nodes = _observation_nodes(model)
            std = noise_level * np.max(np.abs(clean[nodes]))
            noisy = clean.copy()
            noisy[nodes] += rng.normal(0.0, 1.0, len(nodes)) * std
        elif isinstance(model, QpactModel):
            p = truth.stacked() if isinstance(truth, QpactParams) else np.asarray(truth, dtype=float)
            clean = model.observe_physical(p)
            peak = np.max(np.abs(clean))
            noisy = clean + rng.normal(0.0, 1.0, len(clean)) * noise_level * peak
            floor = DATA_FLOOR_FRACTION * peak
            clamped = noisy < floor
            if np.mean(clamped) > CLAMP_WARN_FRACTION:
                logger.warning("model %d: %.1f%% of qPACT data clamped to the positivity floor",
                               index, 100.0 * np.mean(clamped))
            noisy = np.maximum(noisy, floor)
        else:
            raise TypeError(f"unsupported model type {type(model).__name__}")
        model.data = noisy
        model.counters.reset()
        data.append(Field(model.mesh, noisy))
    return data
