import logging

import numpy as np

from src.optim import incg
from src.optim.objectives import MonolithicObjective

logger = logging.getLogger(__name__)


def monolithic_solve(models, reg, settings=None, norm_kind="L2", m0=None, m_prior=None,
                     workers=None, error=None, history=None):
    """Newton-CG on (1/q) sum_i misfit_i(m) + R(m), preconditioned by R'' at the prior"""
    objective = MonolithicObjective(models, reg, m_prior=m_prior, workers=workers, error=error)
    if m0 is None:
        m0 = m_prior if m_prior is not None else getattr(reg, "m_ref", np.zeros(reg.size))
    logger.info("monolithic solve: q=%d, %s norm", len(objective.models), norm_kind)
    result = incg.solve(objective, m0, settings, norm_kind=norm_kind, history=history)
    logger.info("monolithic solve finished after %d iterations: %s", result.iterations, result.reason)
    return result
