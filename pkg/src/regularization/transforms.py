"""Bound-preserving parameter transforms and the chain rule for regularizers.

Inversion variables x map to physical parameters p = T(x) block by block:
``logit`` blocks use p = expit(x) in (0, 1), ``log`` blocks use p = exp(x) > 0.
"""
import numpy as np
import scipy.sparse as sp
from scipy.special import expit, logit

from src.errors import ConfigError, ForwardModelError

TRANSFORM_KINDS = ("identity", "logit", "log")


class ParameterTransform:
    def __init__(self, kinds, block_size):
        for kind in kinds:
            if kind not in TRANSFORM_KINDS:
                raise ConfigError(f"unknown transform {kind!r}")
        self.kinds = tuple(kinds)
        self.block_size = block_size

    @property
    def size(self):
        return len(self.kinds) * self.block_size

    def _blocks(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.size,):
            raise ConfigError(f"vector has shape {x.shape}, expected ({self.size},)")
        return zip(self.kinds, np.split(x, len(self.kinds)))

    def to_physical(self, x):
        out = []
        for kind, block in self._blocks(x):
            if kind == "logit":
                out.append(expit(block))
            elif kind == "log":
                out.append(np.exp(block))
            else:
                out.append(block.copy())
        return np.concatenate(out)

    def from_physical(self, p):
        out = []
        for kind, block in self._blocks(p):
            if kind == "logit":
                if np.any((block <= 0) | (block >= 1)):
                    raise ForwardModelError("logit transform needs values strictly inside (0, 1)")
                out.append(logit(block))
            elif kind == "log":
                if np.any(block <= 0):
                    raise ForwardModelError("log transform needs strictly positive values")
                out.append(np.log(block))
            else:
                out.append(block.copy())
        return np.concatenate(out)

    def first_derivative(self, x):
        out = []
        for kind, block in self._blocks(x):
            if kind == "logit":
                p = expit(block)
                out.append(p * (1.0 - p))
            elif kind == "log":
                out.append(np.exp(block))
            else:
                out.append(np.ones_like(block))
        return np.concatenate(out)

    def second_derivative(self, x):
        out = []
        for kind, block in self._blocks(x):
            if kind == "logit":
                p = expit(block)
                out.append(p * (1.0 - p) * (1.0 - 2.0 * p))
            elif kind == "log":
                out.append(np.exp(block))
            else:
                out.append(np.zeros_like(block))
        return np.concatenate(out)


class TransformedRegularizer:
    """R(T(x)) with gradient T' g and Hessian T' H T' + diag(g T'')"""

    def __init__(self, regularizer, transform):
        if regularizer.size != transform.size:
            raise ConfigError("regularizer and transform sizes differ")
        self.regularizer = regularizer
        self.transform = transform
        self.mesh = regularizer.mesh
        self.blocks = len(transform.kinds)

    @property
    def size(self):
        return self.regularizer.size

    def cost(self, x):
        return self.regularizer.cost(self.transform.to_physical(x))

    def gradient(self, x):
        p = self.transform.to_physical(x)
        return self.transform.first_derivative(x) * self.regularizer.gradient(p)

    def hessian_action(self, x, direction):
        p = self.transform.to_physical(x)
        d1 = self.transform.first_derivative(x)
        d2 = self.transform.second_derivative(x)
        direction = np.asarray(direction, dtype=float)
        return (d1 * self.regularizer.hessian_action(p, d1 * direction)
                + self.regularizer.gradient(p) * d2 * direction)

    def hessian_matrix(self, x, clip_curvature=True):
        """Sparse Hessian; the diagonal g T'' term is clipped at zero unless ``clip_curvature`` is off"""
        p = self.transform.to_physical(x)
        D1 = sp.diags(self.transform.first_derivative(x))
        diag = self.regularizer.gradient(p) * self.transform.second_derivative(x)
        if clip_curvature:
            diag = np.maximum(diag, 0.0)
        return (D1 @ self.regularizer.hessian_matrix(p) @ D1 + sp.diags(diag)).tocsr()
