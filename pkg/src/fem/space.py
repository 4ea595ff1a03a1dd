"""P1 fields, cached operators of a mesh and the L2 / H1 inner products."""
import logging
import weakref
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from src.errors import FieldError
from src.fem.assembly import (assemble_boundary_mass, assemble_lumped_mass, assemble_mass,
                              assemble_stiffness, element_geometry)
from src.fem.linear_solver import FactorizedOperator
from src.utils import atomic_write_text

logger = logging.getLogger(__name__)

NORM_KINDS = ("L2", "H1")


@dataclass(frozen=True, eq=False)
class Field:
    """Nodal coefficients of a continuous piecewise-linear function"""
    mesh: object
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float).reshape(-1)
        if len(values) != self.mesh.n_vertices:
            raise FieldError(f"field has {len(values)} values, mesh has {self.mesh.n_vertices} vertices")
        if not np.all(np.isfinite(values)):
            raise FieldError(f"field has non-finite value at vertex {int(np.flatnonzero(~np.isfinite(values))[0])}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def constant(cls, mesh, value):
        return cls(mesh, np.full(mesh.n_vertices, float(value)))

    def with_values(self, values):
        return Field(self.mesh, values)

    def __len__(self):
        return len(self.values)


def _check_same_mesh(a, b):
    if a.mesh is not b.mesh:
        raise FieldError("fields live on different meshes")


def check_norm_kind(kind):
    if kind not in NORM_KINDS:
        raise FieldError(f"norm kind must be one of {NORM_KINDS}, got {kind!r}")
    return kind


class P1Space:
    """Operators of one mesh, assembled on first use and shared afterwards"""

    _registry = weakref.WeakKeyDictionary()

    def __init__(self, mesh):
        self.mesh = mesh
        self._boundary = {}
        self._norms = {}

    @classmethod
    def for_mesh(cls, mesh):
        space = cls._registry.get(mesh)
        if space is None:
            space = cls(mesh)
            cls._registry[mesh] = space
        return space

    @cached_property
    def mass(self):
        return assemble_mass(self.mesh)

    @cached_property
    def stiffness(self):
        return assemble_stiffness(self.mesh, 1.0)

    @cached_property
    def lumped_mass(self):
        return assemble_lumped_mass(self.mesh).diagonal()

    @cached_property
    def area(self):
        return float(element_geometry(self.mesh).areas.sum())

    def boundary_mass(self, marker=None):
        if marker not in self._boundary:
            self._boundary[marker] = assemble_boundary_mass(self.mesh, marker)
        return self._boundary[marker]

    def gram(self, kind):
        check_norm_kind(kind)
        return self.mass if kind == "L2" else (self.mass + self.stiffness).tocsr()

    def norm_operator(self, kind, blocks=1):
        key = (kind, blocks)
        if key not in self._norms:
            self._norms[key] = NormOperator(self.gram(kind), blocks)
        return self._norms[key]


class NormOperator:
    """Gram matrix W of a norm (block diagonal for multi-field parameters)

    ``inner``/``norm`` measure primal vectors, ``dual_norm`` measures assembled
    gradients as sqrt(g^T W^-1 g) and ``riesz`` applies W^-1.
    """

    def __init__(self, gram, blocks=1):
        self.blocks = blocks
        self.matrix = sp.block_diag([gram] * blocks, format="csr") if blocks > 1 else sp.csr_matrix(gram)
        self._factor = FactorizedOperator(self.matrix)

    @property
    def size(self):
        return self.matrix.shape[0]

    def apply(self, x):
        return self.matrix @ x

    def inner(self, a, b):
        return float(a @ (self.matrix @ b))

    def norm(self, a):
        return float(np.sqrt(max(self.inner(a, a), 0.0)))

    def riesz(self, g):
        return self._factor.solve(g)

    def dual_norm(self, g):
        return float(np.sqrt(max(float(g @ self.riesz(g)), 0.0)))


def inner_product(a, b, kind="L2"):
    """a^T M b for L2 and a^T (M + K1) b for H1"""
    _check_same_mesh(a, b)
    W = P1Space.for_mesh(a.mesh).gram(kind)
    return float(a.values @ (W @ b.values))


def norm(a, kind="L2"):
    return float(np.sqrt(max(inner_product(a, a, kind), 0.0)))


def lumped_mass(mesh):
    return P1Space.for_mesh(mesh).lumped_mass


def write_field(field, path):
    return atomic_write_text(path, "".join(f"{v:.17g}\n" for v in field.values))


def read_field(path, mesh):
    try:
        values = np.loadtxt(path, dtype=float, ndmin=1)
    except (OSError, ValueError) as exc:
        raise FieldError(f"cannot read field file {path}: {exc}") from exc
    return Field(mesh, values)
