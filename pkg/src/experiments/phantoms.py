"""Synthetic ground-truth parameters: ellipse phantoms on the disc, inclusion phantoms on the square."""
from dataclasses import dataclass, field

import numpy as np

from src.errors import ConfigError
from src.fem.space import Field
from src.models.qpact import QpactParams


@dataclass(frozen=True)
class Ellipse:
    intensity: float
    a: float
    b: float
    x0: float = 0.0
    y0: float = 0.0
    phi_deg: float = 0.0

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ConfigError("ellipse semi-axes must be positive")

    def contains(self, points):
        phi = np.deg2rad(self.phi_deg)
        dx = points[:, 0] - self.x0
        dy = points[:, 1] - self.y0
        u = dx * np.cos(phi) + dy * np.sin(phi)
        v = -dx * np.sin(phi) + dy * np.cos(phi)
        return (u / self.a) ** 2 + (v / self.b) ** 2 <= 1.0


# Modified Shepp-Logan head (higher-contrast intensities), values already in [0, 1]
SHEPP_LOGAN_ELLIPSES = (
    Ellipse(1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    Ellipse(-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    Ellipse(-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    Ellipse(-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    Ellipse(0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    Ellipse(0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    Ellipse(0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    Ellipse(0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    Ellipse(0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    Ellipse(0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
)


@dataclass(frozen=True)
class EllipsePhantomSpec:
    ellipses: tuple = SHEPP_LOGAN_ELLIPSES
    background: float = 0.0


def phantom(mesh, spec=None):
    """Background plus the intensity of every ellipse containing each vertex"""
    spec = spec or EllipsePhantomSpec()
    values = np.full(mesh.n_vertices, float(spec.background))
    for ellipse in spec.ellipses:
        values[ellipse.contains(mesh.vertices)] += ellipse.intensity
    return Field(mesh, values)


@dataclass(frozen=True)
class Inclusion:
    region: str
    center: tuple
    radius: float
    s: float
    c_thb: float
    mus: float


@dataclass(frozen=True)
class QpactPhantomSpec:
    s: float = 0.6
    c_thb: float = 1.0
    mus: float = 1.0
    inclusions: tuple = field(default_factory=lambda: (
        Inclusion("artery", (0.32, 0.55), 0.12, 0.95, 2.5, 1.0),
        Inclusion("vein", (0.68, 0.45), 0.14, 0.4, 2.0, 1.0),
    ))


def qpact_phantom(mesh, spec=None):
    """Piecewise-constant disks in a homogeneous background.

    Returns (QpactParams, masks) with boolean vertex masks for ``global`` and
    for every inclusion region.
    """
    spec = spec or QpactPhantomSpec()
    n = mesh.n_vertices
    s = np.full(n, spec.s)
    c = np.full(n, spec.c_thb)
    mus = np.full(n, spec.mus)
    masks = {"global": np.ones(n, dtype=bool)}
    for inclusion in spec.inclusions:
        inside = np.linalg.norm(mesh.vertices - np.asarray(inclusion.center), axis=1) <= inclusion.radius
        s[inside], c[inside], mus[inside] = inclusion.s, inclusion.c_thb, inclusion.mus
        masks[inclusion.region] = masks.get(inclusion.region, np.zeros(n, dtype=bool)) | inside
    params = QpactParams(Field(mesh, s), Field(mesh, c), Field(mesh, mus))
    return params, masks
