"""Triangular meshes: construction, refinement, validation and the text file format.

Text format::

    V T F
    x y            (V lines)
    i j k          (T lines, 0-based vertex indices)
    i j marker     (F lines, boundary facets)
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from src.config import BOUNDARY_MARKER, DISC_FAN_SECTORS, MAX_REFINEMENT_LEVEL
from src.errors import MeshError
from src.utils import atomic_write_text

logger = logging.getLogger(__name__)


def _edge_keys(pairs, n_vertices):
    lo = np.minimum(pairs[:, 0], pairs[:, 1]).astype(np.int64)
    hi = np.maximum(pairs[:, 0], pairs[:, 1]).astype(np.int64)
    return lo * n_vertices + hi


def signed_areas(vertices, triangles):
    p0 = vertices[triangles[:, 0]]
    p1 = vertices[triangles[:, 1]]
    p2 = vertices[triangles[:, 2]]
    return 0.5 * ((p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
                  - (p2[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1]))


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray
    triangles: np.ndarray
    boundary_facets: np.ndarray
    facet_markers: np.ndarray
    dirichlet_nodes: frozenset = field(default_factory=frozenset)
    ground_node: int = None

    def __post_init__(self):
        vertices = np.ascontiguousarray(self.vertices, dtype=float)
        triangles = np.array(self.triangles, dtype=np.int64).reshape(-1, 3)
        facets = np.array(self.boundary_facets, dtype=np.int64).reshape(-1, 2)
        markers = np.array(self.facet_markers, dtype=np.int64).reshape(-1)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise MeshError(f"vertices must have shape (V, 2), got {vertices.shape}")
        if len(markers) != len(facets):
            raise MeshError("one marker per boundary facet is required")
        n = len(vertices)
        for name, arr in (("triangle", triangles), ("facet", facets)):
            if arr.size and (arr.min() < 0 or arr.max() >= n):
                raise MeshError(f"{name} references a vertex outside 0..{n - 1}")

        # orientation fix: counter-clockwise triangles
        flip = signed_areas(vertices, triangles) < 0
        if np.any(flip):
            triangles[flip] = triangles[flip][:, [0, 2, 1]]

        for name, value in (("vertices", vertices), ("triangles", triangles),
                            ("boundary_facets", facets), ("facet_markers", markers)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        object.__setattr__(self, "dirichlet_nodes", frozenset(int(i) for i in self.dirichlet_nodes))
        if self.ground_node is not None:
            object.__setattr__(self, "ground_node", int(self.ground_node))
        self._check_topology()

    def _check_topology(self):
        n = self.n_vertices
        tri_edges = np.concatenate([self.triangles[:, [0, 1]],
                                    self.triangles[:, [1, 2]],
                                    self.triangles[:, [2, 0]]])
        keys, counts = np.unique(_edge_keys(tri_edges, n), return_counts=True)
        if np.any(counts > 2):
            raise MeshError("an edge is shared by more than two triangles")
        facet_keys = _edge_keys(self.boundary_facets, n)
        pos = np.searchsorted(keys, facet_keys)
        pos = np.minimum(pos, len(keys) - 1)
        found = keys[pos] == facet_keys
        if not np.all(found) or np.any(counts[pos] != 1):
            bad = int(np.flatnonzero(~found | (counts[pos] != 1))[0])
            raise MeshError(f"boundary facet {bad} does not belong to exactly one triangle")
        if len(self.boundary_facets):
            degree = np.bincount(self.boundary_facets.ravel(), minlength=n)
            on_boundary = degree > 0
            if np.any(degree[on_boundary] != 2):
                raise MeshError("boundary facets do not form closed loops")
        boundary = set(self.boundary_vertices.tolist())
        if not self.dirichlet_nodes <= boundary:
            raise MeshError("dirichlet nodes must lie on the boundary")
        if self.ground_node is not None and self.ground_node not in boundary:
            raise MeshError("ground node must lie on the boundary")

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def boundary_vertices(self):
        return np.unique(self.boundary_facets)

    @property
    def markers(self):
        return sorted(set(self.facet_markers.tolist()))

    @property
    def edges(self):
        tri_edges = np.concatenate([self.triangles[:, [0, 1]],
                                    self.triangles[:, [1, 2]],
                                    self.triangles[:, [2, 0]]])
        keys = np.unique(_edge_keys(tri_edges, self.n_vertices))
        return np.stack([keys // self.n_vertices, keys % self.n_vertices], axis=1)

    def max_edge_length(self):
        e = self.edges
        return float(np.max(np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1)))

    def areas(self):
        return signed_areas(self.vertices, self.triangles)

    def vertex_angles(self):
        return np.arctan2(self.vertices[:, 1], self.vertices[:, 0])

    def with_dirichlet(self, nodes, ground_node=None):
        return Mesh(self.vertices, self.triangles, self.boundary_facets, self.facet_markers,
                    frozenset(nodes), ground_node)


def nearest_boundary_vertex(mesh, angle):
    """Boundary vertex whose polar angle is closest to ``angle``"""
    candidates = mesh.boundary_vertices
    theta = mesh.vertex_angles()[candidates]
    diff = np.angle(np.exp(1j * (theta - angle)))
    return int(candidates[np.argmin(np.abs(diff))])


def refine_mesh(mesh, project_boundary=None):
    """Split every triangle into four through its edge midpoints.

    Old vertices keep their indices and coordinates. ``project_boundary`` maps
    an (n, 2) array of new boundary midpoints onto the true boundary.
    """
    n = mesh.n_vertices
    tris = mesh.triangles
    tri_edges = np.stack([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]], axis=1)
    keys = _edge_keys(tri_edges.reshape(-1, 2), n)
    unique_keys, inverse = np.unique(keys, return_inverse=True)
    edge_ids = inverse.reshape(-1, 3)
    lo, hi = unique_keys // n, unique_keys % n
    midpoints = 0.5 * (mesh.vertices[lo] + mesh.vertices[hi])

    facet_edge = np.searchsorted(unique_keys, _edge_keys(mesh.boundary_facets, n))
    if project_boundary is not None and len(facet_edge):
        midpoints[facet_edge] = project_boundary(midpoints[facet_edge])

    mid = n + edge_ids
    a, b, c = tris[:, 0], tris[:, 1], tris[:, 2]
    ab, bc, ca = mid[:, 0], mid[:, 1], mid[:, 2]
    new_tris = np.concatenate([
        np.stack([a, ab, ca], axis=1),
        np.stack([ab, b, bc], axis=1),
        np.stack([ca, bc, c], axis=1),
        np.stack([ab, bc, ca], axis=1),
    ])
    fmid = n + facet_edge
    f0, f1 = mesh.boundary_facets[:, 0], mesh.boundary_facets[:, 1]
    new_facets = np.concatenate([np.stack([f0, fmid], axis=1), np.stack([fmid, f1], axis=1)])
    new_markers = np.concatenate([mesh.facet_markers, mesh.facet_markers])
    return Mesh(np.vstack([mesh.vertices, midpoints]), new_tris, new_facets, new_markers,
                mesh.dirichlet_nodes, mesh.ground_node)


def _project_to_unit_circle(points):
    return points / np.linalg.norm(points, axis=1)[:, None]


def build_unit_disc_mesh(refinement_level):
    """Unit disc: fan of triangles around the origin, refined ``refinement_level`` times.

    New boundary midpoints are projected onto the unit circle. The vertex at
    angle 0 is the ground node and the only Dirichlet node.
    """
    if refinement_level < 0 or refinement_level > MAX_REFINEMENT_LEVEL:
        raise MeshError(f"refinement level must be in 0..{MAX_REFINEMENT_LEVEL}, got {refinement_level}")
    k = DISC_FAN_SECTORS
    angles = 2.0 * np.pi * np.arange(k) / k
    vertices = np.vstack([[0.0, 0.0], np.stack([np.cos(angles), np.sin(angles)], axis=1)])
    ring = 1 + np.arange(k)
    nxt = 1 + (np.arange(k) + 1) % k
    triangles = np.stack([np.zeros(k, dtype=int), ring, nxt], axis=1)
    facets = np.stack([ring, nxt], axis=1)
    mesh = Mesh(vertices, triangles, facets, np.full(k, BOUNDARY_MARKER), frozenset([1]), 1)
    for _ in range(refinement_level):
        mesh = refine_mesh(mesh, _project_to_unit_circle)
    logger.debug("unit disc level %d: %d vertices, %d triangles",
                 refinement_level, mesh.n_vertices, mesh.n_triangles)
    return mesh


def build_unit_square_mesh(divisions):
    """Structured right-triangle mesh of [0, 1]^2 with ``divisions`` cells per side"""
    if divisions < 1:
        raise MeshError("divisions must be at least 1")
    n = divisions
    xs = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(xs, xs, indexing="xy")
    vertices = np.stack([X.ravel(), Y.ravel()], axis=1)

    def vid(i, j):
        return j * (n + 1) + i

    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    i, j = i.ravel(), j.ravel()
    v00, v10, v01, v11 = vid(i, j), vid(i + 1, j), vid(i, j + 1), vid(i + 1, j + 1)
    triangles = np.concatenate([np.stack([v00, v10, v11], axis=1),
                                np.stack([v00, v11, v01], axis=1)])
    s = np.arange(n)
    bottom = np.stack([vid(s, 0), vid(s + 1, 0)], axis=1)
    right = np.stack([vid(n, s), vid(n, s + 1)], axis=1)
    top = np.stack([vid(s + 1, n), vid(s, n)], axis=1)
    left = np.stack([vid(0, s + 1), vid(0, s)], axis=1)
    facets = np.concatenate([bottom, right, top, left])
    return Mesh(vertices, triangles, facets, np.full(len(facets), BOUNDARY_MARKER))


def write_mesh(mesh, path):
    lines = [f"{mesh.n_vertices} {mesh.n_triangles} {len(mesh.boundary_facets)}"]
    lines += [f"{x:.17g} {y:.17g}" for x, y in mesh.vertices]
    lines += [f"{i} {j} {k}" for i, j, k in mesh.triangles]
    lines += [f"{i} {j} {m}" for (i, j), m in zip(mesh.boundary_facets, mesh.facet_markers)]
    return atomic_write_text(path, "\n".join(lines) + "\n")


def read_mesh(path):
    """Read a mesh in the text format; raises MeshError on malformed content"""
    try:
        with open(path) as handle:
            rows = [line.split() for line in handle if line.strip()]
    except OSError as exc:
        raise MeshError(f"cannot read mesh file {path}: {exc}") from exc
    try:
        nv, nt, nf = (int(v) for v in rows[0])
        body = rows[1:]
        if len(body) != nv + nt + nf:
            raise ValueError(f"expected {nv + nt + nf} rows after the header, found {len(body)}")
        vertices = np.array([[float(v) for v in r[:2]] for r in body[:nv]]).reshape(-1, 2)
        triangles = np.array([[int(v) for v in r[:3]] for r in body[nv:nv + nt]]).reshape(-1, 3)
        frows = np.array([[int(v) for v in r[:3]] for r in body[nv + nt:]]).reshape(-1, 3)
    except (IndexError, ValueError) as exc:
        raise MeshError(f"malformed mesh file {path}: {exc}") from exc
    return Mesh(vertices, triangles, frows[:, :2], frows[:, 2])
