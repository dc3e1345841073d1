"""Tetrahedral mesh container, simplex geometry and boundary extraction."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

logger = logging.getLogger(__name__)

BALL_VOLUME = 4.0 * np.pi / 3.0

# outward faces of a positively oriented tet (v0, v1, v2, v3)
_TET_FACES = np.array([[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]])


class MeshError(ValueError):
    """Raised when a tetrahedral mesh fails validation."""


def signed_volume(p1, p2, p3, p4):
    """Signed volume of the tetrahedron with corners ``p1..p4``.

    All arguments broadcast, so stacks of shape ``(q, 3)`` give ``(q,)``
    volumes. Positive when ``p4`` lies on the side of the plane
    ``(p1, p2, p3)`` pointed to by the right-hand normal.
    """
    p1 = np.asarray(p1, dtype=float)
    e1 = np.asarray(p2, dtype=float) - p1
    e2 = np.asarray(p3, dtype=float) - p1
    e3 = np.asarray(p4, dtype=float) - p1
    return np.einsum("...i,...i->...", np.cross(e1, e2), e3) / 6.0


def tet_volumes(coords: np.ndarray, tets: np.ndarray) -> np.ndarray:
    """Signed volumes of all tets under the vertex table ``coords``."""
    P = np.asarray(coords, dtype=float)[tets]
    return signed_volume(P[:, 0], P[:, 1], P[:, 2], P[:, 3])


@dataclass(frozen=True, eq=False)
class TetMesh:
    """Validated, immutable simplicial 3-complex with a per-tet measure.

    Use :func:`build_mesh` (or the loaders in :mod:`volmap.io`) rather than
    the constructor; it reorients tets, checks the boundary topology and
    fills in the derived fields.

    Attributes
    ----------
    vertices : (n, 3) float array
    tets : (q, 4) int array
        Every tet has positive signed volume in this vertex order.
    measure : (q,) float array
        Positive per-tet measure (volume, or density times volume).
    boundary_faces : (b, 3) int array
        Boundary triangles, oriented with outward normals.
    boundary_index : int array
        Sorted vertex indices lying on the boundary.
    interior_index : int array
        Sorted complement of ``boundary_index``.
    """

    vertices: np.ndarray
    tets: np.ndarray
    measure: np.ndarray
    boundary_faces: np.ndarray
    boundary_index: np.ndarray
    interior_index: np.ndarray
    volumes: np.ndarray = field(repr=False)

    def __post_init__(self):
        for name in ("vertices", "tets", "measure", "boundary_faces",
                     "boundary_index", "interior_index", "volumes"):
            getattr(self, name).flags.writeable = False

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_tets(self) -> int:
        return self.tets.shape[0]

    @property
    def total_measure(self) -> float:
        return float(self.measure.sum())

    def edges(self) -> np.ndarray:
        """Unique undirected edges as a sorted ``(e, 2)`` array."""
        pairs = self.tets[:, [0, 0, 0, 1, 1, 2]], self.tets[:, [1, 2, 3, 2, 3, 3]]
        e = np.sort(np.stack([pairs[0].ravel(), pairs[1].ravel()], axis=1), axis=1)
        return np.unique(e, axis=0)

    def with_measure(self, measure) -> "TetMesh":
        measure = np.array(measure, dtype=float)
        if measure.shape != (self.n_tets,):
            raise MeshError(f"measure must have shape ({self.n_tets},), got {measure.shape}")
        if not np.all(measure > 0) or not np.all(np.isfinite(measure)):
            raise MeshError("measure must be finite and positive on every tet")
        return replace(self, measure=measure)


def _boundary_faces(tets: np.ndarray) -> np.ndarray:
    faces = tets[:, _TET_FACES].reshape(-1, 3)
    key = np.sort(faces, axis=1)
    _, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    if np.any(counts > 2):
        raise MeshError(f"nonmanifold mesh: {int(np.sum(counts > 2))} faces shared by more than two tets")
    return faces[counts[inverse] == 1]


def _check_boundary_topology(faces: np.ndarray) -> None:
    if len(faces) == 0:
        raise MeshError("mesh has no boundary faces")
    half = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    key = np.sort(half, axis=1)
    edges, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    if np.any(counts != 2):
        raise MeshError("nonmanifold boundary: some boundary edges are not shared by exactly two faces")
    # consistent outward orientation means each directed half-edge appears once
    if len(np.unique(half, axis=0)) != len(half):
        raise MeshError("nonmanifold boundary: inconsistent face orientation")

    # connected components of the face graph through shared edges
    nf = len(faces)
    parent = np.arange(nf)

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    owner = np.tile(np.arange(nf), 3)
    order = np.argsort(inverse.ravel(), kind="stable")
    pairs = owner[order].reshape(-1, 2)
    for a, b in pairs:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
    roots = {find(a) for a in range(nf)}
    if len(roots) != 1:
        raise MeshError(f"boundary has {len(roots)} components; a single closed surface is required")

    V = len(np.unique(faces))
    chi = V - len(edges) + nf
    if chi != 2:
        genus = (2 - chi) / 2
        raise MeshError(f"boundary surface has Euler characteristic {chi} (genus {genus:g}); genus 0 required")


def build_mesh(vertices, tets, density=None, measure=None, rel_degenerate: float = 1e-12) -> TetMesh:
    """Validate raw arrays and produce a :class:`TetMesh`.

    Tets are reoriented to positive signed volume. The measure defaults to
    the tet volume; with ``density`` it is ``density * volume``. An explicit
    ``measure`` overrides both.

    Raises
    ------
    MeshError
        On degenerate tets (volume below ``rel_degenerate`` times the mean),
        nonmanifold or disconnected boundary, or a boundary of nonzero genus.
    """
    V = np.array(vertices, dtype=float)
    T = np.array(tets, dtype=np.int64)
    if V.ndim != 2 or V.shape[1] != 3:
        raise MeshError(f"vertices must have shape (n, 3), got {V.shape}")
    if T.ndim != 2 or T.shape[1] != 4 or len(T) == 0:
        raise MeshError(f"tets must have shape (q, 4) with q >= 1, got {T.shape}")
    if not np.all(np.isfinite(V)):
        raise MeshError("vertex coordinates must be finite")
    if T.min() < 0 or T.max() >= len(V):
        raise MeshError("tet index out of range")
    if np.any(np.sort(T, axis=1)[:, 1:] == np.sort(T, axis=1)[:, :-1]):
        raise MeshError("tet with repeated vertex")

    vol = tet_volumes(V, T)
    scale = np.abs(vol).mean()
    bad = np.flatnonzero((np.abs(vol) < rel_degenerate * scale) | (vol == 0))
    if len(bad):
        raise MeshError(f"{len(bad)} degenerate tets (first: {bad[0]}, volume {vol[bad[0]]:.3e})")
    flip = vol < 0
    if np.any(flip):
        logger.info("reoriented %d tets", int(flip.sum()))
        T[flip] = T[flip][:, [1, 0, 2, 3]]
        vol = np.abs(vol)

    used = np.unique(T)
    if len(used) != len(V):
        raise MeshError(f"{len(V) - len(used)} vertices are not referenced by any tet")

    faces = _boundary_faces(T)
    _check_boundary_topology(faces)
    bidx = np.unique(faces)
    iidx = np.setdiff1d(np.arange(len(V)), bidx)

    if measure is None:
        measure = vol.copy()
        if density is not None:
            density = np.asarray(density, dtype=float)
            if density.shape != vol.shape:
                raise MeshError(f"density needs {len(vol)} entries, got {density.size}")
            if not np.all(density > 0):
                raise MeshError("density must be positive")
            measure = density * vol
    measure = np.array(measure, dtype=float)
    if measure.shape != vol.shape or not np.all(measure > 0):
        raise MeshError("measure must be positive with one entry per tet")

    return TetMesh(V, T, measure, faces, bidx, iidx, vol)


def normalize_total_measure(mesh: TetMesh, total: float = BALL_VOLUME) -> TetMesh:
    """Rescale the measure so that it sums to ``total`` (the unit ball volume)."""
    s = mesh.measure.sum()
    if s == total:
        return mesh
    return mesh.with_measure(mesh.measure * (total / s))


def folding_count(mesh: TetMesh, coords: np.ndarray) -> int:
    """Number of tets whose image under ``coords`` has non-positive signed volume."""
    return int(np.count_nonzero(tet_volumes(coords, mesh.tets) <= 0))


def load_or_build(source, density=None) -> TetMesh:
    """Load a mesh from a file path, or build one from a generator descriptor.

    ``source`` is a path to a Gmsh ``.msh`` file, a TetGen ``.node``/``.ele``
    file (either of the pair), or a mapping such as
    ``{"kind": "ball", "divisions": 10, "seed": 7}``; see
    :func:`volmap.generate.from_descriptor`.
    ``density`` may be an array or a path to a density text file.
    """
    from . import generate, io

    if isinstance(density, (str, bytes)) or hasattr(density, "__fspath__"):
        density = io.read_density(density)
    if isinstance(source, dict):
        mesh = generate.from_descriptor(source)
        if density is not None:
            mesh = build_mesh(mesh.vertices, mesh.tets, density=density)
        return mesh
    return io.read_mesh(source, density=density)


def vertex_adjacent_tets(mesh: TetMesh) -> list:
    """Tet indices incident to each vertex."""
    order = np.argsort(mesh.tets.ravel(), kind="stable")
    counts = np.bincount(mesh.tets.ravel(), minlength=mesh.n_vertices)
    split = np.split(order // 4, np.cumsum(counts)[:-1])
    return split


def as_coords(mesh: TetMesh, coords: Optional[np.ndarray]) -> np.ndarray:
    """Return ``coords`` as a float ``(n, 3)`` array, defaulting to the identity map."""
    if coords is None:
        return mesh.vertices
    f = np.asarray(coords, dtype=float)
    if f.shape != (mesh.n_vertices, 3):
        raise ValueError(f"map must have shape ({mesh.n_vertices}, 3), got {f.shape}")
    return f
