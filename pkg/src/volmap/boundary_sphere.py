"""Spherical area-preserving parameterization of the mesh boundary.

The fixed boundary map needed by VSEM is built in two stages:

1. :func:`initial_sphere_map` punctures one face, solves a harmonic
   (cotangent) problem to flatten the remaining disk into the plane,
   lifts it with inverse stereographic projection, re-solves the cap
   around the puncture in the opposite chart and re-centres the result
   with Moebius transformations.
2. :func:`area_preserving_refine` runs stretch-reweighted Laplacian
   solves on alternating hemispherical stereographic charts, keeping the
   iterate with the smallest spread of area ratios.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from .mesh import TetMesh, _TET_FACES

logger = logging.getLogger(__name__)

FOUR_PI = 4.0 * np.pi


class BoundaryMapError(RuntimeError):
    """The boundary parameterization could not be computed."""


@dataclass(frozen=True, eq=False)
class BoundarySurface:
    """Closed genus-zero triangle surface with per-face measure.

    ``vertex_index`` maps local vertex ``t`` to the global index in the
    owning tet mesh (identity for standalone surfaces). ``faces`` use local
    indices and are oriented outward.
    """

    vertex_index: np.ndarray
    points: np.ndarray
    faces: np.ndarray
    measure: np.ndarray

    @property
    def n_vertices(self) -> int:
        return len(self.points)

    @classmethod
    def from_triangles(cls, points, faces, measure=None) -> "BoundarySurface":
        P = np.asarray(points, dtype=float)
        F = np.asarray(faces, dtype=np.int64)
        if measure is None:
            measure = triangle_areas(P, F)
        return cls(np.arange(len(P)), P, F, np.asarray(measure, dtype=float))


def boundary_surface(mesh: TetMesh, use_density: bool = False) -> BoundarySurface:
    """Extract the boundary of ``mesh`` as a :class:`BoundarySurface`.

    With ``use_density`` each face's area is multiplied by the density
    ``mu / |tau|`` of the tet it bounds (the induced boundary mass).
    """
    gidx = mesh.boundary_index
    local = np.full(mesh.n_vertices, -1, dtype=np.int64)
    local[gidx] = np.arange(len(gidx))
    faces = local[mesh.boundary_faces]
    pts = mesh.vertices[gidx]
    measure = triangle_areas(pts, faces)
    if use_density:
        all_faces = mesh.tets[:, _TET_FACES].reshape(-1, 3)
        owner = np.repeat(np.arange(mesh.n_tets), 4)
        key_all = {tuple(k): o for k, o in zip(np.sort(all_faces, axis=1), owner)}
        density = mesh.measure / mesh.volumes
        measure = measure * np.array(
            [density[key_all[tuple(k)]] for k in np.sort(mesh.boundary_faces, axis=1)]
        )
    return BoundarySurface(gidx, pts, faces, measure)


def triangle_areas(points, faces) -> np.ndarray:
    P = np.asarray(points)[faces]
    return 0.5 * np.linalg.norm(np.cross(P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]), axis=1)


def spherical_areas(points, faces) -> np.ndarray:
    """Signed solid angles of the spherical triangles spanned by unit vectors.

    Positive for counter-clockwise triangles seen from outside.
    """
    P = np.asarray(points)[faces]
    a, b, c = P[:, 0], P[:, 1], P[:, 2]
    num = np.einsum("ij,ij->i", a, np.cross(b, c))
    den = 1.0 + np.einsum("ij,ij->i", a, b) + np.einsum("ij,ij->i", b, c) + np.einsum("ij,ij->i", c, a)
    return 2.0 * np.arctan2(num, den)


def area_ratios(surface: BoundarySurface, coords) -> np.ndarray:
    """Per-face stretch ``measure / image area``, measure scaled to total ``4 pi``."""
    target = surface.measure * (FOUR_PI / surface.measure.sum())
    img = spherical_areas(coords, surface.faces)
    with np.errstate(divide="ignore"):
        return target / img


def area_ratio_std(surface: BoundarySurface, coords) -> float:
    r = area_ratios(surface, coords)
    r = r[np.isfinite(r)]
    return float(r.std())


def _cot_weights(P, faces, orient=1.0):
    """Half-cotangent weights of each triangle's three edges (opposite each corner)."""
    X = P[faces]
    w = np.empty((len(faces), 3))
    for c in range(3):
        u = X[:, (c + 1) % 3] - X[:, c]
        v = X[:, (c + 2) % 3] - X[:, c]
        if P.shape[1] == 2:
            cr = orient * (u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0])
        else:
            cr = np.linalg.norm(np.cross(u, v), axis=1)
        w[:, c] = 0.5 * np.einsum("ij,ij->i", u, v) / cr
    return w


def _laplacian(n, faces, w) -> sparse.csr_matrix:
    # weight w[:, c] belongs to the edge opposite corner c
    i = faces[:, [1, 2, 0]].ravel()
    j = faces[:, [2, 0, 1]].ravel()
    v = w.ravel()
    W = sparse.coo_matrix((np.r_[v, v], (np.r_[i, j], np.r_[j, i])), shape=(n, n)).tocsr()
    return (sparse.diags(np.asarray(W.sum(axis=1)).ravel()) - W).tocsr()


def _mean_value_laplacian(P, faces) -> sparse.csr_matrix:
    n = len(P)
    X = P[faces]
    rows, cols, vals = [], [], []
    for c in range(3):
        a, b, d = c, (c + 1) % 3, (c + 2) % 3
        u = X[:, b] - X[:, a]
        v = X[:, d] - X[:, a]
        lu, lv = np.linalg.norm(u, axis=1), np.linalg.norm(v, axis=1)
        ang = np.arccos(np.clip(np.einsum("ij,ij->i", u, v) / (lu * lv), -1, 1))
        t = np.tan(ang / 2)
        rows += [faces[:, a], faces[:, a]]
        cols += [faces[:, b], faces[:, d]]
        vals += [t / lu, t / lv]
    W = sparse.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(n, n)).tocsr()
    return (sparse.diags(np.asarray(W.sum(axis=1)).ravel()) - W).tocsr()


def _solve_dirichlet(L, fixed, values, surface):
    n = L.shape[0]
    free = np.setdiff1d(np.arange(n), fixed)
    L = L.tocsr()
    A = L[free][:, free].tocsc()
    rhs = -(L[free][:, fixed] @ values)
    try:
        lu = spla.splu(A)
    except RuntimeError as exc:
        d = np.abs(A.diagonal())
        worst = free[np.argmin(d)]
        star = np.unique(surface.faces[np.any(surface.faces == worst, axis=1)])
        raise BoundaryMapError(
            f"singular harmonic system near vertex {surface.vertex_index[worst]} "
            f"(star {surface.vertex_index[star].tolist()})"
        ) from exc
    out = np.empty((n, values.shape[1]))
    out[fixed] = values
    out[free] = lu.solve(np.ascontiguousarray(rhs))
    return out


def stereographic(points) -> np.ndarray:
    """Project the unit sphere from the north pole onto the plane ``z = 0``."""
    p = np.asarray(points)
    return p[:, :2] / (1.0 - p[:, 2:3])


def inverse_stereographic(z) -> np.ndarray:
    z = np.asarray(z)
    r2 = np.sum(z**2, axis=1, keepdims=True)
    return np.hstack([2 * z, r2 - 1]) / (r2 + 1)


def _mobius(x, a):
    """Conformal automorphism of the ball sending ``a`` to the origin."""
    aa = a @ a
    xa = x @ a
    xx = np.sum(x * x, axis=1)
    d = x - a
    num = (1 - aa) * d - np.sum(d * d, axis=1, keepdims=True) * a
    den = 1 - 2 * xa + aa * xx
    return num / den[:, None]


def _vertex_weights(surface):
    w = np.zeros(surface.n_vertices)
    np.add.at(w, surface.faces.ravel(), np.repeat(surface.measure / 3.0, 3))
    return w / w.sum()


def recenter(surface: BoundarySurface, coords, tol: float = 1e-13, max_iter: int = 500) -> np.ndarray:
    """Moebius-normalize a sphere map so the measure-weighted centroid is the origin."""
    x = np.asarray(coords, dtype=float).copy()
    w = _vertex_weights(surface)
    c = w @ x
    for _ in range(max_iter):
        if np.linalg.norm(c) < tol:
            break
        step = c
        for _ in range(60):
            y = _mobius(x, step)
            y /= np.linalg.norm(y, axis=1, keepdims=True)
            cy = w @ y
            if np.linalg.norm(cy) < np.linalg.norm(c):
                break
            step = 0.5 * step
        else:
            break
        x, c = y, cy
    return x


def initial_sphere_map(surface: BoundarySurface) -> np.ndarray:
    """Harmonic sphere map of a genus-zero surface, as an ``(b, 3)`` array of unit vectors.

    Raises
    ------
    BoundaryMapError
        If the harmonic system is singular or the result has folded faces.
    """
    P, F = surface.points, surface.faces
    n = len(P)
    areas = triangle_areas(P, F)
    puncture = int(np.argmax(areas))
    fixed = F[puncture]

    # The puncture face surrounds the point sent to infinity, so its corners
    # go to the inversion of a similar triangle centred at the origin.
    a, b, c = P[fixed]
    e1 = b - a
    ex = e1 / np.linalg.norm(e1)
    nrm = np.cross(e1, c - a)
    ey = np.cross(nrm / np.linalg.norm(nrm), ex)
    tri = np.array([[0.0, 0.0], [np.linalg.norm(e1), 0.0], [(c - a) @ ex, (c - a) @ ey]])
    tri -= tri.mean(axis=0)
    tri /= np.sum(tri**2, axis=1, keepdims=True)

    z = None
    L = None
    for kind in ("cotangent", "mean-value"):
        if kind == "cotangent":
            L = _laplacian(n, F, _cot_weights(P, F))
        else:
            L = _mean_value_laplacian(P, F)
        z = _solve_dirichlet(L, fixed, tri, surface)
        signed = _planar_signed_areas(z, np.delete(F, puncture, axis=0))
        # the punctured disk lies inside the fixed triangle, traversed in reverse
        if np.all(signed < 0) or np.all(signed > 0):
            break
        logger.info("cotangent embedding folded %d faces; retrying with mean-value weights",
                    int(min((signed < 0).sum(), (signed > 0).sum())))

    radii = np.linalg.norm(z, axis=1)
    scale = np.median(radii[radii > 0])
    x = inverse_stereographic(z / scale)
    if spherical_areas(x, F).sum() < 0:
        x[:, 0] *= -1
    x = recenter(surface, x)

    # the puncture neighbourhood carries most of the discretization error;
    # re-solve the cap around it in the opposite chart, rest held fixed
    g = x.copy()
    g[:, 2] *= -1
    cap = np.flatnonzero(g[:, 2] < 0)
    if 0 < len(cap) < n:
        rest = np.setdiff1d(np.arange(n), cap)
        zc = _solve_dirichlet(L, rest, stereographic(g[rest]), surface)
        y = inverse_stereographic(zc)
        y[:, 2] *= -1
        if np.all(spherical_areas(y, F) > 0):
            y = recenter(surface, y)
            if area_ratio_std(surface, y) < area_ratio_std(surface, x):
                x = y
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(spherical_areas(x, F) <= 0):
        raise BoundaryMapError("initial sphere map has folded or degenerate faces")
    return x


def _planar_signed_areas(z, faces):
    Z = z[faces]
    u = Z[:, 1] - Z[:, 0]
    v = Z[:, 2] - Z[:, 0]
    return 0.5 * (u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0])


def _chart_step(surface, x, flip):
    """One stretch-reweighted solve on the hemisphere opposite the projection pole."""
    g = x.copy()
    if flip:
        g[:, 2] *= -1
    z = stereographic(g)
    F = surface.faces
    # projecting from the north pole reverses the outward orientation;
    # the reflection used for the other chart reverses it back
    orient = 1.0 if flip else -1.0
    free = np.flatnonzero(g[:, 2] < 0)
    if len(free) == 0 or len(free) == len(g):
        return x
    fixed = np.setdiff1d(np.arange(len(g)), free)

    # target planar area: sphere-normalized measure times the chart's area density
    target = surface.measure * (FOUR_PI / surface.measure.sum())
    zc = z[F].mean(axis=1)
    target = target * (1.0 + np.sum(zc**2, axis=1)) ** 2 / 4.0
    planar = orient * _planar_signed_areas(z, F)
    sigma = target / np.maximum(planar, 1e-300)
    w = _cot_weights(z, F, orient) / sigma[:, None]
    # only faces touching the solved hemisphere influence the interior rows
    L = _laplacian(len(g), F, w)
    znew = _solve_dirichlet(L, fixed, z[fixed], surface)
    y = inverse_stereographic(znew)
    if flip:
        y[:, 2] *= -1
    return y / np.linalg.norm(y, axis=1, keepdims=True)


def area_preserving_refine(surface: BoundarySurface, init, iters: int = 10,
                           fold_fraction: float = 1e-3) -> np.ndarray:
    """Reduce the spread of area ratios of a sphere map.

    Alternates a southern and a northern stereographic chart; in each, the
    hemisphere's vertices are re-solved from a Laplacian whose cotangent
    weights are divided by the per-face area stretch, with the other
    hemisphere held fixed. Returns the iterate with the smallest area-ratio
    standard deviation (``init`` itself if nothing improves). Stops early
    if more than ``fold_fraction`` of the faces fold.
    """
    x0 = np.asarray(init, dtype=float)
    best, best_std = x0, area_ratio_std(surface, x0)
    x = x0 / np.linalg.norm(x0, axis=1, keepdims=True)
    nf = len(surface.faces)
    for it in range(int(iters)):
        try:
            y = _chart_step(surface, x, flip=bool(it % 2))
        except BoundaryMapError as exc:
            logger.warning("refinement stopped at iteration %d: %s", it, exc)
            break
        folded = int(np.count_nonzero(spherical_areas(y, surface.faces) <= 0))
        if folded > fold_fraction * nf:
            logger.warning("refinement stopped at iteration %d: %d folded faces", it, folded)
            break
        s = area_ratio_std(surface, y) if folded == 0 else np.inf
        logger.debug("refine %d: area ratio std %.3e, folded %d", it, s, folded)
        if s < best_std:
            best, best_std = y, s
        x = y
    return best


def read_boundary_map(path, mesh: TetMesh) -> np.ndarray:
    """Read ``vertex_index x y z`` lines (0-based global indices) for every boundary vertex."""
    data = np.loadtxt(path, ndmin=2)
    if data.shape[1] != 4:
        raise ValueError(f"{path}: expected 4 columns, got {data.shape[1]}")
    idx = data[:, 0].astype(np.int64)
    if set(idx.tolist()) != set(mesh.boundary_index.tolist()) or len(idx) != len(mesh.boundary_index):
        raise ValueError(f"{path}: indices must cover exactly the {len(mesh.boundary_index)} boundary vertices")
    out = np.empty((len(mesh.boundary_index), 3))
    local = np.searchsorted(mesh.boundary_index, idx)
    out[local] = data[:, 1:]
    norms = np.linalg.norm(out, axis=1)
    if np.any(np.abs(norms - 1) > 1e-6):
        raise ValueError(f"{path}: boundary points must have unit norm")
    return out / norms[:, None]


def write_boundary_map(path, mesh: TetMesh, coords) -> None:
    with open(path, "w") as fh:
        for g, p in zip(mesh.boundary_index, np.asarray(coords)):
            fh.write(f"{g:d} {p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")


def sphere_boundary_map(mesh: TetMesh, iters: int = 10, use_density: bool = False) -> np.ndarray:
    """Area-preserving sphere map of the mesh boundary, rows aligned with ``mesh.boundary_index``."""
    surf = boundary_surface(mesh, use_density=use_density)
    x0 = initial_sphere_map(surf)
    return area_preserving_refine(surf, x0, iters)


def enclosed_volume(points, faces) -> float:
    """Signed volume bounded by a closed, outward-oriented triangle surface."""
    P = np.asarray(points, dtype=float)[faces]
    return float(np.einsum("ij,ij->", P[:, 0], np.cross(P[:, 1], P[:, 2])) / 6.0)


def match_enclosed_volume(mesh: TetMesh, boundary, volume=None) -> np.ndarray:
    """Scale a boundary map so the polyhedron it bounds has volume ``volume``.

    A sphere map with flat triangles encloses less than the ball it is
    inscribed in. Scaling it to enclose the total measure (the default)
    lets a fixed-boundary volume-preserving map exist at all.
    """
    fB = np.asarray(boundary, dtype=float)
    local = np.full(mesh.n_vertices, -1, dtype=np.int64)
    local[mesh.boundary_index] = np.arange(len(mesh.boundary_index))
    v = enclosed_volume(fB, local[mesh.boundary_faces])
    if not v > 0:
        raise BoundaryMapError(f"boundary map encloses non-positive volume {v:.3e}")
    target = mesh.total_measure if volume is None else float(volume)
    return fB * (target / v) ** (1.0 / 3.0)
