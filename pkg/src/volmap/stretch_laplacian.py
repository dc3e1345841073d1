"""Volumetric stretch Laplacian, stretch energy and its gradient.

For a tet with vertex images ``f_i, f_j, f_k, f_l`` and source measure
``mu``, the modified weight of edge ``{i, j}`` (opposite edge ``{k, l}``) is

    w_ij = -((f_k - f_i) x (f_l - f_i)) . ((f_l - f_j) x (f_k - f_j)) / (36 mu)

which equals ``|f(ikl)| |f(jkl)| cos(theta_kl) / (9 mu)`` with ``theta_kl``
the interior dihedral angle at edge ``{k, l}``. The assembled matrix has
off-diagonal entries ``-w_ij`` and diagonal ``sum_j w_ij``, so that

    E(f) = 1/2 trace(f^T L(f) f) = sum_tau 3 |f(tau)|^2 / (2 mu(tau))

and ``grad E = 3 L(f) f``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .mesh import TetMesh, as_coords, tet_volumes

# (i, j, k, l): edge {i, j} with opposite edge {k, l}; the three
# opposite-edge pairs of a tet, each contributing both of its edges
EDGE_TABLE = np.array([
    [0, 1, 2, 3], [2, 3, 0, 1],
    [0, 2, 1, 3], [1, 3, 0, 2],
    [0, 3, 1, 2], [1, 2, 0, 3],
])


def _cross_weight(fi, fj, fk, fl, mu):
    a = np.einsum("...i,...i->...", np.cross(fk - fi, fl - fi), np.cross(fl - fj, fk - fj))
    return -a / (36.0 * mu)


def edge_weight(tet_images, mu: float, edge) -> float:
    """Modified stretch weight of one edge of a single tet.

    Parameters
    ----------
    tet_images : (4, 3) array_like
        Images of the tet's four vertices.
    mu : float
        Source measure of the tet.
    edge : pair of int
        Local indices (0..3) of the edge; the other two form the opposite edge.
    """
    if not mu > 0:
        raise ValueError(f"measure must be positive, got {mu}")
    i, j = (int(e) for e in edge)
    if i == j or not {i, j} <= {0, 1, 2, 3}:
        raise ValueError(f"invalid local edge {edge!r}")
    k, l = sorted({0, 1, 2, 3} - {i, j})
    F = np.asarray(tet_images, dtype=float)
    return float(_cross_weight(F[i], F[j], F[k], F[l], mu))


def edge_weight_dihedral(tet_images, mu: float, edge) -> float:
    """Same weight as :func:`edge_weight`, computed from face areas and the dihedral angle.

    Uses ``cos(pi - theta) = n_ikl . n_jkl`` with outward unit normals.
    """
    i, j = (int(e) for e in edge)
    k, l = sorted({0, 1, 2, 3} - {i, j})
    F = np.asarray(tet_images, dtype=float)

    def outward(a, b, c, opposite):
        n = np.cross(F[b] - F[a], F[c] - F[a])
        if np.dot(n, F[opposite] - F[a]) > 0:
            n = -n
        return n

    ni = outward(i, k, l, j)
    nj = outward(j, k, l, i)
    area_i = 0.5 * np.linalg.norm(ni)
    area_j = 0.5 * np.linalg.norm(nj)
    cos_theta = -np.dot(ni, nj) / (4.0 * area_i * area_j)
    return float(area_i * area_j * cos_theta / (9.0 * mu))


def tet_edge_weights(mesh: TetMesh, coords=None) -> np.ndarray:
    """Per-tet weights of all six local edges, shape ``(q, 6)`` in ``EDGE_TABLE`` order."""
    F = as_coords(mesh, coords)[mesh.tets]
    mu = mesh.measure
    cols = [
        _cross_weight(F[:, i], F[:, j], F[:, k], F[:, l], mu)
        for i, j, k, l in EDGE_TABLE
    ]
    return np.stack(cols, axis=1)


def assemble(mesh: TetMesh, coords=None) -> sparse.csr_matrix:
    """Assemble the stretch Laplacian ``L(f)`` as a symmetric CSR matrix.

    ``coords`` defaults to the identity map (the mesh's own vertices).
    Off-diagonal entries are ``-w_ij`` summed over the tets sharing the edge;
    the diagonal is the negated off-diagonal row sum.
    """
    n = mesh.n_vertices
    W = tet_edge_weights(mesh, coords)
    rows = mesh.tets[:, EDGE_TABLE[:, 0]]
    cols = mesh.tets[:, EDGE_TABLE[:, 1]]
    r = np.concatenate([rows.ravel(), cols.ravel()])
    c = np.concatenate([cols.ravel(), rows.ravel()])
    v = -np.concatenate([W.ravel(), W.ravel()])
    L = sparse.coo_matrix((v, (r, c)), shape=(n, n)).tocsr()
    L.sum_duplicates()
    diag = -np.asarray(L.sum(axis=1)).ravel()
    L = (L + sparse.diags(diag)).tocsr()
    L.sort_indices()
    return L


def energy(mesh: TetMesh, coords=None, L=None) -> float:
    """Stretch energy ``1/2 trace(f^T L(f) f)``.

    Pass a precomputed ``L`` (assembled at the same map) to skip assembly.
    """
    f = as_coords(mesh, coords)
    if L is None:
        L = assemble(mesh, f)
    return 0.5 * float(np.einsum("ij,ij->", f, L @ f))


def energy_per_tet(mesh: TetMesh, coords=None) -> float:
    """Stretch energy summed tet by tet as ``3 |f(tau)|^2 / (2 mu)``."""
    vol = tet_volumes(as_coords(mesh, coords), mesh.tets)
    return float(np.sum(1.5 * vol**2 / mesh.measure))


def energy_gradient(mesh: TetMesh, coords=None) -> np.ndarray:
    """Gradient of the stretch energy, ``3 L(f) f`` as an ``(n, 3)`` table."""
    f = as_coords(mesh, coords)
    return 3.0 * (assemble(mesh, f) @ f)


@dataclass(frozen=True)
class StretchStats:
    """Per-tet stretch factors ``mu / |f(tau)|`` with summary statistics.

    ``sigma`` holds ``inf`` where the image volume is zero; those entries
    are left out of ``mean``/``std`` and counted in ``n_degenerate``.
    """

    sigma: np.ndarray
    mean: float
    std: float
    n_degenerate: int


def stretch_factors(mesh: TetMesh, coords=None) -> StretchStats:
    vol = tet_volumes(as_coords(mesh, coords), mesh.tets)
    degenerate = vol == 0
    sigma = np.full(mesh.n_tets, np.inf)
    np.divide(mesh.measure, vol, out=sigma, where=~degenerate)
    good = sigma[~degenerate]
    nd = int(degenerate.sum())
    if nd:
        warnings.warn(f"{nd} tets have zero image volume; excluded from stretch summary",
                      RuntimeWarning, stacklevel=2)
    if good.size == 0:
        return StretchStats(sigma, float("nan"), float("nan"), nd)
    return StretchStats(sigma, float(good.mean()), float(good.std()), nd)
