"""Deterministic synthetic tetrahedral meshes."""

from __future__ import annotations

from itertools import permutations

import numpy as np

from .mesh import TetMesh, build_mesh

# Kuhn split of the unit cube: one tet per axis permutation, all sharing
# the main diagonal, so neighbouring cubes agree on their shared faces.
_CUBE_CORNERS = np.array([[i & 1, (i >> 1) & 1, (i >> 2) & 1] for i in range(8)])


def _kuhn_tets() -> np.ndarray:
    tets = []
    for perm in permutations(range(3)):
        corner = np.zeros(3, dtype=int)
        path = [0]
        for axis in perm:
            corner[axis] = 1
            path.append(int(corner[0] + 2 * corner[1] + 4 * corner[2]))
        tets.append(path)
    return np.array(tets)


def cube_grid(divisions: int):
    """Vertices and Kuhn tets of a ``divisions**3`` grid on ``[-1, 1]^3``."""
    N = int(divisions)
    if N < 1:
        raise ValueError("divisions must be >= 1")
    ax = np.linspace(-1.0, 1.0, N + 1)
    X, Y, Z = np.meshgrid(ax, ax, ax, indexing="ij")
    verts = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)

    def vid(i, j, k):
        return (i * (N + 1) + j) * (N + 1) + k

    I, J, K = np.meshgrid(np.arange(N), np.arange(N), np.arange(N), indexing="ij")
    I, J, K = I.ravel(), J.ravel(), K.ravel()
    # mirror the split in each octant so the shared diagonal of every cube
    # points at the centre; no tet then has all four corners on the surface
    centre = (N - 1) / 2.0
    flips = np.stack([I > centre, J > centre, K > centre], axis=1).astype(int)
    tets = np.empty((len(I), 6, 4), dtype=np.int64)
    kuhn = _kuhn_tets()
    for t, path in enumerate(kuhn):
        for c, corner in enumerate(path):
            local = (_CUBE_CORNERS[corner][None, :] + flips) % 2
            tets[:, t, c] = vid(I + local[:, 0], J + local[:, 1], K + local[:, 2])
    tets = tets.reshape(-1, 4)
    return verts, tets


def cube_to_ball(points: np.ndarray) -> np.ndarray:
    """Radial map sending each cube shell ``max|x_i| = r`` onto the sphere of radius ``r``."""
    p = np.asarray(points, dtype=float)
    r2 = np.linalg.norm(p, axis=1)
    rinf = np.abs(p).max(axis=1)
    scale = np.divide(rinf, r2, out=np.zeros_like(r2), where=r2 > 0)
    return p * scale[:, None]


def ball_mesh(divisions: int = 8, radius: float = 1.0, jitter: float = 0.2,
              seed: int = 0) -> TetMesh:
    """Tetrahedral ball built from a warped cube grid.

    The grid on ``[-1, 1]^3`` is split into 6 tets per cube, interior nodes
    are perturbed by up to ``jitter`` half-cells (seeded), and the result is
    pushed through :func:`cube_to_ball`. ``6 * divisions**3`` tets.
    """
    verts, tets = cube_grid(divisions)
    if jitter:
        rng = np.random.default_rng(seed)
        h = 2.0 / divisions
        inner = np.all(np.abs(verts) < 1.0 - 1e-12, axis=1)
        verts[inner] += rng.uniform(-0.5, 0.5, size=(int(inner.sum()), 3)) * jitter * h
    verts = cube_to_ball(verts) * radius
    return build_mesh(verts, tets)


def single_tet() -> TetMesh:
    """The reference tet (0,0,0), (1,0,0), (0,1,0), (0,0,1)."""
    return build_mesh(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float),
                      np.array([[0, 1, 2, 3]]))


def random_convex_mesh(divisions: int = 8, seed: int = 0, anisotropy: float = 0.35,
                       jitter: float = 0.2) -> TetMesh:
    """Ball mesh sent through a random volume-preserving symmetric linear map.

    The image is an ellipsoid with random axes whose semi-axis product is 1,
    so its volume stays 4*pi/3.
    """
    rng = np.random.default_rng(seed)
    base = ball_mesh(divisions, jitter=jitter, seed=seed)
    Q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    logs = rng.uniform(-anisotropy, anisotropy, size=3)
    logs -= logs.mean()
    A = Q @ np.diag(np.exp(logs)) @ Q.T
    return build_mesh(base.vertices @ A.T, base.tets)


def from_descriptor(desc: dict) -> TetMesh:
    """Build a mesh from ``{"kind": "ball" | "tet" | "convex", ...}``."""
    desc = dict(desc)
    kind = desc.pop("kind")
    if kind == "ball":
        return ball_mesh(**desc)
    if kind == "tet":
        return single_tet()
    if kind == "convex":
        return random_convex_mesh(**desc)
    raise ValueError(f"unknown mesh kind {kind!r}")
