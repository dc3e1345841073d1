"""Shared fixtures and independent reference computations for the test suite.

The reference helpers here deliberately avoid the package's own assembly
code: volumes come from 3x3 determinants, weights from explicit cross
products written out per tet.
"""

import numpy as np
import pytest

from volmap import generate
from volmap.mesh import build_mesh, normalize_total_measure

REF_TET = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])


def det_volume(p):
    """Signed volume of a (4, 3) point array by a 3x3 determinant."""
    p = np.asarray(p, dtype=float)
    return np.linalg.det(np.stack([p[1] - p[0], p[2] - p[0], p[3] - p[0]])) / 6.0


def direct_weight(p, mu, i, j):
    """Edge weight of local edge (i, j) written out from the cross-product formula."""
    k, l = sorted({0, 1, 2, 3} - {i, j})
    p = np.asarray(p, dtype=float)
    a = np.cross(p[k] - p[i], p[l] - p[i])
    b = np.cross(p[l] - p[j], p[k] - p[j])
    return -float(a @ b) / (36.0 * mu)


def direct_assembled_weight(mesh, coords, a, b):
    """Sum of per-tet weights of global edge {a, b} over the tets containing it."""
    total = 0.0
    for t, tet in enumerate(mesh.tets):
        pos = {int(v): s for s, v in enumerate(tet)}
        if a in pos and b in pos:
            total += direct_weight(coords[tet], mesh.measure[t], pos[a], pos[b])
    return total


def per_tet_energy(mesh, coords):
    """Sum of 3 |f(tau)|^2 / (2 mu) with determinant volumes."""
    vols = np.array([det_volume(coords[t]) for t in mesh.tets])
    return float(np.sum(1.5 * vols**2 / mesh.measure))


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q


def small_mesh(rng, max_divisions=3):
    """Jittered ball or ellipsoid mesh with at most 6 * 3**3 = 162 tets."""
    d = int(rng.integers(1, max_divisions + 1))
    seed = int(rng.integers(0, 2**31))
    if rng.random() < 0.5:
        m = generate.ball_mesh(d, jitter=0.3, seed=seed)
    else:
        m = generate.random_convex_mesh(d, seed=seed)
    if rng.random() < 0.5:
        m = build_mesh(m.vertices, m.tets, density=rng.uniform(0.5, 2.0, m.n_tets))
    return m


def random_map(rng, mesh, scale=0.2):
    return mesh.vertices + scale * rng.normal(size=mesh.vertices.shape)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def ball4():
    return normalize_total_measure(generate.ball_mesh(4, seed=1))


@pytest.fixture(scope="session")
def ball10():
    return normalize_total_measure(generate.ball_mesh(10, seed=0))


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[num])
