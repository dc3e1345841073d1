import numpy as np
import pytest
from scipy import sparse

from test_boundary_sphere import octahedron_mesh
from volmap import generate, vsem
from volmap import stretch_laplacian as sl
from volmap.mesh import normalize_total_measure


@pytest.fixture(scope="module")
def ball6():
    m = normalize_total_measure(generate.ball_mesh(6, seed=3))
    f, rep, fB = vsem.parameterize(m, config=vsem.VsemConfig(keep_history=True))
    return m, f, rep, fB


def test_config_validation():
    with pytest.raises(ValueError):
        vsem.VsemConfig(max_iters=0)
    with pytest.raises(ValueError):
        vsem.VsemConfig(tol=-1.0)
    with pytest.raises(ValueError):
        vsem.VsemConfig(solver="qr")


def test_no_interior_returns_boundary():
    m = normalize_total_measure(generate.single_tet())
    fB = m.vertices / np.maximum(np.linalg.norm(m.vertices, axis=1, keepdims=True), 1e-300)
    fB[0] = [0.0, 0.0, -1.0]
    f, rep = vsem.run(m, fB)
    assert np.array_equal(f[m.boundary_index], fB)
    assert rep.iterations >= 1


def test_single_interior_vertex_at_centroid():
    m = octahedron_mesh()
    fB = m.vertices[m.boundary_index]
    f, rep = vsem.run(m, fB, vsem.VsemConfig(max_iters=3))
    assert np.abs(f[0]).max() <= 1e-14
    assert rep.foldings == 0


def test_residual_of_interior_solve(rng):
    m = generate.ball_mesh(3, seed=9)
    f = m.vertices + 0.02 * rng.normal(size=m.vertices.shape)
    L = sl.assemble(m, f)
    I, B = m.interior_index, m.boundary_index
    x = vsem.solve_interior(L, f[B], I, B)
    A = L[I][:, I]
    b = -(L[I][:, B] @ f[B])
    assert np.linalg.norm(A @ x - b) <= 1e-10 * np.linalg.norm(b)


def test_cg_agrees_with_direct(ball6):
    m, _, _, fB = ball6
    L = sl.assemble(m)
    I, B = m.interior_index, m.boundary_index
    xd = vsem.solve_interior(L, fB, I, B, "direct")
    xc = vsem.solve_interior(L, fB, I, B, "cg")
    assert np.abs(xd - xc).max() <= 1e-9


def test_singular_system_reports_iteration():
    m = generate.ball_mesh(2, seed=0)
    L = sparse.csr_matrix((m.n_vertices, m.n_vertices))
    with pytest.raises(vsem.SolverError, match="iteration 4"):
        vsem.solve_interior(L, m.vertices[m.boundary_index], m.interior_index, m.boundary_index,
                            iteration=4)


def test_tolerance_gate_stops_after_one_cycle(ball6):
    m, _, _, fB = ball6
    f, rep = vsem.run(m, fB, vsem.VsemConfig(tol=1e6, max_iters=5))
    assert rep.iterations == 1
    assert rep.termination == "tolerance"
    assert len(rep.energy) == 2


def test_history_shape_and_monotone_energy(ball6):
    m, f, rep, fB = ball6
    n = rep.iterations + 1
    assert len(rep.energy) == len(rep.eps_norm) == len(rep.sigma_mean) == len(rep.maps) == n
    assert np.all(np.diff(rep.energy) <= 0)
    assert rep.eps_norm[0] == pytest.approx(np.linalg.norm(rep.maps[0] - m.vertices))
    assert np.array_equal(rep.maps[-1], f)
    assert np.array_equal(f[m.boundary_index], fB)


def test_energy_drops_fast_then_plateaus():
    # a stretched ellipsoid starts far from volume-preserving
    m = normalize_total_measure(generate.random_convex_mesh(6, seed=3, anisotropy=0.8))
    _, rep, _ = vsem.parameterize(m, config=vsem.VsemConfig(tol=0.0, max_iters=20))
    drops = -np.diff(rep.energy)
    assert np.all(drops > 0)
    assert drops[:5].sum() > 5 * drops[5:].sum()


def test_quality_on_small_ball(ball6):
    m, f, rep, _ = ball6
    assert 0.99 <= rep.sigma_mean[-1] <= 1.01
    assert rep.sigma_std[-1] <= 0.2
    assert rep.energy[-1] == pytest.approx(2 * np.pi, rel=0.05)
    assert rep.foldings == 0


def test_rotated_boundary_gives_rotated_map(ball6):
    m, f, _, fB = ball6
    from conftest import random_rotation
    R = random_rotation(np.random.default_rng(4))
    g, _ = vsem.run(m, fB @ R.T)
    assert np.abs(g - f @ R.T).max() <= 1e-10


def test_initial_laplacian_is_used(ball6):
    m, f, _, fB = ball6
    L = sl.assemble(m, f)
    _, rep = vsem.run(m, fB, vsem.VsemConfig(max_iters=1, keep_history=True), initial_laplacian=L)
    expect = vsem.solve_interior(L, fB, m.interior_index, m.boundary_index)
    assert np.abs(rep.maps[0][m.interior_index] - expect).max() <= 1e-13


def test_boundary_shape_checked(ball6):
    m, _, _, fB = ball6
    with pytest.raises(ValueError):
        vsem.run(m, fB[:-1])
