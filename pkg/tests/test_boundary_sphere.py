import numpy as np
import pytest

from volmap import boundary_sphere as bs
from volmap import generate
from volmap.mesh import build_mesh


def octahedron_mesh():
    V = np.array([[0.0, 0, 0], [1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]])
    tets = [[0, x, y, z] for x in (1, 2) for y in (3, 4) for z in (5, 6)]
    return build_mesh(V, tets)


@pytest.fixture(scope="module")
def ball_surface():
    return bs.boundary_surface(generate.ball_mesh(10, seed=0))


@pytest.fixture(scope="module")
def ball_init(ball_surface):
    return bs.initial_sphere_map(ball_surface)


def test_initial_map_on_unit_sphere(ball_init):
    assert np.abs(np.linalg.norm(ball_init, axis=1) - 1.0).max() <= 1e-12


def test_initial_map_covers_sphere(ball_surface, ball_init):
    a = bs.spherical_areas(ball_init, ball_surface.faces)
    assert a.sum() == pytest.approx(4 * np.pi, abs=1e-6)
    assert np.all(a > 0)


def test_octahedron_symmetric_and_centred():
    m = octahedron_mesh()
    surf = bs.boundary_surface(m)
    x = bs.initial_sphere_map(surf)
    assert np.abs(x.mean(axis=0)).max() <= 1e-10
    assert np.abs(np.linalg.norm(x, axis=1) - 1).max() <= 1e-12
    # the antipodal vertex pairs stay antipodal
    for a, b in [(1, 2), (3, 4), (5, 6)]:
        ia, ib = np.searchsorted(surf.vertex_index, [a, b])
        assert np.allclose(x[ia], -x[ib], atol=1e-10)
    assert bs.spherical_areas(x, surf.faces).sum() == pytest.approx(4 * np.pi, abs=1e-10)


def test_refinement_improves_ball(ball_surface, ball_init):
    y = bs.area_preserving_refine(ball_surface, ball_init, iters=10)
    assert bs.area_ratio_std(ball_surface, y) < bs.area_ratio_std(ball_surface, ball_init)
    assert np.abs(np.linalg.norm(y, axis=1) - 1.0).max() <= 1e-12
    assert bs.spherical_areas(y, ball_surface.faces).sum() == pytest.approx(4 * np.pi, abs=1e-6)


def test_refinement_monotone_on_already_uniform(ball_surface, ball_init):
    y = bs.area_preserving_refine(ball_surface, ball_init, iters=10)
    z = bs.area_preserving_refine(ball_surface, y, iters=4)
    assert bs.area_ratio_std(ball_surface, z) <= bs.area_ratio_std(ball_surface, y)


def test_zero_iterations_is_identity(ball_surface, ball_init):
    assert np.array_equal(bs.area_preserving_refine(ball_surface, ball_init, iters=0), ball_init)


def test_stereographic_round_trip():
    rng = np.random.default_rng(3)
    p = rng.normal(size=(100, 3))
    p /= np.linalg.norm(p, axis=1, keepdims=True)
    p = p[p[:, 2] < 0.99]
    assert np.allclose(bs.inverse_stereographic(bs.stereographic(p)), p, atol=1e-12)


def test_spherical_area_of_octant():
    p = np.eye(3)
    assert bs.spherical_areas(p, np.array([[0, 1, 2]]))[0] == pytest.approx(np.pi / 2, rel=1e-14)


def test_match_enclosed_volume():
    m = generate.ball_mesh(4, seed=0)
    fB = bs.sphere_boundary_map(m, iters=2)
    g = bs.match_enclosed_volume(m, fB)
    local = np.full(m.n_vertices, -1)
    local[m.boundary_index] = np.arange(len(m.boundary_index))
    assert bs.enclosed_volume(g, local[m.boundary_faces]) == pytest.approx(m.total_measure, rel=1e-12)
    with pytest.raises(bs.BoundaryMapError):
        bs.match_enclosed_volume(m, -fB[:, [1, 0, 2]] * 0)


def test_boundary_map_file_round_trip(tmp_path):
    m = generate.ball_mesh(3, seed=1)
    fB = bs.sphere_boundary_map(m, iters=2)
    path = tmp_path / "b.txt"
    bs.write_boundary_map(path, m, fB)
    assert np.allclose(bs.read_boundary_map(path, m), fB, atol=1e-15)
    np.savetxt(path, np.column_stack([m.boundary_index[:-1], fB[:-1]]))
    with pytest.raises(ValueError):
        bs.read_boundary_map(path, m)
