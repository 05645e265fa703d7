import numpy as np
import pytest

from trunclap.mesh import (
    MeshError,
    ScalarField,
    build_mesh,
    element_gradient,
    element_gradients,
    geometry_stats,
    read_field,
    write_field,
)


def shoelace(pts):
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * (x[0] * (y[1] - y[2]) + x[1] * (y[2] - y[0]) + x[2] * (y[0] - y[1]))


def test_smallest_mesh():
    m = build_mesh(1, 1)
    assert (m.n_vertices, m.n_elements) == (4, 2)
    assert m.boundary_mask.all()


def test_two_by_two_center_is_interior():
    m = build_mesh(2, 2)
    assert (m.n_vertices, m.n_elements) == (9, 8)
    assert list(np.flatnonzero(~m.boundary_mask)) == [4]


def test_rectangle_counts_and_area():
    m = build_mesh(8, 4, (0, 0, 2, 1))
    assert (m.n_vertices, m.n_elements) == (45, 64)
    total = sum(shoelace(m.vertices[e]) for e in m.elements)
    assert total == pytest.approx(2.0, rel=1e-12)


@pytest.mark.parametrize("nx,ny", [(0, 3), (3, 0), (-1, 2), (2.5, 2)])
def test_invalid_resolution(nx, ny):
    with pytest.raises(MeshError):
        build_mesh(nx, ny)


def test_degenerate_rectangle():
    with pytest.raises(MeshError):
        build_mesh(2, 2, (0, 0, 0, 1))


@pytest.mark.parametrize("nx,ny,rect", [(5, 3, (0, 0, 1, 1)), (6, 6, (-1, 2, 3, 2.5)), (1, 7, (0, 0, 1, 10))])
def test_mesh_invariants(nx, ny, rect):
    m = build_mesh(nx, ny, rect)
    assert np.all(m.signed_areas > 0)
    x0, y0, x1, y1 = rect
    on_edge = (
        np.isclose(m.x, x0) | np.isclose(m.x, x1) | np.isclose(m.y, y0) | np.isclose(m.y, y1)
    )
    assert np.array_equal(on_edge, m.boundary_mask)
    assert m.areas.sum() == pytest.approx((x1 - x0) * (y1 - y0), rel=1e-12)


def test_diagonals_alternate():
    m = build_mesh(2, 1)
    # cell 0 splits along (0,0)-(1,1), cell 1 along (2,0)-(1,1)
    first = {tuple(sorted(e)) for e in m.elements[:2]}
    second = {tuple(sorted(e)) for e in m.elements[2:]}
    assert first == {(0, 1, 4), (0, 3, 4)}
    assert second == {(1, 2, 4), (2, 4, 5)}


def test_affine_gradient_every_element():
    m = build_mesh(5, 4, (0, 0, 2, 1))
    u = m.interpolate(lambda x, y: 3 * x - 2 * y)
    np.testing.assert_allclose(element_gradients(m, u), np.tile([3, -2], (m.n_elements, 1)), atol=1e-12)
    for e in (0, 7, m.n_elements - 1):
        np.testing.assert_allclose(element_gradient(m, u, e), [3, -2], atol=1e-12)


def test_constant_gradient_zero():
    m = build_mesh(3, 3)
    c = m.interpolate(lambda x, y: np.full_like(x, 4.2))
    assert np.abs(element_gradients(m, c)).max() == 0


def test_x_squared_divided_difference():
    m = build_mesh(1, 1)
    u = m.interpolate(lambda x, y: x**2)
    # element 0 is (0,0),(1,0),(1,1); its bottom edge gives (1 - 0) / 1
    assert set(m.elements[0]) == {0, 1, 3}
    assert element_gradient(m, u, 0)[0] == pytest.approx(1.0)


def test_element_index_out_of_range():
    m = build_mesh(2, 2)
    u = m.field(np.zeros(9))
    with pytest.raises(IndexError):
        element_gradient(m, u, 8)
    with pytest.raises(IndexError):
        element_gradient(m, u, -1)


def test_geometry_stats_examples():
    s = geometry_stats(build_mesh(4, 4), np.full(25, 5.0))
    assert s["diameter"] == pytest.approx(np.sqrt(2))
    assert s["area"] == pytest.approx(1.0)
    assert s["mean"] == pytest.approx(5.0)
    s = geometry_stats(build_mesh(3, 4, (0, 0, 3, 4)), np.zeros(20))
    assert (s["diameter"], s["area"], s["mean"]) == (5.0, 12.0, 0.0)
    m = build_mesh(6, 6)
    assert geometry_stats(m, m.interpolate(lambda x, y: x))["mean"] == pytest.approx(0.5, abs=1e-14)


def test_refinement_keeps_geometry():
    a = geometry_stats(build_mesh(4, 3, (0, 1, 2, 4)), np.zeros(20))
    m = build_mesh(8, 6, (0, 1, 2, 4))
    b = geometry_stats(m, np.zeros(m.n_vertices))
    assert b["diameter"] == pytest.approx(a["diameter"], rel=1e-12)
    assert b["area"] == pytest.approx(a["area"], rel=1e-12)


def test_affine_energy_quadrature_exact():
    from trunclap.energy import EnergyParams, total_energy

    m = build_mesh(7, 5, (0, 0, 2, 1))
    u = m.interpolate(lambda x, y: 1.5 * x + 0.5 * y)
    P = EnergyParams(6, 0.3)
    assert total_energy(m, u, P) == pytest.approx(2.0 * (2.5 - 0.3) ** 3, rel=1e-12)


def test_scalar_field_validation():
    m = build_mesh(2, 2)
    with pytest.raises(MeshError):
        ScalarField(m, np.zeros(8))
    with pytest.raises(MeshError):
        ScalarField(m, np.r_[np.zeros(8), np.nan])
    f = ScalarField(m, np.arange(9.0))
    assert len(f) == 9
    with pytest.raises(ValueError):
        f.values[0] = 1.0


def test_field_on_other_mesh_rejected():
    a, b = build_mesh(2, 2), build_mesh(2, 2, (0, 0, 2, 1))
    with pytest.raises(MeshError):
        element_gradients(a, b.field(np.zeros(9)))


def test_field_dump_round_trip(tmp_path):
    m = build_mesh(5, 3, (0.1, -1, 1.7, 2.0 / 3))
    u = m.interpolate(lambda x, y: np.sin(7 * x) * np.exp(y) / 3)
    path = tmp_path / "u.field"
    write_field(path, u)
    lines = path.read_text().splitlines()
    assert lines[0].split()[:3] == ["FIELD", "5", "3"]
    assert len(lines) == 1 + m.n_vertices
    back = read_field(path)
    assert back.mesh.same_grid(m)
    assert np.array_equal(back.values, u.values)


def test_read_field_rejects_garbage(tmp_path):
    p = tmp_path / "x"
    p.write_text("hello\n")
    with pytest.raises(MeshError):
        read_field(p)
