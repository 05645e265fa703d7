import numpy as np
import pytest

from trunclap import analysis as an
from trunclap.analysis import EquationKind, StencilError
from trunclap.energy import EnergyParams
from trunclap.mesh import MeshError, build_mesh


def aronsson(x, y):
    return x ** (4 / 3) - y ** (4 / 3)


def test_affine_derivatives():
    m = build_mesh(6, 5)
    u = m.interpolate(lambda x, y: 3 * x - 2 * y + 1)
    d = an.node_derivatives(u, m.vertex_index(2, 3))
    np.testing.assert_allclose(d.gradient, [3, -2], atol=1e-12)
    np.testing.assert_allclose(d.hessian, 0, atol=1e-9)


def test_quadratic_hessian_exact():
    m = build_mesh(7, 7, (-1, -1, 1, 1))
    u = m.interpolate(lambda x, y: x**2 - y**2)
    for k in (m.vertex_index(1, 1), m.vertex_index(3, 4), m.vertex_index(6, 6)):
        d = an.node_derivatives(u, k)
        np.testing.assert_allclose(d.hessian, np.diag([2.0, -2.0]), atol=1e-10)
        assert d.hessian[0, 1] == d.hessian[1, 0]


def test_sin_cos_second_order():
    errs = []
    for n in (16, 32, 64):
        m = build_mesh(n, n)
        u = m.interpolate(lambda x, y: np.sin(x) * np.cos(y))
        k = m.vertex_index(n // 2, n // 4)
        x, y = m.vertices[k]
        d = an.node_derivatives(u, k)
        exact_g = [np.cos(x) * np.cos(y), -np.sin(x) * np.sin(y)]
        s, c = np.sin(x) * np.cos(y), np.cos(x) * np.sin(y)
        exact_h = [[-s, -c], [-c, -s]]
        errs.append(max(np.abs(d.gradient - exact_g).max(), np.abs(d.hessian - exact_h).max()))
    assert errs[0] / errs[1] == pytest.approx(4, rel=0.1)
    assert errs[1] / errs[2] == pytest.approx(4, rel=0.1)


def test_stencil_errors():
    m = build_mesh(4, 4)
    u = m.field(np.zeros(25))
    for k in (0, 3, m.vertex_index(4, 2), m.vertex_index(2, 4)):
        with pytest.raises(StencilError):
            an.node_derivatives(u, k)
    with pytest.raises(StencilError):
        an.residual(u, 0, "inf_laplace")


def test_grid_matches_node():
    m = build_mesh(9, 7, (0, 0, 2, 1))
    u = m.interpolate(lambda x, y: np.exp(x) * np.sin(3 * y))
    grids = an.grid_derivatives(u)
    for i, j in ((1, 1), (4, 3), (8, 6)):
        d = an.node_derivatives(u, m.vertex_index(i, j))
        got = [g[j - 1, i - 1] for g in grids]
        np.testing.assert_allclose(got, [*d.gradient, d.hessian[0, 0], d.hessian[0, 1], d.hessian[1, 1]])


def test_inf_laplace_closed_forms():
    m = build_mesh(8, 8)
    aff = m.interpolate(lambda x, y: 3 * x - 2 * y)
    quad = m.interpolate(lambda x, y: 0.5 * (x**2 + y**2))
    for i, j in ((1, 1), (3, 5), (7, 2)):
        k = m.vertex_index(i, j)
        x, y = m.vertices[k]
        assert abs(an.residual(aff, k, EquationKind.INF_LAPLACE)) < 1e-9
        assert an.residual(quad, k, "inf_laplace") == pytest.approx(x**2 + y**2, rel=1e-10)


def test_aronsson_residual_refines():
    res = []
    for n in (16, 32, 64):
        m = build_mesh(n, n, (1, 1, 2, 2))
        res.append(np.abs(an.residual_grid(m.interpolate(aronsson), "inf_laplace")).max())
    assert res[0] > res[1] > res[2]
    assert res[2] < 1e-3


def test_trunc_limit_annihilated_in_dead_core():
    m = build_mesh(8, 8)
    u = m.interpolate(lambda x, y: 0.3 * x**2 + 0.1 * y)
    P = EnergyParams(6, 1.0)
    for k in m.interior:
        assert an.residual(u, k, "trunc_limit", P) == 0


def test_operator_formulas_at_node():
    m = build_mesh(10, 10)
    u = m.interpolate(lambda x, y: x**3 + x * y + 2 * y**2)
    k = m.vertex_index(6, 3)
    d = an.node_derivatives(u, k)
    (ux, uy), H = d.gradient, d.hessian
    g2 = ux**2 + uy**2
    lap = H[0, 0] + H[1, 1]
    inf = ux**2 * H[0, 0] + 2 * ux * uy * H[0, 1] + uy**2 * H[1, 1]
    P = EnergyParams(7, 0.4)
    assert an.residual(u, k, "p_laplace", P) == pytest.approx(g2 ** 1.5 * (g2 * lap + 5 * inf))
    s = g2 - 0.4
    assert an.residual(u, k, "trunc_p", P) == pytest.approx(s**1.5 * (s * lap + 5 * inf))
    assert an.residual(u, k, "trunc_limit", P) == pytest.approx(s * inf)
    J = EnergyParams(7, 0.4, "jensen_upper", 0.02)
    assert an.residual(u, k, "jensen_upper_p", J) == pytest.approx(s**1.5 * (s * lap + 5 * inf) + 0.02)
    assert an.residual(u, k, "jensen_lower_p", J) == pytest.approx(s**1.5 * (s * lap + 5 * inf) - 0.02)
    assert an.residual(u, k, "jensen_upper_limit", J) == pytest.approx(max(0.8 - g2, inf))
    assert an.residual(u, k, "jensen_lower_limit", J) == pytest.approx(min(g2 - 0.8, inf))
    assert an.residual(u, k, "jensen_lower_limit", J, printed=True) == pytest.approx(min(np.sqrt(g2) - 0.8, inf))


def test_params_required():
    m = build_mesh(4, 4)
    u = m.field(np.arange(25.0))
    with pytest.raises(ValueError):
        an.residual(u, 6, "trunc_p")


def test_margin_band_excludes_ring():
    m = build_mesh(20, 20)
    u = m.interpolate(lambda x, y: x)  # |grad u|^2 = 1 everywhere
    assert an.max_residual(u, "inf_laplace", t=1.0) == 0
    assert not an.residual_mask(u, 1.0).any()
    assert an.residual_mask(u, 0.5).all()


def test_dead_core_examples():
    m = build_mesh(6, 6)
    u = m.interpolate(lambda x, y: 0.4 * x - 0.2 * y)
    assert an.dead_core(m, u, 0.0).sum() == 0
    assert an.dead_core(m, u, 0.25).all()
    flat = m.field(np.zeros(49))
    assert an.dead_core(m, flat, 0.0).all()


def test_dead_core_sine_bands():
    n = 16
    m = build_mesh(n, n)
    u = m.interpolate(lambda x, y: np.sin(np.pi * x))
    t = np.pi**2 / 2
    mask = an.dead_core(m, u, t)
    # independent oracle: solve the 2x2 system for each element's gradient
    expect = []
    for e in m.elements:
        P = m.vertices[e]
        A = np.array([P[1] - P[0], P[2] - P[0]])
        vals = np.sin(np.pi * P[:, 0])
        g = np.linalg.solve(A, vals[1:] - vals[0])
        expect.append(g @ g <= t)
    assert np.array_equal(mask, expect)
    # the flat bands sit around x = 1/2; steep bands near x = 0 and 1
    cx = m.vertices[m.elements].mean(axis=1)[:, 0]
    assert mask[np.abs(cx - 0.5) < 0.2].all()
    assert not mask[(cx < 0.15) | (cx > 0.85)].any()


def test_dead_core_monotone_in_t():
    rng = np.random.default_rng(0)
    m = build_mesh(8, 8)
    u = m.field(rng.normal(size=81))
    prev = an.dead_core(m, u, 0.0)
    for t in (0.5, 1.0, 5.0, 50.0):
        cur = an.dead_core(m, u, t)
        assert np.all(cur[prev])
        prev = cur


def test_comparison_examples():
    m = build_mesh(6, 6)
    u1 = m.interpolate(lambda x, y: x)
    u2 = u1 + 0.1
    r = an.comparison_check(u1, u1, 0.5)
    assert r.passed and r.max_violation == 0
    assert an.comparison_check(u1, u2, 0.5).passed
    r = an.comparison_check(u2, u1, 0.5)
    assert not r.passed
    assert len(r.violations) == r.checked == m.n_vertices


def test_comparison_skips_joint_dead_core():
    m = build_mesh(6, 6)
    u1 = m.interpolate(lambda x, y: 0.1 * x + 0.5)
    u2 = m.interpolate(lambda x, y: 0.1 * x)
    r = an.comparison_check(u1, u2, 0.5)
    assert r.passed and r.checked == 0


def test_comparison_mesh_mismatch():
    a = build_mesh(3, 3).field(np.zeros(16))
    b = build_mesh(3, 3, (0, 0, 2, 2)).field(np.zeros(16))
    with pytest.raises(MeshError):
        an.comparison_check(a, b, 0.0)
    with pytest.raises(MeshError):
        an.stability_gap(a, b)


def test_sandwich_examples():
    m = build_mesh(6, 6)
    u = m.interpolate(lambda x, y: 2 * x + y)
    assert an.sandwich_check(u - 0.05, u, u + 0.05, 1.0).passed
    r = an.sandwich_check(u, u, u, 1.0)
    assert r.passed and r.max_violation == 0
    assert not an.sandwich_check(u, u, u - 0.05, 1.0).passed
    assert an.sandwich_check(u, u, u - 0.05, 1.0, slack=0.06).passed


def test_stability_gap_examples():
    m = build_mesh(4, 4)
    u = m.field(np.linspace(0, 1, 25))
    assert an.stability_gap(u, u) == 0
    assert an.stability_gap(u + 0.3, u) == pytest.approx(0.3)


def test_holder_examples():
    m = build_mesh(5, 5)
    u = m.interpolate(lambda x, y: 2 * x)
    r = an.holder_check(m, u, 4, 16, 1.0)
    assert r["lhs"] == pytest.approx(r["rhs"], rel=1e-12) and r["pass"]
    v = m.field(np.random.default_rng(1).normal(size=36))
    r = an.holder_check(m, v, 6, 6, 0.3)
    assert r["lhs"] == r["rhs"]
    assert an.holder_check(m, v, 4, 16, 0.3)["pass"]
    with pytest.raises(ValueError):
        an.holder_check(m, v, 8, 4, 0.3)


def test_holder_on_non_unit_domain():
    m = build_mesh(6, 4, (0, 0, 3, 2))
    rng = np.random.default_rng(2)
    for _ in range(20):
        v = m.field(rng.normal(size=m.n_vertices))
        assert an.holder_check(m, v, 3, 11, 0.5)["pass"]


def _subdomain(m):
    return an.subdomain_vertices(m, 2, 2, 9, 8)


def test_amle_zero_perturbation():
    m = build_mesh(12, 12)
    u = m.interpolate(aronsson)
    r = an.amle_check(m, u, 0.01, _subdomain(m), [np.zeros(m.n_vertices)])
    assert r.passed and r.max_violation == 0


def test_amle_affine_sampled():
    m = build_mesh(12, 12)
    u = m.interpolate(lambda x, y: 1.5 * x - 0.5 * y)
    V = _subdomain(m)
    perts = an.perturbation_family(m, V, 1000, np.random.default_rng(7), 0.05)
    r = an.amle_check(m, u, 0.3, V, perts)
    assert r.passed and r.checked == 1000
    assert r.max_violation <= 1e-12


def test_amle_flat_spot_strict():
    m = build_mesh(12, 12)
    u = m.interpolate(lambda x, y: x)
    V = _subdomain(m)
    _, inner = an._subdomain_parts(m, V)
    # flatten one interior node onto its western neighbour: flat to the west, steeper to the east
    k = inner[len(inner) // 2]
    w = np.zeros(m.n_vertices)
    w[k] = -m.dx
    r = an.amle_check(m, u, 0.25, V, [w])
    assert r.passed
    assert r.details["max_drop_plain"] < 0 and r.details["max_drop_squared"] < 0


def test_amle_detects_improvable_field():
    m = build_mesh(12, 12)
    # a spike in the middle: lowering it reduces the sup gradient
    u = m.interpolate(lambda x, y: x).values.copy()
    V = _subdomain(m)
    _, inner = an._subdomain_parts(m, V)
    k = inner[len(inner) // 2]
    u[k] += 0.5
    w = np.zeros(m.n_vertices)
    w[k] = -0.5
    r = an.amle_check(m, u, 0.0, V, [w])
    assert not r.passed and r.violations == [0]


def test_amle_perturbations_vanish_outside():
    m = build_mesh(12, 12)
    V = _subdomain(m)
    _, inner = an._subdomain_parts(m, V)
    outside = np.setdiff1d(np.arange(m.n_vertices), inner)
    for w in an.perturbation_family(m, V, 50, np.random.default_rng(3), 0.1):
        assert np.all(w[outside] == 0)
        assert np.abs(w).max() > 0


def test_amle_empty_subdomain():
    m = build_mesh(6, 6)
    with pytest.raises(ValueError):
        an.amle_check(m, np.zeros(49), 0.0, [], [])
    with pytest.raises(ValueError):
        an.amle_check(m, np.zeros(49), 0.0, [0, 1], [])


def test_report_serializes():
    import json

    m = build_mesh(4, 4)
    u = m.field(np.zeros(25))
    json.dumps(an.comparison_check(u, u, 0.0).to_dict())
