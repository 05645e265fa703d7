"""Closed-form smoke checks, cheap enough to run from the command line."""
from __future__ import annotations

import numpy as np

from . import analysis as an
from .energy import EnergyParams, convexity_gap, density, energy_gradient, phi_ab, total_energy
from .harness import SweepConfig, diagram_commutation, run_sweep, stability_rate_fit
from .mesh import build_mesh, element_gradient, geometry_stats
from .solver import SolveOptions, continuation_solve, solve_dirichlet


def _close(a, b, tol=1e-12):
    return np.allclose(a, b, rtol=tol, atol=tol)


def _mesh_counts():
    m1, m2 = build_mesh(1, 1), build_mesh(2, 2)
    return (m1.n_vertices, m1.n_elements, int(m1.boundary_mask.sum())) == (4, 2, 4) and (
        m2.n_vertices == 9 and m2.n_elements == 8 and not m2.boundary_mask[4]
    )


def _affine_gradient():
    m = build_mesh(4, 3)
    u = m.interpolate(lambda x, y: 3 * x - 2 * y)
    c = m.interpolate(lambda x, y: 0 * x + 7)
    return all(_close(element_gradient(m, u, e), [3, -2]) for e in range(m.n_elements)) and all(
        _close(element_gradient(m, c, e), [0, 0]) for e in range(m.n_elements)
    )


def _geometry():
    a = geometry_stats(build_mesh(2, 2), np.full(9, 5.0))
    b = geometry_stats(build_mesh(3, 4, (0, 0, 3, 4)), np.zeros(20))
    m = build_mesh(4, 4)
    c = geometry_stats(m, m.interpolate(lambda x, y: x))
    return (
        _close([a["diameter"], a["area"], a["mean"]], [np.sqrt(2), 1, 5])
        and _close([b["diameter"], b["area"], b["mean"]], [5, 12, 0])
        and _close(c["mean"], 0.5)
    )


def _density():
    v0, g0 = density([0.5, 0.0], EnergyParams(8, 1))
    v1, g1 = density([2.0, 0.0], EnergyParams(4, 1))
    v2, _ = density([1.0, 1.0], EnergyParams(6, 1))
    return v0 == 0 and _close(g0, 0) and _close(v1, 9) and _close(g1, [24, 0]) and _close(v2, 1)


def _energies():
    m = build_mesh(4, 4)
    u = m.interpolate(lambda x, y: 2 * x)
    return (
        _close(total_energy(m, u, EnergyParams(4, 1)), 9)
        and total_energy(m, np.full(25, 3.0), EnergyParams(4, 1)) == 0
        and _close(total_energy(m, u, EnergyParams(4, 1, "jensen_upper", 1.0)), 1.25)
        and _close(total_energy(m, u, EnergyParams(4, 1, form="sup")), np.sqrt(3))
        and _close(energy_gradient(m, np.zeros(25), EnergyParams(4, 1, "jensen_upper", 0.3)), -0.3 * m.lumped_areas)
    )


def _pairings():
    P = EnergyParams(4, 1)
    return (
        phi_ab([3, 1], [3, 1], P) == 0
        and phi_ab([0.5, 0.2], [0.1, -0.7], P) == 0
        and _close(phi_ab([2, 0], [0, 0], P), 12)
        and convexity_gap([1.3, 0.2], [1.3, 0.2], P) == 0
    )


def _solver_affine():
    m = build_mesh(16, 16)
    f = m.interpolate(lambda x, y: 3 * x - 2 * y)
    r = solve_dirichlet(m, f, EnergyParams(8, 1))
    reps = continuation_solve(m, f, [4, 8], 1.0)
    dead = solve_dirichlet(m, m.interpolate(lambda x, y: 0.5 * x), EnergyParams(8, 1))
    return (
        np.max(np.abs(r.solution.values - f.values)) < 1e-6
        and all(np.max(np.abs(q.solution.values - f.values)) < 1e-6 for q in reps)
        and continuation_solve(m, f, [], 1.0) == []
        and dead.energy <= 1e-12
    )


def _residuals():
    m = build_mesh(8, 8)
    aff = m.interpolate(lambda x, y: 3 * x - 2 * y)
    quad = m.interpolate(lambda x, y: 0.5 * (x**2 + y**2))
    k = m.vertex_index(3, 5)
    x, y = m.vertices[k]
    flat = m.interpolate(lambda x, y: 0.1 * x)
    return (
        abs(an.residual(aff, k, "inf_laplace")) < 1e-10
        and _close(an.residual(quad, k, "inf_laplace"), x**2 + y**2, 1e-10)
        and an.residual(flat, k, "trunc_limit", EnergyParams(4, 0.5)) == 0
    )


def _checks():
    m = build_mesh(6, 6)
    u = m.interpolate(lambda x, y: x)
    v = u + 0.1
    return (
        an.comparison_check(u, u, 0.5).passed
        and an.comparison_check(u, v, 0.5).passed
        and not an.comparison_check(v, u, 0.5).passed
        and an.sandwich_check(u - 0.1, u, u + 0.1, 0.5).passed
        and not an.sandwich_check(u, u, u - 0.1, 0.5).passed
        and an.stability_gap(u, u) == 0
        and _close(an.stability_gap(u + 0.3, u), 0.3)
        and an.dead_core(m, u, 2.0).all()
        and not an.dead_core(m, u, 0.0).any()
    )


def _harness():
    cfg = SweepConfig(nx=8, ny=8, data="affine", p_list=(4, 8), sigma_list=(0.5, 0.0))
    table = run_sweep(cfg)
    _, D = table.distance_matrix()
    one = run_sweep(SweepConfig(nx=4, ny=4, data="affine"))
    fit = stability_rate_fit([0.4, 0.2, 0.1], [0.28, 0.14, 0.07])
    return (
        D.max() < 2e-6
        and diagram_commutation(table).passed
        and diagram_commutation(one).gap == 0
        and _close(fit.slope, 1.0, 1e-9)
    )


CHECKS = {
    "mesh counts": _mesh_counts,
    "affine element gradients": _affine_gradient,
    "geometry stats": _geometry,
    "density closed forms": _density,
    "energy closed forms": _energies,
    "monotone pairing": _pairings,
    "affine solves": _solver_affine,
    "residual closed forms": _residuals,
    "ordering checks": _checks,
    "harness on affine data": _harness,
}


def run_selftest(report=print) -> bool:
    ok = True
    for name, fn in CHECKS.items():
        try:
            passed = bool(fn())
        except Exception as exc:  # a crash is a failure, not an abort
            passed = False
            name = f"{name} ({type(exc).__name__}: {exc})"
        report(f"{'PASS' if passed else 'FAIL'}  {name}")
        ok &= passed
    return ok
