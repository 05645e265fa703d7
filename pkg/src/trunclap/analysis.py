"""Finite-difference PDE residuals and ordering / extension-property checkers.

Residuals are pointwise surrogates for the viscosity formulations: central
differences on the structured grid evaluated at interior nodes, skipping
nodes whose gradient sits near the truncation ring.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .energy import EnergyParams
from .mesh import Mesh, MeshError, ScalarField, as_values, element_gradients


class StencilError(IndexError):
    """Node has no full 3x3 stencil inside the grid."""


class EquationKind(str, Enum):
    INF_LAPLACE = "inf_laplace"
    P_LAPLACE = "p_laplace"
    TRUNC_P = "trunc_p"
    TRUNC_LIMIT = "trunc_limit"
    JENSEN_UPPER_P = "jensen_upper_p"
    JENSEN_LOWER_P = "jensen_lower_p"
    JENSEN_UPPER_LIMIT = "jensen_upper_limit"
    JENSEN_LOWER_LIMIT = "jensen_lower_limit"


@dataclass(frozen=True)
class NodeDerivatives:
    gradient: np.ndarray
    hessian: np.ndarray


def _grid_of(field, mesh=None):
    if isinstance(field, ScalarField):
        return field.mesh, field.values.reshape(field.mesh.shape)
    if mesh is None:
        raise TypeError("plain arrays need an explicit mesh")
    return mesh, as_values(field, mesh).reshape(mesh.shape)


def grid_derivatives(field, mesh: Mesh | None = None):
    """Central differences at every interior node.

    Returns ``(ux, uy, uxx, uxy, uyy)``, each of shape ``(ny - 1, nx - 1)``
    and aligned with grid nodes ``[1:-1, 1:-1]``.
    """
    mesh, U = _grid_of(field, mesh)
    hx, hy = mesh.dx, mesh.dy
    c = U[1:-1, 1:-1]
    e, w = U[1:-1, 2:], U[1:-1, :-2]
    n, s = U[2:, 1:-1], U[:-2, 1:-1]
    ux = (e - w) / (2 * hx)
    uy = (n - s) / (2 * hy)
    uxx = (e - 2 * c + w) / hx**2
    uyy = (n - 2 * c + s) / hy**2
    uxy = (U[2:, 2:] - U[2:, :-2] - U[:-2, 2:] + U[:-2, :-2]) / (4 * hx * hy)
    return ux, uy, uxx, uxy, uyy


def node_derivatives(field: ScalarField, node: int) -> NodeDerivatives:
    mesh = field.mesh
    j, i = divmod(int(node), mesh.nx + 1)
    if not (1 <= i <= mesh.nx - 1 and 1 <= j <= mesh.ny - 1):
        raise StencilError(f"node {node} has no interior 3x3 stencil")
    U = field.values.reshape(mesh.shape)[j - 1 : j + 2, i - 1 : i + 2]
    hx, hy = mesh.dx, mesh.dy
    ux = (U[1, 2] - U[1, 0]) / (2 * hx)
    uy = (U[2, 1] - U[0, 1]) / (2 * hy)
    uxx = (U[1, 2] - 2 * U[1, 1] + U[1, 0]) / hx**2
    uyy = (U[2, 1] - 2 * U[1, 1] + U[0, 1]) / hy**2
    uxy = (U[2, 2] - U[2, 0] - U[0, 2] + U[0, 0]) / (4 * hx * hy)
    return NodeDerivatives(np.array([ux, uy]), np.array([[uxx, uxy], [uxy, uyy]]))


def _operator(kind: EquationKind, ux, uy, uxx, uxy, uyy, params: EnergyParams | None, printed=False):
    kind = EquationKind(kind)
    g2 = ux**2 + uy**2
    lap = uxx + uyy
    inf = ux**2 * uxx + 2 * ux * uy * uxy + uy**2 * uyy
    if kind is EquationKind.INF_LAPLACE:
        return inf
    if params is None:
        raise ValueError(f"{kind.value} residual needs EnergyParams")
    p, t = params.p, params.t
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        if kind is EquationKind.P_LAPLACE:
            # |grad u|^(p-4) (|grad u|^2 lap + (p-2) inf), zero at critical points
            return np.where(g2 > 0, g2 ** ((p - 4) / 2) * (g2 * lap + (p - 2) * inf), 0.0)
        s = g2 - t
        sp_ = np.maximum(s, 0.0)
        pre = np.where(s > 0, sp_ ** ((p - 4) / 2), 0.0)
        if kind is EquationKind.TRUNC_P:
            return pre * (sp_ * lap + (p - 2) * inf)
        if kind is EquationKind.TRUNC_LIMIT:
            return sp_ * inf
        if kind is EquationKind.JENSEN_UPPER_P:
            return pre * (s * lap + (p - 2) * inf) + params.source_scale
        if kind is EquationKind.JENSEN_LOWER_P:
            return pre * (s * lap + (p - 2) * inf) - params.source_scale
        if kind is EquationKind.JENSEN_UPPER_LIMIT:
            return np.maximum(2 * t - g2, inf)
        # lower limit: t = sigma^2; the printed form uses |grad u| unsquared
        first = np.sqrt(g2) - 2 * t if printed else g2 - 2 * t
        return np.minimum(first, inf)


def residual(field: ScalarField, node: int, kind, params: EnergyParams | None = None, printed: bool = False) -> float:
    """Left- minus right-hand side of the named equation at one interior node.

    ``printed=True`` selects the unsquared gradient in the lower Jensen limit
    equation; the default squares it, matching the upper equation.
    """
    d = node_derivatives(field, node)
    ux, uy = d.gradient
    return float(_operator(kind, ux, uy, d.hessian[0, 0], d.hessian[0, 1], d.hessian[1, 1], params, printed))


def residual_grid(field, kind, params=None, mesh=None, printed=False) -> np.ndarray:
    """Residual at every interior node, shape ``(ny - 1, nx - 1)``."""
    return _operator(kind, *grid_derivatives(field, mesh), params, printed)


def residual_mask(field, t: float, margin: float | None = None, mesh=None) -> np.ndarray:
    """Interior nodes whose FD gradient stays out of the band ``|g|^2 in [t-d, t+d]``."""
    ux, uy, *_ = grid_derivatives(field, mesh)
    d = 0.05 * max(1.0, t) if margin is None else margin
    g2 = ux**2 + uy**2
    return (g2 < t - d) | (g2 > t + d)


def max_residual(field, kind, params=None, t: float | None = None, mesh=None, interior_layers: int = 0) -> float:
    """Largest absolute residual over eligible interior nodes.

    ``interior_layers`` drops that many extra node rings next to the boundary.
    """
    r = residual_grid(field, kind, params, mesh)
    if t is None:
        t = params.t if params is not None else 0.0
    keep = residual_mask(field, t, mesh=mesh)
    if interior_layers:
        k = interior_layers
        inner = np.zeros_like(keep)
        inner[k:-k, k:-k] = True
        keep &= inner
    vals = np.abs(r[keep])
    return float(np.max(vals, initial=0.0))


def dead_core(mesh: Mesh, field, t: float) -> np.ndarray:
    """Per-element mask, True where ``|grad u|^2 <= t``."""
    g = element_gradients(mesh, field)
    return np.einsum("ij,ij->i", g, g) <= t


def _eligible_vertices(mesh: Mesh, element_ok: np.ndarray) -> np.ndarray:
    """Vertices all of whose adjacent elements satisfy ``element_ok``."""
    bad = mesh.vertex_elements @ (~element_ok).astype(float)
    return bad == 0


@dataclass
class CheckReport:
    passed: bool
    max_violation: float
    violations: list = field(default_factory=list)
    checked: int = 0
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "passed": bool(self.passed),
            "max_violation": float(self.max_violation),
            "violations": [int(v) for v in self.violations],
            "checked": int(self.checked),
            "details": self.details,
        }


def _mesh_of(*fields) -> Mesh:
    meshes = [f.mesh for f in fields]
    for m in meshes[1:]:
        if not meshes[0].same_grid(m):
            raise MeshError("fields live on different meshes")
    return meshes[0]


def comparison_check(u1: ScalarField, u2: ScalarField, t: float, slack: float = 0.0) -> CheckReport:
    """``u1 <= u2 + slack`` on vertices outside the joint dead core.

    A vertex is checked when every adjacent element has ``|grad u1|^2 > t``
    or ``|grad u2|^2 > t``.
    """
    mesh = _mesh_of(u1, u2)
    outside = ~(dead_core(mesh, u1, t) & dead_core(mesh, u2, t))
    ok = _eligible_vertices(mesh, outside)
    excess = u1.values - u2.values - slack
    bad = np.flatnonzero(ok & (excess > 0))
    margin = u1.values[ok] - u2.values[ok]
    return CheckReport(
        passed=bad.size == 0,
        max_violation=float(np.max(margin, initial=-np.inf)) if ok.any() else 0.0,
        violations=bad.tolist(),
        checked=int(ok.sum()),
    )


def sandwich_check(u_minus: ScalarField, u: ScalarField, u_plus: ScalarField, t: float, slack: float = 0.0) -> CheckReport:
    """``u_minus <= u <= u_plus`` (within ``slack``) outside all three dead cores."""
    mesh = _mesh_of(u_minus, u, u_plus)
    core = dead_core(mesh, u_minus, t) | dead_core(mesh, u, t) | dead_core(mesh, u_plus, t)
    ok = _eligible_vertices(mesh, ~core)
    lo = u_minus.values - u.values
    hi = u.values - u_plus.values
    worst = np.maximum(lo, hi)
    bad = np.flatnonzero(ok & (worst > slack))
    return CheckReport(
        passed=bad.size == 0,
        max_violation=float(np.max(worst[ok], initial=-np.inf)) if ok.any() else 0.0,
        violations=bad.tolist(),
        checked=int(ok.sum()),
        details={"lower": float(np.max(lo[ok], initial=-np.inf)), "upper": float(np.max(hi[ok], initial=-np.inf))},
    )


def stability_gap(u_plus: ScalarField, u_minus: ScalarField) -> float:
    _mesh_of(u_plus, u_minus)
    return float(np.max(np.abs(u_plus.values - u_minus.values)))


def holder_check(mesh: Mesh, field, q: float, p: float, t: float, tol: float = 1e-12) -> dict:
    """Compare the q-root energy with ``|Omega|^(1/q - 1/p)`` times the p-root energy."""
    from .energy import total_energy

    if q > p:
        raise ValueError(f"need q <= p, got q={q}, p={p}")
    lhs = total_energy(mesh, field, EnergyParams(q, t, form="p_root"))
    x0, y0, x1, y1 = mesh.rect
    vol = (x1 - x0) * (y1 - y0)
    rhs = vol ** (1.0 / q - 1.0 / p) * total_energy(mesh, field, EnergyParams(p, t, form="p_root"))
    return {"lhs": lhs, "rhs": rhs, "pass": bool(lhs <= rhs + tol * max(1.0, abs(rhs)))}


# --- truncated absolutely-minimizing check -------------------------------


def subdomain_vertices(mesh: Mesh, i0: int, j0: int, i1: int, j1: int) -> np.ndarray:
    """Vertex indices of the grid block ``[i0, i1] x [j0, j1]`` (inclusive)."""
    I, J = np.meshgrid(np.arange(i0, i1 + 1), np.arange(j0, j1 + 1))
    return (J * (mesh.nx + 1) + I).ravel()


def _subdomain_parts(mesh: Mesh, V: np.ndarray):
    inV = np.zeros(mesh.n_vertices, bool)
    inV[V] = True
    elems = np.flatnonzero(inV[mesh.elements].all(axis=1))
    if elems.size == 0:
        raise ValueError("subdomain contains no elements")
    # boundary of V: vertices of V adjacent to an element not inside V
    inside_e = np.zeros(mesh.n_elements, bool)
    inside_e[elems] = True
    touches_out = (mesh.vertex_elements @ (~inside_e).astype(float)) > 0
    interior = inV & ~touches_out & ~mesh.boundary_mask
    return elems, np.flatnonzero(interior)


def _truncated_sups(g: np.ndarray, t: float):
    norm = np.sqrt(np.einsum("ij,ij->i", g, g))
    plain = np.max(np.maximum(norm - np.sqrt(t), 0.0), initial=0.0)
    squared = np.max(np.maximum(norm**2 - t, 0.0), initial=0.0)
    return float(plain), float(squared)


def perturbation_family(mesh: Mesh, V: np.ndarray, n: int, rng: np.random.Generator, amplitude: float):
    """Hat bumps and smooth radial bumps centred at random interior nodes of V.

    Every perturbation vanishes on the boundary of V and outside it.
    ``amplitude`` is the largest bump height; heights are drawn in
    ``[0.05, 1] * amplitude`` with random sign.
    """
    _, inner = _subdomain_parts(mesh, V)
    if inner.size == 0:
        raise ValueError("subdomain has no interior vertices")
    out = []
    for k in range(n):
        c = inner[rng.integers(inner.size)]
        height = amplitude * rng.uniform(0.05, 1.0) * rng.choice([-1.0, 1.0])
        w = np.zeros(mesh.n_vertices)
        if k % 2 == 0:
            w[c] = height
        else:
            radius = mesh.h * rng.uniform(1.5, 4.0)
            r2 = np.sum((mesh.vertices - mesh.vertices[c]) ** 2, axis=1) / radius**2
            w[inner] = height * np.maximum(1.0 - r2[inner], 0.0) ** 2
        out.append(w)
    return out


def amle_check(mesh: Mesh, u, t: float, V, perturbations, slack: float = 1e-10) -> CheckReport:
    """Sup of the truncated gradient over V cannot drop under admissible changes.

    For each ``w = u + perturbation`` both ``sup_V {|grad w| - sqrt t}_+`` and
    ``sup_V {|grad w|^2 - t}_+`` must be at least the value for ``u`` minus
    ``slack``. Perturbations are zeroed outside the interior of V first.
    """
    V = np.asarray(V)
    if V.size == 0:
        raise ValueError("empty subdomain")
    uv = as_values(u, mesh)
    elems, inner = _subdomain_parts(mesh, V)
    mask = np.zeros(mesh.n_vertices)
    mask[inner] = 1.0
    g = element_gradients(mesh, uv)[elems]
    base = _truncated_sups(g, t)
    worst = [-np.inf, -np.inf]
    bad = []
    for k, pert in enumerate(perturbations):
        w = uv + mask * as_values(pert, mesh)
        gw = element_gradients(mesh, w)[elems]
        cand = _truncated_sups(gw, t)
        drops = [base[0] - cand[0], base[1] - cand[1]]
        worst = [max(worst[0], drops[0]), max(worst[1], drops[1])]
        if drops[0] > slack or drops[1] > slack:
            bad.append(k)
    return CheckReport(
        passed=not bad,
        max_violation=float(max(worst)) if perturbations else 0.0,
        violations=bad,
        checked=len(perturbations),
        details={
            "sup_plain": base[0],
            "sup_squared": base[1],
            "max_drop_plain": float(worst[0]),
            "max_drop_squared": float(worst[1]),
        },
    )
