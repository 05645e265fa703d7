"""Dirichlet minimization of the discrete truncated energies.

Two descent methods share one backtracking (Armijo) line search:

``newton``
    damped Newton steps on the interior unknowns, regularized with an
    adaptive multiple of the stiffness matrix (Levenberg-Marquardt style) so
    that dead-core rows, where the density Hessian vanishes, stay solvable.
``lbfgs``
    limited-memory BFGS with the usual two-loop recursion.

Boundary values are eliminated: only interior vertices are unknowns.
"""
from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .energy import ConfigError, EnergyParams, residual_scale, scaled_hessian, scaled_objective
from .mesh import Mesh, ScalarField, as_values, element_gradients

log = logging.getLogger(__name__)

_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class SolveOptions:
    grad_tol: float = 1e-8
    max_iters: int = 5000
    memory: int = 10
    armijo: float = 1e-4
    shrink: float = 0.5
    max_backtracks: int = 60
    continuation: bool = True
    method: str = "newton"

    def __post_init__(self):
        if not self.grad_tol > 0:
            raise ConfigError("grad_tol must be positive")
        if self.max_iters < 0:
            raise ConfigError("max_iters must be >= 0")
        if self.memory < 1:
            raise ConfigError("memory must be >= 1")
        if not 0 < self.armijo < 1 or not 0 < self.shrink < 1:
            raise ConfigError("line search constants must lie in (0, 1)")
        if self.method not in ("newton", "lbfgs"):
            raise ConfigError(f"unknown method {self.method!r}")


@dataclass
class SolveReport:
    solution: ScalarField
    energy: float
    optimality_residual: float
    iterations: int
    converged: bool
    dead_core_fraction: float
    params: EnergyParams
    energy_trace: list = field(default_factory=list, repr=False)


def transfinite_init(mesh: Mesh, boundary_data) -> np.ndarray:
    """Coons-patch blend of the four boundary edges.

    Reproduces affine (indeed bilinear) data exactly.
    """
    b = as_values(boundary_data, mesh).reshape(mesh.shape)
    ny, nx = mesh.ny, mesh.nx
    xi = np.linspace(0.0, 1.0, nx + 1)[None, :]
    eta = np.linspace(0.0, 1.0, ny + 1)[:, None]
    left, right = b[:, :1], b[:, -1:]
    bottom, top = b[:1, :], b[-1:, :]
    u = (
        (1 - xi) * left
        + xi * right
        + (1 - eta) * bottom
        + eta * top
        - (1 - xi) * (1 - eta) * b[0, 0]
        - xi * (1 - eta) * b[0, nx]
        - (1 - xi) * eta * b[ny, 0]
        - xi * eta * b[ny, nx]
    )
    u = u.reshape(-1)
    u[mesh.boundary_mask] = b.reshape(-1)[mesh.boundary_mask]
    return u


def dead_core_fraction(mesh: Mesh, u, t: float) -> float:
    g = element_gradients(mesh, u)
    return float(np.mean(np.einsum("ij,ij->i", g, g) <= t))


def optimality_residual(mesh: Mesh, field, params: EnergyParams) -> float:
    """Sup norm of the interior gradient of the solver objective.

    This is the discrete weak-form residual tested against every interior
    hat function.
    """
    u = as_values(field, mesh)
    _, g, _ = scaled_objective(mesh, u, params)
    gi = g[mesh.interior]
    return float(np.max(np.abs(gi), initial=0.0))


class _Problem:
    def __init__(self, mesh, params, u0):
        self.mesh = mesh
        self.params = params
        self.I = mesh.interior
        self.u = u0.copy()
        self.evals = 0

    def evaluate(self, xi):
        u = self.u.copy()
        u[self.I] = xi
        self.evals += 1
        J, g, E = scaled_objective(self.mesh, u, self.params)
        return J, g[self.I], E

    def full(self, xi):
        u = self.u.copy()
        u[self.I] = xi
        return u


def _line_search(prob, x, J, g, d, opts, res):
    """Backtracking on ``J``; returns ``(alpha, x, J, g, E)`` or None.

    When the decrease falls below rounding of ``J`` a step is still taken if
    it lowers the gradient sup norm.
    """
    slope = float(g @ d)
    alpha = 1.0
    fuzz = 16 * _EPS * max(abs(J), np.finfo(float).tiny)
    for _ in range(opts.max_backtracks):
        xn = x + alpha * d
        Jn, gn, En = prob.evaluate(xn)
        if np.isfinite(Jn) and np.all(np.isfinite(gn)):
            if Jn <= J + opts.armijo * alpha * slope:
                return alpha, xn, Jn, gn, En
            if abs(Jn - J) <= fuzz and np.max(np.abs(gn), initial=0.0) < res:
                return alpha, xn, Jn, gn, En
        alpha *= opts.shrink
    return None


def solve_dirichlet(
    mesh: Mesh,
    boundary_data,
    params: EnergyParams,
    opts: SolveOptions | None = None,
    initial=None,
) -> SolveReport:
    """Minimize the energy over fields equal to ``boundary_data`` on the boundary.

    ``initial`` overrides the interior of the starting guess (default: the
    transfinite blend of the boundary data). Non-convergence is reported via
    ``converged=False``, never raised.
    """
    opts = opts or SolveOptions()
    if not isinstance(params, EnergyParams):
        raise ConfigError("params must be EnergyParams")
    if params.form != "integral":
        params = EnergyParams(params.p, params.t, params.variant, params.source_scale)
    b = as_values(boundary_data, mesh)
    if not np.all(np.isfinite(b[mesh.boundary_mask])):
        raise ConfigError("boundary data must be finite on boundary vertices")
    u0 = transfinite_init(mesh, b)
    if initial is not None:
        u0[mesh.interior] = as_values(initial, mesh)[mesh.interior]

    prob = _Problem(mesh, params, u0)
    x = u0[prob.I].copy()
    J, g, E = prob.evaluate(x)
    trace = [E]
    stepper = _newton if opts.method == "newton" else _lbfgs
    x, J, g, E, iters, converged = stepper(prob, x, J, g, E, opts, trace)

    u = prob.full(x)
    res = float(np.max(np.abs(g), initial=0.0))
    report = SolveReport(
        solution=ScalarField(mesh, u),
        energy=E,
        optimality_residual=res,
        iterations=iters,
        converged=converged,
        dead_core_fraction=dead_core_fraction(mesh, u, params.t),
        params=params,
        energy_trace=trace,
    )
    if not converged:
        log.warning(
            "solve p=%g t=%g %s stopped after %d iterations, residual %.3e",
            params.p, params.t, params.variant, iters, res,
        )
    return report


def _stop(prob, x, g, E, opts):
    """Residual and the stopping verdict.

    Requires ``res <= grad_tol * max(1, |E|)``. That bound alone is blind to
    energies far below 1 and, at large p, to vertices whose flux is orders of
    magnitude below the maximum, so every interior entry must also satisfy
    ``|g_i| <= grad_tol * scale_i`` with ``scale_i`` the absolute size of the
    terms in that vertex equation.
    """
    res = float(np.max(np.abs(g), initial=0.0))
    if res > opts.grad_tol * max(1.0, abs(E)):
        return res, False
    scale = residual_scale(prob.mesh, prob.full(x), prob.params)[prob.I]
    return res, bool(np.all(np.abs(g) <= opts.grad_tol * scale))


def _floor_ok(prob, x, g, E, opts):
    """Weaker verdict used once progress has stalled at rounding level.

    Vertices bordering the dead core carry a single uncancelled term that only
    decays geometrically; there the residual is judged against the largest
    equation scale instead of the local one.
    """
    res = float(np.max(np.abs(g), initial=0.0))
    if res > opts.grad_tol * max(1.0, abs(E)):
        return False
    scale = residual_scale(prob.mesh, prob.full(x), prob.params)[prob.I]
    return res <= opts.grad_tol * float(np.max(scale, initial=0.0))


def _newton(prob, x, J, g, E, opts, trace):
    mesh = prob.mesh
    I = prob.I
    K = mesh.stiffness[I][:, I].tocsc()
    k_diag = float(K.diagonal().mean()) if I.size else 1.0
    mu = 1e-8
    it = stalls = 0
    while True:
        res, done = _stop(prob, x, g, E, opts)
        if done or I.size == 0:
            return x, J, g, E, it, True
        if it >= opts.max_iters:
            return x, J, g, E, it, False
        H = scaled_hessian(mesh, prob.full(x), prob.params)[I][:, I].tocsc()
        scale = float(H.diagonal().mean()) / k_diag
        if not np.isfinite(scale):
            return x, J, g, E, it, False
        if scale <= 0:
            scale = 1.0
        step = None
        while step is None and mu <= 1e12:
            A = H + (mu * scale) * K
            # symmetric Jacobi scaling: row sizes can span many decades at large p
            w = 1.0 / np.sqrt(np.maximum(A.diagonal(), np.finfo(float).tiny))
            W = sp.diags(w)
            d = w * spla.spsolve((W @ A @ W).tocsc(), -w * g)
            if np.all(np.isfinite(d)) and g @ d < 0:
                step = _line_search(prob, x, J, g, d, opts, res)
            if step is None:
                mu *= 100.0
        if step is None:
            return x, J, g, E, it, False
        J_old = J
        alpha, x, J, g, E = step
        mu = max(mu * 0.1, 1e-12) if alpha == 1.0 else min(mu * 10.0, 1e12)
        trace.append(E)
        it += 1
        # rounding-level steps that barely move the residual: tolerance unreachable
        if abs(J - J_old) <= 16 * _EPS * abs(J_old) and np.max(np.abs(g), initial=0.0) > 0.5 * res:
            stalls += 1
            if stalls >= 5:
                return x, J, g, E, it, _floor_ok(prob, x, g, E, opts)
        else:
            stalls = 0


def _lbfgs(prob, x, J, g, E, opts, trace):
    pairs = deque(maxlen=opts.memory)
    it = 0
    while True:
        res, done = _stop(prob, x, g, E, opts)
        if done or x.size == 0:
            return x, J, g, E, it, True
        if it >= opts.max_iters:
            return x, J, g, E, it, False
        q = -g.copy()
        alphas = []
        for s, y, rho in reversed(pairs):
            a = rho * (s @ q)
            q -= a * y
            alphas.append(a)
        if pairs:
            s, y, _ = pairs[-1]
            q *= (s @ y) / (y @ y)
        else:
            q /= max(np.max(np.abs(g)), 1e-300) * max(1.0, x.size) ** 0.5
        for (s, y, rho), a in zip(pairs, reversed(alphas)):
            b = rho * (y @ q)
            q += (a - b) * s
        d = q
        if not g @ d < 0:
            pairs.clear()
            d = -g / max(np.max(np.abs(g)), 1e-300)
        step = _line_search(prob, x, J, g, d, opts, res)
        if step is None:
            if pairs:
                pairs.clear()
                continue
            return x, J, g, E, it, False
        _, xn, Jn, gn, En = step
        s, y = xn - x, gn - g
        sy = float(s @ y)
        if sy > 1e-12 * float(np.sqrt((s @ s) * (y @ y))):
            pairs.append((s, y, 1.0 / sy))
        x, J, g, E = xn, Jn, gn, En
        trace.append(E)
        it += 1


def continuation_solve(
    mesh: Mesh,
    boundary_data,
    p_schedule,
    sigma: float,
    variant: str = "plain",
    opts: SolveOptions | None = None,
    initial=None,
) -> list[SolveReport]:
    """Solve along an increasing list of exponents at fixed ``sigma``.

    Each solve starts from the previous solution when ``opts.continuation``
    is set. ``sigma`` is the threshold itself for the plain variant and is
    squared for the Jensen variants.
    """
    opts = opts or SolveOptions()
    ps = [float(p) for p in p_schedule]
    if any(b <= a for a, b in zip(ps, ps[1:])):
        raise ConfigError(f"p schedule must be strictly increasing: {ps}")
    reports = []
    start = initial
    for p in ps:
        params = make_params(p, sigma, variant)
        rep = solve_dirichlet(mesh, boundary_data, params, opts, initial=start)
        reports.append(rep)
        if opts.continuation:
            start = rep.solution
    return reports


def make_params(p: float, sigma: float, variant: str = "plain") -> EnergyParams:
    if variant == "plain":
        return EnergyParams.plain(p, sigma)
    return EnergyParams.jensen(p, sigma, variant)


def doubling_schedule(p_start: float, p_end: float) -> list[float]:
    """``p_start, 2 p_start, ...`` capped by and ending at ``p_end``."""
    out = [float(p_start)]
    while out[-1] * 2 < p_end:
        out.append(out[-1] * 2)
    if out[-1] < p_end:
        out.append(float(p_end))
    return out
