"""Truncated p-energy densities, discrete energies and their derivatives.

The density is ``f(a) = {|a|^2 - t}_+^(p/2)`` with a single threshold ``t``.
Callers pick the convention: ``t = sigma`` for the plain energy and
``t = sigma**2`` for the Jensen-perturbed energies (see
:meth:`EnergyParams.plain` and :meth:`EnergyParams.jensen`).
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh, as_values, element_gradients

VARIANTS = ("plain", "jensen_upper", "jensen_lower")
FORMS = ("integral", "p_root", "sup")


class ConfigError(ValueError):
    """Invalid energy or solver configuration."""


@dataclass(frozen=True)
class EnergyParams:
    p: float
    t: float = 0.0
    variant: str = "plain"
    source_scale: float = 0.0
    form: str = "integral"

    def __post_init__(self):
        if not np.isfinite(self.p) or self.p <= 2:
            raise ConfigError(f"exponent p must be > 2, got {self.p}")
        if not np.isfinite(self.t) or self.t < 0:
            raise ConfigError(f"threshold t must be >= 0, got {self.t}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.form not in FORMS:
            raise ConfigError(f"unknown form {self.form!r}")
        if not np.isfinite(self.source_scale) or self.source_scale < 0:
            raise ConfigError(f"source_scale must be finite and >= 0, got {self.source_scale}")
        if self.variant == "plain" and self.source_scale != 0:
            raise ConfigError("plain variant takes no source term")

    @classmethod
    def plain(cls, p: float, sigma: float = 0.0, form: str = "integral") -> "EnergyParams":
        return cls(p=p, t=sigma, form=form)

    @classmethod
    def jensen(cls, p: float, sigma: float, variant: str = "jensen_upper") -> "EnergyParams":
        """Jensen-perturbed energy: threshold ``sigma**2``, source ``sigma**(p - 4)``."""
        if variant not in ("jensen_upper", "jensen_lower"):
            raise ConfigError(f"not a Jensen variant: {variant!r}")
        return cls(p=p, t=sigma**2, variant=variant, source_scale=source_scale(p, sigma))

    @property
    def sign(self) -> float:
        """Coefficient of the source integral in the energy."""
        return {"plain": 0.0, "jensen_upper": -1.0, "jensen_lower": 1.0}[self.variant]

    @property
    def sigma(self) -> float:
        return float(np.sqrt(self.t)) if self.variant != "plain" else self.t

    def with_p(self, p: float) -> "EnergyParams":
        if self.variant == "plain":
            return replace(self, p=p)
        return EnergyParams.jensen(p, self.sigma, self.variant)


def source_scale(p: float, sigma: float) -> float:
    """``sigma**(p - 4)``, refusing values that do not fit in a double."""
    if sigma < 0:
        raise ConfigError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return 0.0 if p != 4 else 1.0
    with np.errstate(over="ignore", under="ignore"):
        value = float(np.power(float(sigma), p - 4.0))
    if not np.isfinite(value) or value < np.finfo(float).tiny:
        raise ConfigError(
            f"sigma**(p-4) = {sigma}**{p - 4} is not representable as a normal double"
        )
    return value


def _excess(a: np.ndarray, t: float) -> np.ndarray:
    return np.maximum(np.einsum("...i,...i->...", a, a) - t, 0.0)


def density(a, params: EnergyParams):
    """Value and gradient of ``{|a|^2 - t}_+^(p/2)``; ``a`` has trailing axis 2."""
    a = np.asarray(a, dtype=float)
    s = _excess(a, params.t)
    p = params.p
    with np.errstate(over="ignore", invalid="ignore"):
        value = s ** (p / 2)
        scale = np.where(s > 0, p * s ** (p / 2 - 1), 0.0)
        grad = np.where(a == 0, 0.0, scale[..., None] * a)
    return value, grad


def flux(a, params: EnergyParams) -> np.ndarray:
    """``{|a|^2 - t}_+^(p/2 - 1) a``, the density gradient divided by p."""
    a = np.asarray(a, dtype=float)
    s = _excess(a, params.t)
    with np.errstate(over="ignore", invalid="ignore"):
        scale = np.where(s > 0, s ** (params.p / 2 - 1), 0.0)
        return np.where(a == 0, 0.0, scale[..., None] * a)


def density_hessian(a, params: EnergyParams, floor: float = 1e-12) -> np.ndarray:
    """(…, 2, 2) Hessian of the density divided by p.

    For p < 4 the second term is singular at the truncation ring; the excess
    is floored at ``floor * max(1, t)`` there so the matrix stays finite.
    """
    a = np.asarray(a, dtype=float)
    s = _excess(a, params.t)
    p = params.p
    pos = s > 0
    s_cap = np.maximum(s, floor * max(1.0, params.t))
    with np.errstate(over="ignore"):
        c1 = np.where(pos, s_cap ** (p / 2 - 1), 0.0)
        c2 = np.where(pos, (p - 2) * s_cap ** (p / 2 - 2), 0.0)
    eye = np.eye(2)
    return c1[..., None, None] * eye + c2[..., None, None] * a[..., :, None] * a[..., None, :]


def _p_root(w: np.ndarray, areas: np.ndarray, p: float) -> float:
    """``(sum areas * w**p)**(1/p)`` without overflow, ``w >= 0``."""
    top = float(np.max(w, initial=0.0))
    if top == 0.0:
        return 0.0
    return top * float(np.sum(areas * (w / top) ** p)) ** (1.0 / p)


def total_energy(mesh: Mesh, field, params: EnergyParams) -> float:
    """Discrete energy of the P1 interpolant, exact per element.

    ``form="integral"`` gives the energy itself (for Jensen variants the
    gradient term carries a factor 1/p and the source integral uses lumped
    vertex areas). ``p_root`` and ``sup`` give the norms of
    ``{|grad u|^2 - t}_+^(1/2)`` and ignore any source term.
    """
    u = as_values(field, mesh)
    g = element_gradients(mesh, u)
    if params.form == "sup":
        return float(np.sqrt(np.max(_excess(g, params.t), initial=0.0)))
    if params.form == "p_root":
        return _p_root(np.sqrt(_excess(g, params.t)), mesh.areas, params.p)
    value, _ = density(g, params)
    with np.errstate(over="ignore", invalid="ignore"):
        e = float(np.sum(mesh.areas * value))
    if params.variant == "plain":
        return e
    return e / params.p + params.sign * params.source_scale * float(np.dot(mesh.lumped_areas, u))


def energy_gradient(mesh: Mesh, field, params: EnergyParams) -> np.ndarray:
    """Derivative of the integral-form energy with respect to every vertex value.

    Boundary entries are included; solvers mask them out.
    """
    u = as_values(field, mesh)
    g = element_gradients(mesh, u)
    q = flux(g, params) * mesh.areas[:, None]
    dx, dy = mesh.grad_ops
    with np.errstate(over="ignore", invalid="ignore"):
        out = dx.T @ q[:, 0] + dy.T @ q[:, 1]
    if params.variant == "plain":
        return params.p * out
    return out + params.sign * params.source_scale * mesh.lumped_areas


def scaled_objective(mesh: Mesh, u: np.ndarray, params: EnergyParams):
    """Objective minimized by the solver and its gradient.

    The plain energy is divided by p; the Jensen energies already carry the
    1/p factor. Returns ``(value, gradient, reported_energy)``.
    """
    g = element_gradients(mesh, u)
    s = _excess(g, params.t)
    p = params.p
    with np.errstate(over="ignore", invalid="ignore"):
        e = float(np.sum(mesh.areas * s ** (p / 2)))
        scale = np.where(s > 0, s ** (p / 2 - 1), 0.0) * mesh.areas
        dx, dy = mesh.grad_ops
        grad = dx.T @ (scale * g[:, 0]) + dy.T @ (scale * g[:, 1])
        value = e / p
    if params.variant == "plain":
        return value, grad, e
    value = value + params.sign * params.source_scale * float(np.dot(mesh.lumped_areas, u))
    grad = grad + params.sign * params.source_scale * mesh.lumped_areas
    return value, grad, value


def residual_scale(mesh: Mesh, u: np.ndarray, params: EnergyParams) -> np.ndarray:
    """Per-vertex sum of absolute term magnitudes in the gradient equations.

    Same terms as the :func:`scaled_objective` gradient, summed in absolute
    value: the size against which a cancelled residual entry is judged.
    """
    g = element_gradients(mesh, u)
    with np.errstate(over="ignore", invalid="ignore"):
        q = np.abs(flux(g, params)) * mesh.areas[:, None]
        ax, ay = mesh.abs_grad_ops
        return ax.T @ q[:, 0] + ay.T @ q[:, 1] + params.source_scale * mesh.lumped_areas


def scaled_hessian(mesh: Mesh, u: np.ndarray, params: EnergyParams) -> sp.csr_matrix:
    """Sparse Hessian of :func:`scaled_objective` (the source term is linear)."""
    g = element_gradients(mesh, u)
    hd = density_hessian(g, params) * mesh.areas[:, None, None]
    dx, dy = mesh.grad_ops
    d = sp.diags
    H = (
        dx.T @ d(hd[:, 0, 0]) @ dx
        + dx.T @ d(hd[:, 0, 1]) @ dy
        + dy.T @ d(hd[:, 1, 0]) @ dx
        + dy.T @ d(hd[:, 1, 1]) @ dy
    )
    return H.tocsr()


def phi_ab(a, b, params: EnergyParams):
    """Monotonicity pairing ``<F(a) - F(b), a - b>`` with ``F(a) = {|a|^2-t}_+^(p/2-1) a``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    diff = flux(a, params) - flux(b, params)
    out = np.einsum("...i,...i->...", diff, a - b)
    return float(out) if out.ndim == 0 else out


def convexity_gap(a, b, params: EnergyParams):
    """``f(a) - f(b) - <grad f(b), a - b>``; nonnegative since f is convex."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    fa, _ = density(a, params)
    fb, gb = density(b, params)
    out = fa - fb - np.einsum("...i,...i->...", gb, a - b)
    return float(out) if out.ndim == 0 else out
