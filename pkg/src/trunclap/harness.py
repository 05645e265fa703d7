"""Parameter sweeps over (p, sigma), limit-diagram and rate checks, table export.

A sweep solves every ``(p, sigma, variant)`` cell. Within one sigma column the
exponents are visited in increasing order, each solve warm-started from the
previous one; columns are independent and may run on worker threads.

For the limit diagram the corner ``(p_max, sigma_min)`` is reached a second
way: along the ``p_max`` row, starting from ``(p_max, sigma_max)`` and
continuing in decreasing sigma. The two corner fields are compared.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .energy import VARIANTS, ConfigError, EnergyParams, total_energy
from .mesh import Mesh, ScalarField, as_values, build_mesh, element_gradients, geometry_stats
from .solver import SolveOptions, SolveReport, make_params, solve_dirichlet

CSV_COLUMNS = ("p", "sigma", "variant", "energy", "p_root", "sup", "residual", "dead_core_fraction", "converged")


class HarnessError(ValueError):
    """Malformed sweep table or insufficient data for a harness check."""


# ---------------------------------------------------------------- data catalog

def _affine(a=3.0, b=-2.0, c=0.0):
    return lambda x, y: a * x + b * y + c


def _cone(x0=0.0, y0=0.0, scale=1.0):
    return lambda x, y: scale * np.hypot(x - x0, y - y0)


def _aronsson(scale=1.0, x0=0.0, y0=0.0):
    return lambda x, y: scale * (np.abs(x - x0) ** (4 / 3) - np.abs(y - y0) ** (4 / 3))


def _sinusoid(amp=1.0, kx=np.pi, ky=np.pi, phase=0.0):
    return lambda x, y: amp * np.sin(kx * x + phase) * np.cos(ky * y)


CATALOG = {
    "affine": _affine,
    "cone": _cone,
    "aronsson": _aronsson,
    "sinusoid": _sinusoid,
}


def boundary_function(name: str, params: dict | None = None):
    """Vectorized ``f(x, y)`` for a catalog entry.

    ``affine``: a*x + b*y + c. ``cone``: scale*|(x, y) - (x0, y0)|.
    ``aronsson``: scale*(|x - x0|^(4/3) - |y - y0|^(4/3)), infinity-harmonic.
    ``sinusoid``: amp*sin(kx*x + phase)*cos(ky*y).
    """
    if name not in CATALOG:
        raise ConfigError(f"unknown boundary data {name!r}; choose from {sorted(CATALOG)}")
    try:
        return CATALOG[name](**(params or {}))
    except TypeError as exc:
        raise ConfigError(f"bad parameters for {name!r}: {exc}") from None


# ---------------------------------------------------------------- configuration

@dataclass(frozen=True)
class SweepConfig:
    nx: int = 32
    ny: int = 32
    rect: tuple = (0.0, 0.0, 1.0, 1.0)
    data: str = "affine"
    data_params: dict = field(default_factory=dict)
    p_list: tuple = (8.0,)
    sigma_list: tuple = (0.0,)
    variants: tuple = ("plain",)
    solver: SolveOptions = field(default_factory=SolveOptions)
    seed: int = 0
    init_noise: float = 0.0
    diagram_tol: float = 1e-6

    def __post_init__(self):
        object.__setattr__(self, "p_list", tuple(float(p) for p in self.p_list))
        object.__setattr__(self, "sigma_list", tuple(float(s) for s in self.sigma_list))
        object.__setattr__(self, "variants", tuple(self.variants))
        object.__setattr__(self, "rect", tuple(float(v) for v in self.rect))
        if int(self.nx) != self.nx or int(self.ny) != self.ny or self.nx < 1 or self.ny < 1:
            raise ConfigError(f"invalid resolution nx={self.nx}, ny={self.ny}")
        if not self.p_list or not self.sigma_list or not self.variants:
            raise ConfigError("p_list, sigma_list and variants must be nonempty")
        if any(p <= 2 for p in self.p_list):
            raise ConfigError("every p must exceed 2")
        if any(b <= a for a, b in zip(self.p_list, self.p_list[1:])):
            raise ConfigError("p_list must be strictly increasing")
        if any(s < 0 for s in self.sigma_list):
            raise ConfigError("sigma entries must be >= 0")
        if any(b >= a for a, b in zip(self.sigma_list, self.sigma_list[1:])):
            raise ConfigError("sigma_list must be strictly decreasing")
        for v in self.variants:
            if v not in VARIANTS:
                raise ConfigError(f"unknown variant {v!r}")
        if self.init_noise < 0 or self.diagram_tol <= 0:
            raise ConfigError("init_noise must be >= 0 and diagram_tol > 0")
        boundary_function(self.data, self.data_params)

    def mesh(self) -> Mesh:
        return build_mesh(self.nx, self.ny, self.rect)

    def boundary(self, mesh: Mesh | None = None) -> ScalarField:
        mesh = mesh or self.mesh()
        return mesh.interpolate(boundary_function(self.data, self.data_params))


_SOLVER_KEYS = {
    "grad_tol": float,
    "max_iters": int,
    "memory": int,
    "armijo": float,
    "shrink": float,
    "max_backtracks": int,
    "continuation": lambda s: _parse_bool(s),
    "method": str,
}


def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {s!r}")


def _floats(s: str) -> tuple:
    return tuple(float(v) for v in s.replace(",", " ").split())


def _param_dict(s: str) -> dict:
    out = {}
    for item in filter(None, (i.strip() for i in s.split(","))):
        if "=" not in item:
            raise ConfigError(f"data.params entry {item!r} is not key=value")
        k, v = (x.strip() for x in item.split("=", 1))
        out[k] = float(v)
    return out


def parse_config(text: str) -> SweepConfig:
    """Parse the flat ``key = value`` format; ``#`` starts a comment.

    Keys: ``mesh.nx mesh.ny domain.x0 domain.y0 domain.x1 domain.y1 data.name
    data.params sweep.p_list sweep.sigma_list sweep.variants solver.<option>
    seed init.noise diagram.tol``.
    """
    kw: dict = {}
    rect = [0.0, 0.0, 1.0, 1.0]
    solver = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (x.strip() for x in line.split("=", 1))
        try:
            if key in ("mesh.nx", "mesh.ny"):
                kw[key[5:]] = int(value)
            elif key in ("domain.x0", "domain.y0", "domain.x1", "domain.y1"):
                rect[["domain.x0", "domain.y0", "domain.x1", "domain.y1"].index(key)] = float(value)
            elif key == "data.name":
                kw["data"] = value
            elif key == "data.params":
                kw["data_params"] = _param_dict(value)
            elif key == "sweep.p_list":
                kw["p_list"] = _floats(value)
            elif key == "sweep.sigma_list":
                kw["sigma_list"] = _floats(value)
            elif key == "sweep.variants":
                kw["variants"] = tuple(value.replace(",", " ").split())
            elif key.startswith("solver.") and key[7:] in _SOLVER_KEYS:
                solver[key[7:]] = _SOLVER_KEYS[key[7:]](value)
            elif key == "seed":
                kw["seed"] = int(value)
            elif key == "init.noise":
                kw["init_noise"] = float(value)
            elif key == "diagram.tol":
                kw["diagram_tol"] = float(value)
            else:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"line {lineno}: bad value for {key}: {value!r}") from None
    kw["rect"] = tuple(rect)
    kw["solver"] = SolveOptions(**solver)
    return SweepConfig(**kw)


def load_config(path) -> SweepConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def format_config(cfg: SweepConfig) -> str:
    """Inverse of :func:`parse_config` (up to comments and spacing)."""
    s = cfg.solver
    lines = [
        f"mesh.nx = {cfg.nx}",
        f"mesh.ny = {cfg.ny}",
        *(f"domain.{k} = {v!r}" for k, v in zip(("x0", "y0", "x1", "y1"), cfg.rect)),
        f"data.name = {cfg.data}",
        "data.params = " + ", ".join(f"{k}={v!r}" for k, v in cfg.data_params.items()),
        "sweep.p_list = " + ", ".join(repr(p) for p in cfg.p_list),
        "sweep.sigma_list = " + ", ".join(repr(x) for x in cfg.sigma_list),
        "sweep.variants = " + ", ".join(cfg.variants),
        *(f"solver.{k} = {getattr(s, k)!r}".replace("'", "") for k in _SOLVER_KEYS),
        f"seed = {cfg.seed}",
        f"init.noise = {cfg.init_noise!r}",
        f"diagram.tol = {cfg.diagram_tol!r}",
    ]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- sweep table

@dataclass(frozen=True)
class Cell:
    p: float
    sigma: float
    variant: str
    energy: float
    p_root: float
    sup: float
    residual: float
    dead_core_fraction: float
    converged: bool
    iterations: int
    field: str  # content hash into SweepTable.fields


def field_hash(values) -> str:
    v = np.ascontiguousarray(as_values(values), dtype="<f8")
    return hashlib.sha256(v.tobytes()).hexdigest()[:16]


@dataclass
class SweepTable:
    mesh: Mesh
    cells: dict = field(default_factory=dict)  # (p, sigma, variant) -> Cell
    fields: dict = field(default_factory=dict)  # hash -> ScalarField
    sigma_route: dict = field(default_factory=dict)  # (sigma, variant) -> Cell along the p_max row
    config: SweepConfig | None = None

    def store(self, values) -> str:
        key = field_hash(values)
        if key not in self.fields:
            self.fields[key] = values if isinstance(values, ScalarField) else ScalarField(self.mesh, values)
        return key

    def field_of(self, cell: Cell) -> ScalarField:
        return self.fields[cell.field]

    def keys(self) -> list:
        """Cells in canonical order: variant, then sigma decreasing, then p increasing."""
        order = {v: i for i, v in enumerate(VARIANTS)}
        return sorted(self.cells, key=lambda k: (order[k[2]], -k[1], k[0]))

    def ps(self, variant=None) -> list:
        return sorted({k[0] for k in self.cells if variant in (None, k[2])})

    def sigmas(self, variant=None) -> list:
        return sorted({k[1] for k in self.cells if variant in (None, k[2])}, reverse=True)

    def distance_matrix(self):
        """``(keys, D)`` with ``D[i, j]`` the vertex sup distance between cells i and j."""
        keys = self.keys()
        vals = [self.field_of(self.cells[k]).values for k in keys]
        n = len(keys)
        D = np.zeros((n, n))
        for i in range(n):
            for j in range(i + 1, n):
                D[i, j] = D[j, i] = float(np.max(np.abs(vals[i] - vals[j]), initial=0.0))
        return keys, D


def _cell(report: SolveReport, sigma: float, variant: str, table: SweepTable) -> Cell:
    u = report.solution
    p = report.params.p
    t = report.params.t
    return Cell(
        p=p,
        sigma=sigma,
        variant=variant,
        energy=report.energy,
        p_root=total_energy(u.mesh, u, EnergyParams(p, t, form="p_root")),
        sup=total_energy(u.mesh, u, EnergyParams(p, t, form="sup")),
        residual=report.optimality_residual,
        dead_core_fraction=report.dead_core_fraction,
        converged=report.converged,
        iterations=report.iterations,
        field=table.store(u),
    )


def _initial_guess(cfg: SweepConfig, mesh: Mesh, boundary: ScalarField, variant: str, sigma: float):
    """Transfinite blend, plus seeded interior noise when ``init_noise > 0``."""
    if cfg.init_noise == 0:
        return None
    from .solver import transfinite_init

    # one stream per column, independent of scheduling order
    key = (cfg.seed, VARIANTS.index(variant), int(round(sigma * 1e12)))
    rng = np.random.default_rng(list(key))
    u = transfinite_init(mesh, boundary)
    u[mesh.interior] += cfg.init_noise * rng.uniform(-1.0, 1.0, mesh.interior.size)
    return u


def _column(cfg, mesh, boundary, sigma, variant):
    start = _initial_guess(cfg, mesh, boundary, variant, sigma)
    out = []
    for p in cfg.p_list:
        rep = solve_dirichlet(mesh, boundary, make_params(p, sigma, variant), cfg.solver, initial=start)
        out.append(rep)
        if cfg.solver.continuation:
            start = rep.solution
    return out


def run_sweep(cfg: SweepConfig, jobs: int = 1) -> SweepTable:
    """Solve every cell; columns run on up to ``jobs`` threads.

    Results do not depend on ``jobs``: each column is a fixed sequential
    chain and the table is assembled in canonical order afterwards.
    Non-converged cells are kept and flagged.
    """
    if jobs < 1:
        raise ConfigError("jobs must be >= 1")
    mesh = cfg.mesh()
    boundary = cfg.boundary(mesh)
    columns = [(s, v) for v in cfg.variants for s in cfg.sigma_list]
    if jobs == 1:
        results = [_column(cfg, mesh, boundary, s, v) for s, v in columns]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(lambda c: _column(cfg, mesh, boundary, *c), columns))

    table = SweepTable(mesh=mesh, config=cfg)
    for (s, v), reps in zip(columns, results):
        for rep in reps:
            table.cells[(rep.params.p, s, v)] = _cell(rep, s, v, table)

    p_max = cfg.p_list[-1]
    for v in cfg.variants:
        first = table.cells[(p_max, cfg.sigma_list[0], v)]
        table.sigma_route[(cfg.sigma_list[0], v)] = first
        start = table.field_of(first)
        for s in cfg.sigma_list[1:]:
            rep = solve_dirichlet(mesh, boundary, make_params(p_max, s, v), cfg.solver, initial=start)
            table.sigma_route[(s, v)] = _cell(rep, s, v, table)
            start = rep.solution
    return table


# ---------------------------------------------------------------- checks

@dataclass(frozen=True)
class DiagramReport:
    gap: float
    passed: bool
    tol: float
    p_max: float
    sigma_min: float
    variant: str

    def to_dict(self) -> dict:
        return asdict(self)


def diagram_commutation(table: SweepTable, tol: float | None = None, variant: str | None = None) -> DiagramReport:
    """Sup distance between the corner field reached by the two limit orders.

    Route one: p-continuation down the ``sigma_min`` column. Route two:
    sigma-continuation along the ``p_max`` row. The check speaks for the
    computed branch only.
    """
    if not table.cells:
        raise HarnessError("empty table")
    variant = variant or table.keys()[0][2]
    ps, sigmas = table.ps(variant), table.sigmas(variant)
    if not ps:
        raise HarnessError(f"no cells for variant {variant!r}")
    p_max, s_min = ps[-1], sigmas[-1]
    if tol is None:
        tol = table.config.diagram_tol if table.config else 1e-6
    via_p = table.cells.get((p_max, s_min, variant))
    via_sigma = table.sigma_route.get((s_min, variant))
    if via_sigma is None and len(sigmas) == 1:
        via_sigma = via_p
    if via_p is None or via_sigma is None:
        raise HarnessError(f"missing corner (p={p_max}, sigma={s_min}, {variant})")
    a, b = table.field_of(via_p).values, table.field_of(via_sigma).values
    gap = float(np.max(np.abs(a - b), initial=0.0))
    return DiagramReport(gap, gap <= tol, float(tol), p_max, s_min, variant)


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    r2: float
    c_prime: float
    n_points: int

    def to_dict(self) -> dict:
        return asdict(self)


def stability_rate_fit(sigmas, gaps, diameter: float = 1.0) -> RateFit:
    """Least-squares line through ``(log sigma, log gap)``.

    ``c_prime = exp(intercept) / diameter`` estimates the constant in
    ``gap <= sigma * C' * diam``. Nonpositive pairs are dropped with a warning.
    """
    s = np.asarray(sigmas, dtype=float)
    g = np.asarray(gaps, dtype=float)
    if s.shape != g.shape:
        raise HarnessError("sigmas and gaps differ in length")
    keep = (s > 0) & (g > 0)
    if not keep.all():
        warnings.warn(f"dropping {int((~keep).sum())} nonpositive (sigma, gap) pairs", RuntimeWarning, stacklevel=2)
    s, g = s[keep], g[keep]
    if s.size < 3:
        raise HarnessError(f"need at least 3 positive points, have {s.size}")
    x, y = np.log(s), np.log(g)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return RateFit(float(slope), float(intercept), r2, math.exp(intercept) / diameter, int(s.size))


def fatou_monotone(mesh: Mesh, field, sigmas, tol: float = 0.0) -> bool:
    """``{|grad u|^2 - sigma}_+`` is elementwise nondecreasing as sigma decreases."""
    g = element_gradients(mesh, field)
    a = np.einsum("ij,ij->i", g, g)
    prev = None
    for s in sorted(sigmas, reverse=True):
        cur = np.maximum(a - s, 0.0)
        if prev is not None and np.any(cur < prev - tol):
            return False
        prev = cur
    return True


@dataclass
class GammaReport:
    passed: bool
    liminf_ok: bool
    limsup_ok: bool
    sigma_monotone_ok: bool
    p_root: list
    limit_sup: float
    limit_p_root: float
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def gamma_check(mesh: Mesh, fields, ps, limit_field, t: float, rtol: float = 0.02, sigmas=None) -> GammaReport:
    """Energy-value surrogates of the Gamma-limit inequalities as p grows.

    liminf: the smallest p-root energy over the last half of the sequence is
    at least the sup energy of the limit, minus ``rtol`` relative.
    limsup: the constant recovery sequence at the largest p has p-root
    energy at most ``|Omega|^(1/p)`` times the sup energy, plus ``rtol``.
    sigma family: the truncated integrand of the limit grows as sigma
    decreases, and so do its p-root energies (Fatou direction).
    """
    fields = list(fields)
    ps = [float(p) for p in ps]
    if not fields or len(fields) != len(ps):
        raise HarnessError("need a nonempty field sequence with one p per field")
    sup = total_energy(mesh, limit_field, EnergyParams(ps[-1], t, form="sup"))
    roots = [total_energy(mesh, u, EnergyParams(p, t, form="p_root")) for u, p in zip(fields, ps)]
    slack = rtol * max(sup, np.finfo(float).tiny)
    tail = roots[len(roots) // 2:]
    liminf_ok = min(tail) >= sup - slack
    area = geometry_stats(mesh, limit_field)["area"]
    lim_root = total_energy(mesh, limit_field, EnergyParams(ps[-1], t, form="p_root"))
    limsup_ok = lim_root <= area ** (1.0 / ps[-1]) * sup + slack

    if sigmas is None:
        sigmas = [t * f for f in (1.0, 0.5, 0.25, 0.0)]
    sigmas = sorted(set(float(s) for s in sigmas), reverse=True)
    mono = fatou_monotone(mesh, limit_field, sigmas)
    sig_roots = [total_energy(mesh, limit_field, EnergyParams(ps[-1], s, form="p_root")) for s in sigmas]
    mono = mono and all(b >= a for a, b in zip(sig_roots, sig_roots[1:]))
    return GammaReport(
        passed=bool(liminf_ok and limsup_ok and mono),
        liminf_ok=bool(liminf_ok),
        limsup_ok=bool(limsup_ok),
        sigma_monotone_ok=bool(mono),
        p_root=roots,
        limit_sup=sup,
        limit_p_root=lim_root,
        details={"sigmas": sigmas, "sigma_p_root": sig_roots, "area": area},
    )


# ---------------------------------------------------------------- export

def _num(x) -> str:
    return repr(float(x))


def table_csv(table: SweepTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for k in table.keys():
        c = table.cells[k]
        w.writerow([
            _num(c.p), _num(c.sigma), c.variant, _num(c.energy), _num(c.p_root), _num(c.sup),
            _num(c.residual), _num(c.dead_core_fraction), "true" if c.converged else "false",
        ])
    return buf.getvalue()


def table_to_dict(table: SweepTable) -> dict:
    m = table.mesh
    return {
        "mesh": {"nx": m.nx, "ny": m.ny, "rect": list(m.rect)},
        "config": format_config(table.config) if table.config else None,
        "cells": [asdict(table.cells[k]) for k in table.keys()],
        "sigma_route": [asdict(c) for _, c in sorted(table.sigma_route.items(), key=lambda kv: (kv[0][1], -kv[0][0]))],
        "fields": {h: [float(v) for v in f.values] for h, f in sorted(table.fields.items())},
    }


def table_from_dict(d: dict) -> SweepTable:
    m = d["mesh"]
    mesh = build_mesh(m["nx"], m["ny"], tuple(m["rect"]))
    cfg = parse_config(d["config"]) if d.get("config") else None
    table = SweepTable(mesh=mesh, config=cfg)
    for h, vals in d["fields"].items():
        table.fields[h] = ScalarField(mesh, np.array(vals, dtype=float))
    for c in d["cells"]:
        cell = Cell(**c)
        table.cells[(cell.p, cell.sigma, cell.variant)] = cell
    for c in d["sigma_route"]:
        cell = Cell(**c)
        table.sigma_route[(cell.sigma, cell.variant)] = cell
    return table


def export(obj, path, fmt: str | None = None) -> None:
    """Write a table (csv or json) or any report with ``to_dict`` (json)."""
    path = Path(path)
    fmt = fmt or path.suffix.lstrip(".").lower()
    if fmt not in ("csv", "json"):
        raise ConfigError(f"unknown export format {fmt!r}")
    if fmt == "csv":
        if not isinstance(obj, SweepTable):
            raise ConfigError("csv export needs a SweepTable")
        text = table_csv(obj)
    else:
        payload = table_to_dict(obj) if isinstance(obj, SweepTable) else _jsonable(obj)
        text = json.dumps(payload, indent=1, sort_keys=True) + "\n"
    path.write_text(text)


def import_json(path) -> SweepTable:
    return table_from_dict(json.loads(Path(path).read_text()))


def _jsonable(obj):
    if hasattr(obj, "to_dict"):
        obj = obj.to_dict()
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def with_overrides(cfg: SweepConfig, **kw) -> SweepConfig:
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})
