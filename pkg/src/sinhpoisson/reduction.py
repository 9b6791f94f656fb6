"""Reduced energy of a spike configuration and its maximization over the admissible set."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from .assembly import EXP_CLAMP, ApproxField
from .geometry import DomainSpec, Mesh, regular_polygon
from .green import AnisotropyField, GreenError, GreenTable
from .profiles import SpikeConfig, check_admissible, hardy_henon

log = logging.getLogger(__name__)


@dataclass
class ReducedEnergyReport:
    F: float
    breakdown: dict
    F_unsigned: float
    J_quadrature: float | None = None

    @property
    def gap(self) -> float | None:
        if self.J_quadrature is None:
            return None
        return self.F - self.J_quadrature


def energy_quadrature(field_: ApproxField) -> float:
    """J(U) = 1/2 int a (|grad U|^2 + U^2) - eps^2 int a |x-q|^(2a) (e^U + e^-U) on the refined rule."""
    cfg = field_.cfg
    rule = field_.rules[0]
    x = rule.points
    U, gU = field_.U_rule()
    ax = field_.a(x)
    dirichlet = 0.5 * rule.integrate(ax * (np.einsum("kd,kd->k", gU, gU) + U * U))
    w = hardy_henon(x, cfg)
    lo2 = 2.0 * math.log(cfg.eps)
    clamped = np.abs(U + lo2) > EXP_CLAMP
    if clamped.any():
        log.warning("exponent clamped at %d quadrature points", int(clamped.sum()))
    e = np.exp(np.clip(U + lo2, -EXP_CLAMP, EXP_CLAMP))
    if cfg.mode == "sinh":
        e = e + np.exp(np.clip(-U + lo2, -EXP_CLAMP, EXP_CLAMP))
    with np.errstate(invalid="ignore"):
        f = ax * w * e
    nonlin = rule.integrate(np.where(np.isfinite(f), f, 0.0))
    return dirichlet - nonlin


def energy_dirichlet_part(field_: ApproxField) -> float:
    rule = field_.rules[0]
    U, gU = field_.U_rule()
    return 0.5 * rule.integrate(field_.a(rule.points) * (np.einsum("kd,kd->k", gU, gU) + U * U))


def energy_mass_part(field_: ApproxField) -> float:
    """eps^2 int a |x-q|^(2a) (e^U + e^-U)."""
    return energy_dirichlet_part(field_) - energy_quadrature(field_)


def _green_values(cfg: SpikeConfig, greens: GreenTable):
    ids = [cfg.source_id(i) for i in range(cfg.m + 1)]
    for sid in ids:
        if sid not in greens:
            raise KeyError(f"Green table has no source {sid!r}")
    n = cfg.m + 1
    Gm = np.zeros((n, n))
    for j in range(n):
        Gm[j, j] = greens.robin(ids[j])
        for i in range(n):
            if i != j:
                Gm[j, i] = greens.G(ids[j], ids[i])
    return Gm


def energy_expansion(cfg: SpikeConfig, greens: GreenTable, a: AnisotropyField | None = None) -> ReducedEnergyReport:
    """Closed-form reduced energy with sign products kept (F) and dropped (F_unsigned).

    The same expression covers interior and boundary spikes through the mass
    constants c_i (8 pi or 4 pi, times 1 + alpha for q).
    """
    a = a or greens.a
    Gm = _green_values(cfg, greens)
    n = cfg.m + 1
    b = cfg.b
    c = np.array([cfg.mass_constant(i) for i in range(n)])
    pts = [cfg.qv] + [cfg.xi[i] for i in range(cfg.m)]
    av = np.array([float(a(p)) for p in pts])
    le = math.log(cfg.eps)
    a1 = 1 + cfg.alpha
    breakdown = {}
    total = 0.0
    total_unsigned = 0.0
    for k in range(n):
        const = 4 * le + 4 - 2 * math.log(8 * a1**2 if k == 0 else 8.0)
        if k > 0:
            const += 4 * cfg.alpha * math.log(float(np.linalg.norm(pts[k] - cfg.qv)))
        self_term = -0.5 * c[k] * av[k] * (const + c[k] * Gm[k, k])
        inter = sum(b[k] * b[i] * c[i] * Gm[k, i] for i in range(n) if i != k)
        inter_u = sum(c[i] * Gm[k, i] for i in range(n) if i != k)
        name = "q" if k == 0 else f"xi{k}"
        breakdown[f"{name}.block"] = self_term
        breakdown[f"{name}.interaction"] = -0.5 * c[k] * av[k] * inter
        total += self_term - 0.5 * c[k] * av[k] * inter
        total_unsigned += self_term - 0.5 * c[k] * av[k] * inter_u
    return ReducedEnergyReport(F=float(math.fsum(breakdown.values())), breakdown=breakdown, F_unsigned=total_unsigned)


def leading_coefficient(alpha: float, m: int, a_q: float) -> float:
    return 16 * math.pi * a_q * (1 + alpha + m)


# ---------------------------------------------------------------- optimizer


@dataclass
class OptimizerTrace:
    iterates: list = field(default_factory=list)  # (xi array, F, min relative margin)
    status: str = "max-iters"
    margins: dict = field(default_factory=dict)
    threshold: float = 0.0
    d: float = 0.0
    n_evals: int = 0

    @property
    def best(self):
        return self.iterates[-1]

    def relative_margins(self) -> dict:
        return {k: v / (self.d if k.startswith("ball") else self.threshold) for k, v in self.margins.items()}

    def binding(self) -> list:
        return [k for k, v in self.relative_margins().items() if v < 0.1]


def initial_configuration(domain: DomainSpec, q, q_location: str, eps: float, m: int, l: int,
                          sigma_tilde: float = 0.5) -> np.ndarray:
    """Starting points: a regular polygon of radius 1/|log eps| around interior q, or
    for boundary q, interior points along the inward normal and boundary points
    along the boundary, both at spacing sigma_tilde/sqrt|log eps|."""
    L = abs(math.log(eps))
    q = np.asarray(q, dtype=float)
    if q_location == "interior":
        return regular_polygon(q, 1.0 / L, m)
    th = domain.boundary_param(q)
    n = domain.normal(th)
    step = sigma_tilde / math.sqrt(L)
    pts = [q - (k + 1) * step * n for k in range(l)]
    # boundary points alternate sides of q at arc-distance step, 2 step, ...
    speed = float(np.linalg.norm(domain.tangent(th)))
    for k in range(m - l):
        j = k // 2 + 1
        sgn = 1 if k % 2 == 0 else -1
        pts.append(domain.boundary_point(th + sgn * j * step / speed))
    return np.asarray(pts).reshape(-1, 2)


class _Evaluator:
    def __init__(self, mesh: Mesh, a: AnisotropyField, template: SpikeConfig, base: GreenTable):
        self.mesh, self.a, self.template, self.base = mesh, a, template, base
        self.domain = mesh.domain
        self.bparam = []
        for i in range(template.l, template.m):
            self.bparam.append(self.domain.boundary_param(template.xi[i]))
        self.n_evals = 0

    def unpack(self, z) -> np.ndarray:
        t = self.template
        pts = list(np.asarray(z[: 2 * t.l]).reshape(-1, 2))
        for k in range(t.m - t.l):
            pts.append(self.domain.boundary_point(float(z[2 * t.l + k])))
        return np.asarray(pts).reshape(-1, 2)

    def pack(self, pts) -> np.ndarray:
        t = self.template
        z = list(np.asarray(pts[: t.l]).ravel())
        for k in range(t.l, t.m):
            z.append(self.domain.boundary_param(pts[k]))
        return np.asarray(z, dtype=float)

    def config(self, pts) -> SpikeConfig:
        return self.template.with_points(pts)

    def value(self, pts):
        cfg = self.config(pts)
        rep = check_admissible(cfg, self.domain)
        if not rep.admissible:
            return -np.inf, cfg, rep
        table = GreenTable(self.mesh, self.a, cfg.alpha, {"q": self.base["q"]})
        try:
            for i in range(cfg.m):
                table.add(cfg.source_id(i + 1), cfg.xi[i], cfg.location(i + 1))
        except GreenError:
            return -np.inf, cfg, rep
        self.n_evals += 1
        return energy_expansion(cfg, table, self.a).F, cfg, rep


def _polygon_radius(ev: _Evaluator, template: SpikeConfig, phase: float = 0.0) -> float:
    """Best radius of the regular polygon around q, by a bounded scalar search."""
    L = abs(math.log(template.eps))
    lo, hi = 0.5 / L, 0.95 * template.d

    def neg(r):
        F, _, _ = ev.value(regular_polygon(template.qv, r, template.m, phase))
        return -F if np.isfinite(F) else np.inf

    if hi <= lo:
        return 1.0 / L
    res = minimize_scalar(neg, bounds=(lo, hi), method="bounded", options={"xatol": 1e-3 * hi})
    return float(res.x) if np.isfinite(res.fun) else 1.0 / L


def maximize_F(mesh: Mesh, a: AnisotropyField, template: SpikeConfig, greens: GreenTable | None = None,
               start=None, max_iter: int = 400, xatol: float = 1e-3, frtol: float = 1e-9,
               sigma_tilde: float = 0.5, polygon_stage: bool = True) -> OptimizerTrace:
    """Derivative-free constrained ascent of F over the admissible set.

    Interior points move in the plane, boundary points along the boundary
    parameter; infeasible trials are rejected.  With interior q and no given
    start, the regular-polygon family is searched first for its best radius
    and the simplex search starts from there.
    """
    if greens is None:
        greens = GreenTable(mesh, a, template.alpha)
        greens.add("q", template.qv, template.q_location)
    first = None
    if start is None:
        start = initial_configuration(mesh.domain, template.qv, template.q_location, template.eps,
                                      template.m, template.l, sigma_tilde)
        if polygon_stage and template.q_location == "interior" and template.m == template.l and template.m > 0:
            ev0 = _Evaluator(mesh, a, template.with_points(start), greens)
            F0, cfg0, rep0 = ev0.value(start)
            better = regular_polygon(template.qv, _polygon_radius(ev0, template), template.m)
            F1, _, _ = ev0.value(better)
            if np.isfinite(F0):
                first = (start, F0, rep0.min_relative_margin())
            if F1 > F0:
                start = better
    start = np.asarray(start, dtype=float).reshape(-1, 2)
    ev = _Evaluator(mesh, a, template.with_points(start), greens)
    trace = OptimizerTrace(threshold=check_admissible(template.with_points(start)).threshold, d=template.d)
    if first is not None:
        trace.iterates.append(first)
    if template.m == 0:
        F, cfg, rep = ev.value(np.zeros((0, 2)))
        trace.iterates.append((np.zeros((0, 2)), F, math.inf))
        trace.status = "interior-max"
        return trace

    cache = {}

    def negF(z):
        key = tuple(np.round(z, 14))
        if key not in cache:
            F, _, _ = ev.value(ev.unpack(z))
            cache[key] = -F if np.isfinite(F) else np.inf
        return cache[key]

    def record(z):
        pts = ev.unpack(z)
        rep = check_admissible(ev.config(pts), mesh.domain)
        trace.iterates.append((pts, -negF(z), rep.min_relative_margin()))

    z0 = ev.pack(start)
    if not np.isfinite(negF(z0)):
        raise ValueError("starting configuration is not admissible")
    record(z0)
    L = abs(math.log(template.eps))
    # initial simplex scaled to the configuration size
    size = max(float(np.max(np.linalg.norm(start - template.qv, axis=1))), 1.0 / L)
    step = 0.1 * size
    simplex = [z0]
    for k in range(len(z0)):
        e = z0.copy()
        e[k] += step if k < 2 * template.l else step / max(float(np.linalg.norm(mesh.domain.tangent(e[k]))), 1e-12)
        simplex.append(e)
    res = minimize(
        negF,
        z0,
        method="Nelder-Mead",
        callback=record,
        options={"initial_simplex": np.asarray(simplex), "maxiter": max_iter, "xatol": xatol * size,
                 "fatol": frtol * abs(negF(z0)), "adaptive": True},
    )
    if not trace.iterates or negF(res.x) < -trace.iterates[-1][1]:
        record(res.x)
    pts = trace.iterates[-1][0]
    rep = check_admissible(ev.config(pts), mesh.domain)
    trace.margins = rep.margins
    trace.threshold = rep.threshold
    trace.n_evals = ev.n_evals
    rel = trace.relative_margins()
    if min(rel.values()) < 0.01:
        trace.status = "hit-constraint"
    elif not res.success:
        trace.status = "max-iters"
    else:
        trace.status = "interior-max"
    return trace
