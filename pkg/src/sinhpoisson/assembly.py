"""The projected ansatz U_xi and the rescaled quantities built from it.

Rescaled points are never meshed: a quantity at ``y`` is evaluated at
``x = eps * y`` on the physical mesh.  Nodal versions of W, R, L and N use
hat-averaged weights, ``wbar_j = int a |x-q|^(2a) phi_j / int a phi_j``, which
is the same discretization the Newton solver uses.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .geometry import Mesh
from .green import AnisotropyField, _polar_spline, eval_polar_spline, operator_for
from .profiles import (
    MuVector,
    NormParams,
    SpikeConfig,
    bubble,
    bubble_grad,
    bubble_weight,
    hardy_henon,
)
from .quadrature import Center, area_rule, boundary_rule

log = logging.getLogger(__name__)

EXP_CLAMP = 700.0


def _depth_for(mesh: Mesh, scale: float, eta: float = 0.3) -> int:
    h = 2.0 * mesh.domain.diameter() / mesh.n_r
    if scale <= 0:
        return 14
    return int(min(34, max(14, math.ceil(math.log2(h / (eta * scale))) + 3)))


def spike_centers(cfg: SpikeConfig, mu) -> list:
    cs = [Center(cfg.qv, cfg.eps * float(mu[0]))]
    if cfg.alpha < 0:
        cs.append(Center(cfg.qv, 0.0))
    for i in range(cfg.m):
        cs.append(Center(cfg.xi[i], cfg.eps * float(mu[i + 1])))
    return cs


def spike_rule(mesh: Mesh, cfg: SpikeConfig, mu):
    cs = spike_centers(cfg, mu)
    depth = max(_depth_for(mesh, c.scale) for c in cs)
    return area_rule(mesh, cs, max_depth=depth), boundary_rule(mesh, cs, max_depth=depth + 2)


def _center_of(cfg: SpikeConfig, i: int):
    return cfg.qv if i == 0 else cfg.xi[i - 1]


def correction_load(mesh: Mesh, a: AnisotropyField, cfg: SpikeConfig, mu, i: int, rules=None):
    """Weak load of the correction problem for spike i."""
    if rules is None:
        c = Center(_center_of(cfg, i), cfg.eps * float(mu[i]))
        depth = _depth_for(mesh, c.scale)
        cs = [c, Center(c.x, 0.0)] if (i == 0 and cfg.alpha < 0) else [c]
        rules = area_rule(mesh, cs, max_depth=depth), boundary_rule(mesh, cs, max_depth=depth + 2)
    rule, brule = rules
    x = rule.points
    U = bubble(x, cfg, i, mu[i])
    gU = bubble_grad(x, cfg, i, mu[i])
    f = np.einsum("kd,kd->k", a.grad(x), gU) - a(x) * U
    bad = ~np.isfinite(f)
    if bad.any():
        log.warning("non-finite correction load at %d quadrature points; dropped", int(bad.sum()))
        f = np.where(bad, 0.0, f)
    load = rule.against_hats(f)
    xb = brule.points
    g = -a(xb) * np.einsum("kd,kd->k", bubble_grad(xb, cfg, i, mu[i]), brule.normals)
    return load + brule.against_hats(g)


def solve_correction(mesh: Mesh, a: AnisotropyField, cfg: SpikeConfig, mu, i: int, rules=None) -> np.ndarray:
    """H_i solving the correction problem with Neumann data -d_n U_i."""
    if not 0 <= i <= cfg.m:
        raise IndexError("spike index must lie in 0..m")
    mu = np.asarray(getattr(mu, "mu", mu), dtype=float)
    op = operator_for(mesh, a)
    return op.solve(correction_load(mesh, a, cfg, mu, i, rules))


@dataclass
class StarNormReport:
    value: float
    node: int
    x: np.ndarray
    components: tuple
    excluded: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))


@dataclass(eq=False)
class ApproxField:
    """U_xi = sum_i b_i (U_i + H_i) on the mesh, with cached nodal W and R."""

    mesh: Mesh
    a: AnisotropyField
    cfg: SpikeConfig
    mu: np.ndarray
    H: list  # corrections H_0..H_m (nodal)
    rules: tuple = field(repr=False, default=None)
    R0: float = 10.0

    def __post_init__(self):
        self.mu = np.asarray(getattr(self.mu, "mu", self.mu), dtype=float)
        if self.rules is None:
            self.rules = spike_rule(self.mesh, self.cfg, self.mu)
        self.op = operator_for(self.mesh, self.a)

    # -- rescaling convention: V(y) = U(eps y) + 4 log eps --
    @property
    def log_eps4(self) -> float:
        return 4.0 * math.log(self.cfg.eps)

    @cached_property
    def U_parts(self) -> list:
        x = self.mesh.nodes
        with np.errstate(divide="ignore"):
            return [bubble(x, self.cfg, i, self.mu[i]) for i in range(self.cfg.m + 1)]

    @cached_property
    def U(self) -> np.ndarray:
        b = self.cfg.b
        return sum(b[i] * (self.U_parts[i] + self.H[i]) for i in range(self.cfg.m + 1))

    @property
    def V(self) -> np.ndarray:
        return self.U + self.log_eps4

    @cached_property
    def _H_splines(self):
        return [_polar_spline(self.mesh, h) for h in self.H]

    def U_at(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        b = self.cfg.b
        out = np.zeros(len(x))
        for i in range(self.cfg.m + 1):
            out += b[i] * (bubble(x, self.cfg, i, self.mu[i]) + eval_polar_spline(self.mesh, self._H_splines[i], x))
        return out

    def V_at_rescaled(self, y) -> np.ndarray:
        return self.U_at(self.cfg.eps * np.atleast_2d(y)) + self.log_eps4

    def U_rule(self):
        """U and grad U at the refined area-rule points (analytic bubbles, P1 corrections)."""
        rule = self.rules[0]
        b = self.cfg.b
        x = rule.points
        U = np.zeros(len(x))
        gU = np.zeros((len(x), 2))
        for i in range(self.cfg.m + 1):
            U += b[i] * (bubble(x, self.cfg, i, self.mu[i]) + rule.interpolate(self.H[i]))
            gU += b[i] * (bubble_grad(x, self.cfg, i, self.mu[i]) + rule.gradient(self.mesh, self.H[i]))
        return U, gU

    @cached_property
    def D_w(self) -> np.ndarray:
        """int a |x-q|^(2 alpha) phi_j for every node."""
        rule = self.rules[0]
        return rule.against_hats(self.a(rule.points) * hardy_henon(rule.points, self.cfg))

    @property
    def mass(self) -> np.ndarray:
        return self.op.mass

    @cached_property
    def wbar(self) -> np.ndarray:
        return self.D_w / self.mass

    @cached_property
    def W(self) -> np.ndarray:
        """Nodal W = wbar (e^V + eps^8 e^-V); exp mode keeps e^V only."""
        return weight_from_u(self.wbar, self.U, self.cfg)

    @cached_property
    def R(self) -> np.ndarray:
        return residual_R(self)

    @cached_property
    def singular_nodes(self) -> np.ndarray:
        if self.cfg.alpha >= 0:
            return np.zeros(0, dtype=int)
        return np.flatnonzero(np.linalg.norm(self.mesh.nodes - self.cfg.qv, axis=1) < 1e-14)

    def cutoff(self, i: int, y) -> np.ndarray:
        """chi_i: 1 inside R0 mu_i of the rescaled spike, 0 beyond R0 mu_i + 1, smooth in between."""
        c = _center_of(self.cfg, i) / self.cfg.eps
        r = np.linalg.norm(np.atleast_2d(y) - c, axis=1) / (self.R0 * self.mu[i])
        t = np.clip((r - 1.0) * self.R0 * self.mu[i], 0.0, 1.0)
        return np.where(t <= 0, 1.0, np.where(t >= 1, 0.0, 0.5 * (1 + np.cos(np.pi * t))))


def weight_from_u(wbar, U, cfg: SpikeConfig):
    l4 = 4.0 * math.log(cfg.eps)
    W = wbar * np.exp(np.clip(U + l4, -EXP_CLAMP, EXP_CLAMP))
    if cfg.mode == "sinh":
        W = W + wbar * np.exp(np.clip(-U + l4, -EXP_CLAMP, EXP_CLAMP))
    return W


def assemble(mesh: Mesh, a: AnisotropyField, cfg: SpikeConfig, mu, corrections=None) -> ApproxField:
    """Assemble U_xi; corrections are solved here when not supplied."""
    mu = np.asarray(getattr(mu, "mu", mu), dtype=float)
    rules = spike_rule(mesh, cfg, mu)
    if corrections is None:
        corrections = [solve_correction(mesh, a, cfg, mu, i, rules) for i in range(cfg.m + 1)]
    if len(corrections) != cfg.m + 1:
        raise ValueError("need one correction per spike (including q)")
    return ApproxField(mesh, a, cfg, mu, list(corrections), rules=rules)


def far_field_gap(field_: ApproxField, greens, probes) -> np.ndarray:
    """U_xi - sum_i b_i c_i G(x, source_i) at the probe points."""
    cfg = field_.cfg
    probes = np.atleast_2d(probes)
    ref = np.zeros(len(probes))
    for i in range(cfg.m + 1):
        ref += cfg.b[i] * cfg.mass_constant(i) * greens[cfg.source_id(i)].G_at(probes)
    return field_.U_at(probes) - ref


def weight_W(field_: ApproxField, y) -> np.ndarray:
    """Pointwise W(y) = |eps y - q|^(2a) (e^V + eps^8 e^-V) at rescaled points y."""
    cfg = field_.cfg
    y = np.atleast_2d(np.asarray(y, dtype=float))
    x = cfg.eps * y
    V = field_.U_at(x) + field_.log_eps4
    w = hardy_henon(x, cfg)
    out = w * np.exp(np.clip(V, -EXP_CLAMP, EXP_CLAMP))
    if cfg.mode == "sinh":
        out = out + w * np.exp(np.clip(-V + 8 * math.log(cfg.eps), -EXP_CLAMP, EXP_CLAMP))
    return out


def residual_R(field_: ApproxField) -> np.ndarray:
    """Nodal residual of the rescaled problem at V.

    Since each H_i solves its correction problem, the linear part of the
    residual reduces to the exact bubble Laplacians, -eps^4 sum_i b_i w_i e^{U_i},
    plus eps^2 times the discrete Galerkin defect of the H_i solves (zero up to
    solver round-off, kept so an inexact correction shows up here).
    """
    cfg, mesh, a = field_.cfg, field_.mesh, field_.a
    b = cfg.b
    l4 = field_.log_eps4
    x = mesh.nodes
    U = field_.U
    w = hardy_henon(x, cfg)
    with np.errstate(invalid="ignore", over="ignore"):
        out = w * np.exp(np.clip(U + l4, -EXP_CLAMP, EXP_CLAMP))
        if cfg.mode == "sinh":
            out = out - w * np.exp(np.clip(-U + l4, -EXP_CLAMP, EXP_CLAMP))
        for i in range(cfg.m + 1):
            out = out - b[i] * bubble_weight(x, cfg, i) * np.exp(
                np.clip(field_.U_parts[i] + l4, -EXP_CLAMP, EXP_CLAMP)
            )
    defect = np.zeros(mesh.n_nodes)
    for i in range(cfg.m + 1):
        load = correction_load(mesh, a, cfg, field_.mu, i, field_.rules)
        defect += b[i] * (load - field_.op.apply(field_.H[i]))
    out = out + cfg.eps**2 * defect / field_.mass
    # Hardy case: the node at q carries no point value
    out[field_.singular_nodes] = 0.0
    return out


def star_weight(x, cfg: SpikeConfig, mu, params: NormParams):
    """The three components of the *-norm weight at physical points x (rescaled internally)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    eps, al, ah, sg = cfg.eps, cfg.alpha, params.alpha_hat, params.sigma
    mu = np.asarray(getattr(mu, "mu", mu), dtype=float)
    rq = np.linalg.norm(x - cfg.qv, axis=1) / eps
    with np.errstate(divide="ignore", invalid="ignore"):
        c1 = mu[0] ** (2 + 2 * ah) * rq ** (2 * al) / (mu[0] + rq) ** (4 + 2 * al + 2 * ah)
    c2 = np.zeros(len(x))
    for j in range(cfg.m):
        r = np.linalg.norm(x - cfg.xi[j], axis=1) / eps
        c2 += mu[j + 1] ** sg / (mu[j + 1] + r) ** (2 + sg)
    return np.full(len(x), eps**2), c1, c2


def star_norm(h, cfg: SpikeConfig, mu, params: NormParams, mesh: Mesh, exclude=None) -> StarNormReport:
    """Weighted sup-norm of a nodal field over the mesh nodes (singular nodes excluded)."""
    h = np.asarray(h, dtype=float)
    if not np.all(np.isfinite(h)):
        raise ValueError("star norm needs a finite field")
    c0, c1, c2 = star_weight(mesh.nodes, cfg, mu, params)
    wt = c0 + c1 + c2
    ratio = np.abs(h) / wt
    excl = np.flatnonzero(~np.isfinite(wt))
    if exclude is not None:
        excl = np.union1d(excl, np.asarray(exclude, dtype=int))
    ratio[excl] = 0.0
    k = int(np.argmax(ratio))
    return StarNormReport(
        value=float(ratio[k]),
        node=k,
        x=mesh.nodes[k].copy(),
        components=(float(c0[k]), float(c1[k]), float(c2[k])),
        excluded=excl,
    )


def apply_L(field_: ApproxField, phi) -> np.ndarray:
    """Discrete L(phi) = eps^2 M^-1 A phi - W phi (natural Neumann closure)."""
    phi = np.asarray(phi, dtype=float)
    return field_.cfg.eps**2 * field_.op.apply(phi) / field_.mass - field_.W * phi


def nonlinear_N(field_: ApproxField, phi) -> np.ndarray:
    """wbar [e^V (e^phi - 1 - phi) - eps^8 e^-V (e^-phi - 1 + phi)] at the nodes."""
    phi = np.asarray(phi, dtype=float)
    cfg = field_.cfg
    l4 = field_.log_eps4
    U = field_.U
    out = np.exp(np.clip(U + l4, -EXP_CLAMP, EXP_CLAMP)) * np.expm1(phi) - np.exp(
        np.clip(U + l4, -EXP_CLAMP, EXP_CLAMP)
    ) * phi
    if cfg.mode == "sinh":
        e = np.exp(np.clip(-U + l4, -EXP_CLAMP, EXP_CLAMP))
        out = out - e * (np.expm1(-phi) + phi)
    return field_.wbar * out
