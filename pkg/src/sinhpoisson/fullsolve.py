"""Damped Newton solve of the full semilinear problem, seeded with the ansatz.

The unknown is the physical-scale u of

    -div(a grad u) + a u = eps^2 a |x-q|^(2 alpha) f(u),   Neumann on the boundary,

with f(u) = e^u - e^-u (sinh mode) or e^u (exp mode).  The discrete residual
is F(u) = A u - eps^2 D_w f(u) with D_w the same hat-weighted Hardy/Henon
weight the assembly module uses, so eps^2 M^-1 F'(U) is exactly apply_L.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .assembly import EXP_CLAMP, ApproxField
from .profiles import NormParams, SpikeConfig

log = logging.getLogger(__name__)


class NewtonFailure(RuntimeError):
    pass


@dataclass
class SpikeReport:
    locations: np.ndarray
    signs: np.ndarray
    masses: np.ndarray  # eps^2 int_B a |x-q|^(2 alpha) e^(+-u), unsigned
    normalized: np.ndarray  # masses / a(location)
    radii: np.ndarray
    targets: np.ndarray  # quantized value each normalized mass should approach
    nodes: np.ndarray

    @property
    def total_signed(self) -> float:
        return float(np.sum(self.signs * self.masses))

    @property
    def total_normalized(self) -> float:
        return float(np.sum(self.normalized))

    def as_dict(self) -> dict:
        return {
            "locations": self.locations.tolist(),
            "signs": self.signs.astype(int).tolist(),
            "masses": self.masses.tolist(),
            "normalized_masses": self.normalized.tolist(),
            "targets": self.targets.tolist(),
            "radii": self.radii.tolist(),
            "total_signed_mass": self.total_signed,
            "total_normalized_mass": self.total_normalized,
        }


@dataclass
class SolveResult:
    u: np.ndarray
    phi: np.ndarray
    history: list  # pointwise residual sup-norm, one entry per iterate
    converged: bool
    status: str
    steps: list = field(default_factory=list)  # accepted damping factors
    spikes: SpikeReport | None = None
    phi_sup: float = math.nan
    phi_budget: float = math.nan
    metadata: dict = field(default_factory=dict)

    @property
    def iterations(self) -> int:
        return len(self.history) - 1

    @property
    def phi_within_budget(self) -> bool:
        return bool(self.phi_sup <= self.phi_budget)


def _f(u, mode):
    e = np.exp(np.clip(u, -EXP_CLAMP, EXP_CLAMP))
    if mode == "exp":
        return e, e
    em = np.exp(np.clip(-u, -EXP_CLAMP, EXP_CLAMP))
    return e - em, e + em


def discrete_residual(field_: ApproxField, u) -> np.ndarray:
    """F(u) = A u - eps^2 D_w f(u), one entry per node (a hat-weighted integral)."""
    fu, _ = _f(u, field_.cfg.mode)
    return field_.op.apply(u) - field_.cfg.eps**2 * field_.D_w * fu


def newton_jacobian(field_: ApproxField, u) -> sp.csc_matrix:
    _, df = _f(u, field_.cfg.mode)
    return (field_.op.A - sp.diags(field_.cfg.eps**2 * field_.D_w * df)).tocsc()


def _pointwise(field_: ApproxField, F) -> float:
    return float(np.max(np.abs(F / field_.mass)))


def residual_budget(cfg: SpikeConfig, params: NormParams | None = None) -> float:
    """eps raised to min(beta, 2(alpha - alpha_hat), 2/p - 1)."""
    params = params or NormParams.default(cfg.alpha)
    return cfg.eps ** params.residual_exponent(cfg.alpha)


def newton_solve(field_: ApproxField, u0=None, *, factor: float = 0.5, min_step: float = 2.0**-20,
                 max_increases: int = 5, max_iter: int = 40, rtol: float = 1e-8,
                 params: NormParams | None = None, extract: bool = True) -> SolveResult:
    """Damped Newton from the ansatz U (or from u0 when given).

    Backtracking is Armijo on the pointwise residual sup-norm.  The run is
    declared divergent when the first ``max_increases`` damped trials of a
    line search all raise the residual, and a line-search underflow when the
    step falls below ``min_step`` without sufficient decrease.
    """
    cfg = field_.cfg
    if not (1e-3 ** 1.5 * 0.999 <= cfg.eps <= 1e-2 * 1.001):
        log.warning("eps=%g is outside the desk-scale window [10^-3.5, 10^-2]; attempting anyway", cfg.eps)
    U = field_.U
    u = np.array(U if u0 is None else u0, dtype=float, copy=True)
    F = discrete_residual(field_, u)
    res = _pointwise(field_, F)
    history = [res]
    steps = []
    status = "max-iters"
    converged = False

    def scale(u):
        fu, _ = _f(u, cfg.mode)
        return max(_pointwise(field_, cfg.eps**2 * field_.D_w * fu), _pointwise(field_, field_.op.apply(u)), 1.0)

    for _ in range(max_iter):
        if res <= rtol * scale(u):
            converged, status = True, "converged"
            break
        delta = splu(newton_jacobian(field_, u)).solve(-F)
        t = 1.0
        increases = 0
        accepted = False
        while t >= min_step:
            trial = u + t * delta
            Ft = discrete_residual(field_, trial)
            rt = _pointwise(field_, Ft) if np.all(np.isfinite(Ft)) else math.inf
            if rt <= (1.0 - 1e-4 * t) * res:
                accepted = True
                break
            increases = increases + 1 if rt > res else 0
            if increases >= max_increases:
                break
            t *= factor
        if not accepted:
            status = "diverged" if increases >= max_increases else "line-search-underflow"
            break
        u, F, res = trial, Ft, rt
        history.append(res)
        steps.append(t)
    else:
        if res <= rtol * scale(u):
            converged, status = True, "converged"

    phi = u - U
    result = SolveResult(
        u=u,
        phi=phi,
        history=history,
        converged=converged,
        status=status,
        steps=steps,
        phi_sup=float(np.max(np.abs(phi))),
        phi_budget=5.0 * abs(math.log(cfg.eps)) * residual_budget(cfg, params),
        metadata={
            "phi_scale": "physical",
            "rescaled_phi": "phi(eps y); V = U + 4 log eps carries the same corrector",
            "mode": cfg.mode,
            "eps": cfg.eps,
        },
    )
    if converged and extract:
        result.spikes = extract_spikes(result, field_)
    return result


def neumann_defect(field_: ApproxField, u) -> float:
    """Sup over boundary nodes of the recovered normal flux a du/dn."""
    F = discrete_residual(field_, u)
    nodes = field_.mesh.boundary_nodes
    edges = field_.mesh.boundary_edges
    length = np.zeros(field_.mesh.n_nodes)
    L = np.linalg.norm(field_.mesh.nodes[edges[:, 0]] - field_.mesh.nodes[edges[:, 1]], axis=1)
    np.add.at(length, edges[:, 0], 0.5 * L)
    np.add.at(length, edges[:, 1], 0.5 * L)
    return float(np.max(np.abs(F[nodes]) / length[nodes]))


def _neighbours(mesh):
    T = mesh.triangles
    rows = np.concatenate([T[:, 0], T[:, 1], T[:, 2], T[:, 1], T[:, 2], T[:, 0]])
    cols = np.concatenate([T[:, 1], T[:, 2], T[:, 0], T[:, 0], T[:, 1], T[:, 2]])
    return sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes))


def _strict_extrema(mesh, v):
    """Nodes where v is strictly larger than at every mesh neighbour."""
    adj = _neighbours(mesh)
    out = []
    for j in np.argsort(-v):
        nb = adj.indices[adj.indptr[j]:adj.indptr[j + 1]]
        if np.all(v[j] > v[nb]):
            out.append(j)
    return np.asarray(out, dtype=int)


def extract_spikes(result: SolveResult, field_: ApproxField, threshold: float | None = None) -> SpikeReport:
    """Local extrema of |u| above 2|log eps| and their local masses."""
    cfg, mesh = field_.cfg, field_.mesh
    u = result.u
    thr = 2.0 * abs(math.log(cfg.eps)) if threshold is None else threshold
    cand = []
    for sgn in (1, -1):
        if sgn == -1 and cfg.mode == "exp":
            continue
        v = sgn * u
        above = np.flatnonzero(v > thr)
        if len(above) == 0:
            continue
        ext = _strict_extrema(mesh, np.where(v > thr, v, -np.inf))
        cand += [(float(v[j]), int(j), sgn) for j in ext]
    cand.sort(reverse=True)
    if len(cand) > cfg.m + 1:
        log.warning("found %d extrema above threshold, keeping the %d largest", len(cand), cfg.m + 1)
        cand = cand[: cfg.m + 1]
    nodes = np.array([c[1] for c in cand], dtype=int)
    signs = np.array([c[2] for c in cand], dtype=int)
    locs = mesh.nodes[nodes] if len(nodes) else np.zeros((0, 2))

    n = len(nodes)
    radius = cfg.d
    if n > 1:
        sep = min(np.linalg.norm(locs[i] - locs[j]) for i in range(n) for j in range(i + 1, n))
        if 2 * radius > sep:
            log.warning("mass balls overlap; radius shrunk to half the minimum separation %.3g", sep)
            radius = 0.5 * sep
    radii = np.full(n, radius)
    for i in range(n):
        db = mesh.domain.distance_to_boundary(locs[i])
        if db > 1e-12:
            radii[i] = min(radius, db)

    masses = np.zeros(n)
    targets = np.zeros(n)
    e2 = cfg.eps**2
    for i in range(n):
        inside = np.linalg.norm(mesh.nodes - locs[i], axis=1) <= radii[i]
        masses[i] = e2 * np.sum(field_.D_w[inside] * np.exp(np.clip(signs[i] * u[inside], -EXP_CLAMP, EXP_CLAMP)))
        on_bdry = mesh.domain.distance_to_boundary(locs[i]) < 1e-12
        base = 4 * math.pi if on_bdry else 8 * math.pi
        near_q = np.linalg.norm(locs[i] - cfg.qv) <= 2.0 * _cell_size(mesh, locs[i])
        targets[i] = base * (1 + cfg.alpha) if near_q else base
    a_loc = np.array([float(field_.a(p)) for p in locs]) if n else np.zeros(0)
    return SpikeReport(locations=locs, signs=signs, masses=masses, normalized=masses / np.where(n, a_loc, 1.0),
                       radii=radii, targets=targets, nodes=nodes)


def _cell_size(mesh, x) -> float:
    k = int(np.argmin(np.linalg.norm(mesh.nodes - x, axis=1)))
    ring = 0 if k == 0 else (k - 1) // mesh.n_theta + 1
    return float(mesh.radial_spacing(max(ring, 1))) * float(np.max(mesh.domain.rho(mesh.theta)))
