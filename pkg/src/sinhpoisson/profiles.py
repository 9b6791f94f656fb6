"""Bubble profiles, linearized kernels, standard integrals, the admissible set and the scaling system."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad

from .geometry import DomainSpec


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if alpha <= -1:
        raise ValueError("alpha must exceed -1")
    if alpha >= 0 and abs(alpha - round(alpha)) < 1e-12:
        raise ValueError("alpha must be non-integer")
    return alpha


@dataclass(frozen=True)
class SpikeConfig:
    """One ansatz: the first l points are interior, the remaining m - l lie on the boundary.

    signs holds b_0 (for the q-spike) followed by b_1..b_m.
    """

    eps: float
    alpha: float
    points: tuple = ()
    signs: tuple = (1,)
    l: int | None = None
    mode: str = "sinh"
    q: tuple = (0.0, 0.0)
    q_location: str = "interior"
    d: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "alpha", _check_alpha(self.alpha))
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        pts = tuple(tuple(float(c) for c in p) for p in self.points)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "q", tuple(float(c) for c in self.q))
        signs = tuple(int(s) for s in self.signs)
        if len(signs) == 1 and len(pts) > 0:
            signs = signs * (len(pts) + 1)
        if len(signs) != len(pts) + 1 or any(s not in (-1, 1) for s in signs):
            raise ValueError("signs must hold m+1 entries in {-1, +1}")
        object.__setattr__(self, "signs", signs)
        if self.l is None:
            object.__setattr__(self, "l", len(pts))
        if not 0 <= self.l <= len(pts):
            raise ValueError("l must lie in [0, m]")
        if self.mode not in ("sinh", "exp"):
            raise ValueError("mode must be 'sinh' or 'exp'")
        if self.mode == "exp" and any(s != 1 for s in signs):
            raise ValueError("exp mode requires all signs +1")
        if self.q_location not in ("interior", "boundary"):
            raise ValueError("q location must be 'interior' or 'boundary'")

    @property
    def m(self) -> int:
        return len(self.points)

    @property
    def xi(self) -> np.ndarray:
        return np.asarray(self.points, dtype=float).reshape(-1, 2)

    @property
    def qv(self) -> np.ndarray:
        return np.asarray(self.q)

    @property
    def b(self) -> np.ndarray:
        return np.asarray(self.signs, dtype=float)

    @property
    def kappa(self) -> float:
        return self.m * (3 * self.m + self.alpha + 1)

    @property
    def log_eps(self) -> float:
        return abs(math.log(self.eps))

    def location(self, i: int) -> str:
        """Location flag of spike i (0 is q)."""
        if i == 0:
            return self.q_location
        return "interior" if i <= self.l else "boundary"

    def source_id(self, i: int) -> str:
        return "q" if i == 0 else f"xi{i}"

    def mass_constant(self, i: int) -> float:
        base = 8 * math.pi if self.location(i) == "interior" else 4 * math.pi
        return base * (1 + self.alpha) if i == 0 else base

    def with_eps(self, eps: float) -> "SpikeConfig":
        return _replace(self, eps=eps)

    def with_points(self, points) -> "SpikeConfig":
        return _replace(self, points=tuple(map(tuple, np.asarray(points).reshape(-1, 2))))


def _replace(cfg, **kw):
    from dataclasses import replace

    return replace(cfg, **kw)


@dataclass
class MuVector:
    mu: np.ndarray
    residuals: np.ndarray
    bounds_ok: np.ndarray
    bound_values: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __getitem__(self, i):
        return self.mu[i]

    def __len__(self):
        return len(self.mu)


def excluded_p(alpha: float):
    return (1 / (1 + alpha), 2 / (3 + 2 * alpha), 1 / (2 * (1 + alpha)))


@dataclass(frozen=True)
class NormParams:
    alpha_hat: float
    sigma: float = 0.1
    p: float = 1.5
    beta: float = 0.4

    @classmethod
    def default(cls, alpha: float) -> "NormParams":
        p = 1.5
        if any(abs(p - e) < 1e-6 for e in excluded_p(alpha)):
            p += 0.01
        return cls(alpha_hat=alpha - min(0.5, (alpha + 1) / 2), p=p)

    def validate(self, alpha: float) -> "NormParams":
        if not -1 < self.alpha_hat < alpha:
            raise ValueError("alpha_hat must lie in (-1, alpha)")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if not 1 < self.p < 2:
            raise ValueError("p must lie in (1, 2)")
        for e in excluded_p(alpha):
            if abs(self.p - e) < 1e-9:
                raise ValueError(f"p = {self.p} is an excluded value for alpha = {alpha}")
        if not 0 < self.beta < 0.5:
            raise ValueError("beta must lie in (0, 1/2)")
        return self

    @property
    def gap_exponent(self) -> float:
        return 2 / self.p - 1

    def residual_exponent(self, alpha: float) -> float:
        """Rate of the *-norm residual: min(beta, 2(alpha - alpha_hat), 2/p - 1)."""
        return min(self.beta, 2 * (alpha - self.alpha_hat), self.gap_exponent)


def _dist(x, c):
    x = np.asarray(x, dtype=float)
    return np.linalg.norm(x - np.asarray(c, dtype=float), axis=-1)


def bubble_u0(x, cfg: SpikeConfig, mu0: float):
    """log[8(1+a)^2 mu0^(2(1+a)) eps^(2a) / ((eps mu0)^(2(1+a)) + |x-q|^(2(1+a)))^2]."""
    a1 = 1 + cfg.alpha
    eps = cfg.eps
    r = _dist(x, cfg.q)
    lognum = math.log(8 * a1**2) + 2 * a1 * math.log(mu0) + 2 * cfg.alpha * math.log(eps)
    return lognum - 2 * np.log((eps * mu0) ** (2 * a1) + r ** (2 * a1))


def bubble_ui(x, cfg: SpikeConfig, i: int, mu_i: float):
    """log[8 mu_i^2 / (((eps mu_i)^2 + |x - xi_i|^2)^2 |xi_i - q|^(2a))]."""
    if not 1 <= i <= cfg.m:
        raise IndexError("spike index must lie in 1..m")
    xi = cfg.xi[i - 1]
    r = _dist(x, xi)
    dq = float(np.linalg.norm(xi - cfg.qv))
    return math.log(8 * mu_i**2) - 2 * np.log((cfg.eps * mu_i) ** 2 + r**2) - 2 * cfg.alpha * math.log(dq)


def bubble(x, cfg: SpikeConfig, i: int, mu: float):
    return bubble_u0(x, cfg, mu) if i == 0 else bubble_ui(x, cfg, i, mu)


def bubble_grad(x, cfg: SpikeConfig, i: int, mu: float):
    x = np.asarray(x, dtype=float)
    if i == 0:
        a1 = 1 + cfg.alpha
        d = x - cfg.qv
        r2 = np.sum(d * d, axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            ra = np.where(r2 > 0, r2**cfg.alpha, 0.0 if cfg.alpha > 0 else np.inf)
            f = -4 * a1 * ra / ((cfg.eps * mu) ** (2 * a1) + r2**a1)
            f = np.where(r2 > 0, f, 0.0)
        return f[..., None] * d
    d = x - cfg.xi[i - 1]
    r2 = np.sum(d * d, axis=-1)
    return (-4.0 / ((cfg.eps * mu) ** 2 + r2))[..., None] * d


def bubble_weight(x, cfg: SpikeConfig, i: int):
    """The factor multiplying eps^2 e^{U_i} in -Lap U_i: |x-q|^(2a) for i=0, |xi_i-q|^(2a) otherwise."""
    if i == 0:
        return hardy_henon(x, cfg)
    dq = float(np.linalg.norm(cfg.xi[i - 1] - cfg.qv))
    return np.full(np.shape(x)[:-1], dq ** (2 * cfg.alpha))


def hardy_henon(x, cfg: SpikeConfig):
    r = _dist(x, cfg.q)
    with np.errstate(divide="ignore"):
        return r ** (2 * cfg.alpha)


def bubble_laplacian(x, cfg: SpikeConfig, i: int, mu: float):
    """Exact Laplacian of the bubble: -eps^2 w_i e^{U_i}."""
    return -(cfg.eps**2) * bubble_weight(x, cfg, i) * np.exp(bubble(x, cfg, i, mu))


def kernels(z, alpha: float):
    """(Z0, Z1, Z2, Zt) evaluated at z."""
    z = np.asarray(z, dtype=float)
    r2 = np.sum(z * z, axis=-1)
    z0 = (r2 - 1) / (r2 + 1)
    z1 = z[..., 0] / (1 + r2)
    z2 = z[..., 1] / (1 + r2)
    t = r2 ** (1 + alpha)
    zt = (t - 1) / (t + 1)
    return z0, z1, z2, zt


def kernel_potentials(z, alpha: float):
    """Potentials of the two radial linearized equations: 8/(1+|z|^2)^2 and its Hardy-Henon analogue."""
    z = np.asarray(z, dtype=float)
    r2 = np.sum(z * z, axis=-1)
    v0 = 8 / (1 + r2) ** 2
    vt = 8 * (1 + alpha) ** 2 * r2**alpha / (1 + r2 ** (1 + alpha)) ** 2
    return v0, vt


def z00(y, q_prime, mu0: float, alpha: float, variant: str = "tilde"):
    """Radial kernel attached to the q-spike, (1/mu0) Z((y - q')/mu0).

    variant ``"tilde"`` uses the Hardy-Henon kernel, ``"plain"`` the Liouville Z0.
    """
    z = (np.asarray(y, dtype=float) - np.asarray(q_prime)) / mu0
    z0, _, _, zt = kernels(z, alpha)
    return (zt if variant == "tilde" else z0) / mu0


def standard_integrals(alpha: float):
    """The four whole-plane integrals of the Liouville and Hardy-Henon bubbles, in closed form."""
    a1 = 1 + alpha
    return (
        8 * math.pi,
        8 * math.pi * a1,
        8 * math.pi * (math.log(8) - 2),
        8 * math.pi * a1 * (math.log(8 * a1**2) - 2),
    )


def standard_integrals_quadrature(alpha: float):
    """Same four integrals by adaptive quadrature (independent check).

    With u = |t|^(2(1+a)) = e^s both radial densities become the logistic
    density in s, so every integrand is smooth and decays exponentially.
    """
    a1 = 1 + alpha
    L = 45.0

    def dens(s):
        return 0.25 / math.cosh(0.5 * s) ** 2  # e^s / (1 + e^s)^2

    def softplus(s):
        return max(s, 0.0) + math.log1p(math.exp(-abs(s)))

    def integ(g):
        return sum(
            quad(g, lo, hi, limit=200, epsabs=0, epsrel=1e-12)[0] for lo, hi in ((-L, 0.0), (0.0, L))
        )

    # d(area) = pi d(|t|^2) = (pi / a1) du, and the densities are 8 a1^2 |t|^(2a) / (1+u)^2
    return (
        integ(lambda s: 8 * math.pi * dens(s)),
        integ(lambda s: 8 * math.pi * a1 * dens(s)),
        integ(lambda s: 8 * math.pi * dens(s) * (math.log(8) - 2 * softplus(s))),
        integ(lambda s: 8 * math.pi * a1 * dens(s) * (math.log(8 * a1**2) - 2 * softplus(s))),
    )


def mu_rhs(cfg: SpikeConfig, greens):
    """Right-hand sides of the scaling system, one per spike (index 0 is q)."""
    b = cfg.b
    ids = [cfg.source_id(i) for i in range(cfg.m + 1)]
    c = np.array([cfg.mass_constant(i) for i in range(cfg.m + 1)])
    rhs = np.empty(cfg.m + 1)
    for j in range(cfg.m + 1):
        val = c[j] * greens.robin(ids[j])
        for i in range(cfg.m + 1):
            if i != j:
                val += b[j] * b[i] * c[i] * greens.G(ids[j], ids[i])
        rhs[j] = val
    if not np.all(np.isfinite(rhs)):
        raise ValueError("non-finite Green values in the scaling system")
    return rhs


def mu_lhs(cfg: SpikeConfig, mu):
    a1 = 1 + cfg.alpha
    out = np.empty(cfg.m + 1)
    out[0] = math.log(8 * a1**2) + 2 * a1 * math.log(mu[0]) + 2 * cfg.alpha * math.log(cfg.eps)
    for j in range(1, cfg.m + 1):
        dq = float(np.linalg.norm(cfg.xi[j - 1] - cfg.qv))
        out[j] = math.log(8 * mu[j] ** 2) - 2 * cfg.alpha * math.log(dq)
    return out


def mu_bounds(cfg: SpikeConfig, mu, consts=None):
    """Order-of-magnitude bound flags; returns (ok flags, bound quantities)."""
    kap = cfg.kappa
    C0, C1, C2, C3, C4, C5 = consts or (1e-3, 1e3, kap + 2, 1e-3, 1e3, kap + 2)
    L = cfg.log_eps
    a1 = 1 + cfg.alpha
    vals = np.empty(cfg.m + 1)
    ok = np.empty(cfg.m + 1, dtype=bool)
    vals[0] = mu[0] ** (2 * a1) * cfg.eps ** (2 * cfg.alpha)
    ok[0] = C0 / L**C2 <= vals[0] <= C1 * L**C2
    for j in range(1, cfg.m + 1):
        dq = float(np.linalg.norm(cfg.xi[j - 1] - cfg.qv))
        vals[j] = mu[j] ** 2 / dq ** (2 * cfg.alpha)
        ok[j] = C3 / L**C5 <= vals[j] <= C4 * L**C5
    return ok, vals


def solve_mu(cfg: SpikeConfig, greens, bound_consts=None) -> MuVector:
    """Closed-form solve of the decoupled scaling system."""
    rhs = mu_rhs(cfg, greens)
    a1 = 1 + cfg.alpha
    mu = np.empty(cfg.m + 1)
    mu[0] = math.exp((rhs[0] - math.log(8 * a1**2) - 2 * cfg.alpha * math.log(cfg.eps)) / (2 * a1))
    for j in range(1, cfg.m + 1):
        dq = float(np.linalg.norm(cfg.xi[j - 1] - cfg.qv))
        mu[j] = math.exp(0.5 * (rhs[j] - math.log(8) + 2 * cfg.alpha * math.log(dq)))
    ok, vals = mu_bounds(cfg, mu, bound_consts)
    return MuVector(mu=mu, residuals=mu_lhs(cfg, mu) - rhs, bounds_ok=ok, bound_values=vals)


@dataclass
class AdmissibilityReport:
    threshold: float
    margins: dict
    d: float = 1.0

    @property
    def admissible(self) -> bool:
        return all(v > 0 for v in self.margins.values())

    def min_relative_margin(self) -> float:
        """Smallest margin divided by its threshold (the ball constraint uses d)."""
        rel = []
        for k, v in self.margins.items():
            rel.append(v / (self.d if k.startswith("ball") else self.threshold))
        return min(rel) if rel else math.inf


def check_admissible(cfg: SpikeConfig, domain: DomainSpec | None = None) -> AdmissibilityReport:
    """Margins (value minus threshold) of each constraint defining the admissible set."""
    thr = cfg.log_eps ** (-cfg.kappa) if cfg.m else 0.0
    xi = cfg.xi
    q = cfg.qv
    margins = {}
    for i in range(cfg.m):
        if domain is not None and i < cfg.l:
            margins[f"boundary_dist[{i + 1}]"] = domain.distance_to_boundary(xi[i]) - thr
        margins[f"q_dist[{i + 1}]"] = float(np.linalg.norm(xi[i] - q)) - thr
        margins[f"ball[{i + 1}]"] = cfg.d - float(np.linalg.norm(xi[i] - q))
        for j in range(i + 1, cfg.m):
            margins[f"pair[{i + 1},{j + 1}]"] = float(np.linalg.norm(xi[i] - xi[j])) - thr
    return AdmissibilityReport(threshold=thr, margins=margins, d=cfg.d)


def default_d(domain: DomainSpec, q, location: str) -> float:
    """d = dist(q, boundary)/20 inside; delta_2/20 for boundary q."""
    q = np.asarray(q, dtype=float)
    if location == "interior":
        return domain.distance_to_boundary(q) / 20.0
    th = domain.boundary_param(q)
    kappa = abs(float(domain.curvature(th)))
    delta2 = 0.2 / kappa if kappa > 1e-12 else 0.2 * domain.diameter()
    return delta2 / 20.0
