"""Neumann Green function of ``-div(a grad u) + a u`` by singularity splitting.

For a source y the Green function is written ``G = H + Gamma`` with the explicit
logarithm ``Gamma = -k log|x - y|`` (``k = 1/2pi`` inside, ``1/pi`` on the
boundary).  Only the smooth part H is discretized: P1 elements on the polar
mesh, with the load assembled from Gamma by refined quadrature.  The operator
``A = K_a + M_a`` (stiffness with coefficient a, lumped a-weighted mass) is
factored once per mesh and reused for every source and every correction solve.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.interpolate import RectBivariateSpline

from .geometry import DomainSpec, Mesh, TWO_PI
from .quadrature import Center, area_rule, boundary_rule

log = logging.getLogger(__name__)


class GreenError(RuntimeError):
    pass


@dataclass(frozen=True)
class AnisotropyField:
    """Positive coefficient a(x) with a designated maximum point q.

    kind ``"constant"``: a = A.  ``"gaussian"``: a = 1 + A exp(-|x-q|^2/s^2).
    ``"cosine"``: a = 1 + A (1 + cos(pi |x-q|/s))/2 for |x-q| < s, else 1.
    """

    kind: str = "constant"
    amplitude: float = 1.0
    width: float = 1.0
    q: tuple = (0.0, 0.0)
    location: str = "interior"

    def __post_init__(self):
        if self.kind not in ("constant", "gaussian", "cosine"):
            raise ValueError(f"unknown anisotropy kind {self.kind!r}")
        if self.location not in ("interior", "boundary"):
            raise ValueError("q location must be 'interior' or 'boundary'")
        if self.kind == "constant" and self.amplitude <= 0:
            raise ValueError("constant coefficient must be positive")
        if self.kind != "constant" and (self.width <= 0 or self.amplitude <= -1):
            raise ValueError("bump needs positive width and amplitude > -1")
        object.__setattr__(self, "q", tuple(float(v) for v in self.q))

    @property
    def qv(self) -> np.ndarray:
        return np.asarray(self.q)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "constant":
            return np.full(x.shape[:-1], self.amplitude)
        d = x - self.qv
        r2 = np.sum(d * d, axis=-1)
        if self.kind == "gaussian":
            return 1.0 + self.amplitude * np.exp(-r2 / self.width**2)
        r = np.sqrt(r2)
        return 1.0 + np.where(r < self.width, 0.5 * self.amplitude * (1 + np.cos(np.pi * r / self.width)), 0.0)

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "constant":
            return np.zeros_like(x)
        d = x - self.qv
        r2 = np.sum(d * d, axis=-1)
        if self.kind == "gaussian":
            f = -2.0 * self.amplitude / self.width**2 * np.exp(-r2 / self.width**2)
            return f[..., None] * d
        r = np.sqrt(r2)
        s = self.width
        with np.errstate(invalid="ignore", divide="ignore"):
            f = np.where(
                (r < s) & (r > 0),
                -0.5 * self.amplitude * np.pi / s * np.sin(np.pi * r / s) / np.where(r > 0, r, 1.0),
                0.0,
            )
        return f[..., None] * d

    def grad_log(self, x):
        return self.grad(x) / self(x)[..., None]

    def fingerprint(self) -> str:
        return f"{self.kind}:{self.amplitude!r}:{self.width!r}@{self.q}:{self.location}"

    def check(self, mesh: Mesh, d: float | None = None) -> None:
        """Positivity on the mesh, q a strict discrete local max, and zero normal derivative for boundary q."""
        vals = self(mesh.nodes)
        if np.min(vals) <= 0:
            raise ValueError("coefficient is not positive on the mesh")
        q = self.qv
        aq = float(self(q))
        if d is None:
            d = 0.1 * mesh.domain.diameter()
        near = np.linalg.norm(mesh.nodes - q, axis=1)
        ring = (near > 1e-12) & (near <= d)
        if ring.any() and np.max(vals[ring]) >= aq and self.kind != "constant":
            raise ValueError("q is not a strict local maximizer of a")
        if self.location == "boundary":
            th = mesh.domain.boundary_param(q)
            dn = float(np.dot(self.grad(q), mesh.domain.normal(th)))
            if abs(dn) > 1e-8:
                raise ValueError(f"normal derivative of a at boundary q is {dn:.3e}, must vanish")


class Operator:
    """Assembled and factored ``K_a + M_a`` on a mesh for one coefficient."""

    def __init__(self, mesh: Mesh, a: AnisotropyField):
        self.mesh = mesh
        self.a = a
        tri = mesh.triangles
        P = mesh.nodes[tri]
        mids = 0.5 * (P + P[:, [1, 2, 0]])
        # edge-midpoint rule is exact for quadratics
        a_tri = self.a(mids).mean(axis=1)
        G = mesh.grad_basis
        local = np.einsum("tid,tjd->tij", G, G) * (a_tri * mesh.tri_area)[:, None, None]
        rows = np.repeat(tri, 3, axis=1).ravel()
        cols = np.tile(tri, (1, 3)).ravel()
        K = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(mesh.n_nodes,) * 2).tocsc()
        self.a_nodes = self.a(mesh.nodes)
        self.mass = self.a_nodes * mesh.node_area
        self.K = K
        self.A = (K + sp.diags(self.mass)).tocsc()
        try:
            self._lu = spla.splu(self.A)
        except RuntimeError as exc:
            raise GreenError(f"factorization of the Neumann operator failed: {exc}") from exc

    def solve(self, b):
        x = self._lu.solve(np.asarray(b, dtype=float))
        if not np.all(np.isfinite(x)):
            raise GreenError("non-finite solution of the Neumann operator")
        return x

    def apply(self, u):
        return self.A @ u

    def fingerprint(self) -> str:
        return f"{self.mesh.fingerprint()}|{self.a.fingerprint()}"


_OPERATORS: dict = {}


def operator_for(mesh: Mesh, a: AnisotropyField) -> Operator:
    key = (id(mesh), a)
    op = _OPERATORS.get(key)
    if op is None or op.mesh is not mesh:
        if len(_OPERATORS) > 6:
            _OPERATORS.clear()
        op = _OPERATORS[key] = Operator(mesh, a)
    return op


def log_factor(location: str) -> float:
    return 1.0 / np.pi if location == "boundary" else 1.0 / TWO_PI


@dataclass(eq=False)
class GreenSolution:
    y: np.ndarray
    location: str
    H: np.ndarray
    robin: float
    mesh: Mesh = field(repr=False)
    a_y: float = 1.0

    @property
    def k(self) -> float:
        return log_factor(self.location)

    def gamma(self, x):
        r = np.linalg.norm(np.asarray(x, dtype=float) - self.y, axis=-1)
        with np.errstate(divide="ignore"):
            return -self.k * np.log(r)

    @property
    def G(self) -> np.ndarray:
        """Nodal G; the node sitting on the source (if any) is set to +inf."""
        return self.H + self.gamma(self.mesh.nodes)

    @cached_property
    def _spline(self):
        return _polar_spline(self.mesh, self.H)

    def H_at(self, x) -> np.ndarray:
        return eval_polar_spline(self.mesh, self._spline, x)

    def G_at(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        r = np.linalg.norm(x - self.y, axis=-1)
        if np.any(r < 1e-14):
            raise GreenError("singular evaluation: G requested at its source point")
        return self.H_at(x) - self.k * np.log(r)


def _polar_spline(mesh: Mesh, f):
    nt, nr = mesh.n_theta, mesh.n_r
    grid = np.empty((nr + 1, nt))
    grid[0] = f[0]
    grid[1:] = f[1:].reshape(nr, nt)
    # continue through the center along the opposite ray so the spline sees a smooth profile
    pad_s = 3
    half = nt // 2
    neg = np.roll(grid[1 : pad_s + 1], -half, axis=1)[::-1]
    s_ext = np.concatenate([-mesh.s[1 : pad_s + 1][::-1], mesh.s])
    g = np.vstack([neg, grid])
    pad = 4
    th_ext = np.concatenate([mesh.theta[-pad:] - TWO_PI, mesh.theta, mesh.theta[:pad] + TWO_PI])
    g = np.hstack([g[:, -pad:], g, g[:, :pad]])
    return RectBivariateSpline(s_ext, th_ext, g, kx=3, ky=3, s=0)


def eval_polar_spline(mesh: Mesh, spline, x):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    s, th = mesh.grid_coords(x)
    if np.any(s > 1.0 + 1e-9):
        raise GreenError("evaluation point lies outside the closed domain")
    return spline.ev(np.minimum(s, 1.0), th)


def _snap_boundary(mesh: Mesh, y):
    b = mesh.nodes[mesh.boundary_nodes]
    k = int(np.argmin(np.linalg.norm(b - y, axis=1)))
    return mesh.boundary_nodes[k], b[k]


def green_load(op: Operator, y, location: str) -> np.ndarray:
    """Weak-form load for H: int (grad a . grad Gamma - a Gamma) phi + int_bdry a (-d_n Gamma) phi."""
    mesh, a = op.mesh, op.a
    k = log_factor(location)
    rule = area_rule(mesh, [Center(y, 0.0)])
    d = rule.points - y
    r2 = np.maximum(np.sum(d * d, axis=1), 1e-300)
    gam = -0.5 * k * np.log(r2)
    grad_gam = -k * d / r2[:, None]
    f = np.einsum("kd,kd->k", a.grad(rule.points), grad_gam) - a(rule.points) * gam
    b = rule.against_hats(f)
    brule = boundary_rule(mesh, [Center(y, 0.0)])
    db = brule.points - y
    rb2 = np.sum(db * db, axis=1)
    g = a(brule.points) * k * np.einsum("kd,kd->k", db, brule.normals) / np.maximum(rb2, 1e-300)
    return b + brule.against_hats(g)


def solve_green(mesh: Mesh, a: AnisotropyField, y, location: str = "interior") -> GreenSolution:
    """Solve for G(., y) and its regular part H(., y) on the mesh."""
    if location not in ("interior", "boundary"):
        raise ValueError("location must be 'interior' or 'boundary'")
    y = np.asarray(y, dtype=float)
    op = operator_for(mesh, a)
    if location == "boundary":
        _, y = _snap_boundary(mesh, y)
    else:
        dist = mesh.domain.distance_to_boundary(y)
        h = mesh.radial_spacing(mesh.n_r) * np.max(mesh.domain.rho(mesh.theta)) / mesh.domain.rho(0.0)
        if dist < 2.0 * h:
            raise GreenError(f"interior source at distance {dist:.3e} from the boundary is closer than two cells")
    H = op.solve(green_load(op, y, location))
    sol = GreenSolution(y=y, location=location, H=H, robin=np.nan, mesh=mesh, a_y=float(a(y)))
    sol.robin = float(sol.H_at(y)[0])
    return sol


@dataclass
class GreenTable:
    """Green solutions for the named sources on one mesh.

    Source ids are ``"q"`` and ``"xi1"``, ``"xi2"``, ...  ``alpha`` fixes the
    mass constant of q.
    """

    mesh: Mesh
    a: AnisotropyField
    alpha: float
    entries: dict = field(default_factory=dict)

    def add(self, sid: str, y, location: str) -> GreenSolution:
        sol = solve_green(self.mesh, self.a, y, location)
        self.entries[sid] = sol
        return sol

    def __getitem__(self, sid) -> GreenSolution:
        try:
            return self.entries[sid]
        except KeyError:
            raise KeyError(f"Green table has no source {sid!r}") from None

    def __contains__(self, sid) -> bool:
        return sid in self.entries

    def mass_constant(self, sid: str) -> float:
        loc = self[sid].location
        base = 8 * np.pi if loc == "interior" else 4 * np.pi
        return base * (1 + self.alpha) if sid == "q" else base

    def robin(self, sid: str) -> float:
        return self[sid].robin

    def G(self, x_id: str, y_id: str) -> float:
        """G(x, y) with x the location of source x_id."""
        return float(self[y_id].G_at(self[x_id].y)[0])

    def fingerprint(self) -> str:
        return hashlib.sha256(f"{self.mesh.fingerprint()}|{self.a.fingerprint()}".encode()).hexdigest()[:16]

    def save(self, path) -> None:
        path = Path(path)
        data = {"fingerprint": np.array(self.fingerprint()), "alpha": np.array(self.alpha)}
        for sid, e in self.entries.items():
            data[f"{sid}__y"] = e.y
            data[f"{sid}__H"] = e.H
            data[f"{sid}__loc"] = np.array(e.location)
        np.savez_compressed(path, **data)

    def load(self, path) -> int:
        """Load cached sources whose fingerprint matches; returns how many were loaded."""
        path = Path(path)
        if not path.exists():
            return 0
        with np.load(path) as z:
            if str(z["fingerprint"]) != self.fingerprint():
                return 0
            ids = sorted({k.split("__")[0] for k in z.files if "__" in k})
            for sid in ids:
                sol = GreenSolution(
                    y=z[f"{sid}__y"], location=str(z[f"{sid}__loc"]), H=z[f"{sid}__H"], robin=np.nan,
                    mesh=self.mesh, a_y=float(self.a(z[f"{sid}__y"])),
                )
                sol.robin = float(sol.H_at(sol.y)[0])
                self.entries[sid] = sol
        return len(ids)


def green_pair_eval(table: GreenTable, x, sid: str, part: str = "both"):
    """(G(x, y), H(x, y)) for the source sid, exact at mesh nodes.

    ``part="H"`` returns only the regular part, which is finite at the source
    itself; asking for G there is an error.
    """
    x = np.asarray(x, dtype=float)
    if not table.mesh.domain.contains(x, tol=1e-9):
        raise GreenError("evaluation point lies outside the closed domain")
    sol = table[sid]
    node = np.flatnonzero(np.all(np.abs(table.mesh.nodes - x) < 1e-14, axis=1))
    if node.size:
        H = float(sol.H[node[0]])
    else:
        H = float(sol.H_at(x)[0])
    if part == "H":
        return H
    r = float(np.linalg.norm(x - sol.y))
    if r < 1e-14:
        raise GreenError("singular evaluation: G requested at its source point")
    return H - sol.k * np.log(r), H


def check_symmetry(table: GreenTable, id1: str, id2: str) -> float:
    """Relative defect of a(y1) G(y1, y2) = a(y2) G(y2, y1)."""
    if id1 == id2:
        return 0.0
    s1, s2 = table[id1], table[id2]
    if np.linalg.norm(s1.y - s2.y) < 1e-14:
        return 0.0
    g12 = s1.a_y * float(s2.G_at(s1.y)[0])
    g21 = s2.a_y * float(s1.G_at(s2.y)[0])
    return abs(g12 - g21) / max(abs(g12), abs(g21), 1e-12)


def bessel_disk_green(r, radius: float = 1.0):
    """Neumann Green function of -Lap + 1 on a disk with source at the center."""
    from scipy.special import i0, i1, k0, k1

    c = k1(radius) / i1(radius)
    return (k0(r) + c * i0(r)) / TWO_PI


def bessel_disk_robin(radius: float = 1.0) -> float:
    from scipy.special import i1, k1

    return (np.log(2.0) - np.euler_gamma + k1(radius) / i1(radius)) / TWO_PI
