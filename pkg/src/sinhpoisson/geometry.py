"""Star-shaped planar domains, the polar-mapped mesh, and boundary straightening.

Every supported domain is written as ``x = c + r * rho(theta) * (cos theta, sin theta)``
with ``rho > 0``.  The mesh is the image of a radially graded polar grid under
this map, split into triangles, so it can carry P1 finite elements.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar

TWO_PI = 2.0 * np.pi


class GeometryError(ValueError):
    pass


class MeshError(GeometryError):
    pass


@dataclass(frozen=True)
class DomainSpec:
    """A star-shaped C^2 domain.

    kind is one of ``"disk"`` (params ``(radius,)``; ``"unit-disk"`` is accepted
    as an alias with radius 1), ``"ellipse"`` (params ``(a_x, a_y)``) or
    ``"star"`` (params are Fourier coefficients ``[a0, a1, b1, a2, b2, ...]``
    of rho, cos/sin interleaved).
    """

    kind: str = "disk"
    params: tuple = (1.0,)
    center: tuple = (0.0, 0.0)
    smoothness: int = 2

    def __post_init__(self):
        kind = self.kind
        if kind == "unit-disk":
            object.__setattr__(self, "kind", "disk")
            object.__setattr__(self, "params", (1.0,))
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if self.kind not in ("disk", "ellipse", "star"):
            raise GeometryError(f"unknown domain kind {kind!r}")
        if self.smoothness < 2:
            raise GeometryError("boundary smoothness order must be >= 2")
        if self.kind == "disk" and (len(self.params) != 1 or self.params[0] <= 0):
            raise GeometryError("disk needs one positive radius")
        if self.kind == "ellipse" and (len(self.params) != 2 or min(self.params) <= 0):
            raise GeometryError("ellipse needs two positive semi-axes")
        if self.kind == "star":
            if len(self.params) % 2 != 1:
                raise GeometryError("star Fourier list must be [a0, a1, b1, ..., ak, bk]")
            th = np.linspace(0.0, TWO_PI, 4096, endpoint=False)
            if np.min(self.rho(th)) <= 0:
                raise GeometryError("star radius function is not positive everywhere")

    @classmethod
    def unit_disk(cls) -> "DomainSpec":
        return cls("disk", (1.0,))

    @property
    def c(self) -> np.ndarray:
        return np.asarray(self.center)

    def _rho_derivs(self, theta):
        theta = np.asarray(theta, dtype=float)
        if self.kind == "disk":
            R = self.params[0]
            one = np.ones_like(theta)
            return R * one, 0.0 * one, 0.0 * one
        if self.kind == "ellipse":
            ax, ay = self.params
            cs, sn = np.cos(theta), np.sin(theta)
            s = (ay * cs) ** 2 + (ax * sn) ** 2
            ds = 2 * (ax**2 - ay**2) * sn * cs
            d2s = 2 * (ax**2 - ay**2) * np.cos(2 * theta)
            r = ax * ay * s**-0.5
            dr = -0.5 * ax * ay * s**-1.5 * ds
            d2r = ax * ay * (0.75 * s**-2.5 * ds**2 - 0.5 * s**-1.5 * d2s)
            return r, dr, d2r
        coef = self.params
        r = np.full_like(theta, coef[0])
        dr = np.zeros_like(theta)
        d2r = np.zeros_like(theta)
        for k in range(1, (len(coef) - 1) // 2 + 1):
            a, b = coef[2 * k - 1], coef[2 * k]
            ck, sk = np.cos(k * theta), np.sin(k * theta)
            r = r + a * ck + b * sk
            dr = dr + k * (-a * sk + b * ck)
            d2r = d2r - k * k * (a * ck + b * sk)
        return r, dr, d2r

    def rho(self, theta):
        return self._rho_derivs(theta)[0]

    def boundary_point(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        r = self.rho(theta)
        return self.c + np.stack([r * np.cos(theta), r * np.sin(theta)], axis=-1)

    def tangent(self, theta) -> np.ndarray:
        """d gamma / d theta (not normalized)."""
        theta = np.asarray(theta, dtype=float)
        r, dr, _ = self._rho_derivs(theta)
        cs, sn = np.cos(theta), np.sin(theta)
        return np.stack([dr * cs - r * sn, dr * sn + r * cs], axis=-1)

    def normal(self, theta) -> np.ndarray:
        t = self.tangent(theta)
        n = np.stack([t[..., 1], -t[..., 0]], axis=-1)
        return n / np.linalg.norm(n, axis=-1, keepdims=True)

    def curvature(self, theta):
        r, dr, d2r = self._rho_derivs(theta)
        return (r**2 + 2 * dr**2 - r * d2r) / (r**2 + dr**2) ** 1.5

    def area(self) -> float:
        if self.kind == "disk":
            return np.pi * self.params[0] ** 2
        if self.kind == "ellipse":
            return np.pi * self.params[0] * self.params[1]
        coef = np.asarray(self.params)
        return np.pi * (coef[0] ** 2 + 0.5 * np.sum(coef[1:] ** 2))

    def diameter(self) -> float:
        th = np.linspace(0.0, TWO_PI, 720, endpoint=False)
        p = self.boundary_point(th)
        return float(np.max(np.linalg.norm(p[:, None] - p[None, :], axis=-1)))

    def polar(self, x):
        """Return (theta, t) with x = c + t * rho(theta) * e(theta); t <= 1 inside."""
        x = np.asarray(x, dtype=float)
        d = x - self.c
        theta = np.mod(np.arctan2(d[..., 1], d[..., 0]), TWO_PI)
        t = np.hypot(d[..., 0], d[..., 1]) / self.rho(theta)
        return theta, t

    def contains(self, x, tol: float = 1e-12):
        return self.polar(x)[1] <= 1.0 + tol

    def boundary_param(self, x) -> float:
        """Parameter of the boundary point closest to x."""
        x = np.asarray(x, dtype=float)
        th = np.linspace(0.0, TWO_PI, 2048, endpoint=False)
        d2 = np.sum((self.boundary_point(th) - x) ** 2, axis=-1)
        k = int(np.argmin(d2))
        h = TWO_PI / 2048
        res = minimize_scalar(
            lambda t: float(np.sum((self.boundary_point(t) - x) ** 2)),
            bounds=(th[k] - 2 * h, th[k] + 2 * h),
            method="bounded",
            options={"xatol": 1e-13},
        )
        t = float(res.x)
        # polish with Newton on (gamma(t) - x) . gamma'(t) = 0
        for _ in range(4):
            r, dr, d2r = (float(v) for v in self._rho_derivs(t))
            cs, sn = math.cos(t), math.sin(t)
            g = self.boundary_point(t) - x
            T = np.array([dr * cs - r * sn, dr * sn + r * cs])
            T2 = np.array([d2r * cs - 2 * dr * sn - r * cs, d2r * sn + 2 * dr * cs - r * sn])
            f, df = float(g @ T), float(T @ T + g @ T2)
            if df <= 0:
                break
            step = f / df
            t -= step
            if abs(step) < 1e-16:
                break
        return float(np.mod(t, TWO_PI))

    def distance_to_boundary(self, x) -> float:
        x = np.asarray(x, dtype=float)
        if self.kind == "disk":
            return float(self.params[0] - np.linalg.norm(x - self.c))
        th = self.boundary_param(x)
        d = float(np.linalg.norm(self.boundary_point(th) - x))
        return d if self.contains(x) else -d

    def fingerprint(self) -> str:
        return f"{self.kind}:{','.join(repr(p) for p in self.params)}@{self.center}"


def boundary_normal(domain: DomainSpec, theta: float) -> np.ndarray:
    if not 0.0 <= theta < TWO_PI:
        raise GeometryError("theta must lie in [0, 2pi)")
    return domain.normal(theta)


def _radial_map(s, grading):
    if grading <= 0:
        return np.asarray(s, dtype=float)
    return np.sinh(grading * np.asarray(s)) / np.sinh(grading)


def _radial_map_inv(t, grading):
    if grading <= 0:
        return np.asarray(t, dtype=float)
    return np.arcsinh(np.asarray(t) * np.sinh(grading)) / grading


def _radial_map_deriv(s, grading):
    if grading <= 0:
        return np.ones_like(np.asarray(s, dtype=float))
    return grading * np.cosh(grading * np.asarray(s)) / np.sinh(grading)


@dataclass(frozen=True, eq=False)
class Mesh:
    """Triangulated polar-mapped grid.

    Node 0 is the collapsed center; node ``1 + (k-1)*n_theta + j`` sits on
    ring k (k = 1..n_r) at angle index j.  Ring n_r is the boundary.
    """

    domain: DomainSpec
    n_r: int
    n_theta: int
    grading: float
    s: np.ndarray  # reference radii, s[0] = 0
    theta: np.ndarray
    nodes: np.ndarray  # (N, 2)
    triangles: np.ndarray  # (T, 3) counter-clockwise
    tri_area: np.ndarray
    node_area: np.ndarray  # lumped areas (integral of each hat function)
    metric: np.ndarray  # (N, 2, 2): columns dx/ds, dx/dtheta
    boundary_nodes: np.ndarray
    boundary_normals: np.ndarray
    boundary_edges: np.ndarray  # (n_theta, 2) node pairs, counter-clockwise
    grad_basis: np.ndarray = field(repr=False)  # (T, 3, 2) gradients of the hat functions

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    def node_index(self, k: int, j: int) -> int:
        if k == 0:
            return 0
        return 1 + (k - 1) * self.n_theta + (j % self.n_theta)

    def ring(self, k: int) -> np.ndarray:
        if k == 0:
            return np.array([0])
        return 1 + (k - 1) * self.n_theta + np.arange(self.n_theta)

    def area(self) -> float:
        return float(self.tri_area.sum())

    def fingerprint(self) -> str:
        return f"{self.domain.fingerprint()}|{self.n_r}x{self.n_theta}|g={self.grading!r}"

    def grid_coords(self, x):
        """Map physical points to reference (s, theta)."""
        theta, t = self.domain.polar(x)
        return _radial_map_inv(t, self.grading), theta

    def radial_spacing(self, k: int) -> float:
        """Physical spacing between ring k-1 and ring k along theta = 0."""
        r = _radial_map(self.s, self.grading) * self.domain.rho(0.0)
        return float(r[k] - r[k - 1])

    def locate(self, x):
        """Triangle index and barycentric coordinates of points x (brute force on the ring)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        s, th = self.grid_coords(x)
        k = np.clip(np.searchsorted(self.s, s, side="right") - 1, 0, self.n_r - 1)
        out_t = np.empty(len(x), dtype=int)
        out_b = np.empty((len(x), 3))
        for n in range(len(x)):
            cand = self._ring_triangles(int(k[n]), float(th[n]))
            best, bb = -1, None
            for tri in cand:
                b = _barycentric(self.nodes[self.triangles[tri]], x[n])
                if bb is None or b.min() > bb.min():
                    best, bb = tri, b
            out_t[n], out_b[n] = best, bb
        return out_t, out_b

    def _ring_triangles(self, k, th):
        nt = self.n_theta
        j = int(np.floor(th / TWO_PI * nt)) % nt
        js = [(j - 1) % nt, j, (j + 1) % nt]
        if k == 0:
            return js
        base = nt + 2 * nt * (k - 1)
        return [base + 2 * jj + e for jj in js for e in (0, 1)]


def _barycentric(P, x):
    T = np.array([P[0] - P[2], P[1] - P[2]]).T
    l12 = np.linalg.solve(T, x - P[2])
    return np.array([l12[0], l12[1], 1.0 - l12.sum()])


def build_mesh(domain: DomainSpec, n_r: int, n_theta: int, grading: float = 0.0) -> Mesh:
    """Build the polar-mapped triangle mesh.

    ``grading > 0`` clusters rings toward the center via ``r(s) = sinh(g s)/sinh(g)``.
    """
    if n_r < 16 or n_theta < 32 or n_theta % 2:
        raise MeshError("need n_r >= 16, n_theta >= 32 and n_theta even")
    s = np.arange(n_r + 1) / n_r
    theta = TWO_PI * np.arange(n_theta) / n_theta
    rr = _radial_map(s, grading)
    rho, drho, _ = domain._rho_derivs(theta)
    cs, sn = np.cos(theta), np.sin(theta)

    nodes = [domain.c[None, :]]
    metric = [np.zeros((1, 2, 2))]
    drr = _radial_map_deriv(s, grading)
    for k in range(1, n_r + 1):
        p = domain.c + rr[k] * np.stack([rho * cs, rho * sn], axis=-1)
        nodes.append(p)
        m = np.empty((n_theta, 2, 2))
        m[:, 0, 0] = drr[k] * rho * cs
        m[:, 1, 0] = drr[k] * rho * sn
        m[:, 0, 1] = rr[k] * (drho * cs - rho * sn)
        m[:, 1, 1] = rr[k] * (drho * sn + rho * cs)
        metric.append(m)
    nodes = np.vstack(nodes)
    metric = np.vstack(metric)
    # center metric is degenerate by construction; store the radial derivative only
    metric[0, :, 0] = drr[0] * rho[0] * np.array([1.0, 0.0])

    nt = n_theta
    tris = []
    j = np.arange(nt)
    jp = (j + 1) % nt
    tris.append(np.stack([np.zeros(nt, int), 1 + j, 1 + jp], axis=1))
    for k in range(1, n_r):
        a = 1 + (k - 1) * nt + j
        b = 1 + (k - 1) * nt + jp
        c_ = 1 + k * nt + j
        d = 1 + k * nt + jp
        flip = ((j + k) % 2).astype(bool)
        t1 = np.where(flip[:, None], np.stack([a, c_, d], 1), np.stack([a, c_, b], 1))
        t2 = np.where(flip[:, None], np.stack([a, d, b], 1), np.stack([b, c_, d], 1))
        tris.append(np.stack([t1, t2], axis=1).reshape(-1, 3))
    tris = np.vstack(tris)

    P = nodes[tris]
    e1 = P[:, 1] - P[:, 0]
    e2 = P[:, 2] - P[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    if np.any(det <= 0):
        bad = int(np.flatnonzero(det <= 0)[0])
        raise MeshError(f"degenerate map: non-positive Jacobian at node {int(tris[bad, 0])}")
    area = 0.5 * det
    # gradients of barycentric coordinates
    grads = np.empty((len(tris), 3, 2))
    for i in range(3):
        pj = P[:, (i + 1) % 3]
        pk = P[:, (i + 2) % 3]
        edge = pk - pj
        grads[:, i, 0] = -edge[:, 1] / det
        grads[:, i, 1] = edge[:, 0] / det
    node_area = np.bincount(tris.ravel(), weights=np.repeat(area / 3.0, 3), minlength=len(nodes))

    bnodes = 1 + (n_r - 1) * nt + j
    bedges = np.stack([bnodes, 1 + (n_r - 1) * nt + jp], axis=1)
    return Mesh(
        domain=domain,
        n_r=n_r,
        n_theta=n_theta,
        grading=float(grading),
        s=s,
        theta=theta,
        nodes=nodes,
        triangles=tris,
        tri_area=area,
        node_area=node_area,
        metric=metric,
        boundary_nodes=bnodes,
        boundary_normals=domain.normal(theta),
        boundary_edges=bedges,
        grad_basis=grads,
    )


@dataclass(frozen=True)
class StraightenMap:
    """Local flattening of the boundary near a boundary point xi.

    In the rotated frame ``z = A (x - xi)`` the boundary is the graph
    ``z2 = G(z1)`` with ``G(0) = G'(0) = 0`` and the domain lies above it.
    """

    domain: DomainSpec
    xi: np.ndarray
    theta0: float
    rotation: np.ndarray
    delta2: float

    def _theta_for(self, t):
        # solve first rotated component of gamma(theta) - xi == t by Newton
        t = np.asarray(t, dtype=float)
        A = self.rotation
        speed = np.linalg.norm(self.domain.tangent(self.theta0))
        th = self.theta0 + t / speed
        for _ in range(50):
            z = (self.domain.boundary_point(th) - self.xi) @ A.T
            dz = self.domain.tangent(th) @ A.T
            step = (z[..., 0] - t) / dz[..., 0]
            th = th - step
            if np.max(np.abs(step)) < 1e-15:
                break
        return th

    def G(self, t):
        th = self._theta_for(t)
        return ((self.domain.boundary_point(th) - self.xi) @ self.rotation.T)[..., 1]

    def dG(self, t):
        th = self._theta_for(t)
        dz = self.domain.tangent(th) @ self.rotation.T
        return dz[..., 1] / dz[..., 0]

    def F_local(self, z):
        """F_i acting on rotated coordinates z."""
        z = np.asarray(z, dtype=float)
        g = self.G(z[..., 0])
        dg = self.dG(z[..., 0])
        f2 = z[..., 1] - g
        f1 = z[..., 0] + f2 * dg / (1.0 + dg**2)
        return np.stack([f1, f2], axis=-1)

    def __call__(self, x):
        """F_i(A (x - xi)) for physical points x."""
        z = (np.asarray(x, dtype=float) - self.xi) @ self.rotation.T
        return self.F_local(z)

    def jacobian_at_origin(self, h: float = 1e-6) -> np.ndarray:
        J = np.empty((2, 2))
        for c in range(2):
            e = np.zeros(2)
            e[c] = h
            J[:, c] = (self.F_local(e) - self.F_local(-e)) / (2 * h)
        return J


def straighten(domain: DomainSpec, xi) -> StraightenMap:
    xi = np.asarray(xi, dtype=float)
    th0 = domain.boundary_param(xi)
    dist = float(np.linalg.norm(domain.boundary_point(th0) - xi))
    if dist > 1e-10:
        raise GeometryError(f"point is not on the boundary (distance {dist:.3e})")
    n = domain.normal(th0)
    # rotation taking n to (0, -1)
    A = np.array([[-n[1], n[0]], [-n[0], -n[1]]])
    kappa = abs(float(domain.curvature(th0)))
    delta2 = 0.2 / kappa if kappa > 1e-12 else 0.2 * domain.diameter()
    return StraightenMap(domain, domain.boundary_point(th0), th0, A, delta2)


def regular_polygon(center, radius: float, m: int, phase: float = 0.0) -> np.ndarray:
    ang = phase + TWO_PI * np.arange(m) / m
    return np.asarray(center, dtype=float) + radius * np.stack([np.cos(ang), np.sin(ang)], 1)


def parse_domain(kind: str, params: Sequence[float] = (), center=(0.0, 0.0)) -> DomainSpec:
    if kind == "unit-disk":
        return DomainSpec("disk", (1.0,), tuple(center))
    return DomainSpec(kind, tuple(params), tuple(center))
