"""Quadrature on the triangle mesh with local refinement toward steep or singular points.

A rule is a flat list of points, each tagged with its parent triangle and its
barycentric coordinates there, so integrals against hat functions are a single
``bincount`` away.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from .geometry import Mesh, TWO_PI

# degree-5 seven-point rule (Radon), barycentric coordinates and weights summing to 1
_A1, _B1 = 0.059715871789769820, 0.470142064105115090
_A2, _B2 = 0.797426985353087322, 0.101286507323456339
_W0, _W1, _W2 = 0.225, 0.132394152788506181, 0.125939180544827153
TRI_BARY = np.array(
    [
        [1 / 3, 1 / 3, 1 / 3],
        [_A1, _B1, _B1],
        [_B1, _A1, _B1],
        [_B1, _B1, _A1],
        [_A2, _B2, _B2],
        [_B2, _A2, _B2],
        [_B2, _B2, _A2],
    ]
)
TRI_W = np.array([_W0, _W1, _W1, _W1, _W2, _W2, _W2])

_GL_X, _GL_W = np.polynomial.legendre.leggauss(4)
_GL_X = 0.5 * (_GL_X + 1.0)
_GL_W = 0.5 * _GL_W

# child corner barycentrics (in the parent piece) for the 4-way midpoint split
_SPLIT = np.array(
    [
        [[1, 0, 0], [0.5, 0.5, 0], [0.5, 0, 0.5]],
        [[0.5, 0.5, 0], [0, 1, 0], [0, 0.5, 0.5]],
        [[0.5, 0, 0.5], [0, 0.5, 0.5], [0, 0, 1]],
        [[0.5, 0.5, 0], [0, 0.5, 0.5], [0.5, 0, 0.5]],
    ]
)


@dataclass(frozen=True)
class Center:
    """A point the rule must resolve.  scale is the feature width (0 for a point singularity)."""

    x: np.ndarray
    scale: float = 0.0


def centers(*pairs) -> list:
    return [Center(np.asarray(x, dtype=float), float(s)) for x, s in pairs]


@dataclass(frozen=True, eq=False)
class AreaRule:
    points: np.ndarray  # (K, 2)
    weights: np.ndarray  # (K,)
    tri: np.ndarray  # (K,) parent triangle
    bary: np.ndarray  # (K, 3) barycentric coordinates in the parent
    n_nodes: int
    triangles: np.ndarray

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, values))

    def against_hats(self, values) -> np.ndarray:
        """Vector of integrals of ``values * phi_j`` for every node j."""
        wv = (self.weights * values)[:, None] * self.bary
        return np.bincount(self.triangles[self.tri].ravel(), weights=wv.ravel(), minlength=self.n_nodes)

    def interpolate(self, nodal) -> np.ndarray:
        """P1 interpolant of a nodal field at the rule points."""
        return np.einsum("kc,kc->k", self.bary, np.asarray(nodal)[self.triangles[self.tri]])

    def gradient(self, mesh: Mesh, nodal) -> np.ndarray:
        g = np.einsum("tcd,tc->td", mesh.grad_basis, np.asarray(nodal)[mesh.triangles])
        return g[self.tri]


@lru_cache(maxsize=8)
def _base(mesh: Mesh):
    P = mesh.nodes[mesh.triangles]
    pts = np.einsum("qc,tce->tqe", TRI_BARY, P)
    w = mesh.tri_area[:, None] * TRI_W[None, :]
    cen = P.mean(axis=1)
    diam = np.max(
        np.stack([np.linalg.norm(P[:, i] - P[:, (i + 1) % 3], axis=1) for i in range(3)]),
        axis=0,
    )
    return pts, w, cen, diam


def _diam(V):
    return np.max(np.stack([np.linalg.norm(V[:, i] - V[:, (i + 1) % 3], axis=1) for i in range(3)]), axis=0)


def _flag(cen, diam, cs, eta):
    flag = np.zeros(len(cen), dtype=bool)
    for c in cs:
        dist = np.linalg.norm(cen - c.x, axis=1)
        flag |= diam > eta * np.maximum(dist, c.scale)
    return flag


def _holds_point(V, cs):
    hit = np.zeros(len(V), dtype=bool)
    e1, e2 = V[:, 1] - V[:, 0], V[:, 2] - V[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    for c in cs:
        if c.scale > 0:
            continue
        d = c.x - V[:, 0]
        l1 = (d[:, 0] * e2[:, 1] - d[:, 1] * e2[:, 0]) / det
        l2 = (e1[:, 0] * d[:, 1] - e1[:, 1] * d[:, 0]) / det
        tol = 1e-9
        hit |= (l1 >= -tol) & (l2 >= -tol) & (l1 + l2 <= 1 + tol)
    return hit


def area_rule(mesh: Mesh, where: Sequence[Center] = (), eta: float = 0.3, max_depth: int = 14) -> AreaRule:
    """Seven-point rule on every triangle, recursively split near the given centers.

    A piece is split while its diameter exceeds ``eta * max(dist, scale)`` for
    some center, where dist is the distance from the piece centroid.
    """
    P = mesh.nodes[mesh.triangles]
    bpts, bw, bcen, bdiam = _base(mesh)
    cs = list(where)
    flag = _flag(bcen, bdiam, cs, eta) if cs and max_depth > 0 else np.zeros(len(P), dtype=bool)
    keep = np.flatnonzero(~flag)
    nq = len(TRI_W)
    out_pts = [bpts[keep].reshape(-1, 2)]
    out_w = [bw[keep].ravel()]
    out_t = [np.repeat(keep, nq)]
    out_b = [np.tile(TRI_BARY, (len(keep), 1))]

    def emit(parent, corners):
        lam = np.einsum("qc,ncd->nqd", TRI_BARY, corners)
        phys = np.einsum("nqd,nde->nqe", lam, P[parent])
        area = mesh.tri_area[parent] * np.abs(np.linalg.det(corners))
        out_pts.append(phys.reshape(-1, 2))
        out_w.append((area[:, None] * TRI_W[None, :]).ravel())
        out_t.append(np.repeat(parent, nq))
        out_b.append(lam.reshape(-1, 3))

    fp = np.flatnonzero(flag)
    parent = np.repeat(fp, 4)
    corners = np.broadcast_to(_SPLIT, (len(fp), 4, 3, 3)).reshape(-1, 3, 3).copy()
    for depth in range(1, max_depth + 1):
        if len(parent) == 0:
            break
        V = np.einsum("ncd,nde->nce", corners, P[parent])
        if depth < max_depth:
            flag = _flag(V.mean(axis=1), _diam(V), cs, eta)
        else:
            # innermost pieces holding a point singularity are dropped; a rule
            # point could otherwise land on the singularity itself
            flag = _holds_point(V, cs)
        if (~flag).any():
            emit(parent[~flag], corners[~flag])
        fp, fc = parent[flag], corners[flag]
        corners = np.einsum("kcd,nde->nkce", _SPLIT, fc).reshape(-1, 3, 3)
        parent = np.repeat(fp, 4)

    return AreaRule(
        points=np.vstack(out_pts),
        weights=np.concatenate(out_w),
        tri=np.concatenate(out_t),
        bary=np.vstack(out_b),
        n_nodes=mesh.n_nodes,
        triangles=mesh.triangles,
    )


@dataclass(frozen=True, eq=False)
class BoundaryRule:
    """Gauss-Legendre rule on the exact boundary curve, split per boundary edge."""

    theta: np.ndarray
    points: np.ndarray
    normals: np.ndarray
    weights: np.ndarray  # includes the arc-length element
    edge: np.ndarray
    hat: np.ndarray  # (K, 2) values of the two edge-end hat functions
    edge_nodes: np.ndarray
    n_nodes: int

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, values))

    def against_hats(self, values) -> np.ndarray:
        wv = (self.weights * values)[:, None] * self.hat
        return np.bincount(self.edge_nodes[self.edge].ravel(), weights=wv.ravel(), minlength=self.n_nodes)


def boundary_rule(mesh: Mesh, where: Sequence[Center] = (), eta: float = 0.3, max_depth: int = 16) -> BoundaryRule:
    dom = mesh.domain
    nt = mesh.n_theta
    h = TWO_PI / nt
    edge = np.arange(nt)
    lo = np.zeros(nt)
    hi = np.ones(nt)
    out = []
    cs = list(where)
    for depth in range(max_depth + 1):
        if len(edge) == 0:
            break
        t0 = (edge + lo) * h
        t1 = (edge + hi) * h
        flag = np.zeros(len(edge), dtype=bool)
        if cs and depth < max_depth:
            a = dom.boundary_point(t0)
            b = dom.boundary_point(t1)
            mid = dom.boundary_point(0.5 * (t0 + t1))
            length = np.linalg.norm(a - mid, axis=1) + np.linalg.norm(mid - b, axis=1)
            for c in cs:
                dist = np.linalg.norm(mid - c.x, axis=1)
                flag |= length > eta * np.maximum(dist, c.scale)
        keep = ~flag
        if keep.any():
            out.append((edge[keep], lo[keep], hi[keep]))
        if not flag.any():
            break
        e, l, u = edge[flag], lo[flag], hi[flag]
        m = 0.5 * (l + u)
        edge = np.concatenate([e, e])
        lo = np.concatenate([l, m])
        hi = np.concatenate([m, u])

    e = np.concatenate([o[0] for o in out])
    l = np.concatenate([o[1] for o in out])
    u = np.concatenate([o[2] for o in out])
    s = l[:, None] + (u - l)[:, None] * _GL_X[None, :]  # local edge coordinate in [0, 1]
    th = (e[:, None] + s) * h
    speed = np.linalg.norm(dom.tangent(th), axis=-1)
    w = (u - l)[:, None] * _GL_W[None, :] * h * speed
    th = th.ravel()
    s = s.ravel()
    return BoundaryRule(
        theta=np.mod(th, TWO_PI),
        points=dom.boundary_point(th),
        normals=dom.normal(np.mod(th, TWO_PI)),
        weights=w.ravel(),
        edge=np.repeat(e, len(_GL_X)),
        hat=np.stack([1.0 - s, s], axis=1),
        edge_nodes=mesh.boundary_edges,
        n_nodes=mesh.n_nodes,
    )


def merge_centers(*groups: Iterable[Center]) -> list:
    out = []
    for g in groups:
        out.extend(g)
    return out
