import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from sinhpoisson.quadrature import TRI_BARY, TRI_W, Center, area_rule, boundary_rule, centers

from conftest import cached_mesh


def dblquad_triangle(f, P):
    """Integral over the triangle P by mapping the reference triangle (scipy oracle)."""
    e1, e2 = P[1] - P[0], P[2] - P[0]
    jac = abs(e1[0] * e2[1] - e1[1] * e2[0])

    def g(t, s):
        x = P[0] + s * e1 + t * e2
        return f(x[0], x[1])

    return jac * integrate.dblquad(g, 0, 1, 0, lambda s: 1 - s, epsabs=1e-13, epsrel=1e-13)[0]


@given(st.integers(0, 5), st.integers(0, 5), st.integers(0, 2**31))
def test_seven_point_rule_degree_five(i, j, seed):
    if i + j > 5:
        return
    P = np.random.default_rng(seed).uniform(-1, 1, (3, 2))
    e1, e2 = P[1] - P[0], P[2] - P[0]
    area = 0.5 * abs(e1[0] * e2[1] - e1[1] * e2[0])
    if area < 5e-3:
        return
    pts = TRI_BARY @ P
    rule = area * np.dot(TRI_W, pts[:, 0] ** i * pts[:, 1] ** j)
    exact = dblquad_triangle(lambda x, y: x**i * y**j, P)
    assert rule == pytest.approx(exact, abs=1e-11)


def test_weights_sum_to_area():
    mesh = cached_mesh("disk", (1.0,), 32, 64)
    plain = area_rule(mesh)
    refined = area_rule(mesh, centers(((0.3, 0.2), 1e-4)), max_depth=20)
    assert plain.weights.sum() == pytest.approx(mesh.area(), rel=1e-13)
    assert refined.weights.sum() == pytest.approx(mesh.area(), rel=1e-13)
    assert len(refined.points) > len(plain.points)


def test_hats_partition_of_unity(rng):
    mesh = cached_mesh("ellipse", (1.5, 0.8), 16, 32)
    rule = area_rule(mesh, centers(((0.1, 0.0), 0.0)))
    v = rng.normal(size=len(rule.points))
    assert rule.against_hats(v).sum() == pytest.approx(rule.integrate(v), rel=1e-12)


def test_log_singularity_on_disk():
    mesh = cached_mesh("disk", (1.0,), 64, 128)
    rule = area_rule(mesh, [Center(np.zeros(2), 0.0)], max_depth=24)
    with np.errstate(divide="ignore"):
        val = rule.integrate(np.log(np.linalg.norm(rule.points, axis=1)))
    assert val == pytest.approx(-math.pi / 2, abs=1e-4)


def test_hardy_weight_on_disk():
    mesh = cached_mesh("disk", (1.0,), 64, 128)
    rule = area_rule(mesh, [Center(np.zeros(2), 0.0)], max_depth=24)
    val = rule.integrate(1 / np.linalg.norm(rule.points, axis=1))
    assert val == pytest.approx(2 * math.pi, rel=1e-3)


def test_narrow_bubble_resolved():
    delta = 1e-4
    mesh = cached_mesh("disk", (1.0,), 32, 64)
    rule = area_rule(mesh, [Center(np.zeros(2), delta)], max_depth=30)
    r2 = np.sum(rule.points**2, axis=1)
    val = rule.integrate(8 * delta**2 / (delta**2 + r2) ** 2)
    assert val == pytest.approx(8 * math.pi / (1 + delta**2), rel=1e-6)


def test_off_node_bubble_resolved():
    delta, c = 1e-3, np.array([0.31, -0.17])
    mesh = cached_mesh("disk", (1.0,), 32, 64)
    rule = area_rule(mesh, [Center(c, delta)], max_depth=30)
    r2 = np.sum((rule.points - c) ** 2, axis=1)
    val = rule.integrate(8 * delta**2 / (delta**2 + r2) ** 2)
    assert val == pytest.approx(8 * math.pi, rel=1e-4)


def test_boundary_perimeter_and_moment():
    mesh = cached_mesh("disk", (2.0,), 16, 32)
    for rule in (boundary_rule(mesh), boundary_rule(mesh, centers(((2.0, 0.0), 0.0)), max_depth=10)):
        assert rule.weights.sum() == pytest.approx(4 * math.pi, rel=1e-12)
        assert rule.integrate(rule.points[:, 0] ** 2) == pytest.approx(8 * math.pi, rel=1e-10)
        np.testing.assert_allclose(np.einsum("kd,kd->k", rule.normals, rule.points), 2.0, rtol=1e-12)


def test_boundary_hats_partition(rng):
    mesh = cached_mesh("star", (1.0, 0.0, 0.0, 0.0, 0.0, 0.2, 0.0), 16, 64)
    rule = boundary_rule(mesh)
    v = rng.normal(size=len(rule.points))
    assert rule.against_hats(v).sum() == pytest.approx(rule.integrate(v), rel=1e-12)
