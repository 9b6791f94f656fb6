import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from sinhpoisson.geometry import regular_polygon
from sinhpoisson.green import AnisotropyField, GreenTable
from sinhpoisson.profiles import (
    NormParams,
    SpikeConfig,
    bubble_u0,
    bubble_ui,
    check_admissible,
    excluded_p,
    kernel_potentials,
    kernels,
    solve_mu,
    standard_integrals,
    standard_integrals_quadrature,
)

from conftest import cached_mesh

non_integer_alpha = st.floats(-0.95, 2.95).filter(lambda a: abs(a - round(a)) > 0.02)


def fd_laplacian(f, x, h):
    """Fourth-order five-point-per-axis Laplacian."""
    out = np.zeros(len(x))
    for e in (np.array([h, 0.0]), np.array([0.0, h])):
        out += (-f(x + 2 * e) + 16 * f(x + e) - 30 * f(x) + 16 * f(x - e) - f(x - 2 * e)) / (12 * h * h)
    return out


def random_points(rng, n, rmin, rmax):
    r = rng.uniform(rmin, rmax, n)
    t = rng.uniform(0, 2 * math.pi, n)
    return np.stack([r * np.cos(t), r * np.sin(t)], 1)


# ---------------------------------------------------------------- bubbles


def test_u0_at_q():
    cfg = SpikeConfig(1.0, 0.5)
    assert bubble_u0((0.0, 0.0), cfg, 1.0) == pytest.approx(math.log(18))


def test_u0_decreases_radially():
    cfg = SpikeConfig(1e-2, 0.5)
    r = np.linspace(0, 5, 200)
    u = bubble_u0(np.stack([r, 0 * r], 1), cfg, 2.0)
    assert np.all(np.diff(u) < 0)


def test_ui_at_centre():
    cfg = SpikeConfig(0.5, 0.5, [(1.0, 0.0)])
    # eps mu = 1, so the centre value is log(8 mu^2)
    assert bubble_ui((1.0, 0.0), cfg, 1, 2.0) == pytest.approx(math.log(32))


def test_ui_radial(rng):
    cfg = SpikeConfig(1e-2, 0.5, [(0.3, 0.1)])
    r = 0.05
    angles = rng.uniform(0, 2 * math.pi, 10)
    x = np.array([0.3, 0.1]) + r * np.stack([np.cos(angles), np.sin(angles)], 1)
    v = bubble_ui(x, cfg, 1, 3.0)
    assert np.ptp(v) < 1e-12


def test_u0_laplacian_fd(rng):
    eps, alpha, mu0 = 1e-3, 0.5, 9.7
    cfg = SpikeConfig(eps, alpha)
    x = random_points(rng, 20, 0.5 * eps * mu0, 20 * eps * mu0)
    lap = fd_laplacian(lambda p: bubble_u0(p, cfg, mu0), x, 1e-2 * eps * mu0)
    exact = -(eps**2) * np.linalg.norm(x, axis=1) ** (2 * alpha) * np.exp(bubble_u0(x, cfg, mu0))
    assert np.max(np.abs(lap - exact) / np.abs(exact)) < 1e-4


def test_ui_laplacian_fd(rng):
    eps, alpha, mu = 1e-3, 0.5, 0.3
    xi = np.array([0.2, -0.1])
    cfg = SpikeConfig(eps, alpha, [tuple(xi)])
    x = xi + random_points(rng, 20, 0.1 * eps * mu, 20 * eps * mu)
    lap = fd_laplacian(lambda p: bubble_ui(p, cfg, 1, mu), x, 1e-2 * eps * mu)
    exact = -(eps**2) * np.linalg.norm(xi) ** (2 * alpha) * np.exp(bubble_ui(x, cfg, 1, mu))
    assert np.max(np.abs(lap - exact) / np.abs(exact)) < 1e-4


# ---------------------------------------------------------------- kernels


def test_kernel_special_values():
    z0, z1, z2, zt = kernels(np.array([[1.0, 0.0], [0.0, 0.0]]), 0.5)
    assert z0[0] == 0 and zt[0] == 0
    assert z0[1] == -1 and zt[1] == -1 and z1[1] == 0 and z2[1] == 0


@given(non_integer_alpha, st.integers(0, 2**31))
def test_kernel_residuals_property(alpha, seed):
    rng = np.random.default_rng(seed)
    z = random_points(rng, 50, 0.2, 3.0)
    v0, vt = kernel_potentials(z, alpha)
    z0, z1, z2, zt = kernels(z, alpha)
    h = 1e-3
    for idx, pot, tol in ((0, v0, 1e-6), (1, v0, 1e-6), (2, v0, 1e-6), (3, vt, 1e-5)):
        lap = fd_laplacian(lambda p, i=idx: kernels(p, alpha)[i], z, h)
        assert np.max(np.abs(lap + pot * kernels(z, alpha)[idx])) < tol


# ---------------------------------------------------------------- standard integrals


def radial_oracle(alpha):
    a1 = 1 + alpha

    def plane(f):
        # integral over R^2 of a radial integrand, split where the profile turns over
        pieces = [(0, 1), (1, 10), (10, np.inf)]
        return sum(integrate.quad(lambda r: 2 * math.pi * r * f(r), lo, hi, limit=400,
                                  epsabs=0, epsrel=1e-12)[0] for lo, hi in pieces)

    liou = lambda r: 8 / (1 + r * r) ** 2  # noqa: E731
    hh = lambda r: 8 * a1**2 * r ** (2 * alpha) / (1 + r ** (2 * a1)) ** 2  # noqa: E731
    return (
        plane(liou),
        plane(hh),
        plane(lambda r: liou(r) * math.log(liou(r))),
        plane(lambda r: hh(r) * math.log(8 * a1**2 / (1 + r ** (2 * a1)) ** 2)),
    )


@pytest.mark.parametrize("alpha", [0.0, 0.5, -0.5, 1.7])
def test_standard_integrals_closed_form(alpha):
    closed = standard_integrals(alpha)
    oracle = radial_oracle(alpha)
    for c, o in zip(closed, oracle):
        assert abs(c - o) <= 1e-6 * abs(o)


def test_standard_integrals_alpha_zero():
    c = standard_integrals(0.0)
    assert c[0] == pytest.approx(8 * math.pi) and c[1] == pytest.approx(8 * math.pi)
    assert c[2] == pytest.approx(8 * math.pi * (math.log(8) - 2)) and c[3] == pytest.approx(c[2])
    assert standard_integrals(0.5)[1] == pytest.approx(12 * math.pi)


@given(non_integer_alpha)
def test_standard_integrals_self_check(alpha):
    for c, q in zip(standard_integrals(alpha), standard_integrals_quadrature(alpha)):
        assert abs(c - q) <= 1e-6 * abs(c)


# ---------------------------------------------------------------- mu system


@pytest.fixture(scope="module")
def disk_greens():
    mesh = cached_mesh("disk", (5.0,), 32, 64, 3.0)
    return mesh, AnisotropyField("gaussian", 1.0, 1.0)


def table_for(mesh, a, cfg):
    t = GreenTable(mesh, a, cfg.alpha)
    t.add("q", cfg.qv, "interior")
    for i in range(cfg.m):
        t.add(f"xi{i + 1}", cfg.xi[i], "interior")
    return t


def back_substitute(cfg, t, mu):
    """Each scaling equation written out directly, left minus right."""
    a1 = 1 + cfg.alpha
    b = cfg.signs
    c = [8 * math.pi * a1] + [8 * math.pi] * cfg.m
    ids = ["q"] + [f"xi{i + 1}" for i in range(cfg.m)]
    res = []
    for j in range(cfg.m + 1):
        if j == 0:
            lhs = math.log(8 * a1**2 * mu[0] ** (2 * a1) * cfg.eps ** (2 * cfg.alpha))
        else:
            lhs = math.log(8 * mu[j] ** 2 / np.linalg.norm(cfg.xi[j - 1] - cfg.qv) ** (2 * cfg.alpha))
        rhs = c[j] * t.robin(ids[j]) + sum(b[j] * b[i] * c[i] * t.G(ids[j], ids[i])
                                           for i in range(cfg.m + 1) if i != j)
        res.append(lhs - rhs)
    return np.array(res)


def test_mu_back_substitution(disk_greens, rng):
    mesh, a = disk_greens
    for _ in range(6):
        m = int(rng.integers(0, 3))
        eps = 10 ** rng.uniform(-3.5, -2)
        pts = regular_polygon((0, 0), rng.uniform(0.3, 1.2), m, rng.uniform(0, 6))
        signs = tuple(int(s) for s in rng.choice([-1, 1], m + 1))
        cfg = SpikeConfig(eps, 0.5, pts, signs, d=1.5)
        assert check_admissible(cfg, mesh.domain).admissible
        t = table_for(mesh, a, cfg)
        mu = solve_mu(cfg, t)
        assert np.all(mu.mu > 0)
        assert np.max(np.abs(back_substitute(cfg, t, mu.mu))) < 1e-12


def test_mu_m0_closed_form(disk_greens):
    mesh, a = disk_greens
    cfg = SpikeConfig(1e-3, 0.5, d=1.5)
    t = table_for(mesh, a, cfg)
    mu0 = solve_mu(cfg, t).mu[0]
    expect = math.exp(12 * math.pi * t.robin("q")) / (8 * 1.5**2 * 1e-3 ** 1.0)
    assert mu0 ** 3 == pytest.approx(expect, rel=1e-12)


def test_mu_sign_flip_factor(disk_greens):
    mesh, a = disk_greens
    base = SpikeConfig(1e-3, 0.5, [(0.6, 0.2)], (1, 1), d=1.5)
    flip = SpikeConfig(1e-3, 0.5, [(0.6, 0.2)], (1, -1), d=1.5)
    t = table_for(mesh, a, base)
    ratio = solve_mu(flip, t).mu[0] / solve_mu(base, t).mu[0]
    assert ratio == pytest.approx(math.exp(-2 * 8 * math.pi * t.G("q", "xi1") / 3.0), rel=1e-12)


def test_mu_bounds_flags(disk_greens):
    mesh, a = disk_greens
    cfg = SpikeConfig(1e-3, 0.5, [(0.6, 0.2)], (1, -1), d=1.5)
    mu = solve_mu(cfg, table_for(mesh, a, cfg))
    assert mu.bounds_ok.all()


# ---------------------------------------------------------------- admissible set


def test_coincident_points_inadmissible():
    cfg = SpikeConfig(1e-3, 0.5, [(0.1, 0.0), (0.1, 0.0)], d=1.0)
    rep = check_admissible(cfg)
    assert not rep.admissible and rep.margins["pair[1,2]"] < 0


def test_point_at_q_inadmissible():
    rep = check_admissible(SpikeConfig(1e-3, 0.5, [(0.0, 0.0)], d=1.0))
    assert not rep.admissible and rep.margins["q_dist[1]"] < 0


def test_polygon_admissible():
    eps = 1e-3
    L = abs(math.log(eps))
    cfg = SpikeConfig(eps, 0.5, regular_polygon((0, 0), 1 / L, 3), d=0.5)
    assert check_admissible(cfg).admissible


@given(st.floats(-3, -1.5), st.floats(0.05, 0.9), st.integers(1, 3))
def test_admissibility_monotone_in_eps(log_eps, r, m):
    pts = regular_polygon((0, 0), r, m)
    big = SpikeConfig(10**log_eps, 0.5, pts, d=1.0)
    small = SpikeConfig(10 ** (log_eps - 1), 0.5, pts, d=1.0)
    if check_admissible(big).admissible:
        assert check_admissible(small).admissible


# ---------------------------------------------------------------- parameters


def test_integer_alpha_rejected():
    with pytest.raises(ValueError, match="non-integer"):
        SpikeConfig(1e-3, 1.0)
    with pytest.raises(ValueError):
        SpikeConfig(1e-3, -1.5)


def test_exp_mode_needs_positive_signs():
    with pytest.raises(ValueError):
        SpikeConfig(1e-3, 0.5, [(0.1, 0)], (1, -1), mode="exp")


@given(non_integer_alpha)
def test_norm_defaults_valid(alpha):
    p = NormParams.default(alpha).validate(alpha)
    assert all(abs(p.p - e) > 1e-6 for e in excluded_p(alpha))


def test_excluded_p_rejected():
    alpha = -0.4
    for p in excluded_p(alpha):
        if 1 < p < 2:
            with pytest.raises(ValueError):
                NormParams(alpha_hat=-0.45, p=p).validate(alpha)
