import math

import numpy as np
import pytest

from sinhpoisson.geometry import regular_polygon
from sinhpoisson.profiles import SpikeConfig, check_admissible
from sinhpoisson.reduction import (
    energy_expansion,
    energy_mass_part,
    initial_configuration,
    leading_coefficient,
    maximize_F,
)

from conftest import build_field, cached_mesh, spike_table

MESH_ARGS = ("disk", (5.0,), 32, 64, 3.0)


@pytest.fixture(scope="module")
def mesh():
    return cached_mesh(*MESH_ARGS)


def two_spikes(eps=1e-3, signs=(1, 1, -1), pts=((0.4, 0.1), (-0.2, 0.35))):
    return SpikeConfig(eps, 0.5, list(pts), signs, d=1.5)


def test_breakdown_sums_to_F(mesh, wide_bump):
    cfg = two_spikes()
    rep = energy_expansion(cfg, spike_table(mesh, wide_bump, cfg))
    assert sum(rep.breakdown.values()) == pytest.approx(rep.F, rel=1e-14)
    assert set(rep.breakdown) == {"q.block", "q.interaction", "xi1.block", "xi1.interaction",
                                  "xi2.block", "xi2.interaction"}


def test_unsigned_matches_when_all_positive(mesh, wide_bump):
    cfg = two_spikes(signs=(1, 1, 1))
    rep = energy_expansion(cfg, spike_table(mesh, wide_bump, cfg))
    assert rep.F_unsigned == pytest.approx(rep.F, rel=1e-14)


def test_sign_products_matter(mesh, wide_bump):
    cfg = two_spikes()
    rep = energy_expansion(cfg, spike_table(mesh, wide_bump, cfg))
    assert abs(rep.F - rep.F_unsigned) > 1e-6 * abs(rep.F)


def test_permutation_invariant(mesh, wide_bump):
    a = two_spikes(signs=(1, 1, -1), pts=((0.4, 0.1), (-0.2, 0.35)))
    b = two_spikes(signs=(1, -1, 1), pts=((-0.2, 0.35), (0.4, 0.1)))
    Fa = energy_expansion(a, spike_table(mesh, wide_bump, a)).F
    Fb = energy_expansion(b, spike_table(mesh, wide_bump, b)).F
    assert Fa == pytest.approx(Fb, rel=1e-10)


def test_rotation_invariant_on_radial_data(wide_bump):
    mesh = cached_mesh("disk", (5.0,), 64, 128, 3.0)
    base = np.array([[0.4, 0.1], [-0.2, 0.35]])
    vals = []
    for ang in (0.0, 0.7, 2.1):
        c, s = math.cos(ang), math.sin(ang)
        cfg = two_spikes(pts=base @ np.array([[c, s], [-s, c]]))
        vals.append(energy_expansion(cfg, spike_table(mesh, wide_bump, cfg)).F)
    assert np.ptp(vals) < 1e-3 * abs(vals[0])


def test_leading_coefficient_formula():
    assert leading_coefficient(0.5, 2, 2.0) == pytest.approx(16 * math.pi * 2.0 * 3.5)


def test_mass_part_against_mass_constants(mesh, wide_bump):
    # eps^2 int a w (e^U + e^-U) ~ sum_i c_i a(xi_i)
    cfg = two_spikes(eps=1e-3, signs=(1, -1, 1))
    fld, _, _ = build_field(mesh, wide_bump, cfg)
    expect = sum(cfg.mass_constant(i) * float(wide_bump(p)) for i, p in
                 enumerate([cfg.qv, *cfg.xi]))
    assert energy_mass_part(fld) == pytest.approx(expect, rel=0.05)


def test_initial_polygon():
    eps = 1e-3
    pts = initial_configuration(None, (0, 0), "interior", eps, 3, 3)
    np.testing.assert_allclose(np.linalg.norm(pts, axis=1), 1 / abs(math.log(eps)))


@pytest.fixture(scope="module")
def one_spike_run(mesh, wide_bump):
    eps = 1e-3
    tpl = SpikeConfig(eps, 0.5, regular_polygon((0, 0), 1 / abs(math.log(eps)), 1), (1, 1), d=1.5)
    return tpl, maximize_F(mesh, wide_bump, tpl)


def test_optimizer_iterates_admissible_and_monotone(one_spike_run, mesh):
    tpl, trace = one_spike_run
    Fs = [F for _, F, _ in trace.iterates]
    assert all(np.isfinite(Fs))
    assert all(b >= a - 1e-12 * abs(a) for a, b in zip(Fs, Fs[1:]))
    for pts, _, _ in trace.iterates:
        assert check_admissible(tpl.with_points(pts), mesh.domain).admissible


def test_optimizer_deterministic(one_spike_run, mesh, wide_bump):
    tpl, trace = one_spike_run
    again = maximize_F(mesh, wide_bump, tpl)
    assert len(again.iterates) == len(trace.iterates)
    np.testing.assert_array_equal(again.best[0], trace.best[0])
    assert again.best[1] == trace.best[1]


def test_optimizer_interior(one_spike_run):
    _, trace = one_spike_run
    assert trace.status == "interior-max"
    assert min(trace.relative_margins().values()) >= 0.1


def test_optimizer_rejects_bad_start(mesh, wide_bump):
    tpl = SpikeConfig(1e-3, 0.5, [(0.2, 0.0)], (1, 1), d=1.5)
    with pytest.raises(ValueError, match="admissible"):
        maximize_F(mesh, wide_bump, tpl, start=[(0.0, 0.0)])
