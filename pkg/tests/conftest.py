import functools

import numpy as np
import pytest
from hypothesis import settings

from sinhpoisson.geometry import DomainSpec, build_mesh
from sinhpoisson.green import AnisotropyField

settings.register_profile("ci", max_examples=25, deadline=None)
settings.load_profile("ci")


@functools.lru_cache(maxsize=None)
def cached_mesh(kind, params, n_r, n_theta, grading=0.0):
    return build_mesh(DomainSpec(kind, params), n_r, n_theta, grading=grading)


@pytest.fixture(scope="session")
def big_disk_mesh():
    """Radius-5 disk, clustered toward the centre; used by the spike tests."""
    return cached_mesh("disk", (5.0,), 64, 128, 3.0)


@pytest.fixture(scope="session")
def wide_bump():
    return AnisotropyField("gaussian", 1.0, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def spike_table(mesh, a, cfg):
    from sinhpoisson.green import GreenTable

    t = GreenTable(mesh, a, cfg.alpha)
    t.add("q", cfg.qv, cfg.q_location)
    for i in range(cfg.m):
        t.add(cfg.source_id(i + 1), cfg.xi[i], cfg.location(i + 1))
    return t


def build_field(mesh, a, cfg):
    """Green table, mu and assembled ansatz for one configuration."""
    from sinhpoisson.assembly import assemble
    from sinhpoisson.profiles import solve_mu

    t = spike_table(mesh, a, cfg)
    mu = solve_mu(cfg, t)
    return assemble(mesh, a, cfg, mu), t, mu
