"""Multi-spike solutions of the anisotropic sinh-Poisson equation with a Hardy/Henon weight."""

from .assembly import ApproxField, apply_L, assemble, nonlinear_N, residual_R, star_norm
from .fullsolve import SolveResult, SpikeReport, extract_spikes, newton_solve
from .geometry import DomainSpec, Mesh, build_mesh, straighten
from .green import AnisotropyField, GreenTable, solve_green
from .profiles import MuVector, NormParams, SpikeConfig, check_admissible, solve_mu
from .reduction import OptimizerTrace, energy_expansion, energy_quadrature, maximize_F

__version__ = "0.1.0"
