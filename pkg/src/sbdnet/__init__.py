"""Stochastic geometry and queueing tools for wireless networks of dipoles
with random arrivals and SINR-dependent departures."""

__version__ = "0.1.0"

from .errors import (ConfigError, DegenerateInput, DomainError, ExplosionStop, InconclusiveWarning, NoConvergence,
                     NonSymmetricWarning, NumericalFailure)
from .model import (ClassProfile, PathLoss, SymmetricProfile, TorusDomain, critical_rate, hypergeometric_alpha,
                    lambda_bounds, load_factor, overlap_sum, overlap_sums, torus_distance)
from .quadrature import QuadratureSettings, interference_functional, laplace_integral, pathloss_integral
from .simulation import NetworkState, SimConfig, Trajectory, coupled_simulate, simulate, transmission_rate
from .lattice import (Tessellation, build_discrete_pathloss, lattice_rate, lattice_simulate, lattice_thresholds,
                      r_score, transience_threshold)
from .fluid import fluid_drift, integrate_fluid, stability_witness_check
from .heuristics import (SolverSettings, cavity_fixed_point, poisson_critical_rate, poisson_fixed_point,
                         poisson_fixed_point_symmetric)
from .stats import StabilitySettings, classify_stability, ergodic_density, little_check, staying_times

__all__ = [name for name in dir() if not name.startswith("_")]
