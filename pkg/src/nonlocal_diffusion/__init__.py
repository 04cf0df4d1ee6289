"""Diffusion semigroups with nonlocal Dirichlet boundary conditions on unbounded domains.

Exhaustion by bounded truncations, resolvents and implicit-Euler semigroups,
Lyapunov criteria, invariant measures and a Monte Carlo oracle for the
diffusion with instantaneous return.
"""

from .config import RunConfig, load_preset
from .domain import DomainSpec, Grid, build_exhaustion, cutoff_rho
from .invariant import MeasureVector, abel_invariant, convergence_study, stationary_solve, tv_distance
from .lyapunov import LyapunovSpec, modify_lyapunov, verify_invariant_lyapunov, verify_uniqueness_lyapunov
from .measures import AtomicMeasure, ParetoDensity, UniformBallDensity, truncate_measure
from .montecarlo import estimate_expectation, estimate_invariant, simulate_paths
from .operators import CoefficientField, builtin_operator, check_ellipticity, drift_balance
from .resolvent import DiscreteOperator, GridFunction, assemble, build_operator, exhaust_resolvent, solve_resolvent
from .semigroup import SemigroupEvolver, evolve, markov_defect

__version__ = "0.1.0"
