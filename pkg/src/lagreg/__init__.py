"""Lagrangian diffeomorphic image registration.

Velocity-based registration with characteristics traced by RK4, pull-back
(advection) and particle-in-cell (mass-preserving) transport, and a
multilevel Gauss-Newton-Krylov solver.
"""
from .characteristics import FlowError, FlowResult, flow, flow_inverse_check
from .field import ImageField, VelocityField, interp_image, interp_velocity
from .grid import Grid, cell_centers, prolong_velocity, restrict_image
from .objective import HessianOperator, ObjectiveReport, RegOperator, RegistrationProblem, evaluate, regularize, ssd
from .pde_solve import PushForward, advect, build_pushforward, kernel_cdf, transport_mass
from .problems import dice, distance_reduction, jacobian_field, make_cshape, make_gaussian_mp
from .solver import (
    Level,
    MultilevelSchedule,
    RegistrationConfig,
    RegistrationResult,
    SolverOptions,
    gauss_newton,
    jacobi_preconditioner,
    multilevel_register,
    pcg,
    sgs_preconditioner,
    spectral_preconditioner,
)

__version__ = "0.1.0"
