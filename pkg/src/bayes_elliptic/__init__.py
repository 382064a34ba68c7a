"""Bayesian inversion of the diffusivity in a 2-D elliptic boundary-value problem.

P1 finite elements on a disk mesh, Matérn and eigen-series Gaussian priors,
and a preconditioned Crank-Nicolson sampler for the posterior of f given
noisy point evaluations of the PDE solution.
"""
__version__ = "0.1.0"

from .mesh import (DISK_RADIUS, MeshError, NodalField, OutsideDomainError, TriangularMesh,
                   build_disk_mesh, build_polygon_mesh, disk_node_count, interpolate,
                   interpolation_matrix, locate_point, read_mesh, write_mesh)
from .fem import (EllipticityError, ForwardOperator, SolverError, assemble_load, assemble_mass,
                  assemble_stiffness, evaluate_solution, solve_forward)
from .eigen import EigenBasis, bessel_j_zeros, eigen_disk_analytic, eigen_fem, weyl_fit
from .priors import (LinkFunction, MaternConfig, PriorSampler, SeriesPriorConfig, apply_link,
                     build_matern_sampler, build_series_sampler, matern_cov, matern_kernel,
                     prior_scaling)
from .model import FourBumps, LogLikelihood, ObservationSet, generate_data, ground_truth_field, log_likelihood
from .pcn import (ChainError, ChainRecord, PcnConfig, PosteriorTarget, credible_band, l2_error,
                  pcn_step, posterior_mean, run_chain, tune_delta)

__all__ = [name for name in dir() if not name.startswith("_")]
