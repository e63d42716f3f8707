"""Spatial SEIR model with region-wise diffusion controls.

Finite-volume simulation, tangent/adjoint sensitivities and projected-gradient
optimization of the diffusion coefficients.
"""

__version__ = "0.1.0"

from .control import (  # noqa: E402
    CostConfig, OptimalityReport, OptimizerOptions, ReducedProblem, evaluate_cost, optimality_residual,
    optimize, project, reduced_gradient, weighted_means,
)
from .forward import SEIRModel, Trajectory, mass_history, simulate, step_forward  # noqa: E402
from .grid import Box, Domain, SubdomainPartition, TimeGrid, assemble_diffusion, build_grid, integrate  # noqa: E402
from .model import (  # noqa: E402
    ControlVector, GammaTable, MobilityLaw, NonlinearDiffusion, Parameters, StateFields, TransmissionRate,
    eval_beta, eval_beta_prime, expand_controls,
)
from .sensitivity import (  # noqa: E402
    LinearizedCoefficients, assemble_coeffs, duality_gap, solve_adjoint, solve_tangent,
)
