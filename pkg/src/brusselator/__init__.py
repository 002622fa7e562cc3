"""Six-component Brusselator on boxes: Galerkin solver, bound checks, dimension estimates."""
from .bounds import (BoundSet, BoundVerdict, beta, compute_bound_set, inequality_residuals,
                     transient_envelope_vz, verify_absorption)
from .integrate import (BlowUpError, IntegratorConfig, Trajectory, fd_reference_simulate,
                        random_initial_state, simulate, step)
from .model import Parameters, default_parameters, reaction_jacobian_pointwise, reaction_pointwise
from .spectral import (DomainSpec, ModalState, SineBasis, build_basis, embedding_constants,
                       norms, to_grid, to_modes)
from .tangent import (analytic_dimension_bound, evolve_tangents, q3_constant, qm_average,
                      tangent_rhs, trace_qm)

__all__ = [
    "BlowUpError", "BoundSet", "BoundVerdict", "DomainSpec", "IntegratorConfig", "ModalState",
    "Parameters", "SineBasis", "Trajectory", "analytic_dimension_bound", "beta",
    "build_basis", "compute_bound_set", "default_parameters", "embedding_constants",
    "evolve_tangents", "fd_reference_simulate", "inequality_residuals", "norms", "q3_constant",
    "qm_average", "random_initial_state", "reaction_jacobian_pointwise", "reaction_pointwise",
    "simulate", "step", "tangent_rhs", "to_grid", "to_modes", "trace_qm",
    "transient_envelope_vz", "verify_absorption",
]

__version__ = "0.1.0"
