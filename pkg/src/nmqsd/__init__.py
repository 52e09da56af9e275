"""Non-Markovian quantum state diffusion with exact time-local O-operators.

Trajectory-level simulation of open quantum systems driven by colored
Gaussian noise: the memory integral over the noise history is replaced by
operator kernel tables propagated alongside the trajectories, so each
stochastic path costs the same as a Markovian one.  Three model families
ship with exact operator bases (qubit registers with collective lowering,
single angular momentum, coupled cavity arrays), together with brute-force
reference solvers for cross-validation.
"""

from .config import RunConfig, dump_config, initial_to_state, load_config, validate_config
from .correlations import (
    DiscreteModes,
    MomentCheck,
    NoisePath,
    OrnsteinUhlenbeck,
    TimeGrid,
    covariance_matrix,
    moment_suite,
    sample_block_cholesky,
)
from .ensemble import EnsembleResult, resolve_initial_state, run_ensemble, worker_count
from .errors import (
    BasisIncompleteError,
    BasisMismatchError,
    ClosureDivergedError,
    ConfigError,
    InvalidCorrelationError,
    InvalidModelError,
    InvalidParameterError,
    InvalidStateError,
    KernelBlowupError,
    NmqsdError,
    ResourceLimitError,
    TrajectoryDivergedError,
    TruncationError,
    UnsupportedSizeError,
)
from .kernels import (
    KernelField,
    ProjectedRHS,
    consistency_residual,
    derive_projected_rhs,
    propagate_kernels,
    propagate_ncavity_kernels,
)
from .models import (
    HilbertSpace,
    ModelSpec,
    build_angular_model,
    build_ncavity_model,
    build_nqubit_model,
    excitation_numbers,
)
from .obasis import OBasis, build_basis, closure_discover, qubit_table_counts, span_residual
from .observables import (
    ObservableSeries,
    coherence,
    fidelity,
    fidelity_series,
    fidelity_with_stderr,
    population,
    trace_distance,
    trace_distance_series,
    werner_state,
)
from .oracles import (
    markov_rate_ou,
    solve_discrete_modes,
    solve_lindblad,
    solve_pseudomode_ou,
)
from .trajectories import Trajectory, run_linear, run_nonlinear, step_linear

__version__ = "0.1.0"

__all__ = [
    "BasisIncompleteError",
    "BasisMismatchError",
    "ClosureDivergedError",
    "ConfigError",
    "DiscreteModes",
    "EnsembleResult",
    "HilbertSpace",
    "InvalidCorrelationError",
    "InvalidModelError",
    "InvalidParameterError",
    "InvalidStateError",
    "KernelBlowupError",
    "KernelField",
    "ModelSpec",
    "MomentCheck",
    "NmqsdError",
    "NoisePath",
    "OBasis",
    "ObservableSeries",
    "OrnsteinUhlenbeck",
    "ProjectedRHS",
    "ResourceLimitError",
    "RunConfig",
    "TimeGrid",
    "Trajectory",
    "TrajectoryDivergedError",
    "TruncationError",
    "UnsupportedSizeError",
    "build_angular_model",
    "build_basis",
    "build_ncavity_model",
    "build_nqubit_model",
    "closure_discover",
    "coherence",
    "consistency_residual",
    "covariance_matrix",
    "derive_projected_rhs",
    "dump_config",
    "excitation_numbers",
    "fidelity",
    "fidelity_series",
    "fidelity_with_stderr",
    "initial_to_state",
    "load_config",
    "markov_rate_ou",
    "moment_suite",
    "population",
    "propagate_kernels",
    "propagate_ncavity_kernels",
    "qubit_table_counts",
    "resolve_initial_state",
    "run_ensemble",
    "run_linear",
    "run_nonlinear",
    "sample_block_cholesky",
    "solve_discrete_modes",
    "solve_lindblad",
    "solve_pseudomode_ou",
    "span_residual",
    "step_linear",
    "trace_distance",
    "trace_distance_series",
    "validate_config",
    "werner_state",
    "worker_count",
]
