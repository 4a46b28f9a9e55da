"""Communication-efficient distributed eigenspace estimation.

Workers eigensolve locally, ship one orthonormal basis each, and the
coordinator removes the per-worker orthogonal ambiguity with Procrustes
alignment before averaging.  Subpackages: linalg (kernels), models
(synthetic data), estimators (aggregation rules), metrics (distances
and rates), federation (transports and runners), experiments/cli
(reproducible sweeps).
"""

from .errors import (
    ConfigError,
    DimensionMismatch,
    EigenfedError,
    InvalidModelParams,
    MalformedFrame,
    MissingBound,
    NotOrthonormal,
    NotPSD,
    NotSymmetric,
    PayloadValidation,
    RankDeficient,
    VersionMismatch,
    WorkerFailed,
    WorkerTimeout,
    ZeroMatrix,
)
from .linalg import (
    OrthogonalTransform,
    SubspaceEstimate,
    numerical_rank,
    orthonormality_defect,
    procrustes_rotation,
    qr_orthonormalize,
    svd_orthonormalize,
    symmetrize,
    top_eigenspace,
)
from .models import (
    NodeDataset,
    SensingInstance,
    SpectralModel,
    discrete_node_datasets,
    discrete_uniform_atoms,
    gaussian_node_datasets,
    haar_orthogonal,
    local_covariance,
    model_m1,
    model_m2,
    realize_matrix,
    sample_discrete_uniform,
    sample_gaussian,
    sensing_instance,
    sensing_surrogate,
)
from .estimators import (
    AggregateSolution,
    LocalSolution,
    central_estimator,
    generic_align_average,
    iterative_refinement,
    naive_average,
    procrustes_fix_average,
    projector_average,
    sign_fix_average,
    solve_local,
)
from .metrics import (
    AssumptionReport,
    BoundInputs,
    bound_bounded_case,
    bound_simplified,
    bound_subgaussian,
    check_assumptions,
    deterministic_bound_rhs,
    intdim,
    spectral_norm_symmetric,
    subspace_dist2,
    subspace_distF,
)
from .federation import (
    CommAccounting,
    Message,
    MessageKind,
    Topology,
    decode_message,
    encode_message,
    frame_bytes,
    run_one_shot,
    run_parallel_align,
)
from .seeding import derive_seed

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
