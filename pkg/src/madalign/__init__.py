"""Two-view latent variable alignment.

Learns a shared/private factorized latent space from a few aligned anchor
pairs and recovers the correspondence of the remaining points by matching
posterior modes in the shared subspace.
"""
from .align import (
    AlignmentResult,
    DistanceMatrix,
    LatentModeSet,
    align_myopic,
    align_nonmyopic,
    distance_matrix,
    hungarian_assignment,
    infer_latent,
    infer_latents,
)
from .datagen import (
    ToyConfig,
    ToyDataset,
    anchor_split,
    generate_toy,
    load_matrix,
    save_matrix,
    split_views,
)
from .errors import (
    AlignmentPreconditionError,
    ConditioningError,
    InferenceError,
    MadError,
    NoSharedSubspaceError,
    NumericDomainError,
    ParseError,
    ShapeError,
)
from .kernels import ArdKernelParams, GaussianLatent, InducingInputs, kernel_matrix, kl_to_prior, psi_statistics
from .metrics import (
    MisalignmentCurve,
    generate_misalignment,
    kendall_tau_distance,
    misalignment_curve,
)
from .model import (
    MadModel,
    ModelConfig,
    RelevanceProfile,
    ViewModel,
    fit,
    free_energy,
    initialize,
    load_model,
    relevance_profile,
    save_model,
    train,
)
from .optimize import OptimizerConfig

__version__ = "0.1.0"
