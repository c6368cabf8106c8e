"""Subspace unmixing by marginal subspace detection."""

from .coherence import (
    CoherenceProfile,
    SubspaceCollection,
    average_mixing_coherence,
    average_subspace_coherence,
    check_coherence_conditions,
    coherence_lower_bound,
    coherence_profile,
    local_two_subspace_coherence,
    subspace_coherence,
    worst_case_coherence,
)
from .linalg import (
    BasisMatrix,
    DegenerateInputError,
    InvalidArgumentError,
    haar_stiefel_sample,
    operator_norm_2,
    orthonormalize,
    projection_energy,
)
from .model import NoiseSpec
from .msd import C0, DetectionResult, ThresholdParams, detect, guaranteed_set

__version__ = "0.1.0"

__all__ = [
    "C0",
    "BasisMatrix",
    "CoherenceProfile",
    "DegenerateInputError",
    "DetectionResult",
    "InvalidArgumentError",
    "NoiseSpec",
    "SubspaceCollection",
    "ThresholdParams",
    "average_mixing_coherence",
    "average_subspace_coherence",
    "check_coherence_conditions",
    "coherence_lower_bound",
    "coherence_profile",
    "detect",
    "guaranteed_set",
    "haar_stiefel_sample",
    "local_two_subspace_coherence",
    "operator_norm_2",
    "orthonormalize",
    "projection_energy",
    "subspace_coherence",
    "worst_case_coherence",
]
