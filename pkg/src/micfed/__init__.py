"""micfed: unsupervised clustered federated learning for microphone nodes.

A desk-scale simulator and library that groups the microphone nodes of an
acoustic sensor network by their dominant sound source.  Nodes train a small
convolutional autoencoder on locally observed log-mel features and share only
parameter updates; the server clusters nodes by cosine similarity of those
updates and derives per-node membership values for downstream fusion.
"""

from micfed.vecspace import (
    DegenerateUpdateError,
    SimilarityMatrix,
    cosine_similarity,
    similarity_matrix,
)
from micfed.nn import (
    Autoencoder,
    LayerSpec,
    build_autoencoder,
    load_checkpoint,
    save_checkpoint,
)
from micfed.features import AudioClip, FeatureSegment, MelFilterbank
from micfed.acoustics import Scenario, SyntheticRIR, generate_scenario
from micfed.cfl import CflConfig, CflResult, run_unsupervised_cfl
from micfed.membership import MembershipReport, membership_values, threshold_mvs
from micfed.config import RunConfig

__version__ = "0.1.0"

__all__ = [
    "AudioClip",
    "Autoencoder",
    "CflConfig",
    "CflResult",
    "DegenerateUpdateError",
    "FeatureSegment",
    "LayerSpec",
    "MelFilterbank",
    "MembershipReport",
    "RunConfig",
    "Scenario",
    "SimilarityMatrix",
    "SyntheticRIR",
    "build_autoencoder",
    "cosine_similarity",
    "generate_scenario",
    "load_checkpoint",
    "membership_values",
    "run_unsupervised_cfl",
    "save_checkpoint",
    "similarity_matrix",
    "threshold_mvs",
]
