"""Smile authenticity from facial-landmark dynamics.

Two information streams about the same video: handcrafted descriptors of
onset/apex/offset dynamics in the lip, eye, and cheek regions, and a
learned temporal representation of the canonicalized keypoint clip. A
configurable fusion layer joins them ahead of a sigmoid classifier; the
element-wise (hadamard) product is the flagship strategy and adds zero
parameters beyond the two shared projections every strategy uses.
"""

__version__ = "0.1.0"

from . import kernels
from .data import Dataset, SyntheticConfig, build_dataset, synth_generate
from .dmarker import DMARKER_FEATURE_NAMES, N_FEATURES, extract_dmarker
from .errors import SmileFusionError
from .fusion import BASELINE_KIND, FUSION_KINDS, FusionLayer
from .geometry import LandmarkSequence
from .model import BackboneConfig, SmileModel, load_checkpoint, save_checkpoint
from .tensor import Parameter, Tensor, grad_check
from .training import TrainConfig, crossval, evaluate, train

__all__ = [
    "BASELINE_KIND",
    "BackboneConfig",
    "DMARKER_FEATURE_NAMES",
    "Dataset",
    "FUSION_KINDS",
    "FusionLayer",
    "LandmarkSequence",
    "N_FEATURES",
    "Parameter",
    "SmileFusionError",
    "SmileModel",
    "SyntheticConfig",
    "Tensor",
    "TrainConfig",
    "__version__",
    "build_dataset",
    "crossval",
    "evaluate",
    "extract_dmarker",
    "grad_check",
    "kernels",
    "load_checkpoint",
    "save_checkpoint",
    "synth_generate",
    "train",
]
