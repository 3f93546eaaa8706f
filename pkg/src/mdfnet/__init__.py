"""Motif Difference Field encoding, FCN classification and Grad-CAM motif ranking."""
from .encoder import encode, encode_batch, max_displacement, minmax_normalize
from .explainer import explain, ordinal_pattern
from .fcn import FCN, TrainConfig, TrainedArtifact

__version__ = "0.1.0"
