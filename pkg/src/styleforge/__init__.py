"""Single-pass universal style transfer with ArtNet and PhotoNet."""

from .architectures import (
    ArchitectureSpec,
    Kind,
    MST,
    Model,
    TransferKind,
    aggregate_features,
    build,
    placement,
    reconstruct,
    stylize,
)
from .codec import Encoder, WeightArchive, encode, load_weights, standin_weights
from .training import TrainConfig, perceptual_loss, recon_loss, total_loss, train

__version__ = "0.1.0"
