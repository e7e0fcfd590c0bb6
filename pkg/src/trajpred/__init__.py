"""Trajectory-conditioned embedding prediction for instrument-verb-target
action recognition, with a synthetic motion-disambiguation benchmark."""

from .config import RunConfig
from .model import TrajPredModel, build_model, forward_batch, forward_single
from .ndcore import Tensor, backward, no_grad
from .text import TripletVocabulary, surgical_vocabulary
from .synthdata import SceneSpec, build_dataset, default_vocabulary, gen_clip

__version__ = "0.1.0"

__all__ = [
    "RunConfig",
    "SceneSpec",
    "Tensor",
    "TrajPredModel",
    "TripletVocabulary",
    "backward",
    "build_dataset",
    "build_model",
    "default_vocabulary",
    "forward_batch",
    "forward_single",
    "gen_clip",
    "no_grad",
    "surgical_vocabulary",
    "__version__",
]
