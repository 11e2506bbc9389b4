"""attntrack: a desk-scale single-object tracker built from first principles.

Feature matching between a template and a search patch is done by a
transformer encoder-decoder instead of cross-correlation; localization
uses a center heatmap with offset and size regression maps; an optional
online classifier branch adapts to appearance changes during inference
via Gauss-Newton / conjugate-gradient updates.
"""

from .errors import (ConfigurationError, ShapeError, TrackingError,
                     TrainingDivergence)
from .localize import BoundingBox
from .pipeline import (ModelWeights, SequenceSpec, Tracker, TrackerConfig,
                       TrainSettings, build_model, evaluate,
                       generate_synthetic_sequence, load_model, save_model,
                       track_sequence, train_toy)
from .tensor import Tensor, no_grad

__version__ = "0.1.0"

__all__ = [
    "BoundingBox", "ConfigurationError", "ModelWeights", "SequenceSpec",
    "ShapeError", "Tensor", "Tracker", "TrackerConfig", "TrackingError",
    "TrainSettings", "TrainingDivergence", "build_model", "evaluate",
    "generate_synthetic_sequence", "load_model", "no_grad", "save_model",
    "track_sequence", "train_toy", "__version__",
]
