"""Space-decoupled learning for continuous image transition.

Features of an input frame pair are split into a translatable part, blended
linearly by the control parameter t, and a synthesized part, enabling frame
interpolation at arbitrary t.
"""

from .model import FeatureSplit, ModelConfig, SdlModel
from .tensor import Parameter, Tape, Tensor, backward

__all__ = [
    "FeatureSplit",
    "ModelConfig",
    "Parameter",
    "SdlModel",
    "Tape",
    "Tensor",
    "backward",
]
