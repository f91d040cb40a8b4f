"""Audio-visual dialog answer generation, trained end to end from scratch."""

from .config import RunConfig
from .data import DialogExample, Vocabulary
from .model import Model
from .tensor import Tensor

__all__ = ["RunConfig", "DialogExample", "Vocabulary", "Model", "Tensor"]
__version__ = "0.1.0"
