"""RGB-D salient object detection with depth-guided message passing, on a small numpy autodiff engine."""

from dmpnet.kernels import BACKEND
from dmpnet.tensor import Tape, Tensor, backward

__version__ = "0.1.0"

__all__ = ["BACKEND", "Tape", "Tensor", "backward", "__version__"]
