"""Online temporally consistent stereo disparity: stereo, rigid motion alignment and gated fusion."""
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
