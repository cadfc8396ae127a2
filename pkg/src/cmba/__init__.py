"""Model-based observation-perturbation attacks on cooperative multi-agent policies."""
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
