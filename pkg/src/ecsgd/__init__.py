"""Error-compensated compressed SGD on a simulated parameter server."""

from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
