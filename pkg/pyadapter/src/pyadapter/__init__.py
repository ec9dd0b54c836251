"""Reference external adapter for the coedg/1 wire protocol."""

__version__ = "0.1.0"

from .server import dispatch, serve
from .simulator import AdapterFault, SimulatedModel, UnsupportedOperation

__all__ = [
    "AdapterFault",
    "SimulatedModel",
    "UnsupportedOperation",
    "__version__",
    "dispatch",
    "serve",
]
