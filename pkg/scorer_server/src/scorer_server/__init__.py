"""Server side of the noise-prediction wire protocol."""

from .server import ScorerServer, serve
from .wire import WireError

__all__ = ["ScorerServer", "serve", "WireError"]
