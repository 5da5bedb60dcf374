"""External feature extractor speaking the FEX0 stdin/stdout protocol."""

from .descriptor import DIM, describe
from .protocol import serve

__version__ = "0.1.0"
