"""Private threshold matching of encrypted vector databases.

A verifier learns only whether any stored vector has cosine similarity above
its threshold with a query. Inner products are computed under BFV
homomorphic encryption with coefficient packing, then revealed as one bit
through two-party secret-shared comparison.
"""

from .encoding import QuantParams, quantize_batch, read_vectors, write_vectors
from .protocol import KeyMaterial, ProtocolConfig, SessionResult, System
from .ring import RingParams

__all__ = [
    "KeyMaterial",
    "ProtocolConfig",
    "QuantParams",
    "RingParams",
    "SessionResult",
    "System",
    "quantize_batch",
    "read_vectors",
    "write_vectors",
]
__version__ = "0.1.0"
