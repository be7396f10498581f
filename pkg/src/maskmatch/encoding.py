"""Quantization of unit vectors and their coefficient packing into R_t.

A batch of up to ``delta`` rows is laid out block by block with every row
reversed, while a query is laid out in natural order. In the negacyclic
product the coefficient at degree ``(i+1)*d - 1`` is then exactly the inner
product of row ``i`` with the query. The top ``d`` coefficients of a batch are
kept zero so that no target coefficient ever receives a wrapped term.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ring import T, ParameterError, RingParams, RingPoly

# precision scales tried, finest first, when picking a default
PREFERRED_SCALES = (10_000, 400, 100, 10)

VEC_MAGIC = b"CMVE"
_VEC_HEADER = struct.Struct("<4sIQ4s")
_F32_TAG = b"f32\0"


class DomainError(ValueError):
    """Input outside the domain of an encoding operation."""


@dataclass(frozen=True)
class QuantParams:
    """Dimension ``d``, integer scale ``p`` (1/precision) and plaintext modulus ``t``."""

    d: int
    p: int
    t: int

    def __post_init__(self):
        if self.d < 1 or self.p < 1:
            raise ParameterError("d and p must be positive")
        if 2 * self.bound >= self.t:
            raise ParameterError(
                f"p={self.p}, d={self.d}: p^2 + p*d/2 must stay below t/2={self.t // 2}"
            )

    @classmethod
    def from_precision(cls, d: int, precision: float, t: int) -> "QuantParams":
        return cls(d, round(1 / precision), t)

    @classmethod
    def default_for(cls, d: int, t: int) -> "QuantParams":
        """Finest preferred scale that also leaves room for threshold comparison."""
        for p in PREFERRED_SCALES:
            if comparison_headroom_ok(d, p, t):
                return cls(d, p, t)
        p = 1
        while comparison_headroom_ok(d, p + 1, t):
            p += 1
        return cls(d, p, t)

    @property
    def precision(self) -> float:
        return 1 / self.p

    @property
    def bound(self) -> int:
        """Upper bound on ``|<a, b>|`` for two quantized unit vectors."""
        return self.p * self.p + math.ceil(self.p * self.d / 2)

    def check_ring(self, params: RingParams):
        if params.t != self.t:
            raise ParameterError("quantization and ring use different t")
        if self.d > params.N - self.d:
            raise ParameterError(f"d={self.d} leaves no room for a row in N={params.N}")

    def threshold(self, tau: float) -> int:
        """Integer threshold for cosine ``tau``: a match is ``<a,b> > floor(tau * p^2)``."""
        return math.floor(tau * self.p * self.p)


def comparison_headroom_ok(d: int, p: int, t: int) -> bool:
    """``ip - ts - 1`` must stay in the signed range of ``Z_t`` for any clamped threshold."""
    bound = p * p + math.ceil(p * d / 2)
    return 2 * bound + 1 <= t // 2


@dataclass(frozen=True, eq=False)
class QuantVector:
    values: np.ndarray
    qp: QuantParams

    def __eq__(self, other):
        if not isinstance(other, QuantVector):
            return NotImplemented
        return self.qp == other.qp and bool(np.array_equal(self.values, other.values))

    __hash__ = None

    @property
    def residues(self) -> np.ndarray:
        return self.values % self.qp.t


def round_half_away(x: np.ndarray) -> np.ndarray:
    return (np.sign(x) * np.floor(np.abs(x) + 0.5)).astype(np.int64)


def quantize_batch(vectors, qp: QuantParams) -> np.ndarray:
    """Normalize each row to unit length, scale by ``p`` and round; returns int64 ``(m, d)``."""
    v = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    if v.shape[1] != qp.d:
        raise DomainError(f"expected dimension {qp.d}, got {v.shape[1]}")
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    if np.any(norms == 0) or not np.all(np.isfinite(norms)):
        raise DomainError("cannot normalize a zero or non-finite vector")
    q = round_half_away(v / norms * qp.p)
    assert np.abs(q).max(initial=0) <= qp.p
    return q


def normalize_quantize(v, qp: QuantParams) -> QuantVector:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise DomainError("expected a single vector")
    return QuantVector(quantize_batch(v[None, :], qp)[0], qp)


def dequantized_inner(ip: int, qp: QuantParams) -> float:
    return ip / (qp.p * qp.p)


def rows_per_ciphertext(N: int, d: int) -> int:
    """``delta``: whole rows that fit below the ``d``-coefficient buffer."""
    if d > N - d:
        raise ParameterError(f"d={d} too large for N={N}")
    return (N - d) // d


def ciphertext_count(m: int, N: int, d: int) -> int:
    return -(-m // rows_per_ciphertext(N, d))


@dataclass(frozen=True, eq=False)
class PackedBatch:
    rows: np.ndarray
    poly: RingPoly
    occupancy: int
    start: int = 0


def encode_matrix(rows, params: RingParams, d: int, start: int = 0) -> PackedBatch:
    """Pack rows (QuantVectors or an int array) into row slots ``start, start+1, ...``.

    Row slot ``i`` holds its elements reversed at degrees ``[i*d, (i+1)*d)``.
    """
    delta = rows_per_ciphertext(params.N, d)
    if isinstance(rows, (list, tuple)) and rows and isinstance(rows[0], QuantVector):
        arr = np.array([r.values for r in rows], dtype=np.int64)
    else:
        arr = np.asarray(rows, dtype=np.int64)
    if arr.size == 0:
        arr = np.zeros((0, d), dtype=np.int64)
    if arr.ndim != 2 or arr.shape[1] != d:
        raise DomainError(f"rows must have dimension {d}")
    n = arr.shape[0]
    if start < 0 or start + n > delta:
        raise DomainError(f"{n} rows from slot {start} exceed delta={delta}")
    coeffs = np.zeros(params.N, dtype=np.int64)
    coeffs[start * d:(start + n) * d] = arr[:, ::-1].reshape(-1)
    return PackedBatch(arr, RingPoly(params, coeffs, T), n, start)


def encode_query(b, params: RingParams, d: int | None = None) -> RingPoly:
    values = b.values if isinstance(b, QuantVector) else np.asarray(b, dtype=np.int64)
    if d is not None and len(values) != d:
        raise DomainError(f"expected dimension {d}, got {len(values)}")
    if len(values) > params.N:
        raise DomainError("query longer than the ring degree")
    coeffs = np.zeros(params.N, dtype=np.int64)
    coeffs[:len(values)] = values
    return RingPoly(params, coeffs, T)


def target_indices(d: int, delta: int) -> np.ndarray:
    return np.arange(1, delta + 1, dtype=np.int64) * d - 1


def extract_targets(p: RingPoly, d: int, delta: int) -> np.ndarray:
    idx = target_indices(d, delta)
    if len(idx) and idx[-1] >= p.N:
        raise DomainError("target index beyond ring degree")
    return np.asarray(p.coeffs[idx], dtype=np.int64)


def write_vectors(path, vectors) -> None:
    """Binary vector file: header then row-major little-endian float32 values."""
    v = np.atleast_2d(np.asarray(vectors, dtype="<f4"))
    with open(path, "wb") as fh:
        fh.write(_VEC_HEADER.pack(VEC_MAGIC, v.shape[1], v.shape[0], _F32_TAG))
        fh.write(v.tobytes())


def read_vectors(path) -> np.ndarray:
    """Read a binary vector file, or a text file with one vector per line."""
    data = Path(path).read_bytes()
    if data[:4] != VEC_MAGIC:
        rows = [line.split() for line in data.decode().splitlines() if line.strip()]
        return np.array(rows, dtype=np.float64)
    magic, d, count, tag = _VEC_HEADER.unpack_from(data)
    if tag != _F32_TAG:
        raise DomainError(f"unsupported vector encoding {tag!r}")
    body = data[_VEC_HEADER.size:]
    if len(body) != 4 * d * count:
        raise DomainError("vector file length does not match its header")
    return np.frombuffer(body, dtype="<f4").reshape(count, d).astype(np.float64)
