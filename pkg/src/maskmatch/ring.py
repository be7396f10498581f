"""Polynomial arithmetic in Z_q[X]/(X^N+1) and Z_t[X]/(X^N+1)."""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .ntt import convolve_exact, crt_basis, modulus_primes, ntt_context

Q, T = "q", "t"
_TAG_CODE = {Q: 0, T: 1}
_CODE_TAG = {v: k for k, v in _TAG_CODE.items()}
POLY_MAGIC = b"RPLY"
_POLY_HEADER = struct.Struct("<4sIHB5x")


class ParameterError(ValueError):
    """Raised when operands live in different rings or parameters are invalid."""


def as_rng(rng=None) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


@dataclass(frozen=True)
class RingParams:
    """Ring degree ``N``, ciphertext modulus ``q`` and plaintext modulus ``t``.

    ``q`` is kept as the product of NTT-friendly primes in ``q_primes`` so
    that products modulo ``q`` run in RNS form.
    """

    N: int
    q_primes: tuple[int, ...]
    t: int
    q: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "q", math.prod(self.q_primes))
        if self.N < 8 or self.N & (self.N - 1):
            raise ParameterError(f"N must be a power of two >= 8, got {self.N}")
        if self.t < 2 or self.t & (self.t - 1):
            raise ParameterError(f"t must be a power of two, got {self.t}")
        if self.t >= self.q:
            raise ParameterError("t must be smaller than q")
        if self.q.bit_length() > 120:
            raise ParameterError("q is limited to 120 bits")
        for p in self.q_primes:
            if (p - 1) % (2 * self.N):
                raise ParameterError(f"prime {p} does not support a length-{self.N} NTT")

    @classmethod
    def build(cls, N: int = 4096, q_bits: int = 109, t_bits: int = 20) -> "RingParams":
        return cls(N, modulus_primes(q_bits, N), 1 << t_bits)

    @classmethod
    def default(cls) -> "RingParams":
        return cls.build(4096, 109, 20)

    @classmethod
    def desk(cls) -> "RingParams":
        """Smaller parameter set for quick runs."""
        return cls.build(2048, 60, 20)

    @property
    def t_bits(self) -> int:
        return self.t.bit_length() - 1

    @property
    def delta(self) -> int:
        return self.q // self.t

    def modulus(self, tag: str) -> int:
        return self.q if tag == Q else self.t

    def fingerprint(self) -> bytes:
        text = f"{self.N}|{','.join(map(str, self.q_primes))}|{self.t}"
        return hashlib.sha256(text.encode()).digest()[:8]

    def to_dict(self) -> dict:
        return {"N": self.N, "q_primes": list(self.q_primes), "t": self.t}

    @classmethod
    def from_dict(cls, d: dict) -> "RingParams":
        return cls(int(d["N"]), tuple(int(p) for p in d["q_primes"]), int(d["t"]))


def _dtype_for(modulus: int):
    return np.int64 if modulus.bit_length() <= 62 else object


def reduce(values, modulus: int) -> np.ndarray:
    """Map arbitrary integers into ``[0, modulus)`` in the storage dtype."""
    arr = np.asarray(values)
    dtype = _dtype_for(modulus)
    if arr.dtype != object and dtype is not object:
        return arr.astype(np.int64) % modulus
    out = arr.astype(object) % modulus
    return out if dtype is object else out.astype(np.int64)


class RingPoly:
    """An element of ``R_q`` or ``R_t``; coefficients live in ``[0, modulus)``."""

    __slots__ = ("params", "coeffs", "tag")

    def __init__(self, params: RingParams, coeffs, tag: str = Q):
        if tag not in _TAG_CODE:
            raise ParameterError(f"unknown modulus tag {tag!r}")
        coeffs = reduce(coeffs, params.modulus(tag))
        if coeffs.shape != (params.N,):
            raise ParameterError(f"expected {params.N} coefficients, got {coeffs.shape}")
        coeffs.flags.writeable = False
        self.params = params
        self.coeffs = coeffs
        self.tag = tag

    @classmethod
    def _raw(cls, params: RingParams, coeffs: np.ndarray, tag: str) -> "RingPoly":
        # trusted constructor: coeffs already reduced and of the right dtype
        obj = cls.__new__(cls)
        coeffs.flags.writeable = False
        obj.params, obj.coeffs, obj.tag = params, coeffs, tag
        return obj

    @classmethod
    def zero(cls, params: RingParams, tag: str = Q) -> "RingPoly":
        return cls._raw(params, np.zeros(params.N, dtype=_dtype_for(params.modulus(tag))), tag)

    @classmethod
    def constant(cls, params: RingParams, value: int, tag: str = Q) -> "RingPoly":
        c = [0] * params.N
        c[0] = value
        return cls(params, c, tag)

    @property
    def modulus(self) -> int:
        return self.params.modulus(self.tag)

    @property
    def N(self) -> int:
        return self.params.N

    def _check(self, other: "RingPoly"):
        if not isinstance(other, RingPoly):
            raise ParameterError("operand is not a RingPoly")
        if other.params != self.params or other.tag != self.tag:
            raise ParameterError("ring parameters or modulus tag differ")

    def __add__(self, other):
        return poly_add(self, other)

    def __sub__(self, other):
        self._check(other)
        return RingPoly._raw(self.params, (self.coeffs - other.coeffs) % self.modulus, self.tag)

    def __neg__(self):
        return RingPoly._raw(self.params, (-self.coeffs) % self.modulus, self.tag)

    def __mul__(self, other):
        if isinstance(other, (int, np.integer)):
            return self.scale(int(other))
        return poly_mul_negacyclic(self, other)

    __rmul__ = __mul__

    def scale(self, k: int) -> "RingPoly":
        mod = self.modulus
        k %= mod
        if self.coeffs.dtype == object:
            return RingPoly._raw(self.params, self.coeffs * k % mod, self.tag)
        if k.bit_length() + mod.bit_length() <= 62:
            return RingPoly._raw(self.params, self.coeffs * k % mod, self.tag)
        out = (self.coeffs.astype(object) * k % mod).astype(np.int64)
        return RingPoly._raw(self.params, out, self.tag)

    def __eq__(self, other):
        if not isinstance(other, RingPoly):
            return NotImplemented
        return (
            self.params == other.params
            and self.tag == other.tag
            and bool(np.array_equal(self.coeffs, other.coeffs))
        )

    def __hash__(self):
        return hash((self.params, self.tag, tuple(int(c) for c in self.coeffs)))

    def __repr__(self):
        head = ", ".join(str(int(c)) for c in self.coeffs[:4])
        return f"RingPoly(N={self.N}, mod={self.tag}, [{head}, ...])"

    def tolist(self) -> list[int]:
        return [int(c) for c in self.coeffs]

    def centered(self) -> list[int]:
        return center_lift(self)

    def lift(self, tag: str) -> "RingPoly":
        """Reinterpret the residues under the other modulus (no rescaling)."""
        return RingPoly(self.params, self.coeffs.astype(object), tag)

    def to_bytes(self) -> bytes:
        mod = self.modulus
        width = (mod.bit_length() + 7) // 8
        header = _POLY_HEADER.pack(POLY_MAGIC, self.N, mod.bit_length(), _TAG_CODE[self.tag])
        return header + pack_coeffs(self.coeffs, width)

    @classmethod
    def from_bytes(cls, params: RingParams, data: bytes) -> "RingPoly":
        magic, n, bits, code = _POLY_HEADER.unpack_from(data)
        if magic != POLY_MAGIC:
            raise ParameterError("bad polynomial magic")
        tag = _CODE_TAG.get(code)
        if tag is None or n != params.N or bits != params.modulus(tag).bit_length():
            raise ParameterError("polynomial header does not match parameters")
        width = (bits + 7) // 8
        body = data[_POLY_HEADER.size:_POLY_HEADER.size + width * n]
        if len(body) != width * n:
            raise ParameterError("truncated polynomial payload")
        coeffs = unpack_coeffs(body, n, width)
        if any(int(c) >= params.modulus(tag) for c in coeffs):
            raise ParameterError("coefficient out of range")
        return cls(params, coeffs, tag)


def pack_coeffs(coeffs: np.ndarray, width: int) -> bytes:
    """Little-endian fixed-width encoding of non-negative integers."""
    if coeffs.dtype != object and width <= 8:
        raw = np.ascontiguousarray(coeffs, dtype="<u8").view(np.uint8).reshape(-1, 8)
        return raw[:, :width].tobytes()
    return b"".join(int(c).to_bytes(width, "little") for c in coeffs)


def unpack_coeffs(data: bytes, n: int, width: int) -> np.ndarray:
    if width < 8:
        raw = np.zeros((n, 8), dtype=np.uint8)
        raw[:, :width] = np.frombuffer(data, dtype=np.uint8).reshape(n, width)
        return raw.view("<u8").reshape(n).astype(np.int64)
    return np.array(
        [int.from_bytes(data[i * width:(i + 1) * width], "little") for i in range(n)], dtype=object
    )


def poly_add(a: RingPoly, b: RingPoly) -> RingPoly:
    a._check(b)
    return RingPoly._raw(a.params, (a.coeffs + b.coeffs) % a.modulus, a.tag)


def poly_mul_negacyclic(a: RingPoly, b: RingPoly) -> RingPoly:
    a._check(b)
    if a.tag == Q:
        return RingPoly._raw(a.params, mul_mod_q(a.params, a.coeffs, b.coeffs), Q)
    mod = a.modulus
    bound = a.params.N.bit_length() + 2 * mod.bit_length()
    prod = convolve_exact(a.coeffs, b.coeffs, bound) % mod
    return RingPoly._raw(a.params, prod.astype(_dtype_for(mod)), a.tag)


def mul_mod_q(params: RingParams, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Product modulo q through the RNS basis of q itself."""
    ctx = ntt_context(params.N, params.q_primes)
    crt = crt_basis(params.q_primes)
    fa = ctx.forward(crt.residues(a))
    fb = ctx.forward(crt.residues(b))
    return from_rns(params, ctx.inverse(fa * fb % ctx.p))


def to_rns_ntt(params: RingParams, coeffs: np.ndarray) -> np.ndarray:
    ctx = ntt_context(params.N, params.q_primes)
    return ctx.forward(crt_basis(params.q_primes).residues(coeffs))


def from_rns(params: RingParams, residues: np.ndarray) -> np.ndarray:
    out = crt_basis(params.q_primes).reconstruct(residues)
    return out if params.q.bit_length() > 62 else out.astype(np.int64)


def schoolbook_mul(a: RingPoly, b: RingPoly) -> RingPoly:
    """Quadratic-time reference product with X^N = -1 folding."""
    a._check(b)
    N, mod = a.N, a.modulus
    x, y = a.tolist(), b.tolist()
    out = [0] * N
    for i, xi in enumerate(x):
        if not xi:
            continue
        for j, yj in enumerate(y):
            k = i + j
            if k < N:
                out[k] += xi * yj
            else:
                out[k - N] -= xi * yj
    return RingPoly(a.params, [c % mod for c in out], a.tag)


def sample_uniform(params: RingParams, tag: str = Q, rng=None) -> RingPoly:
    """Coefficients i.i.d. uniform over the modulus selected by ``tag``."""
    rng = as_rng(rng)
    if tag == Q:
        # independent uniform residues per prime are uniform mod q by CRT
        res = np.stack([rng.integers(0, p, size=params.N, dtype=np.int64) for p in params.q_primes])
        return RingPoly._raw(params, from_rns(params, res), Q)
    return RingPoly._raw(params, uniform_ints(rng, params.t, params.N), tag)


def uniform_ints(rng: np.random.Generator, modulus: int, n: int) -> np.ndarray:
    if modulus.bit_length() <= 62:
        return rng.integers(0, modulus, size=n, dtype=np.int64)
    # rejection sampling on whole-bit-length draws keeps the result exact
    bits = modulus.bit_length()
    nbytes = (bits + 7) // 8
    mask = (1 << bits) - 1
    out = np.empty(n, dtype=object)
    filled = 0
    while filled < n:
        buf = rng.bytes(nbytes * (n - filled))
        for i in range(0, len(buf), nbytes):
            v = int.from_bytes(buf[i:i + nbytes], "little") & mask
            if v < modulus:
                out[filled] = v
                filled += 1
    return out


def sample_small(params: RingParams, kind: str = "ternary", eta: int = 3, rng=None,
                 tag: str = Q) -> RingPoly:
    """Ternary secret or centered-binomial error polynomial."""
    rng = as_rng(rng)
    N = params.N
    if kind == "ternary":
        vals = rng.integers(-1, 2, size=N, dtype=np.int64)
    elif kind in ("binomial", "error"):
        if eta < 1:
            raise ParameterError("eta must be >= 1")
        bits = rng.integers(0, 2, size=(2, N, eta), dtype=np.int64).sum(axis=2)
        vals = bits[0] - bits[1]
    else:
        raise ParameterError(f"unknown distribution {kind!r}")
    return RingPoly._raw(params, reduce(vals, params.modulus(tag)), tag)


def center(values, modulus: int) -> np.ndarray:
    """Signed representatives; ``modulus/2`` itself maps to ``-modulus/2``."""
    arr = np.asarray(values)
    half = modulus // 2
    if modulus % 2 == 0:
        return np.where(arr >= half, arr - modulus, arr)
    return np.where(arr > half, arr - modulus, arr)


def center_lift(p: RingPoly) -> list[int]:
    return [int(v) for v in center(p.coeffs, p.modulus)]
