"""BFV encryption over R_q with key switching, noise measurement and wire formats.

Plaintexts live in ``R_t`` with ``t`` a power of two and are scaled by
``Delta = floor(q/t)``. Relinearization and key switching both use a gadget
decomposition of the input in base ``2**w``.
"""

from __future__ import annotations

import hashlib
import math
import os
import struct
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .ntt import crt_basis, exact_basis, ntt_context
from .ring import (
    Q,
    T,
    ParameterError,
    RingParams,
    RingPoly,
    as_rng,
    center,
    from_rns,
    pack_coeffs,
    sample_small,
    sample_uniform,
    to_rns_ntt,
    unpack_coeffs,
)

DEFAULT_BASE_W = 16
SEED_BYTES = 32
ERROR_ETA = 3

CT_MAGIC = b"CMCT"
_CT_HEADER = struct.Struct("<4s8s8sBBB5x")
CT_HEADER_SIZE = _CT_HEADER.size
_KEY_HEADER = struct.Struct("<4s8s8sBB6x")


class ContractViolation(ValueError):
    """An operation was called on a ciphertext it is not defined for."""


# ---------------------------------------------------------------- keys


def _key_id(poly: RingPoly) -> bytes:
    return hashlib.sha256(poly.to_bytes()).digest()[:8]


@dataclass(frozen=True, eq=False)
class SecretKey:
    params: RingParams
    s: RingPoly

    @cached_property
    def key_id(self) -> bytes:
        return _key_id(self.s)

    @cached_property
    def ntt(self) -> np.ndarray:
        return to_rns_ntt(self.params, self.s.coeffs)

    @cached_property
    def ntt_squared(self) -> np.ndarray:
        p = ntt_context(self.params.N, self.params.q_primes).p
        return self.ntt * self.ntt % p

    def to_bytes(self) -> bytes:
        return _key_blob(b"CMSK", self.params, self.key_id, 0, 0, [self.s])

    @classmethod
    def from_bytes(cls, params: RingParams, data: bytes) -> "SecretKey":
        _, _, _, polys = _read_key_blob(b"CMSK", params, data)
        return cls(params, polys[0])


@dataclass(frozen=True, eq=False)
class PublicKey:
    """``b = -(a*s + e)`` together with the uniform ``a``."""

    params: RingParams
    b: RingPoly
    a: RingPoly
    key_id: bytes

    @cached_property
    def ntt(self) -> np.ndarray:
        return np.stack([to_rns_ntt(self.params, self.b.coeffs), to_rns_ntt(self.params, self.a.coeffs)])

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()[:16]

    def to_bytes(self) -> bytes:
        return _key_blob(b"CMPK", self.params, self.key_id, 0, 0, [self.b, self.a])

    @classmethod
    def from_bytes(cls, params: RingParams, data: bytes) -> "PublicKey":
        kid, _, _, polys = _read_key_blob(b"CMPK", params, data)
        return cls(params, polys[0], polys[1], kid)


@dataclass(frozen=True, eq=False)
class SwitchKey:
    """Gadget key pairs with ``b_j + a_j*s_dst = -(2**(w*j))*s_src + e_j``.

    A relinearization key is the special case ``s_src = s**2``, ``s_dst = s``.
    """

    params: RingParams
    base_w: int
    b: tuple[RingPoly, ...]
    a: tuple[RingPoly, ...]
    src_id: bytes
    dst_id: bytes
    relin: bool = False

    @property
    def digits(self) -> int:
        return len(self.b)

    @cached_property
    def ntt(self) -> tuple[np.ndarray, np.ndarray]:
        nb = np.stack([to_rns_ntt(self.params, p.coeffs) for p in self.b])
        na = np.stack([to_rns_ntt(self.params, p.coeffs) for p in self.a])
        return nb, na

    def to_bytes(self) -> bytes:
        polys = [p for pair in zip(self.b, self.a) for p in pair]
        extra = self.dst_id if not self.relin else self.src_id
        return _key_blob(b"CMKS", self.params, self.src_id, self.base_w, int(self.relin), polys) + extra

    @classmethod
    def from_bytes(cls, params: RingParams, data: bytes) -> "SwitchKey":
        src, w, relin, polys = _read_key_blob(b"CMKS", params, data[:-8])
        dst = data[-8:]
        return cls(params, w, tuple(polys[0::2]), tuple(polys[1::2]), src, dst, bool(relin))


def _key_blob(magic, params, kid, w, flag, polys) -> bytes:
    head = _KEY_HEADER.pack(magic, params.fingerprint(), kid, w, flag)
    body = b"".join(struct.pack("<I", len(b)) + b for b in (p.to_bytes() for p in polys))
    return head + struct.pack("<I", len(polys)) + body


def _read_key_blob(magic, params, data):
    if len(data) < _KEY_HEADER.size + 4:
        raise ParameterError("key blob too short")
    m, fp, kid, w, flag = _KEY_HEADER.unpack_from(data)
    if m != magic:
        raise ParameterError(f"expected {magic!r} key, got {m!r}")
    if fp != params.fingerprint():
        raise ParameterError("key parameters do not match")
    off = _KEY_HEADER.size
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    polys = []
    for _ in range(count):
        (n,) = struct.unpack_from("<I", data, off)
        off += 4
        polys.append(RingPoly.from_bytes(params, data[off:off + n]))
        off += n
    return kid, w, flag, polys


def keygen(params: RingParams, security: int = 128, rng=None) -> tuple[PublicKey, SecretKey]:
    """RLWE key pair. ``security`` is recorded by callers only; it does not
    change the sampled distributions."""
    rng = as_rng(rng)
    s = sample_small(params, "ternary", rng=rng)
    sk = SecretKey(params, s)
    a = sample_uniform(params, Q, rng)
    e = sample_small(params, "binomial", ERROR_ETA, rng)
    b = -(a * s + e)
    return PublicKey(params, b, a, sk.key_id), sk


def gadget_digits(params: RingParams, base_w: int = DEFAULT_BASE_W) -> int:
    return math.ceil(params.q.bit_length() / base_w)


def _gadget_key(params, src_poly, dst: SecretKey, base_w, rng):
    rng = as_rng(rng)
    bs, as_ = [], []
    for j in range(gadget_digits(params, base_w)):
        a = sample_uniform(params, Q, rng)
        e = sample_small(params, "binomial", ERROR_ETA, rng)
        bs.append(-(a * dst.s) + e - src_poly.scale(1 << (base_w * j)))
        as_.append(a)
    return tuple(bs), tuple(as_)


def swkeygen(sk_src: SecretKey, sk_dst: SecretKey, base_w: int = DEFAULT_BASE_W, rng=None) -> SwitchKey:
    if sk_src.params != sk_dst.params:
        raise ParameterError("keys use different parameters")
    b, a = _gadget_key(sk_src.params, sk_src.s, sk_dst, base_w, rng)
    return SwitchKey(sk_src.params, base_w, b, a, sk_src.key_id, sk_dst.key_id)


def relin_keygen(sk: SecretKey, base_w: int = DEFAULT_BASE_W, rng=None) -> SwitchKey:
    b, a = _gadget_key(sk.params, sk.s * sk.s, sk, base_w, rng)
    return SwitchKey(sk.params, base_w, b, a, sk.key_id, sk.key_id, relin=True)


# ---------------------------------------------------------- ciphertexts


@dataclass(frozen=True, eq=False)
class Ciphertext:
    params: RingParams
    parts: tuple[RingPoly, ...]
    key_id: bytes
    seed: bytes | None = None
    truncated_bits: int = 0

    def __post_init__(self):
        if len(self.parts) not in (2, 3):
            raise ParameterError("a ciphertext has 2 or 3 components")
        if self.seed is not None and len(self.parts) != 2:
            raise ContractViolation("only fresh degree-1 ciphertexts can be seeded")

    @property
    def degree(self) -> int:
        return len(self.parts) - 1

    @property
    def seeded(self) -> bool:
        return self.seed is not None

    def __eq__(self, other):
        if not isinstance(other, Ciphertext):
            return NotImplemented
        return (self.params == other.params and self.key_id == other.key_id
                and self.parts == other.parts)

    __hash__ = None


def expand_seed(params: RingParams, seed: bytes) -> RingPoly:
    gen = np.random.Generator(np.random.PCG64(int.from_bytes(seed, "little")))
    return sample_uniform(params, Q, gen)


def _plain_lift(params: RingParams, m: RingPoly) -> np.ndarray:
    """``round(q*m/t)``, i.e. ``Delta*m`` plus a correction for ``q mod t``.

    Without the correction the ``(q mod t) * m`` residue picks up a factor of
    the ring degree in every ciphertext product and swamps small moduli.
    """
    if m.params != params or m.tag != T:
        raise ParameterError("plaintext must be an element of R_t with matching parameters")
    return scale_plain(params, m.coeffs)


def scale_plain(params: RingParams, m: np.ndarray) -> np.ndarray:
    q, t = params.q, params.t
    return (m.astype(object) * q + t // 2) // t % q


def _qpoly(params: RingParams, coeffs: np.ndarray) -> RingPoly:
    return RingPoly._raw(params, coeffs if params.q.bit_length() > 62 else coeffs.astype(np.int64), Q)


def encrypt(key, m: RingPoly, seeded: bool = False, rng=None) -> Ciphertext:
    """Encrypt ``m`` under a public key, or under a secret key (symmetric).

    Only symmetric encryption can be ``seeded``: the uniform component is
    then regenerated from a 32-byte seed instead of being transmitted.
    """
    rng = as_rng(rng)
    params = key.params
    dm = _plain_lift(params, m)
    if isinstance(key, SecretKey):
        if seeded:
            seed = rng.bytes(SEED_BYTES)
            a = expand_seed(params, seed)
        else:
            seed = None
            a = sample_uniform(params, Q, rng)
        e = sample_small(params, "binomial", ERROR_ETA, rng)
        c0 = (e.coeffs.astype(object) + dm - (a * key.s).coeffs) % params.q
        return Ciphertext(params, (_qpoly(params, c0), a), key.key_id, seed)
    if seeded:
        raise ContractViolation("seeded encryption requires the secret key")
    ctx = ntt_context(params.N, params.q_primes)
    u = sample_small(params, "ternary", rng=rng)
    nu = to_rns_ntt(params, u.coeffs)
    prods = ctx.inverse(key.ntt * nu % ctx.p)
    e1 = sample_small(params, "binomial", ERROR_ETA, rng)
    e2 = sample_small(params, "binomial", ERROR_ETA, rng)
    c0 = (from_rns(params, prods[0]).astype(object) + e1.coeffs + dm) % params.q
    c1 = (from_rns(params, prods[1]).astype(object) + e2.coeffs) % params.q
    return Ciphertext(params, (_qpoly(params, c0), _qpoly(params, c1)), key.key_id)


def _phase(sk: SecretKey, ct: Ciphertext) -> np.ndarray:
    """``c0 + c1*s (+ c2*s^2)`` mod q as an object array."""
    params = sk.params
    ctx = ntt_context(params.N, params.q_primes)
    acc = to_rns_ntt(params, ct.parts[1].coeffs) * sk.ntt % ctx.p
    if ct.degree == 2:
        acc = (acc + to_rns_ntt(params, ct.parts[2].coeffs) * sk.ntt_squared) % ctx.p
    return (from_rns(params, ctx.inverse(acc)).astype(object) + ct.parts[0].coeffs) % params.q


def decrypt(sk: SecretKey, ct: Ciphertext) -> RingPoly:
    """Rounded decode ``round(t * phase / q) mod t``.

    Beyond the noise budget the result is simply wrong; nothing is raised.
    """
    params = sk.params
    if ct.params != params:
        raise ParameterError("ciphertext parameters do not match the key")
    v = _phase(sk, ct)
    m = (v * params.t + params.q // 2) // params.q % params.t
    return RingPoly(params, m.astype(np.int64), T)


def noise(sk: SecretKey, ct: Ciphertext) -> np.ndarray:
    """Signed noise ``phase - round(q*m/t)`` per coefficient."""
    params = sk.params
    v = _phase(sk, ct)
    m = (v * params.t + params.q // 2) // params.q % params.t
    return center((v - scale_plain(params, m)) % params.q, params.q)


def noise_budget(sk: SecretKey, ct: Ciphertext) -> int:
    """Bits of headroom left before decryption fails, floored at 0."""
    params = sk.params
    worst = max(1, max(abs(int(x)) for x in noise(sk, ct)))
    bits = math.log2(params.q / (2 * params.t)) - math.log2(worst)
    return max(0, math.floor(bits))


# ----------------------------------------------------------- evaluation


def _check_operable(*cts: Ciphertext):
    for ct in cts:
        if ct.truncated_bits:
            raise ContractViolation("truncated ciphertexts may only be decrypted")
    first = cts[0]
    for ct in cts[1:]:
        if ct.params != first.params:
            raise ParameterError("ciphertext parameters differ")
        if ct.key_id != first.key_id:
            raise ParameterError("ciphertexts are under different keys")


def eval_add(ct1: Ciphertext, ct2: Ciphertext) -> Ciphertext:
    _check_operable(ct1, ct2)
    if ct1.degree != ct2.degree:
        raise ParameterError("ciphertext degrees differ")
    parts = tuple(x + y for x, y in zip(ct1.parts, ct2.parts))
    return Ciphertext(ct1.params, parts, ct1.key_id)


def eval_add_plain(ct: Ciphertext, p: RingPoly) -> Ciphertext:
    _check_operable(ct)
    params = ct.params
    c0 = (ct.parts[0].coeffs.astype(object) + _plain_lift(params, p)) % params.q
    return Ciphertext(params, (_qpoly(params, c0),) + ct.parts[1:], ct.key_id)


def _tensor_basis(params: RingParams):
    bound = params.N.bit_length() + 2 * (params.q.bit_length() - 1) + 1
    primes = exact_basis(params.N, bound)
    return ntt_context(params.N, primes), crt_basis(primes)


def mul_form(ct: Ciphertext) -> np.ndarray:
    """Transform of a degree-1 ciphertext ready for ``eval_mul``.

    Computing it once lets one operand be multiplied against many others
    without repeating its forward transforms.
    """
    if ct.degree != 1:
        raise ContractViolation("eval_mul takes degree-1 ciphertexts")
    ctx, crt = _tensor_basis(ct.params)
    lifted = [center(p.coeffs.astype(object), ct.params.q) for p in ct.parts]
    return ctx.forward(np.stack([crt.residues(x) for x in lifted]))


def eval_mul(ct1: Ciphertext, ct2: Ciphertext, relin: SwitchKey | None = None,
             form1: np.ndarray | None = None, form2: np.ndarray | None = None) -> Ciphertext:
    """Tensor product scaled by ``t/q`` and rounded; relinearized if a key is given.

    ``form1``/``form2`` may carry precomputed ``mul_form`` transforms.
    """
    _check_operable(ct1, ct2)
    if ct1.degree != 1 or ct2.degree != 1:
        raise ContractViolation("eval_mul takes degree-1 ciphertexts")
    params = ct1.params
    q, t = params.q, params.t
    ctx, crt = _tensor_basis(params)
    a0, a1 = mul_form(ct1) if form1 is None else form1
    b0, b1 = mul_form(ct2) if form2 is None else form2
    p = ctx.p
    prods = np.stack([a0 * b0 % p, (a0 * b1 % p + a1 * b0 % p) % p, a1 * b1 % p])
    inv = ctx.inverse(prods)
    parts = []
    for r in inv:
        x = crt.reconstruct(r, centered=True)
        parts.append(_qpoly(params, (x * t + q // 2) // q % q))
    out = Ciphertext(params, tuple(parts), ct1.key_id)
    if relin is not None:
        out = relinearize(out, relin)
    return out


def _decompose(params: RingParams, c: RingPoly, base_w: int, digits: int) -> np.ndarray:
    mask = (1 << base_w) - 1
    x = c.coeffs
    return np.stack([((x >> (base_w * j)) & mask).astype(np.int64) for j in range(digits)])


def _key_product(key: SwitchKey, c: RingPoly) -> tuple[np.ndarray, np.ndarray]:
    """``(sum_j d_j*b_j, sum_j d_j*a_j)`` for the gadget digits ``d_j`` of ``c``."""
    params = key.params
    ctx = ntt_context(params.N, params.q_primes)
    d = _decompose(params, c, key.base_w, key.digits)
    fd = ctx.forward(np.broadcast_to(d[:, None, :], (key.digits, len(params.q_primes), params.N)))
    kb, ka = key.ntt
    sb = (fd * kb % ctx.p).sum(axis=0) % ctx.p
    sa = (fd * ka % ctx.p).sum(axis=0) % ctx.p
    out = ctx.inverse(np.stack([sb, sa]))
    return from_rns(params, out[0]), from_rns(params, out[1])


def relinearize(ct: Ciphertext, rk: SwitchKey) -> Ciphertext:
    _check_operable(ct)
    if ct.degree != 2:
        return ct
    if not rk.relin or rk.src_id != ct.key_id:
        raise ParameterError("relinearization key does not belong to this ciphertext's key")
    params = ct.params
    sb, sa = _key_product(rk, ct.parts[2])
    c0 = (ct.parts[0].coeffs.astype(object) - sb) % params.q
    c1 = (ct.parts[1].coeffs.astype(object) - sa) % params.q
    return Ciphertext(params, (_qpoly(params, c0), _qpoly(params, c1)), ct.key_id)


def switching(ct: Ciphertext, key: SwitchKey) -> Ciphertext:
    """Re-encrypt a degree-1 ciphertext from the key's source to its target key."""
    _check_operable(ct)
    if ct.degree != 1:
        raise ContractViolation("switching takes degree-1 ciphertexts; relinearize first")
    if key.relin or key.src_id != ct.key_id:
        raise ParameterError("switching key source does not match the ciphertext")
    params = ct.params
    sb, sa = _key_product(key, ct.parts[1])
    c0 = (ct.parts[0].coeffs.astype(object) - sb) % params.q
    c1 = (-sa) % params.q
    return Ciphertext(params, (_qpoly(params, c0), _qpoly(params, c1)), key.dst_id)


# -------------------------------------------------------- serialization


def serialize(ct: Ciphertext, truncate_bits: int = 0) -> bytes:
    """Wire form. ``truncate_bits`` drops low-order bits of every coefficient
    and is only legal for degree-1 ciphertexts that will be decrypted next."""
    params = ct.params
    qbits = params.q.bit_length()
    if truncate_bits:
        if ct.degree != 1:
            raise ContractViolation("only degree-1 ciphertexts can be truncated")
        if ct.seeded:
            raise ContractViolation("seeded ciphertexts cannot be truncated")
        if not 0 < truncate_bits < qbits:
            raise ParameterError("truncate_bits out of range")
    total = ct.truncated_bits + truncate_bits
    head = _CT_HEADER.pack(CT_MAGIC, params.fingerprint(), ct.key_id, ct.degree,
                           int(ct.seeded), total)
    width = (qbits - total + 7) // 8
    shift = truncate_bits
    if ct.seeded:
        return head + pack_coeffs(ct.parts[0].coeffs, width) + ct.seed
    body = b"".join(
        pack_coeffs(p.coeffs >> shift if shift else p.coeffs, width) for p in ct.parts
    )
    return head + body


def deserialize(params: RingParams, data: bytes) -> Ciphertext:
    if len(data) < _CT_HEADER.size:
        raise ParameterError("ciphertext blob too short")
    magic, fp, kid, degree, seeded, tb = _CT_HEADER.unpack_from(data)
    if magic != CT_MAGIC:
        raise ParameterError("bad ciphertext magic")
    if fp != params.fingerprint():
        raise ParameterError("ciphertext parameters do not match")
    if degree not in (1, 2) or (seeded and (degree != 1 or tb)):
        raise ParameterError("malformed ciphertext header")
    width = (params.q.bit_length() - tb + 7) // 8
    N = params.N
    off = _CT_HEADER.size
    nparts = 1 if seeded else degree + 1
    expected = off + nparts * N * width + (SEED_BYTES if seeded else 0)
    if len(data) != expected:
        raise ParameterError(f"ciphertext length {len(data)} != expected {expected}")
    parts = []
    for i in range(nparts):
        c = unpack_coeffs(data[off + i * N * width: off + (i + 1) * N * width], N, width)
        if tb:
            c = c.astype(object) << tb
        parts.append(RingPoly(params, c, Q))
    seed = None
    if seeded:
        seed = data[-SEED_BYTES:]
        parts.append(expand_seed(params, seed))
    return Ciphertext(params, tuple(parts), kid, seed, tb)


def serialized_size(params: RingParams, degree: int = 1, truncate_bits: int = 0,
                    seeded: bool = False) -> int:
    width = (params.q.bit_length() - truncate_bits + 7) // 8
    nparts = 1 if seeded else degree + 1
    return _CT_HEADER.size + nparts * params.N * width + (SEED_BYTES if seeded else 0)


def truncation_for_reduction(params: RingParams, target: float = 0.16) -> int:
    """Smallest ``truncate_bits`` whose degree-1 wire size shrinks by ``target``."""
    full = serialized_size(params)
    for b in range(1, params.q.bit_length()):
        if 1 - serialized_size(params, truncate_bits=b) / full >= target:
            return b
    raise ParameterError("no truncation reaches the requested reduction")


def max_safe_truncation(params: RingParams, noise_bound: int) -> int:
    """Largest truncation that cannot flip a decryption.

    Dropping ``b`` bits perturbs the phase by at most ``2**b`` from ``c0`` and
    ``N * 2**b`` from ``c1*s`` (ternary ``s``), so decryption stays exact while
    ``noise_bound + (N + 1) * 2**b`` stays below ``Delta/2 - t`` (the last term
    absorbs the ``q mod t`` rounding slack).
    """
    slack = params.delta // 2 - params.t - noise_bound
    if slack <= 0:
        return 0
    return max(0, (slack // (params.N + 1)).bit_length() - 1)


def random_seed() -> bytes:
    return os.urandom(SEED_BYTES)
