"""Two-party gadgets over additive and XOR shares with dealer-issued triples.

Every function here is written from one party's point of view: both parties
call it with their own shares and a ``Link`` to the other, and the function
returns that party's share of the result. All gadgets are vectorized over a
batch of independent instances.

Party 0 is the server, party 1 the verifier.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Protocol

import numpy as np

AGG_BITS = 64
DEALER_MAGIC = b"CMDL"
_DEALER_HEADER = struct.Struct("<4sBBQQQQ")

# message kinds used on the link; numbering shared with the network layer
KIND_CMP = 11
KIND_B2A = 12
KIND_FINAL = 13


class ProtocolError(RuntimeError):
    pass


class TripleExhausted(ProtocolError):
    pass


class Link(Protocol):
    party: int

    def send(self, kind: int, payload: bytes) -> None: ...

    def recv(self, kind: int) -> bytes: ...


def exchange(link: Link, kind: int, payload: bytes) -> bytes:
    """Swap one message with the peer; party 0 speaks first so blocking
    transports never wait on each other."""
    if link.party == 0:
        link.send(kind, payload)
        return link.recv(kind)
    other = link.recv(kind)
    link.send(kind, payload)
    return other


def ring_mask(ell: int) -> np.uint64:
    return np.uint64((1 << ell) - 1)


def to_ring(values, ell: int) -> np.ndarray:
    """Reduce Python or numpy integers (possibly negative) into ``Z_{2^ell}`` as uint64."""
    arr = np.asarray(values)
    if arr.dtype == np.uint64:
        return arr & ring_mask(ell)
    if arr.dtype.kind == "i":
        if ell == 64:
            return arr.astype(np.int64).view(np.uint64).copy()
        return (arr.astype(np.int64) % (1 << ell)).astype(np.uint64)
    if arr.dtype == object:
        return np.asarray([int(v) % (1 << ell) for v in arr.ravel()], dtype=np.uint64).reshape(arr.shape)
    return arr.astype(np.uint64) & ring_mask(ell)


def random_ring(rng: np.random.Generator, ell: int, size) -> np.ndarray:
    raw = rng.integers(0, np.iinfo(np.uint64).max, size=size, dtype=np.uint64, endpoint=True)
    return raw & ring_mask(ell)


def pack_bits(bits: np.ndarray) -> bytes:
    return np.packbits(bits.astype(np.uint8).ravel(), bitorder="little").tobytes()


def unpack_bits(data: bytes, count: int) -> np.ndarray:
    return np.unpackbits(np.frombuffer(data, dtype=np.uint8), count=count, bitorder="little")


def pack_ring(values: np.ndarray) -> bytes:
    return np.ascontiguousarray(values, dtype="<u8").tobytes()


def unpack_ring(data: bytes) -> np.ndarray:
    return np.frombuffer(data, dtype="<u8").astype(np.uint64)


# ------------------------------------------------------------- dealer


@dataclass(eq=False)
class DealerBatch:
    """One party's half of a batch of Beaver triples.

    Boolean triples satisfy ``c = a & b`` and arithmetic triples
    ``c = a * b mod 2^ell`` after reconstruction. Triples are handed out in
    order and never reused.
    """

    party: int
    ell: int
    bool_a: np.ndarray
    bool_b: np.ndarray
    bool_c: np.ndarray
    arith_a: np.ndarray
    arith_b: np.ndarray
    arith_c: np.ndarray
    bool_used: int = 0
    arith_used: int = 0

    @property
    def bool_left(self) -> int:
        return len(self.bool_a) - self.bool_used

    @property
    def arith_left(self) -> int:
        return len(self.arith_a) - self.arith_used

    def take_bool(self, n: int):
        if n > self.bool_left:
            raise TripleExhausted(f"need {n} boolean triples, {self.bool_left} left")
        s = slice(self.bool_used, self.bool_used + n)
        self.bool_used += n
        return self.bool_a[s], self.bool_b[s], self.bool_c[s]

    def take_arith(self, n: int):
        if n > self.arith_left:
            raise TripleExhausted(f"need {n} arithmetic triples, {self.arith_left} left")
        s = slice(self.arith_used, self.arith_used + n)
        self.arith_used += n
        return self.arith_a[s], self.arith_b[s], self.arith_c[s]

    def to_bytes(self) -> bytes:
        nb, na = len(self.bool_a), len(self.arith_a)
        head = _DEALER_HEADER.pack(DEALER_MAGIC, self.party, self.ell, nb, na, 0, 0)
        bools = b"".join(pack_bits(x) for x in (self.bool_a, self.bool_b, self.bool_c))
        ariths = b"".join(pack_ring(x) for x in (self.arith_a, self.arith_b, self.arith_c))
        return head + bools + ariths

    @classmethod
    def from_bytes(cls, data: bytes) -> "DealerBatch":
        magic, party, ell, nb, na, _, _ = _DEALER_HEADER.unpack_from(data)
        if magic != DEALER_MAGIC:
            raise ProtocolError("bad dealer batch magic")
        off = _DEALER_HEADER.size
        blen = (nb + 7) // 8
        if len(data) != off + 3 * blen + 24 * na:
            raise ProtocolError("dealer batch length does not match its header")
        bools = [unpack_bits(data[off + i * blen: off + (i + 1) * blen], nb) for i in range(3)]
        off += 3 * blen
        ariths = [unpack_ring(data[off + i * 8 * na: off + (i + 1) * 8 * na]) for i in range(3)]
        return cls(party, ell, *bools, *ariths)


def deal(n_bool: int, n_arith: int, rng=None, ell: int = AGG_BITS) -> tuple[DealerBatch, DealerBatch]:
    """Sample triples and split each value into two uniform shares."""
    rng = np.random.default_rng(rng)
    a, b = rng.integers(0, 2, size=(2, n_bool), dtype=np.uint8)
    c = a & b
    s0 = rng.integers(0, 2, size=(3, n_bool), dtype=np.uint8)
    bool0 = list(s0)
    bool1 = [v ^ s for v, s in zip((a, b, c), s0)]
    mask = ring_mask(ell)
    x, y = random_ring(rng, ell, (2, n_arith))
    z = (x * y) & mask
    r0 = random_ring(rng, ell, (3, n_arith))
    ar0 = list(r0)
    ar1 = [(v - r) & mask for v, r in zip((x, y, z), r0)]
    return DealerBatch(0, ell, *bool0, *ar0), DealerBatch(1, ell, *bool1, *ar1)


# -------------------------------------------------------------- gates


def secure_and(link: Link, x: np.ndarray, y: np.ndarray, batch: DealerBatch) -> np.ndarray:
    """XOR shares of ``x & y`` from XOR shares of ``x`` and ``y`` (one round)."""
    x = np.asarray(x, dtype=np.uint8)
    y = np.asarray(y, dtype=np.uint8)
    n = x.size
    a, b, c = batch.take_bool(n)
    e = x.ravel() ^ a
    f = y.ravel() ^ b
    other = unpack_bits(exchange(link, KIND_CMP, pack_bits(np.concatenate([e, f]))), 2 * n)
    e ^= other[:n]
    f ^= other[n:]
    z = c ^ (e & b) ^ (f & a)
    if link.party == 0:
        z ^= e & f
    return z.reshape(x.shape)


def and_gate_count(ell: int) -> int:
    """Triples used by ``millionaire_lt`` on ``ell``-bit inputs."""
    return ell + 2 * (ell - 1) - 1 if ell > 1 else ell


def comparison_rounds(ell: int) -> list[int]:
    """AND gates evaluated in each communication round of ``millionaire_lt``."""
    rounds = [ell]
    k = ell
    while k > 1:
        pairs = k // 2
        k = pairs + (k % 2)
        rounds.append(2 * pairs - (1 if k == 1 else 0))
    return rounds


def millionaire_lt(link: Link, value, ell: int, batch: DealerBatch) -> np.ndarray:
    """XOR shares of ``1{x < y}``; party 0 passes ``x``, party 1 passes ``y``.

    Leaves compare single bits; the tree combines a high group over a low
    group as ``lt = lt_hi ^ (eq_hi & lt_lo)`` and ``eq = eq_hi & eq_lo``.
    """
    v = to_ring(value, ell) if ell < 64 else np.asarray(value, dtype=np.uint64)
    n = v.size
    if ell == 0:
        return np.zeros(n, dtype=np.uint8)
    shifts = np.arange(ell, dtype=np.uint64)
    bits = ((v.reshape(-1, 1) >> shifts) & np.uint64(1)).astype(np.uint8)
    zero = np.zeros_like(bits)
    if link.party == 0:
        left, right, eq = bits ^ 1, zero, bits ^ 1
    else:
        left, right, eq = zero, bits, bits
    lt = secure_and(link, left, right, batch)
    while lt.shape[1] > 1:
        k = lt.shape[1]
        p = k // 2
        lo_lt, hi_lt = lt[:, 0:2 * p:2], lt[:, 1:2 * p:2]
        lo_eq, hi_eq = eq[:, 0:2 * p:2], eq[:, 1:2 * p:2]
        root = p == 1 and k == 2
        if root:
            prod = secure_and(link, hi_eq, lo_lt, batch)
            new_eq = None
        else:
            both = secure_and(
                link,
                np.concatenate([hi_eq, hi_eq], axis=1),
                np.concatenate([lo_lt, lo_eq], axis=1),
                batch,
            )
            prod, new_eq = both[:, :p], both[:, p:]
        new_lt = hi_lt ^ prod
        if k % 2:
            new_lt = np.concatenate([new_lt, lt[:, -1:]], axis=1)
            new_eq = np.concatenate([new_eq, eq[:, -1:]], axis=1)
        lt, eq = new_lt, new_eq
    return lt[:, 0]


def shared_gt_threshold(link: Link, share, ell: int, batch: DealerBatch, ts=None) -> np.ndarray:
    """XOR shares of ``1{v > ts}`` for ``v`` additively shared in ``Z_{2^ell}``.

    Only party 1 knows ``ts`` (a scalar or one threshold per instance). With ``z = v - ts - 1`` the result is the
    complement of ``msb(z)``; the msb of a sum of two shares is the XOR of
    their msbs and the carry out of the low ``ell-1`` bits, and that carry is
    one millionaire comparison. Exact whenever ``v - ts - 1`` lies in the
    signed range of the ring.
    """
    if ell < 2:
        raise ValueError("need at least two bits")
    z = to_ring(share, ell)
    if link.party == 1:
        if ts is None:
            raise ValueError("party 1 must supply the threshold")
        z = (z - to_ring(np.asarray(ts, dtype=np.int64) + 1, ell)) & ring_mask(ell)
    low_mask = np.uint64((1 << (ell - 1)) - 1)
    low = z & low_mask
    msb = (z >> np.uint64(ell - 1)).astype(np.uint8)
    x = low_mask - low if link.party == 0 else low
    carry = millionaire_lt(link, x, ell - 1, batch)
    out = msb ^ carry
    if link.party == 0:
        out ^= 1
    return out


def raw_share_lt(link: Link, share, ell: int, batch: DealerBatch, ts: int | None = None) -> np.ndarray:
    """Threshold test that compares ``ts - d_1`` against ``d_0`` directly.

    Kept to demonstrate its failure mode: the comparison ignores the modular
    wrap of the shares, so it errs with probability ``|v - ts| / 2^ell``.
    """
    full = ring_mask(ell)
    d = to_ring(share, ell)
    if link.party == 1:
        x = (np.uint64(ts % (1 << ell)) - d) & full
        return millionaire_lt(link, full - x, ell, batch)
    return millionaire_lt(link, full - d, ell, batch)


def b2a(link: Link, bits, batch: DealerBatch, ell: int = AGG_BITS) -> np.ndarray:
    """Additive shares in ``Z_{2^ell}`` of XOR-shared bits: ``b0 + b1 - 2*b0*b1``."""
    mask = ring_mask(ell)
    b = np.asarray(bits, dtype=np.uint64).ravel()
    n = b.size
    a, bb, c = batch.take_arith(n)
    zero = np.zeros(n, dtype=np.uint64)
    x, y = (b, zero) if link.party == 0 else (zero, b)
    e = (x - a) & mask
    f = (y - bb) & mask
    other = unpack_ring(exchange(link, KIND_B2A, pack_ring(np.concatenate([e, f]))))
    e = (e + other[:n]) & mask
    f = (f + other[n:]) & mask
    z = (c + e * bb + f * a) & mask
    if link.party == 0:
        z = (z + e * f) & mask
    return (b - np.uint64(2) * z) & mask


def final_any_match(link: Link, total, batch: DealerBatch, ell: int = AGG_BITS) -> int:
    """Reveal ``1{count > 0}`` to party 1, where ``count = b_0 + b_1``.

    Compares ``-b_0`` with ``b_1`` as unsigned integers; this errs only when
    ``b_0`` falls in ``[1, count]``, i.e. with probability ``count / 2^ell``.
    Party 0 returns its output share (the bit it sent), party 1 the result.
    """
    mask = ring_mask(ell)
    t = np.asarray([total], dtype=np.uint64) & mask
    value = (np.uint64(0) - t) & mask if link.party == 0 else t
    share = int(millionaire_lt(link, value, ell, batch)[0])
    if link.party == 0:
        link.send(KIND_FINAL, bytes([share]))
        return share
    return share ^ link.recv(KIND_FINAL)[0]


def ring_sum(values, ell: int = AGG_BITS) -> int:
    return int(np.sum(np.asarray(values, dtype=np.uint64), dtype=np.uint64) & ring_mask(ell))


def reveal_triples(m: int, ell_t: int, literal: bool = False) -> tuple[int, int]:
    """(boolean, arithmetic) triples consumed by one threshold-reveal over ``m`` values."""
    per = and_gate_count(ell_t if literal else ell_t - 1)
    return m * per + and_gate_count(AGG_BITS), m


def reveal_payload_bytes(m: int, ell_t: int, literal: bool = False) -> int:
    """Bytes each party sends during one threshold-reveal over ``m`` values."""
    width = ell_t if literal else ell_t - 1
    cmp = sum((2 * g * m + 7) // 8 for g in comparison_rounds(width)) if m else 0
    b2a_bytes = 16 * m if m else 0
    final = sum((2 * g + 7) // 8 for g in comparison_rounds(AGG_BITS))
    return cmp + b2a_bytes + final
