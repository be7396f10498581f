"""Negacyclic number-theoretic transforms over word-sized primes.

Everything above one machine word is handled as a residue number system:
a polynomial with big coefficients is reduced modulo several NTT-friendly
primes (each below 2**31 so products fit in int64), transformed, multiplied
pointwise and brought back with the Chinese remainder theorem.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from sympy import isprime, primitive_root

# primes stay below 2**31 so that a*b < 2**62 never overflows int64
MAX_PRIME_BITS = 31


def find_ntt_primes(count: int, N: int, below: int, exclude: tuple[int, ...] = ()) -> tuple[int, ...]:
    """Return the ``count`` largest primes ``p < below`` with ``p = 1 (mod 2N)``."""
    step = 2 * N
    cand = ((below - 2) // step) * step + 1
    found: list[int] = []
    while len(found) < count:
        if cand <= step:
            raise ValueError(f"not enough NTT primes below {below} for N={N}")
        if cand not in exclude and isprime(cand):
            found.append(cand)
        cand -= step
    return tuple(found)


def modulus_primes(bits: int, N: int) -> tuple[int, ...]:
    """Pick NTT primes whose product has exactly ``bits`` bits."""
    k = max(1, math.ceil(bits / (MAX_PRIME_BITS - 1)))
    while True:
        target = 2.0 ** (bits / k)
        if target > 2 ** MAX_PRIME_BITS:
            k += 1
            continue
        primes = find_ntt_primes(k, N, int(target))
        if math.prod(primes).bit_length() == bits:
            return primes
        # product fell one bit short; spread the budget over one more prime
        k += 1


@lru_cache(maxsize=None)
def aux_primes(N: int, count: int) -> tuple[int, ...]:
    return find_ntt_primes(count, N, 2 ** MAX_PRIME_BITS)


def _bit_reverse(n_bits: int, x: np.ndarray) -> np.ndarray:
    out = np.zeros_like(x)
    for b in range(n_bits):
        out |= ((x >> b) & 1) << (n_bits - 1 - b)
    return out


class NTT:
    """Batched negacyclic NTT for a fixed ring degree and tuple of primes.

    Arrays are shaped ``(..., k, N)`` with one row per prime. The forward
    transform leaves its output in bit-reversed order; ``inverse`` undoes it,
    so callers only ever multiply pointwise in between.
    """

    def __init__(self, N: int, primes: tuple[int, ...]):
        if N < 2 or N & (N - 1):
            raise ValueError("N must be a power of two")
        self.N = N
        self.primes = tuple(primes)
        self.p = np.array(self.primes, dtype=np.int64)[:, None]
        log_n = N.bit_length() - 1
        rev = _bit_reverse(log_n, np.arange(N, dtype=np.int64))
        psi_rev = np.empty((len(primes), N), dtype=np.int64)
        psi_inv_rev = np.empty((len(primes), N), dtype=np.int64)
        n_inv = np.empty((len(primes), 1), dtype=np.int64)
        for i, p in enumerate(self.primes):
            if (p - 1) % (2 * N):
                raise ValueError(f"{p} is not 1 mod 2N")
            g = primitive_root(p)
            psi = pow(g, (p - 1) // (2 * N), p)
            assert pow(psi, N, p) == p - 1
            psi_inv = pow(psi, -1, p)
            pw = _powers(psi, N, p)
            pw_inv = _powers(psi_inv, N, p)
            psi_rev[i, rev] = pw
            psi_inv_rev[i, rev] = pw_inv
            n_inv[i, 0] = pow(N, -1, p)
        self.psi_rev = psi_rev
        self.psi_inv_rev = psi_inv_rev
        self.n_inv = n_inv

    def forward(self, a: np.ndarray) -> np.ndarray:
        a = np.array(a, dtype=np.int64, copy=True)
        lead = a.shape[:-1]
        p3 = self.p[:, :, None]
        t, m = self.N, 1
        while m < self.N:
            t //= 2
            v = a.reshape(lead + (m, 2, t))
            w = self.psi_rev[:, m:2 * m, None]
            u = v[..., 0, :]
            x = v[..., 1, :] * w % p3
            hi = u - x
            hi %= p3
            u += x
            u %= p3
            v[..., 1, :] = hi
            m *= 2
        return a

    def inverse(self, a: np.ndarray) -> np.ndarray:
        a = np.array(a, dtype=np.int64, copy=True)
        lead = a.shape[:-1]
        p3 = self.p[:, :, None]
        t, m = 1, self.N
        while m > 1:
            h = m // 2
            v = a.reshape(lead + (h, 2, t))
            w = self.psi_inv_rev[:, h:m, None]
            u = v[..., 0, :].copy()
            x = v[..., 1, :]
            s = u + x
            s %= p3
            d = (u - x) % p3 * w % p3
            v[..., 0, :] = s
            v[..., 1, :] = d
            t *= 2
            m = h
        a *= self.n_inv
        a %= self.p
        return a


def _powers(base: int, n: int, p: int) -> np.ndarray:
    out = np.empty(n, dtype=np.int64)
    acc = 1
    for i in range(n):
        out[i] = acc
        acc = acc * base % p
    return out


@lru_cache(maxsize=None)
def ntt_context(N: int, primes: tuple[int, ...]) -> NTT:
    return NTT(N, primes)


class CRTBasis:
    """Residue conversion to and from a product of word-sized primes."""

    def __init__(self, primes: tuple[int, ...]):
        self.primes = tuple(primes)
        self.M = math.prod(self.primes)
        self.p = np.array(self.primes, dtype=np.int64)[:, None]
        # x = sum_i [r_i * (M/p_i)^-1 mod p_i] * (M/p_i)  (mod M)
        self.hat = [self.M // p for p in self.primes]
        self.hat_inv = np.array(
            [pow(h % p, -1, p) for h, p in zip(self.hat, self.primes)], dtype=np.int64
        )[:, None]

    def residues(self, x: np.ndarray) -> np.ndarray:
        """Reduce an integer array (int64 or object) into shape ``(k, N)``."""
        if x.dtype != object:
            return np.asarray(x, dtype=np.int64)[None, :] % self.p
        return np.stack([(x % p).astype(np.int64) for p in self.primes])

    def reconstruct(self, r: np.ndarray, centered: bool = False) -> np.ndarray:
        """Inverse of ``residues``; returns an object array in ``[0, M)``.

        With ``centered`` the result lies in ``(-M/2, M/2]`` instead.
        """
        y = r * self.hat_inv % self.p
        acc = np.zeros(r.shape[-1], dtype=object)
        for row, h in zip(y, self.hat):
            acc += row.astype(object) * h
        acc %= self.M
        if centered:
            acc = np.where(acc > self.M // 2, acc - self.M, acc)
        return acc


@lru_cache(maxsize=None)
def crt_basis(primes: tuple[int, ...]) -> CRTBasis:
    return CRTBasis(primes)


def exact_basis(N: int, bound_bits: int) -> tuple[int, ...]:
    """Aux primes whose product exceeds ``2**(bound_bits + 1)``.

    The extra bit leaves room for a sign, so signed results with magnitude
    below ``2**bound_bits`` are recovered by centered reconstruction.
    """
    k = 1
    while True:
        primes = aux_primes(N, k)
        if math.prod(primes).bit_length() > bound_bits + 1:
            return primes
        k += 1


def convolve_exact(a: np.ndarray, b: np.ndarray, bound_bits: int) -> np.ndarray:
    """Negacyclic product of two integer vectors over Z[X]/(X^N+1).

    ``bound_bits`` must bound ``log2`` of every output coefficient's magnitude;
    inputs may be signed and of any size expressible in that bound.
    """
    N = len(a)
    primes = exact_basis(N, bound_bits)
    ctx = ntt_context(N, primes)
    crt = crt_basis(primes)
    fa = ctx.forward(crt.residues(a))
    fb = ctx.forward(crt.residues(b))
    return crt.reconstruct(ctx.inverse(fa * fb % ctx.p), centered=True)
