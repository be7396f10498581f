"""Fast oracle suites runnable without the test tree (``maskmatch selftest``)."""

from __future__ import annotations

import numpy as np

from . import bfv, mpc
from .encoding import encode_matrix, encode_query, extract_targets, quantize_batch, rows_per_ciphertext
from .net import LocalNetwork, run_parties
from .protocol import ProtocolConfig, System, plaintext_predicate
from .ring import RingParams, T, poly_mul_negacyclic, sample_uniform, schoolbook_mul


def suite_ring(rng, trials=20):
    params = RingParams.build(256, 109, 20)
    ok = 0
    for _ in range(trials):
        a, b = sample_uniform(params, T, rng), sample_uniform(params, T, rng)
        ok += poly_mul_negacyclic(a, b) == schoolbook_mul(a, b)
    return ok, trials


def suite_packing(rng, trials=50):
    ok = 0
    for _ in range(trials):
        N, d = [(64, 8), (1024, 32), (4096, 128)][rng.integers(3)]
        params = RingParams.build(N, 109, 20)
        delta = rows_per_ciphertext(N, d)
        a = rng.integers(-400, 401, size=(delta, d))
        b = rng.integers(-400, 401, size=d)
        prod = poly_mul_negacyclic(encode_matrix(a, params, d).poly, encode_query(b, params))
        got = extract_targets(prod, d, delta)
        ok += np.array_equal(got, (a @ b) % params.t)
    return ok, trials


def suite_bfv(rng, trials=10):
    params = RingParams.build(1024, 109, 20)
    pk, sk = bfv.keygen(params, rng=rng)
    _, sk_v = bfv.keygen(params, rng=rng)
    rk = bfv.relin_keygen(sk, rng=rng)
    ksw = bfv.swkeygen(sk, sk_v, rng=rng)
    ok = 0
    for _ in range(trials):
        m1, m2 = sample_uniform(params, T, rng), sample_uniform(params, T, rng)
        ct = bfv.eval_mul(bfv.encrypt(pk, m1, rng=rng), bfv.encrypt(pk, m2, rng=rng), rk)
        out = bfv.deserialize(params, bfv.serialize(bfv.switching(ct, ksw), 21))
        ok += bfv.decrypt(sk_v, out) == poly_mul_negacyclic(m1, m2)
    return ok, trials


def suite_comparison(rng, ell=6):
    n = 1 << ell
    x, y = np.meshgrid(np.arange(n, dtype=np.uint64), np.arange(n, dtype=np.uint64))
    x, y = x.ravel(), y.ravel()
    b0, b1 = mpc.deal(mpc.and_gate_count(ell) * x.size, 0, rng)
    net = LocalNetwork(["a", "b"], record=False)
    l0, l1 = net.endpoint("a").link("b", 0), net.endpoint("b").link("a", 1)
    s0, s1 = run_parties(lambda: mpc.millionaire_lt(l0, x, ell, b0),
                         lambda: mpc.millionaire_lt(l1, y, ell, b1), net=net)
    return int(np.sum((s0 ^ s1) == (x < y))), x.size


def suite_protocol(rng, trials=8):
    params = RingParams.build(1024, 109, 20)
    cfg = ProtocolConfig.build(params, 32)
    x = rng.normal(size=(40, 32))
    rows = quantize_batch(x, cfg.qp)
    ok = 0
    with System(cfg, seed=int(rng.integers(1 << 30)), record=False) as sm:
        sm.enroll(x)
        for _ in range(trials):
            q = sm.quantize(rng.normal(size=32))[0]
            ts = int(rng.integers(-cfg.qp.p ** 2, cfg.qp.p ** 2))
            ok += sm.query(q, ts=ts).mu == plaintext_predicate(rows, q, ts)
    return ok, trials


SUITES = {
    "ring": suite_ring,
    "packing": suite_packing,
    "bfv": suite_bfv,
    "comparison": suite_comparison,
    "protocol": suite_protocol,
}


def run(seed: int = 0, out=print) -> bool:
    rng = np.random.default_rng(seed)
    all_ok = True
    for name, fn in SUITES.items():
        ok, total = fn(rng)
        all_ok &= ok == total
        out(f"{name:<11} {ok}/{total} passed")
    return all_ok
