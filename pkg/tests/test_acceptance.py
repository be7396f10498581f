"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -s`` to see the lines as they
happen; they are also repeated in the terminal summary.
"""

import functools
import math
import time

import numpy as np
from scipy import stats

from maskmatch import bfv, harness, mpc
from maskmatch.encoding import encode_matrix, encode_query, extract_targets, quantize_batch, rows_per_ciphertext
from maskmatch.net import LocalNetwork, run_parties
from maskmatch.protocol import KeyMaterial, ProtocolConfig, System
from maskmatch.ring import T, RingParams, poly_mul_negacyclic, sample_uniform

RESULTS: list[str] = []


def criterion(number: int, title: str, budget_s: float | None = None):
    """Time the wrapped test, enforce its runtime budget and record one summary line."""

    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            start = time.perf_counter()
            detail, status = "", "FAIL"
            try:
                detail = fn(*args, **kwargs) or ""
                elapsed = time.perf_counter() - start
                if budget_s is not None:
                    assert elapsed < budget_s, f"took {elapsed:.0f}s, budget {budget_s:.0f}s"
                status = "PASS"
            except BaseException as exc:
                detail = f"{type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"
                raise
            finally:
                elapsed = time.perf_counter() - start
                line = f"[{status}] criterion {number:>2}: {title} ({elapsed:.1f}s) {detail}".rstrip()
                RESULTS.append(line)
                print(line)

        return run

    return wrap


def two_party(fn0, fn1):
    net = LocalNetwork(["cs", "verifier"], record=False)
    l0 = net.endpoint("cs").link("verifier", 0)
    l1 = net.endpoint("verifier").link("cs", 1)
    try:
        return run_parties(lambda: fn0(l0), lambda: fn1(l1), net=net)
    finally:
        net.close()


def unit_rows(rng, m, d):
    x = rng.normal(size=(m, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


# ------------------------------------------------------------------ 1


@criterion(1, "packed product targets equal the integer matrix-vector product", 120)
def test_packing_theorem():
    rng = np.random.default_rng(101)
    checked = 0
    for N, d in [(64, 8), (1024, 32), (4096, 128), (4096, 512)]:
        params = RingParams.build(N, 109, 20)
        delta = rows_per_ciphertext(N, d)
        for _ in range(200):
            n = int(rng.integers(1, delta + 1))
            a = rng.integers(-400, 401, size=(n, d))
            b = rng.integers(-400, 401, size=d)
            prod = poly_mul_negacyclic(encode_matrix(a, params, d).poly, encode_query(b, params))
            got = extract_targets(prod, d, delta)[:n]
            want = (a @ b) % params.t
            assert np.array_equal(got, want), (N, d)
            checked += 1
    return f"{checked} trials, 0 mismatches"


# ------------------------------------------------------------------ 2


@criterion(2, "BFV encrypt/add/mul/relin/switch/decrypt pipelines decode exactly", 300)
def test_bfv_pipelines():
    rng = np.random.default_rng(202)
    plan = [(RingParams.default(), 40), (RingParams.build(2048, 109, 20), 30), (RingParams.desk(), 30)]
    min_budget = {}
    total = 0
    for params, trials in plan:
        pk, sk = bfv.keygen(params, rng=rng)
        _, sk_v = bfv.keygen(params, rng=rng)
        rk = bfv.relin_keygen(sk, rng=rng)
        ksw = bfv.swkeygen(sk, sk_v, rng=rng)
        tag = f"N={params.N}/q{params.q.bit_length()}"
        for _ in range(trials):
            m1, m2 = sample_uniform(params, T, rng), sample_uniform(params, T, rng)
            c1, c2 = bfv.encrypt(pk, m1, rng=rng), bfv.encrypt(pk, m2, rng=rng)
            prod = poly_mul_negacyclic(m1, m2)
            tensor = bfv.eval_mul(c1, c2)
            relin = bfv.relinearize(tensor, rk)
            stages = [
                ("fresh", sk, c1, m1),
                ("add", sk, bfv.eval_add(c1, c2), m1 + m2),
                ("mul", sk, tensor, prod),
                ("relin", sk, relin, prod),
                ("switch", sk_v, bfv.switching(relin, ksw), prod),
            ]
            for name, key, ct, want in stages:
                assert bfv.decrypt(key, ct) == want, (tag, name)
                budget = bfv.noise_budget(key, ct)
                assert budget > 0, (tag, name, budget)
                min_budget[tag] = min(min_budget.get(tag, budget), budget)
            total += 1
    return f"{total} pipelines; min budget bits " + ", ".join(f"{k}: {v}" for k, v in min_budget.items())


# ------------------------------------------------------------------ 3


@criterion(3, "comparison gadgets agree exhaustively with integer comparison", 60)
def test_comparison_exhaustive():
    rng = np.random.default_rng(303)
    ell = 8
    x, y = np.meshgrid(np.arange(256, dtype=np.uint64), np.arange(256, dtype=np.uint64))
    x, y = x.ravel(), y.ravel()
    t0, t1 = mpc.deal(x.size * mpc.and_gate_count(ell), 0, rng)
    s0, s1 = two_party(lambda l: mpc.millionaire_lt(l, x, ell, t0), lambda l: mpc.millionaire_lt(l, y, ell, t1))
    bad_lt = int(np.sum((s0 ^ s1) != (x < y)))

    # every (v, ts) in the signed range with v - ts - 1 also in range
    v, ts = np.meshgrid(np.arange(-128, 128), np.arange(-128, 128))
    v, ts = v.ravel(), ts.ravel()
    keep = (v - ts - 1 >= -128) & (v - ts - 1 <= 127)
    v, ts = v[keep], ts[keep]
    d0 = mpc.random_ring(rng, ell, v.size)
    d1 = (mpc.to_ring(v, ell) - d0) & mpc.ring_mask(ell)
    t0, t1 = mpc.deal(v.size * mpc.and_gate_count(ell - 1), 0, rng)
    g0, g1 = two_party(lambda l: mpc.shared_gt_threshold(l, d0, ell, t0),
                       lambda l: mpc.shared_gt_threshold(l, d1, ell, t1, ts=ts))
    bad_gt = int(np.sum((g0 ^ g1) != (v > ts)))
    assert bad_lt == 0 and bad_gt == 0
    return f"millionaire 65536 pairs, threshold {v.size} pairs, 0 mismatches"


# ------------------------------------------------------------------ 4


def instance_threshold(rng, kind, ips, p):
    if kind == 0:
        tau = float(rng.uniform(-0.2, 0.95))
        return math.floor(tau * p * p), tau
    if kind == 1:
        return int(ips.max() + rng.integers(-2, 2)), None
    return int(rng.integers(-p * p, p * p + 1)), None


@criterion(4, "end-to-end protocol equals the plaintext predicate", 900)
def test_end_to_end_oracle():
    rng = np.random.default_rng(404)
    plan = [(1024, 32, 300), (1024, 128, 150), (4096, 32, 250), (4096, 128, 300)]
    total = float_checked = 0
    for N, d, count in plan:
        cfg = ProtocolConfig.build(RingParams.build(N, 109, 20), d)
        p = cfg.qp.p
        keys = KeyMaterial.generate(cfg.params, rng=rng)
        done = 0
        while done < count:
            m = int(rng.integers(1, 257))
            x, _ = harness.gen_synthetic(m, d, int(rng.integers(1, 6)), rng.integers(1 << 31), jitter=0.4)
            rows = quantize_batch(x, cfg.qp)
            with System(cfg, seed=int(rng.integers(1 << 31)), keys=keys, record=False) as sm:
                sm.enroll(x)
                for _ in range(min(10, count - done)):
                    if rng.random() < 0.5:
                        qf = x[rng.integers(m)] + rng.normal(scale=0.3 / math.sqrt(d), size=d)
                    else:
                        qf = rng.normal(size=d)
                    qf = qf / np.linalg.norm(qf)
                    qi = quantize_batch(qf, cfg.qp)[0]
                    ips = rows @ qi
                    ts, tau = instance_threshold(rng, int(rng.integers(3)), ips, p)
                    res = sm.query(qi, ts=ts)
                    assert res.mu == int(np.any(ips > ts)), (N, d, m, ts)
                    if tau is not None:
                        cos = x @ qf
                        if np.min(np.abs(cos - tau)) > 2 * d / p:
                            assert res.mu == int(np.any(cos > tau))
                            float_checked += 1
                    done += 1
        total += done
    assert total >= 1000 and float_checked > 0
    return f"{total} instances exact; {float_checked} wide-margin instances also match the float predicate"


# ------------------------------------------------------------------ 5


@criterion(5, "he_mults = ceil(m/delta), switchings = s or 0", 600)
def test_op_count_law():
    rng = np.random.default_rng(505)
    params = RingParams.default()
    keys = KeyMaterial.generate(params, rng=rng)
    seen = []
    for m in (1, 31, 62, 1000, 10_000):
        s = math.ceil(m / 31)
        cfg = ProtocolConfig.build(params, 128)
        assert cfg.delta == 31
        with System(cfg, seed=m, keys=keys, record=False) as sm:
            sm.enroll(rng.normal(size=(m, 128)))
            db = sm.cs.db
            res = sm.query(rng.normal(size=128), tau=0.5)
            assert (res.s, res.he_mults, res.he_adds, res.switchings) == (s, s, s, s), m
        setup_cfg = ProtocolConfig.build(params, 128, switch_at_setup=True)
        with System(setup_cfg, seed=m, keys=keys, database=db, record=False) as sm:
            res = sm.query(rng.normal(size=128), tau=0.5)
            assert (res.he_mults, res.he_adds, res.switchings) == (s, s, 0), m
        seen.append(f"m={m}:s={s}")
    return ", ".join(seen)


# ------------------------------------------------------------------ 6


@criterion(6, "fragmented enrollment equals monolithic enrollment", 300)
def test_enrollment_equivalence():
    rng = np.random.default_rng(606)
    params = RingParams.build(1024, 109, 20)
    cfg = ProtocolConfig.build(params, 32)
    keys = KeyMaterial.generate(params, rng=rng)
    x = unit_rows(rng, 500, 32)
    with System(cfg, seed=0, keys=keys, record=False) as sm:
        sm.enroll(x)
        reference = sm.decrypt_database()
    assert np.array_equal(reference, quantize_batch(x, cfg.qp))
    uploads = 0
    for trial in range(50):
        n_dps = int(rng.integers(2, 6))
        cuts = np.sort(rng.choice(np.arange(1, 500), size=int(rng.integers(1, 25)), replace=False))
        with System(cfg, seed=trial + 1, keys=keys, n_dps=n_dps, record=False) as sm:
            for part in np.split(np.arange(500), cuts):
                sm.enroll(x[part], dp=int(rng.integers(n_dps)))
                assert 0 <= sm.cs.db.ind < cfg.delta
                uploads += 1
            assert sm.cs.db.m == 500 and sm.cs.db.s == math.ceil(500 / cfg.delta)
            assert np.array_equal(sm.decrypt_database(), reference), trial
    return f"50 fragmentations, {uploads} uploads"


# ------------------------------------------------------------------ 7


@criterion(7, "verifier shares uniform, CS bit unbiased, sessions independent", 600)
def test_leakage_shape():
    params = RingParams.build(1024, 60, 20)
    cfg = ProtocolConfig.build(params, 32)
    rng = np.random.default_rng(707)
    x = unit_rows(rng, 31, 32)
    query = x[0]
    sessions = 10_000
    shares = np.empty((sessions, 31), dtype=np.int64)
    mu0 = np.empty(sessions, dtype=np.int64)
    with System(cfg, seed=707, record=False) as sm:
        sm.enroll(x)
        for i in range(sessions):
            res = sm.query(query, tau=0.9)
            assert res.mu == 1
            shares[i] = res.verifier_shares
            mu0[i] = res.mu0
    t = params.t
    hist = np.bincount((shares.ravel() * 16 // t), minlength=16)
    p_uniform = stats.chisquare(hist).pvalue
    bias = abs(mu0.mean() - 0.5)
    sigma = 0.5 / math.sqrt(sessions)
    a, b = shares[0::2].ravel().astype(float), shares[1::2].ravel().astype(float)
    r, p_corr = stats.pearsonr(a, b)
    assert p_uniform > 0.001
    assert bias < 3 * sigma
    assert p_corr > 0.001
    return f"chi2 p={p_uniform:.3f}, mu0 mean={mu0.mean():.4f} (3sigma={3 * sigma:.4f}), pair corr={r:+.4f} p={p_corr:.3f}"


# ------------------------------------------------------------------ 8


@criterion(8, "truncated responses: 0 failures in 10^4 decryptions, 16-25% smaller", 300)
def test_compression():
    params = RingParams.default()
    cfg = ProtocolConfig.build(params, 128)
    bits = cfg.truncation
    reduction = 1 - bfv.serialized_size(params, 1, bits) / bfv.serialized_size(params, 1, 0)
    assert 0.16 <= reduction <= 0.25
    rng = np.random.default_rng(808)
    pk, sk = bfv.keygen(params, rng=rng)
    _, sk_v = bfv.keygen(params, rng=rng)
    rk = bfv.relin_keygen(sk, rng=rng)
    ksw = bfv.swkeygen(sk, sk_v, rng=rng)
    failures = decryptions = 0
    for _ in range(100):
        rows = quantize_batch(rng.normal(size=(31, 128)), cfg.qp)
        q = quantize_batch(rng.normal(size=128), cfg.qp)[0]
        a, b = encode_matrix(rows, params, 128).poly, encode_query(q, params)
        switched = bfv.switching(bfv.eval_mul(bfv.encrypt(pk, b, rng=rng), bfv.encrypt(pk, a, rng=rng), rk), ksw)
        plain = poly_mul_negacyclic(b, a)
        # adding the mask after switching gives the same ciphertext as before it
        for _ in range(100):
            r = sample_uniform(params, T, rng)
            blob = bfv.serialize(bfv.eval_add_plain(switched, r), bits)
            assert len(blob) == cfg.response_size()
            out = bfv.decrypt(sk_v, bfv.deserialize(params, blob))
            failures += out != plain + r
            decryptions += 1
    assert failures == 0
    return f"{decryptions} decryptions, {failures} failures, {bits} bits dropped, reduction {100 * reduction:.1f}%"


# ------------------------------------------------------------------ 9


@criterion(9, "HE-phase time and CS->verifier bytes linear in s (R^2 > 0.99)")
def test_scaling_trend():
    config = harness.BenchConfig(N=2048, q_bits=60, d=128, m=[100, 300, 1000, 3000, 10_000, 30_000, 100_000],
                                 he_only=True, seed=909)
    rows = [r for r in harness.bench_sweep(config) if r["phase"] == "distance"]
    s = [r["s"] for r in rows]
    _, _, r2_time = harness.linear_fit(s, [r["time"] for r in rows])
    slope, intercept, r2_bytes = harness.linear_fit(s, [r["bytes"] for r in rows])
    size = config.protocol_config().response_size()
    assert all(r["bytes"] == r["s"] * size for r in rows)
    assert all(r["he_mults"] == r["s"] for r in rows)
    per_ct = ", ".join(f"{r['time'] / r['s'] * 1e3:.1f}" for r in rows)
    assert r2_time > 0.99 and r2_bytes > 0.99, f"time R^2={r2_time:.4f}; ms per ciphertext: {per_ct}"
    return (f"s={s[0]}..{s[-1]}, time R^2={r2_time:.4f} (ms per ciphertext: {per_ct}), "
            f"bytes R^2={r2_bytes:.6f} ({slope:.0f} B per ciphertext)")


# ------------------------------------------------------------------ 10


@criterion(10, "agreement monotone in precision, 100% at 1e-4 beyond margin 1e-3")
def test_accuracy_study():
    result = harness.accuracy_study(harness.AccuracyConfig(seed=1010))
    print(harness.format_accuracy(result))
    rows = [result["rows"][p] for p in harness.STUDY_PRECISIONS]
    overall = [r["overall"] for r in rows]
    assert all(a <= b for a, b in zip(overall, overall[1:])), overall
    finest = rows[-1]["buckets"]
    wide = [v for k, v in finest.items() if k != harness.bucket_label(0)]
    assert sum(n for _, n in wide) > 0
    assert all(ok == n for ok, n in wide)
    return "overall agreement " + " <= ".join(f"{100 * a:.1f}%" for a in overall)


# ------------------------------------------------------------------ 11


@criterion(11, "raw-share comparison fails at the predicted wraparound rate", 120)
def test_literal_comparison_failure_rate():
    rng = np.random.default_rng(1111)
    ell, trials, span = 8, 100_000, 32
    v = rng.integers(-span, span + 1, size=trials)
    ts = rng.integers(-span, span + 1, size=trials)
    d0 = mpc.random_ring(rng, ell, trials)
    d1 = (mpc.to_ring(v, ell) - d0) & mpc.ring_mask(ell)
    # raw_share_lt takes one scalar threshold, so run groups sharing a threshold
    wrong = 0
    for value in np.unique(ts):
        sel = ts == value
        n = int(sel.sum())
        a0, b0 = mpc.deal(n * mpc.and_gate_count(ell), 0, rng)
        s0, s1 = two_party(lambda l: mpc.raw_share_lt(l, d0[sel], ell, a0),
                           lambda l: mpc.raw_share_lt(l, d1[sel], ell, b0, ts=int(value)))
        wrong += int(np.sum((s0 ^ s1) != (v[sel] > value)))
    rate = wrong / trials
    predicted = float(np.mean(np.abs(v - ts))) / 2 ** ell
    assert predicted / 2 <= rate <= 2 * predicted

    # the same flag end to end: single-row databases at t = 2^8
    params = RingParams.build(64, 60, 8)
    cfg = ProtocolConfig.build(params, 8, literal_comparison=True)
    exact = ProtocolConfig.build(params, 8)
    keys = KeyMaterial.generate(params, rng=rng)
    errs = {True: 0, False: 0}
    gaps = []
    sessions = 600
    with System(cfg, seed=1, keys=keys, record=False) as lit, System(exact, seed=2, keys=keys, record=False) as ex:
        row = unit_rows(rng, 1, 8)
        lit.enroll(row)
        ex.enroll(row)
        a = quantize_batch(row, cfg.qp)[0]
        for _ in range(sessions):
            q = quantize_batch(rng.normal(size=8), cfg.qp)[0]
            ts_i = int(rng.integers(-cfg.qp.p ** 2, cfg.qp.p ** 2 + 1))
            truth = int(a @ q > ts_i)
            errs[True] += lit.query(q, ts=ts_i).mu != truth
            errs[False] += ex.query(q, ts=ts_i).mu != truth
            gaps.append(abs(int(a @ q) - ts_i))
    e2e_pred = np.mean(gaps) / 2 ** ell
    e2e_rate = errs[True] / sessions
    assert errs[False] == 0
    assert e2e_pred / 2 <= e2e_rate <= 2 * e2e_pred
    return (f"gadget rate {rate:.4f} vs predicted {predicted:.4f}; protocol rate {e2e_rate:.4f} vs "
            f"{e2e_pred:.4f}, exact gadget 0 errors")
