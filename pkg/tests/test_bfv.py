import numpy as np
import pytest

from maskmatch import bfv
from maskmatch.bfv import ContractViolation
from maskmatch.ring import Q, T, ParameterError, RingParams, RingPoly, sample_uniform


def rand_pt(params, rng):
    return sample_uniform(params, T, rng)


def test_round_trip_and_zero(small_params, small_keys, rng):
    pk, sk, _ = small_keys
    zero = RingPoly.zero(small_params, T)
    assert bfv.decrypt(sk, bfv.encrypt(pk, zero, rng=rng)) == zero
    for _ in range(100):
        m = rand_pt(small_params, rng)
        assert bfv.decrypt(sk, bfv.encrypt(pk, m, rng=rng)) == m


def test_keygen_distinct(small_params, rng):
    _, sk1 = bfv.keygen(small_params, rng=rng)
    _, sk2 = bfv.keygen(small_params, rng=rng)
    assert sk1.s != sk2.s
    assert set(sk1.s.centered()) <= {-1, 0, 1}


def test_public_key_is_rlwe_sample(small_params, small_keys):
    pk, sk, _ = small_keys
    e = (pk.b + pk.a * sk.s).centered()
    assert max(abs(v) for v in e) <= 3


def test_plaintext_modulus_mismatch(small_params, small_keys, rng):
    pk, _, _ = small_keys
    with pytest.raises(ParameterError):
        bfv.encrypt(pk, sample_uniform(small_params, Q, rng), rng=rng)


def test_seeded_encryption(small_params, small_keys, rng):
    pk, sk, _ = small_keys
    m = rand_pt(small_params, rng)
    ct = bfv.encrypt(sk, m, seeded=True, rng=rng)
    assert ct.seeded and bfv.decrypt(sk, ct) == m
    seeded_len = len(bfv.serialize(ct))
    full_len = len(bfv.serialize(bfv.encrypt(pk, m, rng=rng)))
    poly = small_params.N * 14
    assert seeded_len == bfv.CT_HEADER_SIZE + poly + 32
    assert full_len == bfv.CT_HEADER_SIZE + 2 * poly
    assert 0.5 < seeded_len / full_len < 0.52
    back = bfv.deserialize(small_params, bfv.serialize(ct))
    assert back == ct and bfv.decrypt(sk, back) == m
    with pytest.raises(ContractViolation):
        bfv.encrypt(pk, m, seeded=True, rng=rng)


def test_tampered_ciphertext_decodes_to_garbage(small_params, small_keys, rng):
    pk, sk, _ = small_keys
    m = rand_pt(small_params, rng)
    ct = bfv.encrypt(pk, m, rng=rng)
    c1 = sample_uniform(small_params, Q, rng)
    bad = bfv.Ciphertext(small_params, (ct.parts[0], c1), ct.key_id)
    assert bfv.decrypt(sk, bad) != m


def test_wrong_key_decodes_to_garbage(small_params, small_keys, rng):
    pk, _, _ = small_keys
    _, other = bfv.keygen(small_params, rng=rng)
    m = rand_pt(small_params, rng)
    assert bfv.decrypt(other, bfv.encrypt(pk, m, rng=rng)) != m


def test_eval_add(small_params, small_keys, rng):
    pk, sk, _ = small_keys
    zero = bfv.encrypt(pk, RingPoly.zero(small_params, T), rng=rng)
    for _ in range(100):
        m1, m2 = rand_pt(small_params, rng), rand_pt(small_params, rng)
        c1 = bfv.encrypt(pk, m1, rng=rng)
        assert bfv.decrypt(sk, bfv.eval_add(c1, zero)) == m1
        assert bfv.decrypt(sk, bfv.eval_add(c1, bfv.encrypt(pk, m2, rng=rng))) == m1 + m2


def test_eval_add_disjoint_slots_is_union(small_params, small_keys, rng):
    pk, sk, _ = small_keys
    N = small_params.N
    a = np.zeros(N, dtype=np.int64)
    b = np.zeros(N, dtype=np.int64)
    a[: N // 2] = rng.integers(0, small_params.t, N // 2)
    b[N // 2:] = rng.integers(0, small_params.t, N // 2)
    ct = bfv.eval_add(bfv.encrypt(pk, RingPoly(small_params, a, T), rng=rng),
                      bfv.encrypt(pk, RingPoly(small_params, b, T), rng=rng))
    assert bfv.decrypt(sk, ct).tolist() == (a + b).tolist()


def test_eval_add_rejects_mismatch(small_params, small_keys, rng):
    pk, _, _ = small_keys
    pk2, _ = bfv.keygen(small_params, rng=rng)
    m = rand_pt(small_params, rng)
    c = bfv.encrypt(pk, m, rng=rng)
    with pytest.raises(ParameterError):
        bfv.eval_add(c, bfv.encrypt(pk2, m, rng=rng))
    with pytest.raises(ParameterError):
        bfv.eval_add(c, bfv.eval_mul(c, c))


def test_eval_add_plain(small_params, small_keys, rng):
    pk, sk, _ = small_keys
    m, p = rand_pt(small_params, rng), rand_pt(small_params, rng)
    ct = bfv.encrypt(pk, m, rng=rng)
    assert bfv.decrypt(sk, bfv.eval_add_plain(ct, RingPoly.zero(small_params, T))) == m
    assert bfv.decrypt(sk, bfv.eval_add_plain(ct, p)) == m + p
    deg2 = bfv.eval_mul(ct, ct)
    assert bfv.decrypt(sk, bfv.eval_add_plain(deg2, p)) == m * m + p
    with pytest.raises(ParameterError):
        bfv.eval_add_plain(ct, sample_uniform(small_params, Q, rng))


def test_eval_mul_identity_and_relin(small_params, small_keys, rng):
    pk, sk, rk = small_keys
    one = bfv.encrypt(pk, RingPoly.constant(small_params, 1, T), rng=rng)
    for _ in range(100):
        m1, m2 = rand_pt(small_params, rng), rand_pt(small_params, rng)
        c1, c2 = bfv.encrypt(pk, m1, rng=rng), bfv.encrypt(sk, m2, seeded=True, rng=rng)
        raw = bfv.eval_mul(c1, c2)
        lin = bfv.eval_mul(c1, c2, rk)
        assert raw.degree == 2 and lin.degree == 1
        expected = m1 * m2
        assert bfv.decrypt(sk, raw) == expected
        assert bfv.decrypt(sk, lin) == expected
    assert bfv.decrypt(sk, bfv.eval_mul(c1, one)) == m1


def test_eval_mul_rejects_degree_two(small_params, small_keys, rng):
    pk, _, _ = small_keys
    c = bfv.encrypt(pk, rand_pt(small_params, rng), rng=rng)
    with pytest.raises(ContractViolation):
        bfv.eval_mul(bfv.eval_mul(c, c), c)


def test_toy_packed_product(small_params, small_keys, rng):
    # rows of A reversed in consecutive 3-slot blocks, b in natural order:
    # the inner products land on X^2 and X^5
    pk, sk, rk = small_keys
    a = np.zeros(small_params.N, dtype=np.int64)
    a[:6] = [3, 2, 1, 6, 5, 4]
    b = np.zeros(small_params.N, dtype=np.int64)
    b[:3] = [7, 8, 9]
    ct = bfv.eval_mul(bfv.encrypt(pk, RingPoly(small_params, a, T), rng=rng),
                      bfv.encrypt(sk, RingPoly(small_params, b, T), seeded=True, rng=rng), rk)
    out = bfv.decrypt(sk, ct).tolist()
    assert out[2] == 50 and out[5] == 122


def test_switch_key_structure(small_params, small_keys, rng):
    _, sk, _ = small_keys
    _, sk2 = bfv.keygen(small_params, rng=rng)
    k = bfv.swkeygen(sk, sk2, rng=rng)
    assert k.digits == bfv.gadget_digits(small_params) == -(-109 // 16) == 7
    for j, (b, a) in enumerate(zip(k.b, k.a)):
        e = b + a * sk2.s + sk.s.scale(1 << (16 * j))
        assert max(abs(v) for v in e.centered()) <= 3


def test_switching_round_trips(small_params, small_keys, rng):
    pk, sk, _ = small_keys
    _, sk_v = bfv.keygen(small_params, rng=rng)
    k_ab = bfv.swkeygen(sk, sk_v, rng=rng)
    k_ba = bfv.swkeygen(sk_v, sk, rng=rng)
    k_aa = bfv.swkeygen(sk, sk, rng=rng)
    for _ in range(100):
        m = rand_pt(small_params, rng)
        ct = bfv.encrypt(pk, m, rng=rng)
        to_v = bfv.switching(ct, k_ab)
        assert bfv.decrypt(sk_v, to_v) == m
        assert bfv.decrypt(sk, bfv.switching(to_v, k_ba)) == m
        assert bfv.decrypt(sk, bfv.switching(ct, k_aa)) == m
    before = bfv.noise_budget(sk, ct)
    after = bfv.noise_budget(sk_v, to_v)
    assert before - 30 < after < before
    with pytest.raises(ContractViolation):
        bfv.switching(bfv.eval_mul(ct, ct), k_ab)
    with pytest.raises(ParameterError):
        bfv.switching(to_v, k_ab)


def test_switching_many_trials_default(default_params):
    rng = np.random.default_rng(11)
    pk, sk = bfv.keygen(default_params, rng=rng)
    _, sk_v = bfv.keygen(default_params, rng=rng)
    k = bfv.swkeygen(sk, sk_v, rng=rng)
    m = rand_pt(default_params, rng)
    ct = bfv.encrypt(pk, m, rng=rng)
    for _ in range(1000):
        r = rand_pt(default_params, rng)
        assert bfv.decrypt(sk_v, bfv.switching(bfv.eval_add_plain(ct, r), k)) == m + r


def test_noise_budget_behaviour(default_params):
    rng = np.random.default_rng(3)
    pk, sk = bfv.keygen(default_params, rng=rng)
    rk = bfv.relin_keygen(sk, rng=rng)
    _, sk_v = bfv.keygen(default_params, rng=rng)
    k = bfv.swkeygen(sk, sk_v, rng=rng)
    m1, m2 = rand_pt(default_params, rng), rand_pt(default_params, rng)
    c1, c2 = bfv.encrypt(pk, m1, rng=rng), bfv.encrypt(pk, m2, rng=rng)
    fresh = bfv.noise_budget(sk, c1)
    assert fresh >= 60
    added = bfv.eval_add(c1, c2)
    mul = bfv.eval_mul(added, c2, rk)
    sw = bfv.switching(mul, k)
    budgets = [fresh, bfv.noise_budget(sk, added), bfv.noise_budget(sk, mul), bfv.noise_budget(sk_v, sw)]
    assert budgets == sorted(budgets, reverse=True)
    assert budgets[2] < budgets[1] and budgets[-1] > 0


def test_exhausted_budget_breaks_decryption(small_params, small_keys, rng):
    pk, sk, _ = small_keys
    m = rand_pt(small_params, rng)
    ct = bfv.encrypt(pk, m, rng=rng)
    # push every coefficient's noise to just past Delta/2
    bump = RingPoly(small_params, [small_params.delta // 2 + small_params.t] * small_params.N, Q)
    noisy = bfv.Ciphertext(small_params, (ct.parts[0] + bump, ct.parts[1]), ct.key_id)
    assert bfv.noise_budget(sk, noisy) == 0
    assert bfv.decrypt(sk, noisy) != m


@pytest.mark.parametrize("which", ["small", "desk"])
def test_serialize_round_trip(which, small_params, desk_params, rng):
    params = small_params if which == "small" else desk_params
    pk, sk = bfv.keygen(params, rng=rng)
    m = rand_pt(params, rng)
    for ct in (bfv.encrypt(pk, m, rng=rng), bfv.eval_mul(bfv.encrypt(pk, m, rng=rng), bfv.encrypt(pk, m, rng=rng))):
        blob = bfv.serialize(ct)
        assert blob[:4] == b"CMCT"
        back = bfv.deserialize(params, blob)
        assert back == ct and back.degree == ct.degree
        assert all(np.array_equal(x.coeffs, y.coeffs) for x, y in zip(back.parts, ct.parts))
    with pytest.raises(ParameterError):
        bfv.deserialize(params, b"XXXX" + blob[4:])
    other = RingParams.build(params.N, 60 if params.q.bit_length() != 60 else 109, 20)
    with pytest.raises(ParameterError):
        bfv.deserialize(other, blob)


def test_truncation_contract(small_params, small_keys, rng):
    pk, sk, _ = small_keys
    ct = bfv.encrypt(pk, rand_pt(small_params, rng), rng=rng)
    with pytest.raises(ContractViolation):
        bfv.serialize(bfv.eval_mul(ct, ct), 8)
    with pytest.raises(ContractViolation):
        bfv.serialize(bfv.encrypt(sk, rand_pt(small_params, rng), seeded=True, rng=rng), 8)
    t = bfv.deserialize(small_params, bfv.serialize(ct, 8))
    assert t.truncated_bits == 8
    with pytest.raises(ContractViolation):
        bfv.eval_add(t, ct)
    with pytest.raises(ContractViolation):
        bfv.eval_add_plain(t, rand_pt(small_params, rng))


def test_truncation_size_and_safety():
    default = RingParams.default()
    b = bfv.truncation_for_reduction(default, 0.16)
    assert b == 21
    full = bfv.serialized_size(default)
    cut = bfv.serialized_size(default, truncate_bits=b)
    assert 0.16 <= 1 - cut / full <= 0.25
    assert b <= bfv.max_safe_truncation(default, 2**45)
    assert bfv.truncation_for_reduction(RingParams.desk()) <= bfv.max_safe_truncation(RingParams.desk(), 2**38)


def test_truncated_decryptions_exact(small_params, small_keys, rng):
    pk, sk, rk = small_keys
    _, sk_v = bfv.keygen(small_params, rng=rng)
    k = bfv.swkeygen(sk, sk_v, rng=rng)
    b = bfv.truncation_for_reduction(small_params, 0.20)
    m1, m2 = rand_pt(small_params, rng), rand_pt(small_params, rng)
    ct = bfv.switching(bfv.eval_mul(bfv.encrypt(pk, m1, rng=rng), bfv.encrypt(pk, m2, rng=rng), rk), k)
    for _ in range(50):
        r = rand_pt(small_params, rng)
        blob = bfv.serialize(bfv.eval_add_plain(ct, r), b)
        assert bfv.decrypt(sk_v, bfv.deserialize(small_params, blob)) == m1 * m2 + r


@pytest.mark.parametrize("kind", ["pk", "sk", "ks"])
def test_key_files(small_params, small_keys, rng, kind):
    pk, sk, rk = small_keys
    if kind == "pk":
        back = bfv.PublicKey.from_bytes(small_params, pk.to_bytes())
        assert back.b == pk.b and back.a == pk.a and back.key_id == pk.key_id
    elif kind == "sk":
        blob = sk.to_bytes()
        assert blob[:4] == b"CMSK"
        assert bfv.SecretKey.from_bytes(small_params, blob).s == sk.s
    else:
        back = bfv.SwitchKey.from_bytes(small_params, rk.to_bytes())
        assert back.relin and back.b == rk.b and back.a == rk.a
        assert back.src_id == rk.src_id and back.dst_id == rk.dst_id
        with pytest.raises(ParameterError):
            bfv.PublicKey.from_bytes(small_params, rk.to_bytes())
