# Packing a batch of vectors so one ciphertext product yields many inner products.
#%%
import numpy as np

from maskmatch import bfv
from maskmatch.encoding import QuantParams, encode_matrix, encode_query, extract_targets, quantize_batch
from maskmatch.encoding import rows_per_ciphertext
from maskmatch.ring import RingParams, poly_mul_negacyclic

rng = np.random.default_rng(0)
params = RingParams.build(1024, 109, 20)
d = 32
qp = QuantParams.default_for(d, params.t)
delta = rows_per_ciphertext(params.N, d)
print(f"N={params.N} d={d} -> {delta} rows per ciphertext, scale p={qp.p}")

#%% quantize a small database and a query
db = rng.normal(size=(delta, d))
query = db[3] + 0.1 * rng.normal(size=d)
A = quantize_batch(db, qp)
b = quantize_batch(query, qp)[0]

#%% plaintext check: every target coefficient is one row's inner product
prod = poly_mul_negacyclic(encode_matrix(A, params, d).poly, encode_query(b, params))
targets = extract_targets(prod, d, delta)
signed = np.where(targets >= params.t // 2, targets - params.t, targets)
print("packed == A @ b:", np.array_equal(signed, A @ b))

#%% the same under encryption, with relinearization and key switching
pk, sk = bfv.keygen(params, rng=rng)
_, sk_v = bfv.keygen(params, rng=rng)
rk = bfv.relin_keygen(sk, rng=rng)
ksw = bfv.swkeygen(sk, sk_v, rng=rng)
ct = bfv.eval_mul(bfv.encrypt(pk, encode_query(b, params), rng=rng),
                  bfv.encrypt(pk, encode_matrix(A, params, d).poly, rng=rng), rk)
out = bfv.switching(ct, ksw)
print("noise budget after product and switch:", bfv.noise_budget(sk_v, out), "bits")
dec = extract_targets(bfv.decrypt(sk_v, out), d, delta)
print("decrypted targets match:", np.array_equal(dec, targets))

#%% truncating low bits shrinks the response without changing the decryption
bits = bfv.truncation_for_reduction(params, 0.16)
small = bfv.serialize(out, bits)
print(f"{bits} bits dropped: {len(bfv.serialize(out))} -> {len(small)} bytes")
print("still exact:", bfv.decrypt(sk_v, bfv.deserialize(params, small)) == bfv.decrypt(sk_v, out))
