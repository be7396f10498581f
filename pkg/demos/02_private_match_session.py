# A full session: enrollment by two data providers, then private threshold queries.
#%%
import numpy as np

from maskmatch import ProtocolConfig, RingParams, System
from maskmatch.harness import gen_synthetic

params = RingParams.build(1024, 109, 20)
cfg = ProtocolConfig.build(params, 32)
vectors, labels = gen_synthetic(80, 32, clusters=6, seed=1, jitter=0.3)

#%% two providers enroll disjoint batches; the server merges partial ciphertexts
sm = System(cfg, seed=7, n_dps=2)
for i, part in enumerate((vectors[:45], vectors[45:])):
    plan = sm.enroll(part, dp=i)
    print(f"dp{i}: {plan.n_u} vectors in batches {plan.batches}, server now at ind={plan.new_ind}")
print("stored ciphertexts:", sm.cs.db.s, "rows:", sm.cs.db.m)

#%% a near-duplicate query matches, an unrelated one does not
probe = vectors[10] + 0.05 * np.random.default_rng(2).normal(size=32)
stranger = np.random.default_rng(3).normal(size=32)
for name, q in (("near-duplicate", probe), ("stranger", stranger)):
    res = sm.query(q, tau=0.85)
    print(f"{name:>15}: match={res.mu}  cs->verifier={res.bytes_by_direction['cs->verifier']} B  "
          f"mults={res.he_mults} switchings={res.switchings}")

#%% what the verifier sees: shares that look uniform, re-randomized each session
a = sm.query(probe, tau=0.85).verifier_shares
b = sm.query(probe, tau=0.85).verifier_shares
print("first shares, two sessions:", a[:4], b[:4])
sm.close()

#%% switching the database once at setup removes per-query switching
setup_cfg = ProtocolConfig.build(params, 32, switch_at_setup=True)
with System(setup_cfg, seed=7) as sm2:
    sm2.enroll(vectors)
    res = sm2.query(probe, tau=0.85)
    print("setup mode: match", res.mu, "switchings per query", res.switchings,
          "query bytes", res.bytes_by_direction["verifier->cs"])
