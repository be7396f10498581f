# Cost grows linearly in the ciphertext count; decisions sharpen with finer quantization.
#%%
from maskmatch import harness

config = harness.BenchConfig(N=2048, q_bits=60, d=128, m=[100, 400, 1600], he_only=True, seed=0)
rows = harness.bench_sweep(config)
dist = [r for r in rows if r["phase"] == "distance"]
for r in dist:
    print(f"m={r['m']:>5} s={r['s']:>4} time={r['time']:.2f}s bytes={r['bytes']}")
s = [r["s"] for r in dist]
print("time R^2 = %.4f" % harness.linear_fit(s, [r["time"] for r in dist])[2])

#%% agreement with the float cosine decision at four precisions
result = harness.accuracy_study(harness.AccuracyConfig(queries=60, seed=4))
print(harness.format_accuracy(result))
