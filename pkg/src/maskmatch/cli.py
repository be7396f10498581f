"""Command-line entry point: ``maskmatch {keygen,gen,enroll,query,bench,accuracy,selftest}``."""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import harness, selftest
from .encoding import DomainError, read_vectors, write_vectors
from .mpc import ProtocolError
from .ring import ParameterError, RingParams


def cmd_keygen(args):
    params = RingParams.build(args.N, args.q_bits, args.t_bits)
    p = round(1 / args.precision) if args.precision else None
    harness.init_database(args.out, params, args.dim, p, seed=args.seed)
    print(f"database initialised in {args.out} (N={params.N}, q={params.q.bit_length()} bits, "
          f"t=2^{params.t_bits}, d={args.dim})")


def cmd_gen(args):
    vecs, _ = harness.gen_synthetic(args.count, args.dim, args.clusters, args.seed, args.jitter, args.orthogonal)
    if args.text:
        np.savetxt(args.out, vecs, fmt="%.8f")
    else:
        write_vectors(args.out, vecs)
    print(f"wrote {len(vecs)} vectors of dimension {args.dim} to {args.out}")


def cmd_enroll(args):
    vecs = read_vectors(args.vectors)
    with harness.open_system(args.db, seed=args.seed) as sm:
        plan = sm.enroll(vecs)
        harness.save_database(args.db, sm.cs.db)
        db = sm.cs.db
    print(f"enrolled {plan.n_u} vectors: m={db.m}, s={db.s}, ind={db.ind}")


def cmd_query(args):
    vec = read_vectors(args.vector)[0]
    with harness.open_system(args.db, args.switch_at_setup, args.truncate_bits, seed=args.seed,
                             transport=args.transport) as sm:
        res = sm.query(vec, tau=args.threshold)
    print(res.mu)
    report = {
        "m": res.m, "s": res.s, "he_mults": res.he_mults, "he_adds": res.he_adds,
        "switchings": res.switchings, "bytes_by_direction": res.bytes_by_direction,
        "phase_bytes": res.phase_bytes,
        "phase_time": {k: round(v, 4) for k, v in res.phase_time.items()},
        "triples_consumed": list(res.triples_consumed),
    }
    print(json.dumps(report, indent=2), file=sys.stderr if args.quiet else sys.stdout)


def cmd_bench(args):
    cfg = harness.BenchConfig.from_json(args.config)
    rows = harness.bench_sweep(cfg, args.out)
    dist = [r for r in rows if r["phase"] == "distance"]
    if len({r["s"] for r in dist}) > 1:
        s = [r["s"] for r in dist]
        _, _, r2_t = harness.linear_fit(s, [r["time"] for r in dist])
        _, _, r2_b = harness.linear_fit(s, [r["bytes"] for r in dist])
        print(f"distance phase vs s: time R^2={r2_t:.4f}, bytes R^2={r2_b:.4f}")
    print(f"wrote {len(rows)} rows to {args.out}")


def cmd_accuracy(args):
    cfg = harness.AccuracyConfig.from_json(args.config) if args.config else harness.AccuracyConfig()
    print(harness.format_accuracy(harness.accuracy_study(cfg)))


def cmd_selftest(args):
    return 0 if selftest.run(args.seed) else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="maskmatch", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keygen", help="create keys and an empty database directory")
    p.add_argument("--out", required=True)
    p.add_argument("--dim", type=int, default=128)
    p.add_argument("--N", type=int, default=4096)
    p.add_argument("--q-bits", type=int, default=109)
    p.add_argument("--t-bits", type=int, default=20)
    p.add_argument("--precision", type=float, help="quantization step (default: finest that fits t)")
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_keygen)

    p = sub.add_parser("gen", help="write clustered synthetic unit vectors")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--clusters", type=int, default=1)
    p.add_argument("--seed", type=int)
    p.add_argument("--jitter", type=float, default=0.05)
    p.add_argument("--orthogonal", action="store_true", help="mutually orthogonal cluster centers")
    p.add_argument("--text", action="store_true", help="write whitespace-separated text")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("enroll", help="encrypt and upload vectors into a database")
    p.add_argument("--db", required=True)
    p.add_argument("--vectors", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_enroll)

    p = sub.add_parser("query", help="run one private match; prints 0 or 1, then traffic stats")
    p.add_argument("--db", required=True)
    p.add_argument("--vector", required=True)
    p.add_argument("--threshold", type=float, required=True, help="cosine similarity threshold")
    p.add_argument("--switch-at-setup", action="store_true")
    p.add_argument("--truncate-bits", type=int)
    p.add_argument("--transport", choices=("local", "tcp"), default="local")
    p.add_argument("--seed", type=int)
    p.add_argument("--quiet", action="store_true", help="send stats to stderr")
    p.set_defaults(fn=cmd_query)

    p = sub.add_parser("bench", help="run a benchmark sweep from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("accuracy", help="precision-scaling agreement study")
    p.add_argument("--config")
    p.set_defaults(fn=cmd_accuracy)

    p = sub.add_parser("selftest", help="run the built-in oracle suites")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_selftest)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args) or 0
    except (ParameterError, DomainError, ProtocolError, OSError, ValueError, KeyError) as exc:
        print(f"maskmatch {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
