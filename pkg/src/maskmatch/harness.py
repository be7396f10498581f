"""Synthetic data, on-disk databases, benchmark sweeps and the precision study."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import bfv
from .encoding import QuantParams, comparison_headroom_ok, encode_matrix, quantize_batch
from .protocol import EncryptedDatabase, KeyMaterial, ProtocolConfig, System
from .ring import ParameterError, RingParams

FULL_PROTOCOL_CAP = 100_000
HE_ONLY_CAP = 1_000_000


# ------------------------------------------------------------ synthetic


def unit(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def gen_synthetic(count: int, d: int, clusters: int = 1, seed=None, jitter: float = 0.05,
                  orthogonal: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Clustered unit vectors and their cluster labels.

    Centers are uniform on the sphere (or mutually orthogonal when asked);
    members are ``center + N(0, jitter^2 / d)`` per coordinate, renormalized.
    """
    if count < 1 or clusters < 1:
        raise ValueError("count and clusters must be positive")
    rng = np.random.default_rng(seed)
    centers = unit(rng.normal(size=(clusters, d)))
    if orthogonal:
        if clusters > d:
            raise ValueError("cannot orthogonalize more centers than dimensions")
        centers = np.linalg.qr(centers.T)[0].T[:clusters]
    labels = rng.integers(0, clusters, size=count)
    noise = rng.normal(scale=jitter / math.sqrt(d), size=(count, d))
    return unit(centers[labels] + noise), labels


# ------------------------------------------------------- database directory


def init_database(directory, params: RingParams, d: int, p: int | None = None, seed=None) -> KeyMaterial:
    """Create ``params.json``, ``keys/`` and an empty ``meta.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    qp = QuantParams(d, p, params.t) if p else QuantParams.default_for(d, params.t)
    keys = KeyMaterial.generate(params, rng=np.random.default_rng(seed))
    keys.save(directory / "keys")
    (directory / "params.json").write_text(json.dumps({**params.to_dict(), "d": d, "p": qp.p}, indent=2))
    save_database(directory, EncryptedDatabase(params, d))
    return keys


def load_params(directory) -> tuple[RingParams, int, int]:
    path = Path(directory) / "params.json"
    if not path.exists():
        raise ParameterError(f"{directory} is not a database directory (no params.json)")
    try:
        raw = json.loads(path.read_text())
        return RingParams.from_dict(raw), int(raw["d"]), int(raw["p"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ParameterError(f"malformed {path}: {exc}") from None


def save_database(directory, db: EncryptedDatabase):
    directory = Path(directory)
    for old in directory.glob("ct_*.bin"):
        old.unlink()
    for i, ct in enumerate(db.cts):
        (directory / f"ct_{i:05d}.bin").write_bytes(bfv.serialize(ct))
    meta = {"m": db.m, "ind": db.ind, "occupancy": list(map(int, db.occupancy)),
            "under_verifier_key": db.under_verifier_key}
    (directory / "meta.json").write_text(json.dumps(meta, indent=2))


def load_database(directory, params: RingParams, d: int) -> EncryptedDatabase:
    directory = Path(directory)
    try:
        meta = json.loads((directory / "meta.json").read_text())
    except (OSError, ValueError) as exc:
        raise ParameterError(f"cannot read {directory / 'meta.json'}: {exc}") from None
    files = sorted(directory.glob("ct_*.bin"))
    if len(files) != len(meta["occupancy"]):
        raise ParameterError("ciphertext files do not match meta.json occupancy")
    cts = [bfv.deserialize(params, f.read_bytes()) for f in files]
    db = EncryptedDatabase(params, d, cts, list(meta["occupancy"]), bool(meta.get("under_verifier_key")))
    db.check()
    if db.m != meta["m"] or db.ind != meta["ind"]:
        raise ParameterError("meta.json counts are inconsistent")
    return db


def open_system(directory, switch_at_setup: bool = False, truncate_bits: int | None = None,
                seed=None, transport: str = "local") -> System:
    params, d, p = load_params(directory)
    cfg = ProtocolConfig(params, QuantParams(d, p, params.t), switch_at_setup=switch_at_setup,
                         truncate_bits=truncate_bits)
    keys = KeyMaterial.load(params, Path(directory) / "keys")
    db = load_database(directory, params, d)
    return System(cfg, seed=seed, transport=transport, keys=keys, database=db)


# ---------------------------------------------------------------- bench


@dataclass
class BenchConfig:
    N: int = 4096
    t_bits: int = 20
    q_bits: int = 109
    d: int = 128
    m: list = field(default_factory=lambda: [31, 62, 93])
    p: int | None = None
    ts: float = 0.8
    switch_at_setup: bool = False
    truncate_bits: int | None = None
    literal_comparison: bool = False
    he_only: bool = False
    queries: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.d not in (32, 64, 128, 512):
            raise ParameterError("d must be one of 32, 64, 128, 512")
        if not self.m or any(int(v) < 1 for v in self.m) or self.queries < 1:
            raise ParameterError("sweep values must be positive")
        cap = HE_ONLY_CAP if self.he_only else FULL_PROTOCOL_CAP
        if max(self.m) > cap:
            raise ParameterError(f"m={max(self.m)} exceeds the desk-scale cap of {cap}"
                                 f" ({'HE phase only' if self.he_only else 'full protocol'})")

    @classmethod
    def from_json(cls, path) -> "BenchConfig":
        raw = json.loads(Path(path).read_text())
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ParameterError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @property
    def params(self) -> RingParams:
        return RingParams.build(self.N, self.q_bits, self.t_bits)

    def protocol_config(self) -> ProtocolConfig:
        return ProtocolConfig.build(self.params, self.d, self.p, switch_at_setup=self.switch_at_setup,
                                    truncate_bits=self.truncate_bits,
                                    literal_comparison=self.literal_comparison)


BENCH_FIELDS = ("d", "m", "s", "phase", "time", "bytes", "he_mults", "he_adds", "switchings")


def direct_database(cfg: ProtocolConfig, keys: KeyMaterial, m: int, rng) -> EncryptedDatabase:
    """Encrypt ``m`` random rows straight into a database, skipping the upload protocol."""
    db = EncryptedDatabase(cfg.params, cfg.d)
    delta = cfg.delta
    for start in range(0, m, delta):
        n = min(delta, m - start)
        rows = quantize_batch(rng.normal(size=(n, cfg.d)), cfg.qp)
        db.cts.append(bfv.encrypt(keys.pk, encode_matrix(rows, cfg.params, cfg.d).poly, rng=rng))
        db.occupancy.append(n)
    return db


def bench_sweep(config: BenchConfig, out=None) -> list[dict]:
    """One row per (m, phase); verifies ``he_mults == ceil(m / delta)`` on every query."""
    cfg = config.protocol_config()
    rng = np.random.default_rng(config.seed)
    keys = KeyMaterial.generate(cfg.params, cfg.base_w, rng)
    rows = []
    for m in map(int, config.m):
        db = direct_database(cfg, keys, m, rng) if config.he_only else None
        with System(cfg, seed=[config.seed, m], keys=keys, database=db, record=False) as sm:
            stats = sm.net.stats
            before = stats.snapshot()
            sm.setup()
            if not config.he_only:
                sm.enroll(rng.normal(size=(m, cfg.d)))
            pre = stats.delta(stats.snapshot(), before)
            for phase in ("setup",) if config.he_only else ("setup", "enroll"):
                rows.append(_bench_row(cfg, m, sm.cs.db.s, phase, pre["phase_time"].get(phase, 0.0),
                                       pre["phase_bytes"].get(phase, 0), pre["ops"]))
            for _ in range(config.queries):
                res = sm.query(rng.normal(size=cfg.d), tau=config.ts)
                s = math.ceil(m / cfg.delta)
                if res.he_mults != s:
                    raise AssertionError(f"he_mults={res.he_mults}, expected {s}")
                ops = {"he_mults": res.he_mults, "he_adds": res.he_adds, "switchings": res.switchings}
                he_bytes = res.phase_edges["distance"]["cs->verifier"]
                rows.append(_bench_row(cfg, m, s, "distance", res.phase_time["distance"], he_bytes, ops))
                reveal_bytes = res.phase_bytes.get("reveal", 0) + res.phase_bytes.get("offline", 0)
                rows.append(_bench_row(cfg, m, s, "reveal", res.phase_time["reveal"], reveal_bytes, {}))
    if out is not None:
        write_csv(out, rows)
    return rows


def _bench_row(cfg, m, s, phase, elapsed, nbytes, ops) -> dict:
    return {"d": cfg.d, "m": m, "s": s, "phase": phase, "time": round(float(elapsed), 6), "bytes": int(nbytes),
            "he_mults": ops.get("he_mults", 0), "he_adds": ops.get("he_adds", 0),
            "switchings": ops.get("switchings", 0) + ops.get("setup_switchings", 0)}


def write_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=BENCH_FIELDS, extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)


def linear_fit(x, y) -> tuple[float, float, float]:
    """Least-squares slope, intercept and R^2."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = np.sum((y - y.mean()) ** 2)
    return float(slope), float(intercept), float(1 - np.sum(resid ** 2) / ss_tot) if ss_tot else 1.0


# ------------------------------------------------------------- accuracy

STUDY_PRECISIONS = (1e-1, 1e-2, 2.5e-3, 1e-4)
MARGIN_EDGES = (0.0, 1e-3, 1e-2, 0.2, math.inf)


@dataclass
class AccuracyConfig:
    d: int = 32
    N: int = 1024
    q_bits: int = 109
    db_size: int = 62
    clusters: int = 8
    jitter: float = 0.6
    queries: int = 100
    tau: float = 0.8
    precisions: list = field(default_factory=lambda: list(STUDY_PRECISIONS))
    seed: int = 0

    @classmethod
    def from_json(cls, path) -> "AccuracyConfig":
        raw = json.loads(Path(path).read_text())
        unknown = set(raw) - {f.name for f in fields(cls)}
        if unknown:
            raise ParameterError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)


def plaintext_bits_for(d: int, p: int, start: int = 20) -> int:
    """Smallest ``t`` exponent (from ``start``) with room for the threshold comparison."""
    bits = start
    while not comparison_headroom_ok(d, p, 1 << bits):
        bits += 1
    return bits


def margin_bucket(margin: float) -> int:
    return int(np.searchsorted(MARGIN_EDGES, margin, side="right") - 1)


def bucket_label(i: int) -> str:
    lo, hi = MARGIN_EDGES[i], MARGIN_EDGES[i + 1]
    return f">{lo:g}" if math.isinf(hi) else f"[{lo:g},{hi:g})"


def accuracy_study(config: AccuracyConfig) -> dict:
    """Protocol decisions against the float-cosine predicate, per precision and margin bucket.

    One fixed instance set is reused at every precision; ``t`` grows with
    ``p`` as needed for the comparison headroom.
    """
    vectors, labels = gen_synthetic(config.db_size + config.queries, config.d, config.clusters,
                                    config.seed, config.jitter)
    db, queries = vectors[:config.db_size], vectors[config.db_size:]
    best = (queries @ db.T).max(axis=1)
    truth = best > config.tau
    margins = np.abs(best - config.tau)
    buckets = np.array([margin_bucket(m) for m in margins])
    table = {}
    for precision in config.precisions:
        p = round(1 / precision)
        params = RingParams.build(config.N, config.q_bits, plaintext_bits_for(config.d, p))
        cfg = ProtocolConfig.build(params, config.d, p)
        with System(cfg, seed=[config.seed, p], record=False) as sm:
            sm.enroll(db)
            mus = np.array([sm.query(q, tau=config.tau).mu for q in queries], dtype=bool)
        agree = mus == truth
        row = {"p": p, "t_bits": params.t_bits, "overall": float(agree.mean()), "buckets": {}}
        for b in range(len(MARGIN_EDGES) - 1):
            sel = buckets == b
            if sel.any():
                row["buckets"][bucket_label(b)] = (int(agree[sel].sum()), int(sel.sum()))
        table[precision] = row
    return {"config": asdict(config), "rows": table, "positives": int(truth.sum())}


def format_accuracy(result: dict) -> str:
    labels = [bucket_label(b) for b in range(len(MARGIN_EDGES) - 1)]
    head = f"{'precision':>10} {'p':>6} {'t bits':>6} {'overall':>8}  " + "  ".join(f"{lab:>14}" for lab in labels)
    lines = [head, "-" * len(head)]
    for precision, row in result["rows"].items():
        cells = []
        for lab in labels:
            if lab in row["buckets"]:
                ok, n = row["buckets"][lab]
                cells.append(f"{100 * ok / n:6.1f}% ({n:>4})")
            else:
                cells.append(f"{'-':>14}")
        lines.append(f"{precision:>10g} {row['p']:>6} {row['t_bits']:>6} {100 * row['overall']:7.1f}%  "
                     + "  ".join(cells))
    return "\n".join(lines)
