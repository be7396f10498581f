"""The four parties and their three protocols: enrollment, distance, reveal.

* KG holds every secret key, hands out public material and acts as the
  dealer of correlated randomness.
* DPs encrypt packed batches of quantized vectors under ``pk``.
* CS stores the encrypted database, multiplies it with the verifier's
  encrypted query, masks every coefficient, switches the result to the
  verifier's key and then runs the threshold reveal as party 0.
* The verifier decrypts masked inner products (its shares) and learns one
  bit: whether any stored vector beats its threshold.

``System`` wires the parties over a network and runs each party's side of a
protocol in its own thread.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import bfv, mpc
from .encoding import (
    QuantParams,
    comparison_headroom_ok,
    encode_matrix,
    encode_query,
    extract_targets,
    quantize_batch,
    rows_per_ciphertext,
)
from .net import Kind, make_network, run_parties
from .ring import T, ParameterError, RingParams, sample_uniform

KG, CS, VERIFIER = "kg", "cs", "verifier"
ProtocolError = mpc.ProtocolError


def dp_name(i: int) -> str:
    return f"dp{i}"


def pack_blobs(blobs) -> bytes:
    return b"".join(struct.pack("<I", len(b)) + b for b in blobs)


def unpack_blobs(data: bytes) -> list[bytes]:
    out, off = [], 0
    while off < len(data):
        if off + 4 > len(data):
            raise ProtocolError("truncated blob list")
        (n,) = struct.unpack_from("<I", data, off)
        off += 4
        if off + n > len(data):
            raise ProtocolError("truncated blob list")
        out.append(data[off:off + n])
        off += n
    return out


# ------------------------------------------------------------ config


def estimated_noise_bits(params: RingParams, switch_at_setup: bool = False) -> int:
    """Upper estimate of log2 of the response noise, calibrated on measurements.

    A product multiplies each operand's noise by about ``t * N``. Fresh noise
    is a few bits; a database switched at setup carries gadget noise of
    about ``2**w * N``, which the product then amplifies.
    """
    log_n = params.N.bit_length() - 1
    if switch_at_setup:
        return params.t_bits + 2 * log_n + 22
    return params.t_bits + log_n + 7


@dataclass(frozen=True)
class ProtocolConfig:
    params: RingParams
    qp: QuantParams
    switch_at_setup: bool = False
    truncate_bits: int | None = None
    literal_comparison: bool = False
    base_w: int = bfv.DEFAULT_BASE_W

    def __post_init__(self):
        self.qp.check_ring(self.params)
        if not comparison_headroom_ok(self.qp.d, self.qp.p, self.params.t):
            raise ParameterError(
                f"p={self.qp.p}, d={self.qp.d}: threshold comparison needs 2(p^2+p*d/2)+1 <= t/2"
            )
        noise_bits = estimated_noise_bits(self.params, self.switch_at_setup)
        if noise_bits > (self.params.delta // 2).bit_length() - 1:
            mode = "switch-at-setup" if self.switch_at_setup else "per-query switching"
            raise ParameterError(f"q too small for one ciphertext product in {mode} mode")
        if self.truncation > bfv.max_safe_truncation(self.params, 1 << noise_bits):
            raise ParameterError("truncation would risk decryption failures")

    @classmethod
    def build(cls, params: RingParams, d: int, p: int | None = None, **kw) -> "ProtocolConfig":
        qp = QuantParams(d, p, params.t) if p else QuantParams.default_for(d, params.t)
        return cls(params, qp, **kw)

    @property
    def d(self) -> int:
        return self.qp.d

    @property
    def delta(self) -> int:
        return rows_per_ciphertext(self.params.N, self.qp.d)

    @property
    def truncation(self) -> int:
        if self.truncate_bits is None:
            return bfv.truncation_for_reduction(self.params, 0.16)
        return self.truncate_bits

    def response_size(self) -> int:
        return bfv.serialized_size(self.params, 1, self.truncation)

    def clamp_threshold(self, ts: int) -> int:
        """Clamp into ``[-B-1, B]``; inner products never leave ``[-B, B]``, so the
        predicate is unchanged while ``v - ts - 1`` stays in the signed range."""
        b = self.qp.bound
        return max(-b - 1, min(b, int(ts)))


# ------------------------------------------------------- keys & data


@dataclass(eq=False)
class KeyMaterial:
    """Everything KG generates. Only KG ever holds the whole set."""

    pk: bfv.PublicKey
    sk: bfv.SecretKey
    pk_v: bfv.PublicKey
    sk_v: bfv.SecretKey
    rk: bfv.SwitchKey
    rk_v: bfv.SwitchKey
    k_sw: bfv.SwitchKey

    @classmethod
    def generate(cls, params: RingParams, base_w: int = bfv.DEFAULT_BASE_W, rng=None) -> "KeyMaterial":
        rng = np.random.default_rng(rng)
        pk, sk = bfv.keygen(params, rng=rng)
        pk_v, sk_v = bfv.keygen(params, rng=rng)
        rk = bfv.relin_keygen(sk, base_w, rng)
        rk_v = bfv.relin_keygen(sk_v, base_w, rng)
        k_sw = bfv.swkeygen(sk, sk_v, base_w, rng)
        return cls(pk, sk, pk_v, sk_v, rk, rk_v, k_sw)

    FILES = {"pk": "pk.bin", "sk": "sk.bin", "pk_v": "pk_v.bin", "sk_v": "sk_v.bin",
             "rk": "rk.bin", "rk_v": "rk_v.bin", "k_sw": "ksw.bin"}

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for attr, name in self.FILES.items():
            (directory / name).write_bytes(getattr(self, attr).to_bytes())

    @classmethod
    def load(cls, params: RingParams, directory) -> "KeyMaterial":
        directory = Path(directory)
        readers = {"pk": bfv.PublicKey, "pk_v": bfv.PublicKey, "sk": bfv.SecretKey,
                   "sk_v": bfv.SecretKey, "rk": bfv.SwitchKey, "rk_v": bfv.SwitchKey,
                   "k_sw": bfv.SwitchKey}
        vals = {}
        for attr, name in cls.FILES.items():
            path = directory / name
            if not path.exists():
                raise ParameterError(f"missing key file {path}")
            vals[attr] = readers[attr].from_bytes(params, path.read_bytes())
        return cls(**vals)


@dataclass(eq=False)
class EncryptedDatabase:
    params: RingParams
    d: int
    cts: list = field(default_factory=list)
    occupancy: list = field(default_factory=list)
    under_verifier_key: bool = False

    @property
    def delta(self) -> int:
        return rows_per_ciphertext(self.params.N, self.d)

    @property
    def m(self) -> int:
        return int(sum(self.occupancy))

    @property
    def s(self) -> int:
        return len(self.cts)

    @property
    def ind(self) -> int:
        """Rows already used in the last ciphertext, i.e. padding rows the next
        uploader must put in front; 0 when the last ciphertext is full or none exists."""
        if not self.occupancy:
            return 0
        return self.occupancy[-1] % self.delta

    def check(self):
        if any(o != self.delta for o in self.occupancy[:-1]):
            raise ProtocolError("only the last ciphertext may be partially filled")
        if not 0 <= self.ind < self.delta:
            raise ProtocolError("indicator out of range")


@dataclass(frozen=True)
class EnrollmentPlan:
    ind: int
    n_u: int
    batches: tuple  # (start slot, row count) per ciphertext
    merge_first: bool
    e: int
    f: int
    new_ind: int
    delta: int

    @property
    def vacant_after(self) -> int:
        """Free row slots left in the last ciphertext after this upload."""
        return (self.delta - self.new_ind) % self.delta


def enrollment_plan(ind: int, n_u: int, delta: int) -> EnrollmentPlan:
    """Split ``n_u`` vectors as ``(delta - ind) + e*delta + f``.

    With ``ind > 0`` the first batch carries ``ind`` leading zero rows so it can
    be added onto the server's partially filled last ciphertext.
    """
    if not 0 <= ind < delta:
        raise ProtocolError(f"indicator {ind} outside [0, {delta})")
    if n_u < 1:
        raise ProtocolError("nothing to enroll")
    batches = []
    rest = n_u
    merge = ind > 0
    if merge:
        first = min(n_u, delta - ind)
        batches.append((ind, first))
        rest -= first
    e, f = divmod(rest, delta)
    batches += [(0, delta)] * e
    if f:
        batches.append((0, f))
    return EnrollmentPlan(ind, n_u, tuple(batches), merge, e, f, (ind + n_u) % delta, delta)


# ----------------------------------------------------------- parties


class KeyGenerator:
    def __init__(self, system: "System", keys: KeyMaterial, rng):
        self.system = system
        self.keys = keys
        self.rng = rng
        self.ep = system.net.endpoint(KG)

    def setup(self, session: int):
        keys = self.keys
        pk = keys.pk.to_bytes()
        for name in self.system.dp_names:
            self.ep.send(name, Kind.KEY_DELIVERY, pk, session)
        self.ep.send(CS, Kind.KEY_DELIVERY, pk, session)
        self.ep.send(VERIFIER, Kind.KEY_DELIVERY,
                     pack_blobs([pk, keys.pk_v.to_bytes(), keys.sk_v.to_bytes()]), session)
        self.ep.recv(VERIFIER, Kind.SETUP_REQUEST, session)
        self.ep.send(CS, Kind.SWITCH_KEY_DELIVERY,
                     pack_blobs([keys.k_sw.to_bytes(), keys.rk.to_bytes(), keys.rk_v.to_bytes()]), session)

    def deal(self, session: int, m: int):
        cfg = self.system.config
        n_bool, n_arith = mpc.reveal_triples(m, cfg.params.t_bits, cfg.literal_comparison)
        b0, b1 = mpc.deal(n_bool, n_arith, self.rng)
        self.ep.send(CS, Kind.DEALER_BATCH, b0.to_bytes(), session)
        self.ep.send(VERIFIER, Kind.DEALER_BATCH, b1.to_bytes(), session)


class DataProvider:
    def __init__(self, system: "System", name: str, rng):
        self.system = system
        self.name = name
        self.rng = rng
        self.ep = system.net.endpoint(name)
        self.pk: bfv.PublicKey | None = None

    def setup(self, session: int):
        self.pk = bfv.PublicKey.from_bytes(self.system.config.params, self.ep.recv(KG, Kind.KEY_DELIVERY, session))

    def enroll(self, rows: np.ndarray, session: int) -> EnrollmentPlan:
        cfg = self.system.config
        if self.pk is None:
            raise ProtocolError(f"{self.name} has no public key; run setup first")
        if rows.ndim != 2 or rows.shape[1] != cfg.d:
            raise ProtocolError(f"expected vectors of dimension {cfg.d}")
        self.ep.send(CS, Kind.INDICATOR_REQUEST, b"", session)
        (ind,) = struct.unpack("<I", self.ep.recv(CS, Kind.INDICATOR_REPLY, session))
        plan = enrollment_plan(ind, len(rows), cfg.delta)
        blobs, pos = [], 0
        for start, count in plan.batches:
            batch = encode_matrix(rows[pos:pos + count], cfg.params, cfg.d, start=start)
            pos += count
            blobs.append(bfv.serialize(bfv.encrypt(self.pk, batch.poly, rng=self.rng)))
        head = struct.pack("<IIIB", ind, len(rows), len(blobs), int(plan.merge_first))
        self.ep.send(CS, Kind.ENROLL_UPLOAD, head + pack_blobs(blobs), session)
        (new_ind,) = struct.unpack("<I", self.ep.recv(CS, Kind.ACK, session))
        if new_ind != plan.new_ind:
            raise ProtocolError("server indicator disagrees with the upload plan")
        return plan


class CloudServer:
    """Party 0 of the reveal. Holds public material only."""

    def __init__(self, system: "System", db: EncryptedDatabase, rng):
        self.system = system
        self.db = db
        self.rng = rng
        self.ep = system.net.endpoint(CS)
        self.pk: bfv.PublicKey | None = None
        self.k_sw: bfv.SwitchKey | None = None
        self.rk: bfv.SwitchKey | None = None
        self.rk_v: bfv.SwitchKey | None = None
        self.last_shares: np.ndarray | None = None

    @property
    def params(self) -> RingParams:
        return self.system.config.params

    def setup(self, session: int):
        self.pk = bfv.PublicKey.from_bytes(self.params, self.ep.recv(KG, Kind.KEY_DELIVERY, session))
        ksw, rk, rk_v = unpack_blobs(self.ep.recv(KG, Kind.SWITCH_KEY_DELIVERY, session))
        self.k_sw = bfv.SwitchKey.from_bytes(self.params, ksw)
        self.rk = bfv.SwitchKey.from_bytes(self.params, rk)
        self.rk_v = bfv.SwitchKey.from_bytes(self.params, rk_v)
        if self.system.config.switch_at_setup and not self.db.under_verifier_key:
            self.db.cts = [self._switch(ct) for ct in self.db.cts]
            self.db.under_verifier_key = True

    def _switch(self, ct):
        self.system.net.stats.count_op("setup_switchings")
        return bfv.switching(ct, self.k_sw)

    def serve_enrollment(self, dp: str, session: int):
        db = self.db
        self.ep.recv(dp, Kind.INDICATOR_REQUEST, session)
        self.ep.send(dp, Kind.INDICATOR_REPLY, struct.pack("<I", db.ind), session)
        data = self.ep.recv(dp, Kind.ENROLL_UPLOAD, session)
        ind, n_u, count, merge = struct.unpack_from("<IIIB", data)
        if ind != db.ind:
            raise ProtocolError(f"upload built for indicator {ind}, server is at {db.ind}")
        plan = enrollment_plan(ind, n_u, db.delta)
        blobs = unpack_blobs(data[13:])
        if len(blobs) != count or count != len(plan.batches) or bool(merge) != plan.merge_first:
            raise ProtocolError("upload does not match its enrollment plan")
        cts = [bfv.deserialize(self.params, b) for b in blobs]
        if db.under_verifier_key:
            if self.k_sw is None:
                raise ProtocolError("database is under the verifier key but no switching key is held")
            cts = [self._switch(ct) for ct in cts]
        for i, (ct, (start, rows)) in enumerate(zip(cts, plan.batches)):
            if i == 0 and plan.merge_first:
                if not db.cts or db.occupancy[-1] != start:
                    raise ProtocolError("merge target does not match the indicator")
                db.cts[-1] = bfv.eval_add(db.cts[-1], ct)
                db.occupancy[-1] += rows
                self.system.net.stats.count_op("merge_adds")
            else:
                db.cts.append(ct)
                db.occupancy.append(rows)
        db.check()
        self.ep.send(dp, Kind.ACK, struct.pack("<I", db.ind), session)

    def distance(self, session: int) -> np.ndarray:
        """Masked products for every stored ciphertext; returns this side's shares."""
        cfg = self.system.config
        params, db, stats = self.params, self.db, self.system.net.stats
        if self.rk is None or (not cfg.switch_at_setup and self.k_sw is None):
            raise ProtocolError("server lacks relinearization or switching keys")
        if not db.cts:
            raise ProtocolError("database is empty")
        query = bfv.deserialize(params, self.ep.recv(VERIFIER, Kind.QUERY_CIPHERTEXT, session))
        if query.degree != 1 or query.truncated_bits:
            raise ProtocolError("query must be a fresh degree-1 ciphertext")
        switching = not db.under_verifier_key
        relin = self.rk if switching else self.rk_v
        qform = bfv.mul_form(query)
        t, d, delta = params.t, db.d, db.delta
        shares = np.empty(db.s * delta, dtype=np.int64)
        blobs = []
        for i, ct in enumerate(db.cts):
            prod = bfv.eval_mul(query, ct, relin, form1=qform)
            stats.count_op("he_mults")
            r = sample_uniform(params, T, self.rng)
            masked = bfv.eval_add_plain(prod, r)
            stats.count_op("he_adds")
            if switching:
                masked = bfv.switching(masked, self.k_sw)
                stats.count_op("switchings")
            blobs.append(bfv.serialize(masked, cfg.truncation))
            shares[i * delta:(i + 1) * delta] = (-extract_targets(r, d, delta)) % t
        self.ep.send(VERIFIER, Kind.MASKED_DISTANCES, b"".join(blobs), session)
        self.last_shares = shares[:db.m]
        return self.last_shares

    def reveal(self, session: int, shares: np.ndarray) -> int:
        cfg = self.system.config
        self.ep.send(VERIFIER, Kind.REVEAL_START, struct.pack("<Q", len(shares)), session)
        batch = mpc.DealerBatch.from_bytes(self.ep.recv(KG, Kind.DEALER_BATCH, session))
        link = self.ep.link(VERIFIER, 0, session)
        return _reveal_side(link, shares, batch, cfg, None)


class Verifier:
    """Party 1 of the reveal; holds ``sk_v`` but never ``sk``."""

    def __init__(self, system: "System", rng):
        self.system = system
        self.rng = rng
        self.ep = system.net.endpoint(VERIFIER)
        self.pk: bfv.PublicKey | None = None
        self.pk_v: bfv.PublicKey | None = None
        self.sk_v: bfv.SecretKey | None = None
        self.last_shares: np.ndarray | None = None

    def setup(self, session: int):
        params = self.system.config.params
        pk, pk_v, sk_v = unpack_blobs(self.ep.recv(KG, Kind.KEY_DELIVERY, session))
        self.pk = bfv.PublicKey.from_bytes(params, pk)
        self.pk_v = bfv.PublicKey.from_bytes(params, pk_v)
        self.sk_v = bfv.SecretKey.from_bytes(params, sk_v)
        self.ep.send(KG, Kind.SETUP_REQUEST, b"", session)

    def distance(self, session: int, query: np.ndarray) -> np.ndarray:
        cfg = self.system.config
        params = cfg.params
        if self.sk_v is None:
            raise ProtocolError("verifier has no keys; run setup first")
        poly = encode_query(query, params, cfg.d)
        if cfg.switch_at_setup:
            ct = bfv.encrypt(self.sk_v, poly, seeded=True, rng=self.rng)
        else:
            ct = bfv.encrypt(self.pk, poly, rng=self.rng)
        self.ep.send(CS, Kind.QUERY_CIPHERTEXT, bfv.serialize(ct), session)
        data = self.ep.recv(CS, Kind.MASKED_DISTANCES, session)
        size = cfg.response_size()
        if len(data) % size:
            raise ProtocolError("masked distance payload has a partial ciphertext")
        delta = cfg.delta
        shares = []
        for off in range(0, len(data), size):
            ct = bfv.deserialize(params, data[off:off + size])
            shares.append(extract_targets(bfv.decrypt(self.sk_v, ct), cfg.d, delta))
        self.last_shares = np.concatenate(shares) if shares else np.zeros(0, dtype=np.int64)
        return self.last_shares

    def reveal(self, session: int, shares: np.ndarray, ts: int) -> int:
        """Runs over the first ``m`` shares; ``m`` (public) comes from the server."""
        cfg = self.system.config
        (m,) = struct.unpack("<Q", self.ep.recv(CS, Kind.REVEAL_START, session))
        if m > len(shares) or len(shares) - m >= cfg.delta:
            raise ProtocolError("row count does not fit the received ciphertexts")
        shares = self.last_shares = shares[:m]
        batch = mpc.DealerBatch.from_bytes(self.ep.recv(KG, Kind.DEALER_BATCH, session))
        link = self.ep.link(CS, 1, session)
        return _reveal_side(link, shares, batch, cfg, ts)


def _reveal_side(link, shares, batch, cfg: ProtocolConfig, ts):
    ell = cfg.params.t_bits
    if cfg.literal_comparison:
        bits = mpc.raw_share_lt(link, shares, ell, batch, ts=ts)
    else:
        bits = mpc.shared_gt_threshold(link, shares, ell, batch, ts=ts)
    arith = mpc.b2a(link, bits, batch)
    return mpc.final_any_match(link, mpc.ring_sum(arith), batch)


# ------------------------------------------------------------ system


@dataclass
class SessionResult:
    mu: int
    mu0: int
    m: int
    s: int
    ts: int
    he_mults: int
    he_adds: int
    switchings: int
    bytes_by_direction: dict
    phase_edges: dict
    phase_bytes: dict
    phase_time: dict
    triples_consumed: tuple
    server_shares: np.ndarray
    verifier_shares: np.ndarray

    def metrics(self) -> dict:
        return {
            "he_mults": self.he_mults,
            "he_adds": self.he_adds,
            "switchings": self.switchings,
            "bytes_by_direction": self.bytes_by_direction,
            "triples_consumed": self.triples_consumed,
        }


class System:
    """KG, CS, the verifier and ``n_dps`` data providers on one network.

    All randomness derives from ``seed``: each party draws from its own
    generator, so thread scheduling never changes what is sent.
    """

    def __init__(self, config: ProtocolConfig, seed=None, transport: str = "local",
                 n_dps: int = 1, keys: KeyMaterial | None = None,
                 database: EncryptedDatabase | None = None, record: bool = True):
        self.config = config
        self.seed = seed
        seq = np.random.SeedSequence(seed)
        kg_rng, cs_rng, v_rng, *dp_rngs = [np.random.default_rng(s) for s in seq.spawn(3 + n_dps)]
        self.dp_names = [dp_name(i) for i in range(n_dps)]
        self.net = make_network(transport, [KG, CS, VERIFIER, *self.dp_names], record)
        if keys is None:
            keys = KeyMaterial.generate(config.params, config.base_w, kg_rng)
        db = database if database is not None else EncryptedDatabase(config.params, config.d)
        if db.d != config.d or db.params != config.params:
            raise ParameterError("database does not match the configuration")
        self.kg = KeyGenerator(self, keys, kg_rng)
        self.cs = CloudServer(self, db, cs_rng)
        self.verifier = Verifier(self, v_rng)
        self.dps = [DataProvider(self, n, r) for n, r in zip(self.dp_names, dp_rngs)]
        self.session = 0
        self.is_setup = False

    def close(self):
        self.net.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _next_session(self) -> int:
        self.session += 1
        return self.session

    def _run(self, *tasks):
        return run_parties(*tasks, net=self.net)

    def setup(self):
        """Distribute keys; repeat calls re-deliver the same material."""
        sid = self._next_session()
        with self.net.stats.phase("setup"):
            self._run(lambda: self.kg.setup(sid), lambda: self.cs.setup(sid),
                      lambda: self.verifier.setup(sid), *[lambda dp=dp: dp.setup(sid) for dp in self.dps])
        self.is_setup = True

    def quantize(self, vectors) -> np.ndarray:
        arr = np.atleast_2d(np.asarray(vectors))
        if arr.dtype.kind in "iu":
            return arr.astype(np.int64)
        return quantize_batch(arr, self.config.qp)

    def enroll(self, vectors, dp: int = 0) -> EnrollmentPlan:
        """Enroll float vectors (quantized here) or already-quantized integer rows."""
        if not self.is_setup:
            self.setup()
        rows = self.quantize(vectors)
        sid = self._next_session()
        provider = self.dps[dp]
        with self.net.stats.phase("enroll"):
            plan, _ = self._run(lambda: provider.enroll(rows, sid),
                                lambda: self.cs.serve_enrollment(provider.name, sid))
        return plan

    def threshold(self, tau: float | None = None, ts: int | None = None) -> int:
        if ts is None:
            if tau is None:
                raise ValueError("give a cosine threshold or an integer one")
            ts = self.config.qp.threshold(tau)
        return self.config.clamp_threshold(ts)

    def query(self, vector, tau: float | None = None, ts: int | None = None) -> SessionResult:
        if not self.is_setup:
            self.setup()
        cfg = self.config
        q = self.quantize(vector)[0]
        ts = self.threshold(tau, ts)
        stats = self.net.stats
        before = stats.snapshot()
        sid = self._next_session()
        m = self.cs.db.m
        with stats.phase("distance"):
            d0, d1 = self._run(lambda: self.cs.distance(sid), lambda: self.verifier.distance(sid, q))
        mid = stats.snapshot()
        with stats.phase("reveal"):
            _, mu0, mu = self._run(lambda: self.kg.deal(sid, m),
                                   lambda: self.cs.reveal(sid, d0),
                                   lambda: self.verifier.reveal(sid, d1, ts))
        after = stats.snapshot()
        diff = stats.delta(after, before)
        ops = diff["ops"]
        edges = lambda d: {f"{a}->{b}": v for (a, b), v in d["sent"].items()}
        return SessionResult(
            mu=int(mu), mu0=int(mu0), m=m, s=self.cs.db.s, ts=ts,
            he_mults=ops.get("he_mults", 0), he_adds=ops.get("he_adds", 0),
            switchings=ops.get("switchings", 0),
            bytes_by_direction=edges(diff),
            phase_edges={"distance": edges(stats.delta(mid, before)), "reveal": edges(stats.delta(after, mid))},
            phase_bytes=diff["phase_bytes"], phase_time=diff["phase_time"],
            triples_consumed=mpc.reveal_triples(m, cfg.params.t_bits, cfg.literal_comparison),
            server_shares=d0, verifier_shares=self.verifier.last_shares,
        )

    # test and tooling hooks: they use KG's keys, which no protocol party sees

    def decrypt_database(self) -> np.ndarray:
        """Plain rows of the stored database, in storage order."""
        db = self.cs.db
        key = self.kg.keys.sk_v if db.under_verifier_key else self.kg.keys.sk
        cfg = self.config
        rows = [np.zeros((0, cfg.d), dtype=np.int64)]
        for ct, occ in zip(db.cts, db.occupancy):
            coeffs = np.array(bfv.decrypt(key, ct).centered(), dtype=np.int64)
            rows.append(coeffs[:occ * cfg.d].reshape(occ, cfg.d)[:, ::-1])
        return np.concatenate(rows)


def plaintext_predicate(db_rows: np.ndarray, query: np.ndarray, ts: int) -> int:
    return int(np.any(np.asarray(db_rows, dtype=np.int64) @ np.asarray(query, dtype=np.int64) > ts))


def cs_to_verifier_bytes(config: ProtocolConfig, m: int) -> int:
    """Analytic server-to-verifier payload bytes for one query over ``m`` rows."""
    s = math.ceil(m / config.delta)
    he = s * config.response_size()
    reveal = 8 + mpc.reveal_payload_bytes(m, config.params.t_bits, config.literal_comparison) + 1
    return he + reveal
