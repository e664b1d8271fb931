"""Weighted-score and aggregation circuits with a transparent oracle backend.

Both circuits are written as explicit constraint evaluators
(:func:`weighted_violations`, :func:`aggregate_violations`). A proof backend
refuses to prove any witness that breaks a constraint and, on verification,
accepts a proof only for the exact public inputs it was made for.

The :class:`OracleBackend` is not succinct and not zero-knowledge in the
cryptographic sense. Its proof is a 50-byte envelope::

    circuit code (1) | arity (1) | key id (16) | witness binding (32)

where the binding commits to a digest of the witness and to the publics,
under a blinder that is an HMAC keyed by the backend seed. Constraints are
evaluated once, at proving time, and a binding is only minted when they all
hold. Verification reads the registry entry for the binding, checks that
the presented publics are the ones it was made for, and recomputes the MAC.
It never reads the witness, so its cost depends only on the public inputs,
like a succinct verifier. The seed plays the role of a trusted setup.
"""

from __future__ import annotations

import hashlib
import hmac
import json
import os
import struct
import tempfile
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol, Sequence

from . import crypto
from .crypto import Tag, encode_weighted, hash_tagged, lp, u32
from .errors import ConstraintViolation, RangeError, UsageError

MAX_SCORE = 100
MAX_WEIGHT = crypto.MAX_WEIGHT
MAX_WEIGHTED_SCORE = crypto.MAX_WEIGHTED_SCORE
MAX_ARITY = 16

WEIGHTED = "weighted"
AGGREGATE = "aggregate"
_CIRCUIT_CODES = {WEIGHTED: 1, AGGREGATE: 2}
_CIRCUIT_NAMES = {v: k for k, v in _CIRCUIT_CODES.items()}

KEY_ID_SIZE = 16
PROOF_SIZE = 2 + KEY_ID_SIZE + 32


@dataclass(frozen=True)
class CircuitKey:
    circuit: str
    arity: int
    key_id: bytes
    scheme: str = "oracle"

    _role = b""

    def to_bytes(self) -> bytes:
        return self._role + bytes([_CIRCUIT_CODES[self.circuit], self.arity]) + self.key_id

    @classmethod
    def from_bytes(cls, data: bytes):
        body = data[len(cls._role):]
        if not data.startswith(cls._role) or len(body) != 2 + KEY_ID_SIZE:
            raise UsageError("malformed circuit key")
        if body[0] not in _CIRCUIT_NAMES:
            raise UsageError("unknown circuit code")
        return cls(_CIRCUIT_NAMES[body[0]], body[1], bytes(body[2:]))

    def to_json(self) -> dict:
        return {"scheme": self.scheme, "key": self.to_bytes().hex()}

    @classmethod
    def from_json(cls, obj: dict):
        key = cls.from_bytes(bytes.fromhex(obj["key"]))
        return cls(key.circuit, key.arity, key.key_id, obj.get("scheme", "oracle"))


@dataclass(frozen=True)
class ProvingKey(CircuitKey):
    _role = b"P"


@dataclass(frozen=True)
class VerifyingKey(CircuitKey):
    _role = b"V"


@dataclass(frozen=True)
class Proof:
    scheme: str
    data: bytes
    schema: str

    def to_json(self, publics: dict | None = None) -> dict:
        return {
            "scheme": self.scheme,
            "proof": self.data.hex(),
            "publics": {"schema": self.schema, **(publics or {})},
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Proof":
        return cls(obj["scheme"], bytes.fromhex(obj["proof"]), obj["publics"]["schema"])


@dataclass(frozen=True)
class AggregateTuple:
    """Private per-dimension input of the aggregation circuit."""

    proof: bytes
    weight: int
    weighted_score: int
    signature: bytes


@dataclass(frozen=True)
class AggregatePublic:
    public_key: bytes
    tuple_hash: bytes


def tuple_hash(proof_bytes: bytes, weight: int, weighted_score: int, student: str | None = None) -> bytes:
    """Hash binding one dimension's proof to its public (weight, weighted score).

    ``student`` is only set when the hardening option that binds tuples to the
    applicant's DID is enabled.
    """
    payload = bytes(proof_bytes) + encode_weighted(weight, weighted_score)
    if student is not None:
        payload += lp(student)
    return hash_tagged(Tag.TUPLE_HASH, payload)


def weighted_violations(s: int, w: int, s_w: int) -> list[str]:
    """Names of the weighted-score constraints the assignment breaks."""
    broken = []
    if not 0 <= s <= MAX_SCORE:
        broken.append("score-range")
    if not 0 <= w <= MAX_WEIGHT:
        broken.append("weight-range")
    if s_w != s * w:
        broken.append("product")
    if not 0 <= s_w <= MAX_WEIGHTED_SCORE:
        broken.append("weighted-range")
    return broken


def aggregate_violations(
    tuples: Sequence[AggregateTuple],
    publics: Sequence[AggregatePublic],
    s_total: int,
    applicant: str | None = None,
) -> tuple[int | None, str] | None:
    """First failing constraint of the aggregation circuit, or None.

    Every tuple must hash to its public digest and carry a valid CA
    signature over it; a failing tuple is never silently skipped.
    """
    if len(tuples) != len(publics):
        return None, "arity"
    if not 0 <= s_total <= MAX_WEIGHTED_SCORE:
        return None, "total-range"
    running = 0
    for i, (t, pub) in enumerate(zip(tuples, publics)):
        try:
            h = tuple_hash(t.proof, t.weight, t.weighted_score, applicant)
        except RangeError:
            return i, "weighted-range"
        if h != pub.tuple_hash:
            return i, "hash"
        if not crypto.verify(pub.public_key, h, t.signature):
            return i, "signature"
        running += t.weighted_score
    if running != s_total:
        return None, "sum"
    return None


class ProofBackend(Protocol):
    scheme: str

    def setup_weighted(self) -> tuple[ProvingKey, VerifyingKey]: ...

    def prove_weighted(self, pk: ProvingKey, s: int, w: int) -> tuple[Proof, int]: ...

    def verify_weighted(self, vk: VerifyingKey, proof: Proof, w: int, s_w: int) -> bool: ...

    def setup_aggregate(self, n: int) -> tuple[ProvingKey, VerifyingKey]: ...

    def prove_aggregate(self, pk: ProvingKey, tuples, publics, s_total: int, *, applicant=None) -> Proof: ...

    def verify_aggregate(self, vk: VerifyingKey, proof: Proof, publics, s_total: int, *, applicant=None) -> bool: ...


def _weighted_publics(w: int, s_w: int) -> bytes:
    return struct.pack(">qq", w, s_w)


def _aggregate_publics(publics: Sequence[AggregatePublic], s_total: int, applicant: str | None) -> bytes:
    out = bytes([len(publics)])
    for pub in publics:
        out += lp(pub.public_key) + lp(pub.tuple_hash)
    out += struct.pack(">q", s_total)
    out += b"\x01" + lp(applicant) if applicant is not None else b"\x00"
    return out


def _normalize_tuples(tuples: Iterable) -> list[AggregateTuple]:
    return [t if isinstance(t, AggregateTuple) else AggregateTuple(*t) for t in tuples]


def _normalize_publics(publics: Iterable) -> list[AggregatePublic]:
    return [p if isinstance(p, AggregatePublic) else AggregatePublic(*p) for p in publics]


class WitnessRegistry:
    """Binding -> witness store behind the oracle backend.

    Writes are serialized under a lock; when backed by a file the whole
    registry is rewritten atomically after each insert.
    """

    def __init__(self, path: str | os.PathLike | None = None):
        self.path = Path(path) if path is not None else None
        self._entries: dict[str, dict] = {}
        self._lock = threading.Lock()
        self.seed: bytes | None = None
        if self.path is not None and self.path.exists():
            data = json.loads(self.path.read_text())
            self.seed = bytes.fromhex(data["seed"])
            self._entries = data["entries"]

    def get(self, binding: bytes) -> dict | None:
        return self._entries.get(binding.hex())

    def put(self, binding: bytes, entry: dict) -> None:
        with self._lock:
            self._entries[binding.hex()] = entry
            self._flush()

    def __len__(self) -> int:
        return len(self._entries)

    def save(self) -> None:
        with self._lock:
            self._flush()

    def _flush(self) -> None:
        if self.path is None:
            return
        payload = json.dumps(
            {"seed": self.seed.hex() if self.seed else "", "entries": self._entries},
            sort_keys=True,
            separators=(",", ":"),
        )
        self.path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=self.path.parent, prefix=".oracle-")
        with os.fdopen(fd, "w") as fh:
            fh.write(payload)
        os.replace(tmp, self.path)


class OracleBackend:
    """Transparent constraint-checking proof backend.

    ``seed`` fixes key identifiers and blinders, so two backends built from
    the same seed produce identical keys and identical proofs.
    """

    scheme = "oracle"

    def __init__(self, seed: bytes | None = None, registry: WitnessRegistry | None = None):
        self.registry = registry if registry is not None else WitnessRegistry()
        if seed is None:
            seed = self.registry.seed or os.urandom(32)
        if self.registry.seed is not None and self.registry.seed != seed:
            raise UsageError("registry belongs to a backend with a different seed")
        self.registry.seed = seed
        self._seed = seed

    @classmethod
    def open(cls, path: str | os.PathLike, seed: bytes | None = None) -> "OracleBackend":
        return cls(seed=seed, registry=WitnessRegistry(path))

    # -- setup -------------------------------------------------------------

    def _setup(self, circuit: str, arity: int) -> tuple[ProvingKey, VerifyingKey]:
        key_id = hmac.new(self._seed, f"setup/{circuit}/{arity}".encode(), hashlib.sha256).digest()
        key_id = key_id[:KEY_ID_SIZE]
        return ProvingKey(circuit, arity, key_id), VerifyingKey(circuit, arity, key_id)

    def setup_weighted(self) -> tuple[ProvingKey, VerifyingKey]:
        return self._setup(WEIGHTED, 1)

    def setup_aggregate(self, n: int) -> tuple[ProvingKey, VerifyingKey]:
        if not isinstance(n, int) or not 1 <= n <= MAX_ARITY:
            raise UsageError(f"aggregation arity must be in [1, {MAX_ARITY}], got {n!r}")
        return self._setup(AGGREGATE, n)

    # -- proving -----------------------------------------------------------

    def _commit(self, key: CircuitKey, witness: dict, witness_bytes: bytes, public_bytes: bytes) -> Proof:
        commitment = hashlib.sha256(b"zkscholar/oracle-witness" + witness_bytes).digest()
        body = key.key_id + commitment + lp(public_bytes)
        blinder = hmac.new(self._seed, b"blinder" + body, hashlib.sha256).digest()
        binding = self._binding(body, blinder)
        self.registry.put(binding, {
            "circuit": key.circuit,
            "keyId": key.key_id.hex(),
            "witness": witness,
            "commitment": commitment.hex(),
            "publics": public_bytes.hex(),
            "blinder": blinder.hex(),
        })
        data = bytes([_CIRCUIT_CODES[key.circuit], key.arity]) + key.key_id + binding
        return Proof(self.scheme, data, f"{key.circuit}/{key.arity}")

    @staticmethod
    def _binding(body: bytes, blinder: bytes) -> bytes:
        return hashlib.sha256(b"zkscholar/oracle-binding" + body + blinder).digest()

    def _check_key(self, key: CircuitKey, circuit: str, cls: type) -> None:
        if not isinstance(key, cls) or key.circuit != circuit:
            raise UsageError(f"expected a {circuit} {cls.__name__}")

    def prove_weighted(self, pk: ProvingKey, s: int, w: int, *, weighted_score: int | None = None) -> tuple[Proof, int]:
        """Prove knowledge of ``s`` with ``s * w`` equal to the public weighted score.

        ``weighted_score`` overrides the honest product; it exists so tests can
        play a cheating prover.
        """
        self._check_key(pk, WEIGHTED, ProvingKey)
        s_w = s * w if weighted_score is None else weighted_score
        broken = weighted_violations(s, w, s_w)
        if broken:
            raise ConstraintViolation(broken[0])
        proof = self._commit(pk, {"s": s}, u32(s), _weighted_publics(w, s_w))
        return proof, s_w

    def prove_aggregate(self, pk: ProvingKey, tuples, publics, s_total: int, *, applicant: str | None = None) -> Proof:
        self._check_key(pk, AGGREGATE, ProvingKey)
        tuples = _normalize_tuples(tuples)
        publics = _normalize_publics(publics)
        if len(tuples) != pk.arity or len(publics) != pk.arity:
            raise UsageError(f"aggregation key has arity {pk.arity}, got {len(tuples)} tuples / {len(publics)} publics")
        failure = aggregate_violations(tuples, publics, s_total, applicant)
        if failure is not None:
            raise ConstraintViolation(failure[1], failure[0])
        witness = {"tuples": [
            {"proof": t.proof.hex(), "w": t.weight, "sw": t.weighted_score, "sigma": t.signature.hex()}
            for t in tuples
        ]}
        witness_bytes = b"".join(
            lp(t.proof) + encode_weighted(t.weight, t.weighted_score) + lp(t.signature) for t in tuples
        )
        return self._commit(pk, witness, witness_bytes, _aggregate_publics(publics, s_total, applicant))

    # -- verification --------------------------------------------------------

    def _lookup(self, vk: VerifyingKey, proof: Proof, circuit: str, public_bytes: bytes) -> dict | None:
        if not isinstance(vk, VerifyingKey) or vk.circuit != circuit:
            return None
        if not isinstance(proof, Proof) or proof.scheme != self.scheme or len(proof.data) != PROOF_SIZE:
            return None
        data = proof.data
        if data[0] != _CIRCUIT_CODES[circuit] or data[1] != vk.arity or data[2:18] != vk.key_id:
            return None
        entry = self.registry.get(data[18:])
        if entry is None or entry["circuit"] != circuit or entry["keyId"] != vk.key_id.hex():
            return None
        if entry["publics"] != public_bytes.hex():
            return None
        return entry

    def _binding_intact(self, vk: VerifyingKey, proof: Proof, public_bytes: bytes, entry: dict) -> bool:
        # The blinder is a MAC under the backend seed, so only this backend
        # can mint registry entries that pass.
        try:
            commitment = bytes.fromhex(entry["commitment"])
        except (KeyError, TypeError, ValueError):
            return False
        body = vk.key_id + commitment + lp(public_bytes)
        blinder = hmac.new(self._seed, b"blinder" + body, hashlib.sha256).digest()
        if not hmac.compare_digest(blinder.hex(), entry["blinder"]):
            return False
        return self._binding(body, blinder) == proof.data[18:]

    def verify_weighted(self, vk: VerifyingKey, proof: Proof, w: int, s_w: int) -> bool:
        try:
            public_bytes = _weighted_publics(w, s_w)
        except struct.error:
            return False
        entry = self._lookup(vk, proof, WEIGHTED, public_bytes)
        return entry is not None and self._binding_intact(vk, proof, public_bytes, entry)

    def verify_aggregate(self, vk: VerifyingKey, proof: Proof, publics, s_total: int, *, applicant: str | None = None) -> bool:
        try:
            publics = _normalize_publics(publics)
            if len(publics) != getattr(vk, "arity", -1):
                return False
            public_bytes = _aggregate_publics(publics, s_total, applicant)
        except (TypeError, ValueError, struct.error):
            return False
        entry = self._lookup(vk, proof, AGGREGATE, public_bytes)
        return entry is not None and self._binding_intact(vk, proof, public_bytes, entry)
