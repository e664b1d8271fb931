"""Decentralized identifiers and salted-claim verifiable credentials.

A credential's issuer signature covers one digest built from per-claim
digests ``H(CLAIM, key | salt | value)``. Disclosing a subset of claims
means shipping (value, salt) for revealed keys and only the per-claim digest
for the rest; the issuer signature still verifies either way.
"""

from __future__ import annotations

import math
import re
import secrets
import string
import struct
import threading
import uuid
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from typing import Any, Mapping, Union

from . import crypto
from .crypto import Tag, hash_tagged, lp, u32
from .errors import MalformedCredential, NotFound, RegistrationRefused, UsageError

DID_METHOD = "weid"
DID_NETWORK = "666"
CONTEXT = "https://github.com/WeBankFinTech/WeIdentity/blob/master/context/v1"
SALT_ALPHABET = string.digits + string.ascii_uppercase + string.ascii_lowercase
SALT_LENGTH = 5

_DID_RE = re.compile(r"^did:([a-z0-9]+):([A-Za-z0-9._-]+):0x([0-9a-f]{40})$")


@dataclass(frozen=True)
class Did:
    method: str
    network: str
    id: bytes

    def __str__(self) -> str:
        return f"did:{self.method}:{self.network}:0x{self.id.hex()}"

    @classmethod
    def from_public_key(cls, public_key: bytes, method: str = DID_METHOD, network: str = DID_NETWORK) -> "Did":
        return cls(method, network, hash_tagged(Tag.CREDENTIAL, public_key)[:20])

    @classmethod
    def parse(cls, text: str) -> "Did":
        m = _DID_RE.match(text)
        if m is None:
            raise UsageError(f"not a canonical DID: {text!r}")
        return cls(m.group(1), m.group(2), bytes.fromhex(m.group(3)))


def did_of(public_key: bytes) -> str:
    return str(Did.from_public_key(public_key))


@dataclass(frozen=True)
class DidDocument:
    did: str
    public_key: bytes
    kyc_complete: bool
    registered_at: int
    role: str = "student"

    def to_json(self) -> dict:
        return {
            "did": self.did,
            "publicKey": self.public_key.hex(),
            "kyc": self.kyc_complete,
            "registeredAt": self.registered_at,
            "role": self.role,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "DidDocument":
        return cls(obj["did"], bytes.fromhex(obj["publicKey"]), obj["kyc"], obj["registeredAt"], obj["role"])


class DidRegistry:
    """DID -> document map. Writes are serialized; reads are lock-free."""

    def __init__(self):
        self._docs: dict[str, DidDocument] = {}
        self._lock = threading.Lock()

    def prepare(self, public_key: bytes, kyc_complete: bool, now: int, role: str = "student") -> tuple[DidDocument, bool]:
        """Return (document, is_new) without storing anything."""
        if not crypto.is_public_key(public_key):
            raise UsageError("malformed public key")
        if not kyc_complete:
            raise RegistrationRefused("KYC must be complete before registering a DID")
        did = did_of(public_key)
        existing = self._docs.get(did)
        if existing is not None:
            return existing, False
        return DidDocument(did, bytes(public_key), True, now, role), True

    def add(self, doc: DidDocument) -> None:
        with self._lock:
            self._docs.setdefault(doc.did, doc)

    def register(self, public_key: bytes, kyc_complete: bool, now: int, role: str = "student") -> DidDocument:
        doc, is_new = self.prepare(public_key, kyc_complete, now, role)
        if is_new:
            self.add(doc)
        return self._docs[doc.did]

    def resolve(self, did: str) -> DidDocument:
        try:
            return self._docs[str(did)]
        except KeyError:
            raise NotFound(f"DID {did} is not registered") from None

    def get(self, did: str) -> DidDocument | None:
        return self._docs.get(str(did))

    def __contains__(self, did) -> bool:
        return str(did) in self._docs

    def __iter__(self):
        return iter(sorted(self._docs.values(), key=lambda d: d.did))


def register_did(registry: DidRegistry, public_key: bytes, kyc_complete: bool, now: int) -> DidDocument:
    return registry.register(public_key, kyc_complete, now)


# -- credentials --------------------------------------------------------------

ClaimValue = Union[str, int, float, bool]


def canonical_value(value: ClaimValue) -> bytes:
    """Type-tagged canonical bytes of a claim value."""
    if isinstance(value, bool):
        return b"b" + (b"1" if value else b"0")
    if isinstance(value, int):
        return b"i" + str(value).encode()
    if isinstance(value, float):
        if not math.isfinite(value):
            raise MalformedCredential("claim values must be finite")
        return b"f" + repr(value).encode()
    if isinstance(value, str):
        return b"s" + value.encode("utf-8")
    raise MalformedCredential(f"unsupported claim value type {type(value).__name__}")


def claim_digest(key: str, salt: str, value: ClaimValue) -> bytes:
    if not isinstance(salt, str) or len(salt) != SALT_LENGTH or not salt.isascii():
        raise MalformedCredential(f"claim {key!r} has a malformed salt")
    return hash_tagged(Tag.CLAIM, lp(key) + salt.encode("ascii") + canonical_value(value))


@dataclass(frozen=True)
class Hidden:
    digest: bytes


@dataclass(frozen=True)
class Revealed:
    value: ClaimValue
    salt: str


def iso(ts: int) -> str:
    return datetime.fromtimestamp(ts, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_time(text: str | int) -> int:
    """Logical time from an integer or an ISO-8601 date/datetime (UTC)."""
    if isinstance(text, int):
        return text
    text = str(text).strip()
    if re.fullmatch(r"-?\d+", text):
        return int(text)
    dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


@dataclass(frozen=True)
class DisclosedCredential:
    id: str
    cptid: int
    issuer: str
    subject: str
    claims: Mapping[str, Union[Revealed, Hidden]]
    issuance: int
    expiration: int
    signature: bytes
    proof_type: str = "Secp256k1"

    def claim_digests(self) -> dict[str, bytes]:
        out = {}
        for key, entry in self.claims.items():
            if isinstance(entry, Hidden):
                if len(entry.digest) != crypto.DIGEST_SIZE:
                    raise MalformedCredential(f"hidden claim {key!r} carries a malformed digest")
                out[key] = entry.digest
            else:
                out[key] = claim_digest(key, entry.salt, entry.value)
        return out

    def revealed(self) -> dict[str, ClaimValue]:
        return {k: e.value for k, e in self.claims.items() if isinstance(e, Revealed)}

    def to_json(self) -> dict:
        claim, salt = {}, {}
        for key, entry in self.claims.items():
            if isinstance(entry, Hidden):
                claim[key] = {"digest": entry.digest.hex()}
            else:
                claim[key] = entry.value
                salt[key] = entry.salt
        return _envelope(self, claim, salt)

    @classmethod
    def from_json(cls, obj: dict) -> "DisclosedCredential":
        try:
            salts = obj["proof"]["salt"]
            claims: dict[str, Union[Revealed, Hidden]] = {}
            for key, value in obj["claim"].items():
                if isinstance(value, dict):
                    claims[key] = Hidden(bytes.fromhex(value["digest"]))
                else:
                    if key not in salts:
                        raise MalformedCredential(f"disclosed claim {key!r} has no salt")
                    claims[key] = Revealed(value, salts[key])
            return cls(
                id=obj["id"],
                cptid=obj["cptid"],
                issuer=obj["issuer"],
                subject=obj["subject"],
                claims=claims,
                issuance=parse_time(obj["issuanceDate"]),
                expiration=parse_time(obj["expirationDate"]),
                signature=bytes.fromhex(obj["proof"]["signatureValue"]),
                proof_type=obj["proof"]["type"],
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, MalformedCredential):
                raise
            raise MalformedCredential(f"cannot parse credential: {exc}") from None


@dataclass(frozen=True)
class VerifiableCredential:
    id: str
    cptid: int
    issuer: str
    subject: str
    claims: Mapping[str, ClaimValue]
    salts: Mapping[str, str]
    issuance: int
    expiration: int
    signature: bytes = field(default=b"")
    proof_type: str = "Secp256k1"

    def claim_digests(self) -> dict[str, bytes]:
        missing = set(self.claims) - set(self.salts)
        if missing:
            raise MalformedCredential(f"claims without salt: {sorted(missing)}")
        return {k: claim_digest(k, self.salts[k], v) for k, v in self.claims.items()}

    def disclose(self, keys=None) -> DisclosedCredential:
        return disclose(self, self.claims.keys() if keys is None else keys)

    def to_json(self) -> dict:
        return _envelope(self, dict(self.claims), dict(self.salts))

    @classmethod
    def from_json(cls, obj: dict) -> "VerifiableCredential":
        dc = DisclosedCredential.from_json(obj)
        if any(isinstance(e, Hidden) for e in dc.claims.values()):
            raise MalformedCredential("credential has hidden claims; use DisclosedCredential")
        return cls(
            id=dc.id,
            cptid=dc.cptid,
            issuer=dc.issuer,
            subject=dc.subject,
            claims={k: e.value for k, e in dc.claims.items()},
            salts={k: e.salt for k, e in dc.claims.items()},
            issuance=dc.issuance,
            expiration=dc.expiration,
            signature=dc.signature,
            proof_type=dc.proof_type,
        )


def _envelope(vc, claim: dict, salt: dict) -> dict:
    return {
        "claim": claim,
        "context": CONTEXT,
        "cptid": vc.cptid,
        "expirationDate": iso(vc.expiration),
        "id": vc.id,
        "issuanceDate": iso(vc.issuance),
        "issuer": vc.issuer,
        "subject": vc.subject,
        "proof": {
            "created": iso(vc.issuance),
            "creator": vc.issuer,
            "salt": salt,
            "signatureValue": vc.signature.hex(),
            "type": vc.proof_type,
        },
        "type": ["VerifiableCredential", "original"],
    }


def credential_digest(vc: VerifiableCredential | DisclosedCredential) -> bytes:
    digests = vc.claim_digests()
    payload = (
        lp(vc.issuer)
        + u32(vc.cptid)
        + struct.pack(">qq", vc.issuance, vc.expiration)
        + lp(vc.subject)
        + struct.pack(">H", len(digests))
        + b"".join(digests[k] for k in sorted(digests))
    )
    return hash_tagged(Tag.CREDENTIAL, payload)


def random_salt(rng) -> str:
    return "".join(rng.choice(SALT_ALPHABET) for _ in range(SALT_LENGTH))


def issue_credential(
    issuer: crypto.KeyPair,
    subject: str,
    claims: Mapping[str, ClaimValue],
    cptid: int,
    issuance: int,
    expiration: int,
    rng=None,
) -> VerifiableCredential:
    """Issue a credential with fresh base62 salts.

    ``rng`` needs ``choice`` and ``getrandbits``; pass a seeded
    :class:`random.Random` for reproducible credentials.
    """
    if not claims:
        raise UsageError("a credential needs at least one claim")
    if expiration <= issuance:
        raise UsageError("expiration must be after issuance")
    rng = rng or secrets.SystemRandom()
    for value in claims.values():
        canonical_value(value)
    vc = VerifiableCredential(
        id=str(uuid.UUID(int=rng.getrandbits(128), version=4)),
        cptid=cptid,
        issuer=did_of(issuer.public),
        subject=str(subject),
        claims=dict(claims),
        salts={k: random_salt(rng) for k in claims},
        issuance=issuance,
        expiration=expiration,
    )
    return replace(vc, signature=crypto.sign(issuer.secret, credential_digest(vc)))


def disclose(vc: VerifiableCredential, keys) -> DisclosedCredential:
    keys = set(keys)
    unknown = keys - set(vc.claims)
    if unknown:
        raise UsageError(f"cannot disclose unknown claims {sorted(unknown)}")
    digests = vc.claim_digests()
    claims = {
        k: Revealed(v, vc.salts[k]) if k in keys else Hidden(digests[k])
        for k, v in vc.claims.items()
    }
    return DisclosedCredential(
        id=vc.id,
        cptid=vc.cptid,
        issuer=vc.issuer,
        subject=vc.subject,
        claims=claims,
        issuance=vc.issuance,
        expiration=vc.expiration,
        signature=vc.signature,
        proof_type=vc.proof_type,
    )


def verify_credential(dc: VerifiableCredential | DisclosedCredential, issuer_public_key: bytes, now: int) -> bool:
    if isinstance(dc, VerifiableCredential):
        dc = dc.disclose()
    try:
        if dc.issuer != did_of(issuer_public_key):
            return False
        if not dc.issuance <= now <= dc.expiration:
            return False
        return crypto.verify(issuer_public_key, credential_digest(dc), dc.signature)
    except (MalformedCredential, TypeError, ValueError):
        return False
