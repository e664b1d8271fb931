"""Credential authority: turns an authorized request into a signed proof tuple."""

from __future__ import annotations

import threading
from dataclasses import dataclass, replace

from . import crypto
from .circuits import Proof, tuple_hash
from .crypto import Tag, hash_tagged, lp, u32
from .errors import AuthorizationDenied, NotFound, UsageError, WindowClosed
from .identity import DisclosedCredential, VerifiableCredential, did_of, verify_credential

SCORE_CLAIM = "score"


@dataclass(frozen=True)
class ProofTuple:
    proof: Proof
    weight: int
    weighted_score: int
    tuple_hash: bytes
    ca_signature: bytes
    ca_public_key: bytes
    bound_to: str | None = None

    def to_json(self) -> dict:
        out = {
            "proof": self.proof.to_json({"w": self.weight, "sw": self.weighted_score}),
            "w": self.weight,
            "sw": self.weighted_score,
            "h": self.tuple_hash.hex(),
            "sigma": self.ca_signature.hex(),
            "pk": self.ca_public_key.hex(),
        }
        if self.bound_to is not None:
            out["student"] = self.bound_to
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "ProofTuple":
        return cls(
            proof=Proof.from_json(obj["proof"]),
            weight=obj["w"],
            weighted_score=obj["sw"],
            tuple_hash=bytes.fromhex(obj["h"]),
            ca_signature=bytes.fromhex(obj["sigma"]),
            ca_public_key=bytes.fromhex(obj["pk"]),
            bound_to=obj.get("student"),
        )


@dataclass(frozen=True)
class AuthorizationRequest:
    student: str
    identity_vc: DisclosedCredential
    score_vc_id: str
    scholarship_id: int
    dimension: str
    student_signature: bytes = b""

    def digest(self) -> bytes:
        payload = lp("authorize") + lp(self.student) + lp(self.score_vc_id) + u32(self.scholarship_id) + lp(self.dimension)
        return hash_tagged(Tag.REQUEST, payload)

    def signed(self, keypair: crypto.KeyPair) -> "AuthorizationRequest":
        return replace(self, student_signature=crypto.sign(keypair.secret, self.digest()))

    def to_json(self) -> dict:
        return {
            "did": self.student,
            "identityVc": self.identity_vc.to_json(),
            "vcId": self.score_vc_id,
            "scholarshipId": self.scholarship_id,
            "dimension": self.dimension,
            "sig": self.student_signature.hex(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "AuthorizationRequest":
        return cls(
            obj["did"], DisclosedCredential.from_json(obj["identityVc"]), obj["vcId"],
            obj["scholarshipId"], obj["dimension"], bytes.fromhex(obj["sig"]),
        )


class CertificateAuthority:
    """One CA, responsible for grading a single scholarship dimension.

    ``bind_student`` appends the applicant DID to every tuple hash so a tuple
    cannot be reused by another applicant. It is off by default, and a
    scholarship must be deployed with the matching setting for bound tuples
    to aggregate.
    """

    def __init__(self, keypair: crypto.KeyPair, dimension: str, backend, *, bind_student: bool = False):
        self.keypair = keypair
        self.did = did_of(keypair.public)
        self.dimension = dimension
        self.backend = backend
        self.bind_student = bind_student
        self._store: dict[tuple[str, str], VerifiableCredential] = {}
        self._lock = threading.Lock()

    def store_credential(self, vc: VerifiableCredential) -> None:
        if vc.issuer != self.did:
            raise UsageError("a CA only stores credentials it issued")
        score = vc.claims.get(SCORE_CLAIM)
        if isinstance(score, bool) or not isinstance(score, int) or not 0 <= score <= 100:
            raise UsageError(f"score credential needs an integer {SCORE_CLAIM!r} claim in [0, 100]")
        with self._lock:
            self._store[(vc.subject, vc.id)] = vc

    def credentials(self):
        return list(self._store.values())

    def handle_authorization(self, req: AuthorizationRequest, ledger, now: int) -> ProofTuple:
        state = ledger.scholarship(req.scholarship_id)
        config = state.config
        if req.dimension != self.dimension or self.dimension not in config.weights:
            raise NotFound(f"this CA does not serve dimension {req.dimension!r} of scholarship {req.scholarship_id}")
        if config.ca_registry[self.dimension][1] != self.keypair.public:
            raise AuthorizationDenied(f"CA is not registered for dimension {self.dimension!r}")
        if not config.start_time <= now <= config.end_time:
            raise WindowClosed(f"scholarship {req.scholarship_id} is not accepting applications")

        doc = ledger.registry.get(req.student)
        if doc is None or not crypto.verify(doc.public_key, req.digest(), req.student_signature):
            raise AuthorizationDenied("request signature does not verify under the student's registered key")
        issuer = ledger.registry.get(req.identity_vc.issuer)
        if (
            issuer is None
            or req.identity_vc.issuer != state.admin
            or req.identity_vc.subject != req.student
            or not verify_credential(req.identity_vc, issuer.public_key, now)
        ):
            raise AuthorizationDenied("identity credential is invalid, expired or not about the requester")

        vc = self._store.get((req.student, req.score_vc_id))
        if vc is None:
            raise NotFound(f"no score credential {req.score_vc_id!r} for {req.student}")

        pk, _ = self.backend.setup_weighted()
        weight = config.weights[self.dimension]
        proof, weighted = self.backend.prove_weighted(pk, vc.claims[SCORE_CLAIM], weight)
        bound = req.student if self.bind_student else None
        h = tuple_hash(proof.data, weight, weighted, bound)
        return ProofTuple(proof, weight, weighted, h, crypto.sign(self.keypair.secret, h), self.keypair.public, bound)
