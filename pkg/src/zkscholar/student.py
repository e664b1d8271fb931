"""Student-side logic: check CA tuples, aggregate them, and claim awards."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

from . import crypto
from .authority import ProofTuple
from .circuits import AggregatePublic, AggregateTuple, Proof, tuple_hash
from .crypto import Tag, hash_tagged, lp, u32
from .errors import NotAwarded, TupleInvalid, UsageError
from .identity import did_of
from .selection import AwardeeList, MerkleProof, build_tree, leaf, prove_membership


@dataclass(frozen=True)
class AggregateApplication:
    student: str
    scholarship_id: int
    aggregate_proof: Proof
    publics: tuple[AggregatePublic, ...]
    total: int
    signature: bytes = b""

    def digest(self) -> bytes:
        payload = (
            lp("apply")
            + lp(self.student)
            + u32(self.scholarship_id)
            + lp(self.aggregate_proof.data)
            + bytes([len(self.publics)])
            + b"".join(lp(p.public_key) + lp(p.tuple_hash) for p in self.publics)
            + u32(self.total)
        )
        return hash_tagged(Tag.REQUEST, payload)

    def to_json(self) -> dict:
        return {
            "did": self.student,
            "scholarshipId": self.scholarship_id,
            "piAgg": self.aggregate_proof.to_json(),
            "publics": [{"pk": p.public_key.hex(), "h": p.tuple_hash.hex()} for p in self.publics],
            "sTotal": self.total,
            "sig": self.signature.hex(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "AggregateApplication":
        return cls(
            student=obj["did"],
            scholarship_id=obj["scholarshipId"],
            aggregate_proof=Proof.from_json(obj["piAgg"]),
            publics=tuple(AggregatePublic(bytes.fromhex(p["pk"]), bytes.fromhex(p["h"])) for p in obj["publics"]),
            total=obj["sTotal"],
            signature=bytes.fromhex(obj.get("sig", "")),
        )


@dataclass(frozen=True)
class ClaimRequest:
    student: str
    scholarship_id: int
    tier: str
    leaf: bytes
    merkle_proof: MerkleProof
    signature: bytes = b""

    def digest(self) -> bytes:
        payload = (
            lp("claim")
            + lp(self.student)
            + u32(self.scholarship_id)
            + lp(self.tier)
            + self.leaf
            + b"".join(d + side.encode() for d, side in self.merkle_proof.path)
        )
        return hash_tagged(Tag.REQUEST, payload)

    def to_json(self) -> dict:
        return {
            "did": self.student,
            "scholarshipId": self.scholarship_id,
            "tier": self.tier,
            "leaf": self.leaf.hex(),
            "proof": self.merkle_proof.to_json(),
            "sig": self.signature.hex(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ClaimRequest":
        return cls(
            obj["did"], obj["scholarshipId"], obj["tier"], bytes.fromhex(obj["leaf"]),
            MerkleProof.from_json(obj["proof"]), bytes.fromhex(obj.get("sig", "")),
        )


def total_score(tuples: Sequence[ProofTuple]) -> int:
    if not tuples:
        raise UsageError("cannot total an empty tuple list")
    return sum(t.weighted_score for t in tuples)


class StudentAgent:
    def __init__(self, keypair: crypto.KeyPair, backend):
        self.keypair = keypair
        self.did = did_of(keypair.public)
        self.backend = backend

    def verify_tuple(self, t: ProofTuple, registered_pk: bytes, vk_weighted) -> bool:
        # Re-running the weighted proof check goes beyond hash + signature;
        # it is a cheap client-side sanity check.
        try:
            if t.ca_public_key != registered_pk:
                return False
            if t.bound_to is not None and t.bound_to != self.did:
                return False
            h = tuple_hash(t.proof.data, t.weight, t.weighted_score, t.bound_to)
            if h != t.tuple_hash or not crypto.verify(t.ca_public_key, h, t.ca_signature):
                return False
            return self.backend.verify_weighted(vk_weighted, t.proof, t.weight, t.weighted_score)
        except (UsageError, ValueError, TypeError):
            return False

    def order_tuples(self, tuples: Sequence[ProofTuple], config) -> list[tuple[str, ProofTuple]]:
        """Align tuples with the scholarship's dimension order via CA keys."""
        dims = list(config.weights)
        if len(tuples) != len(dims):
            raise UsageError(f"scholarship has {len(dims)} dimensions, got {len(tuples)} tuples")
        by_key = {config.ca_registry[d][1]: d for d in dims}
        placed: dict[str, ProofTuple] = {}
        for i, t in enumerate(tuples):
            dim = by_key.get(t.ca_public_key)
            if dim is None:
                raise TupleInvalid(f"#{i}", "signed by a key not registered for any dimension")
            if dim in placed:
                raise TupleInvalid(dim, "more than one tuple for this dimension")
            placed[dim] = t
        return [(d, placed[d]) for d in dims]

    def build_application(self, scholarship_id: int, tuples: Sequence[ProofTuple], ledger) -> AggregateApplication:
        config = ledger.scholarship(scholarship_id).config
        ordered = self.order_tuples(tuples, config)
        for dim, t in ordered:
            if not self.verify_tuple(t, config.ca_registry[dim][1], config.weighted_vk):
                raise TupleInvalid(dim)
        ordered_tuples = [t for _, t in ordered]
        total = total_score(ordered_tuples)
        publics = tuple(AggregatePublic(t.ca_public_key, t.tuple_hash) for t in ordered_tuples)
        pk_agg, _ = self.backend.setup_aggregate(len(ordered_tuples))
        proof = self.backend.prove_aggregate(
            pk_agg,
            [AggregateTuple(t.proof.data, t.weight, t.weighted_score, t.ca_signature) for t in ordered_tuples],
            publics,
            total,
            applicant=self.did if config.bind_student else None,
        )
        app = AggregateApplication(self.did, scholarship_id, proof, publics, total)
        return replace(app, signature=crypto.sign(self.keypair.secret, app.digest()))

    def build_claim(self, awardees: AwardeeList, total: int, scholarship_id: int) -> ClaimRequest:
        own = leaf(self.did, total)
        index = awardees.index_of(self.did)
        if index is None or awardees.entries[index].leaf != own:
            raise NotAwarded(f"{self.did} with total {total} is not on the {awardees.tier} list")
        proof = prove_membership(build_tree(awardees.leaves()), index)
        claim = ClaimRequest(self.did, scholarship_id, awardees.tier, own, proof)
        return replace(claim, signature=crypto.sign(self.keypair.secret, claim.digest()))

