"""Simulated consortium ledger hosting the scholarship contract.

The ledger is event-sourced: every state change is an appended
:class:`LedgerEvent`, and :meth:`Ledger.replay` rebuilds identical state
from the log alone. Mutating calls are serialized through one lock, the
way a chain orders transactions. Time is always passed in by the caller.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
import tempfile
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Mapping

from . import crypto
from .circuits import VerifyingKey
from .errors import (
    AlreadyClaimed,
    AlreadySet,
    AuthorizationDenied,
    BadProof,
    ConfigError,
    DuplicateApplication,
    NotAdmin,
    NotFound,
    ProofInvalid,
    ProtocolError,
    RootsNotSet,
    TooEarly,
    UnknownCAKey,
    UsageError,
    WindowClosed,
)
from .identity import DidDocument, DidRegistry, VerifiableCredential, credential_digest, did_of, issue_credential
from .selection import AwardRootEntry, canonical_json, leaf, verify_membership
from .student import AggregateApplication, ClaimRequest

SCHOLARSHIP_CPTID = 1014
CREDENTIAL_VALIDITY_YEARS = 4

DEPLOYED = "Deployed"
APPLIED = "Applied"
ROOTS_SET = "RootsSet"
CLAIMED = "Claimed"
CREDENTIAL_ISSUED = "CredentialIssued"
DID_REGISTERED = "DidRegistered"
REJECTED = "Rejected"


@dataclass(frozen=True)
class ScholarshipConfig:
    id: int
    prize_counts: Mapping[str, int]
    weights: Mapping[str, int]
    ca_registry: Mapping[str, tuple[str, bytes]]
    start_time: int
    end_time: int
    weighted_vk: VerifyingKey
    aggregate_vk: VerifyingKey
    name: str = "Academic Scholarship"
    bind_student: bool = False

    def validate(self) -> None:
        if isinstance(self.id, bool) or not isinstance(self.id, int) or not 0 <= self.id < 2**32:
            raise ConfigError("scholarship id must be a 32-bit unsigned integer")
        for dim, w in self.weights.items():
            if isinstance(w, bool) or not isinstance(w, int) or not 0 <= w <= 100:
                raise ConfigError(f"weights: {dim!r} must be an integer in [0, 100]")
        if sum(self.weights.values()) != 100:
            raise ConfigError(f"weights: must sum to 100, got {sum(self.weights.values())}")
        if list(self.weights) != list(self.ca_registry):
            raise ConfigError("ca_registry: dimensions must match weights one-to-one, in order")
        if not self.start_time < self.end_time:
            raise ConfigError("window: start_time must be before end_time")
        if not self.prize_counts:
            raise ConfigError("prize_counts: at least one tier required")
        for tier, count in self.prize_counts.items():
            if isinstance(count, bool) or not isinstance(count, int) or count < 0:
                raise ConfigError(f"prize_counts: {tier!r} must be a non-negative integer")
        if self.aggregate_vk.arity != len(self.weights):
            raise ConfigError("aggregate_vk: arity must equal the number of dimensions")

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "name": self.name,
            "prizeCounts": [[t, c] for t, c in self.prize_counts.items()],
            "weights": [[d, w] for d, w in self.weights.items()],
            "cas": [[d, did, pk.hex()] for d, (did, pk) in self.ca_registry.items()],
            "startTime": self.start_time,
            "endTime": self.end_time,
            "weightedVk": self.weighted_vk.to_json(),
            "aggregateVk": self.aggregate_vk.to_json(),
            "bindStudent": self.bind_student,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ScholarshipConfig":
        return cls(
            id=obj["id"],
            name=obj["name"],
            prize_counts=dict(obj["prizeCounts"]),
            weights=dict(obj["weights"]),
            ca_registry={d: (did, bytes.fromhex(pk)) for d, did, pk in obj["cas"]},
            start_time=obj["startTime"],
            end_time=obj["endTime"],
            weighted_vk=VerifyingKey.from_json(obj["weightedVk"]),
            aggregate_vk=VerifyingKey.from_json(obj["aggregateVk"]),
            bind_student=obj.get("bindStudent", False),
        )


@dataclass(frozen=True)
class ApplicationRecord:
    student: str
    total: int
    accepted_at: int

    def to_json(self) -> dict:
        return {"did": self.student, "total": self.total, "acceptedAt": self.accepted_at}


@dataclass
class ScholarshipState:
    config: ScholarshipConfig
    admin: str
    applications: dict[str, ApplicationRecord] = field(default_factory=dict)
    award_roots: dict[str, AwardRootEntry] = field(default_factory=dict)
    claimed: set[str] = field(default_factory=set)
    credentials: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "config": self.config.to_json(),
            "admin": self.admin,
            "applications": [r.to_json() for r in self.applications.values()],
            "awardRoots": {t: e.to_json() for t, e in self.award_roots.items()},
            "claimed": sorted(self.claimed),
            "credentials": list(self.credentials),
        }


@dataclass(frozen=True)
class LedgerEvent:
    height: int
    kind: str
    payload: dict

    def to_json(self) -> dict:
        return {
            "height": self.height,
            "kind": self.kind,
            "payload": self.payload,
            "payloadBytes": len(canonical_json(self.payload)),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "LedgerEvent":
        return cls(obj["height"], obj["kind"], obj["payload"])


def _add_years(ts: int, years: int) -> int:
    dt = datetime.fromtimestamp(ts, tz=timezone.utc)
    try:
        later = dt.replace(year=dt.year + years)
    except ValueError:  # 29 February
        later = dt.replace(year=dt.year + years, day=28)
    return int(later.timestamp())


class Ledger:
    def __init__(self, backend=None, seed: int | bytes | str | None = None):
        self.backend = backend
        self.seed = seed
        self.registry = DidRegistry()
        self.events: list[LedgerEvent] = []
        self._scholarships: dict[int, ScholarshipState] = {}
        self._lock = threading.RLock()

    # -- event sourcing -----------------------------------------------------

    def _emit(self, kind: str, payload: dict) -> LedgerEvent:
        event = LedgerEvent(len(self.events), kind, payload)
        self._apply(event)
        self.events.append(event)
        return event

    def _apply(self, event: LedgerEvent) -> None:
        p = event.payload
        if event.kind == DID_REGISTERED:
            self.registry.add(DidDocument.from_json(p))
        elif event.kind == DEPLOYED:
            config = ScholarshipConfig.from_json(p["config"])
            self._scholarships[config.id] = ScholarshipState(config, p["admin"])
        elif event.kind == APPLIED:
            state = self._scholarships[p["scholarshipId"]]
            state.applications[p["did"]] = ApplicationRecord(p["did"], p["total"], p["at"])
        elif event.kind == ROOTS_SET:
            state = self._scholarships[p["scholarshipId"]]
            for e in p["entries"]:
                entry = AwardRootEntry.from_json(e)
                state.award_roots[entry.tier] = entry
        elif event.kind == CLAIMED:
            self._scholarships[p["scholarshipId"]].claimed.add(p["leaf"])
        elif event.kind == CREDENTIAL_ISSUED:
            self._scholarships[p["scholarshipId"]].credentials.append(p["vcId"])
        elif event.kind != REJECTED:
            raise UsageError(f"unknown event kind {event.kind!r}")

    @classmethod
    def replay(cls, events: Iterable[LedgerEvent | dict], backend=None, seed=None) -> "Ledger":
        ledger = cls(backend, seed)
        for i, event in enumerate(events):
            if isinstance(event, dict):
                event = LedgerEvent.from_json(event)
            if event.height != i:
                raise UsageError(f"event log is not contiguous at height {i}")
            ledger._apply(event)
            ledger.events.append(event)
        return ledger

    def _reject(self, exc: ProtocolError, scholarship_id, did: str) -> ProtocolError:
        self._emit(REJECTED, {"scholarshipId": scholarship_id, "did": did, "reason": exc.code})
        return exc

    # -- reads ----------------------------------------------------------------

    def scholarship(self, scholarship_id: int) -> ScholarshipState:
        try:
            return self._scholarships[scholarship_id]
        except (KeyError, TypeError):
            raise NotFound(f"unknown scholarship {scholarship_id!r}") from None

    def list_applications(self, scholarship_id: int) -> list[ApplicationRecord]:
        return list(self.scholarship(scholarship_id).applications.values())

    def get_events(self, since: int = 0) -> list[LedgerEvent]:
        return list(self.events[max(since, 0):])

    @property
    def height(self) -> int:
        return len(self.events)

    def snapshot(self) -> dict:
        return {
            "height": self.height,
            "dids": [d.to_json() for d in self.registry],
            "scholarships": {str(k): s.to_json() for k, s in sorted(self._scholarships.items())},
        }

    def snapshot_bytes(self) -> bytes:
        return canonical_json(self.snapshot())

    def events_bytes(self) -> bytes:
        return canonical_json([e.to_json() for e in self.events])

    # -- transactions -----------------------------------------------------------

    def register_did(self, public_key: bytes, kyc_complete: bool, now: int, role: str = "student") -> DidDocument:
        with self._lock:
            doc, is_new = self.registry.prepare(public_key, kyc_complete, now, role)
            if is_new:
                self._emit(DID_REGISTERED, doc.to_json())
            return self.registry.resolve(doc.did)

    def deploy(self, config: ScholarshipConfig, admin: str, now: int) -> int:
        with self._lock:
            config.validate()
            if config.id in self._scholarships:
                raise ConfigError(f"id: scholarship {config.id} already deployed")
            if str(admin) not in self.registry:
                raise NotFound(f"administrator {admin} is not registered")
            for dim, (did, pk) in config.ca_registry.items():
                doc = self.registry.get(did)
                if doc is None or doc.public_key != pk or doc.role != "ca":
                    raise ConfigError(f"cas: {dim!r} CA {did} is not a registered CA with that key")
            self._emit(DEPLOYED, {"config": config.to_json(), "admin": str(admin), "at": now})
            return config.id

    def submit_application(self, app: AggregateApplication, now: int) -> ApplicationRecord:
        """Verify an aggregated application and record (DID, total) if valid.

        Rejections are logged as events before the error is raised.
        """
        with self._lock:
            try:
                state = self.scholarship(app.scholarship_id)
                config = state.config
                if not config.start_time <= now <= config.end_time:
                    raise WindowClosed(f"scholarship {config.id} is not accepting applications")
                doc = self.registry.get(app.student)
                if doc is None or not crypto.verify(doc.public_key, app.digest(), app.signature):
                    raise AuthorizationDenied("application is not signed by a registered applicant")
                if app.student in state.applications:
                    raise DuplicateApplication(f"{app.student} already applied")
                registered = [pk for _, pk in config.ca_registry.values()]
                if len(app.publics) != len(registered) or any(
                    p.public_key != pk for p, pk in zip(app.publics, registered)
                ):
                    raise UnknownCAKey("public inputs do not match the registered CA keys")
                applicant = app.student if config.bind_student else None
                if not self.backend.verify_aggregate(config.aggregate_vk, app.aggregate_proof, app.publics, app.total, applicant=applicant):
                    raise ProofInvalid("aggregate proof does not verify")
            except ProtocolError as exc:
                raise self._reject(exc, app.scholarship_id, app.student)
            self._emit(APPLIED, {"scholarshipId": config.id, "did": app.student, "total": app.total, "at": now})
            return state.applications[app.student]

    def set_award_roots(self, scholarship_id: int, entries: Iterable[AwardRootEntry], admin: str, now: int) -> None:
        with self._lock:
            state = self.scholarship(scholarship_id)
            entries = list(entries)
            if str(admin) != state.admin:
                raise NotAdmin("only the deploying administrator may set award roots")
            if not now > state.config.end_time:
                raise TooEarly("award roots can only be set after the application deadline")
            tiers = [e.tier for e in entries]
            if len(set(tiers)) != len(tiers) or any(t not in state.config.prize_counts for t in tiers):
                raise UsageError("entries must name distinct configured tiers")
            for e in entries:
                if e.tier in state.award_roots:
                    raise AlreadySet(f"root for tier {e.tier!r} is already set")
                if len(e.root) != crypto.DIGEST_SIZE or not 0 <= e.size <= state.config.prize_counts[e.tier]:
                    raise UsageError(f"malformed root entry for tier {e.tier!r}")
            self._emit(ROOTS_SET, {"scholarshipId": scholarship_id, "entries": [e.to_json() for e in entries], "at": now})

    def _claim_rng(self, admin: crypto.KeyPair) -> random.Random:
        material = hashlib.sha256(admin.secret + str(self.seed).encode() + self.height.to_bytes(8, "big")).digest()
        return random.Random(material)

    def claim_scholarship(self, claim: ClaimRequest, admin: crypto.KeyPair, now: int) -> VerifiableCredential:
        with self._lock:
            state = self.scholarship(claim.scholarship_id)
            if did_of(admin.public) != state.admin:
                raise NotAdmin("credentials are issued with the administrator's key")
            entry = state.award_roots.get(claim.tier)
            if entry is None:
                raise RootsNotSet(f"no root set for tier {claim.tier!r}")
            doc = self.registry.get(claim.student)
            if doc is None or not crypto.verify(doc.public_key, claim.digest(), claim.signature):
                raise AuthorizationDenied("claim is not signed by the claimant")
            record = state.applications.get(claim.student)
            if record is None or claim.leaf != leaf(claim.student, record.total):
                raise BadProof("leaf does not match the claimant's recorded total")
            if not verify_membership(entry.root, claim.leaf, claim.merkle_proof, entry.size):
                raise BadProof(f"membership proof does not verify against the {claim.tier!r} root")
            if claim.leaf.hex() in state.claimed:
                raise AlreadyClaimed("this award has already been claimed")
            claims = {
                "applyScore": record.total / 100,
                "claimTime": datetime.fromtimestamp(now, tz=timezone.utc).strftime("%Y-%m-%d"),
                "level": claim.tier,
                "scholarshipID": state.config.id,
                "scholarshipName": state.config.name,
                "studentDID": claim.student,
            }
            vc = issue_credential(
                admin, claim.student, claims, SCHOLARSHIP_CPTID, now,
                _add_years(now, CREDENTIAL_VALIDITY_YEARS), rng=self._claim_rng(admin),
            )
            sid = state.config.id
            self._emit(CLAIMED, {"scholarshipId": sid, "did": claim.student, "tier": claim.tier, "leaf": claim.leaf.hex(), "at": now})
            self._emit(CREDENTIAL_ISSUED, {
                "scholarshipId": sid, "subject": claim.student, "vcId": vc.id,
                "digest": credential_digest(vc).hex(), "at": now,
            })
            return vc

    # -- persistence ------------------------------------------------------------

    def save(self, path: str | os.PathLike) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        _atomic_write(path, self.events_bytes())
        _atomic_write(path.with_name(path.stem + ".state.json"), self.snapshot_bytes())

    @classmethod
    def load(cls, path: str | os.PathLike, backend=None, seed=None) -> "Ledger":
        path = Path(path)
        if not path.exists():
            return cls(backend, seed)
        return cls.replay(json.loads(path.read_text()), backend, seed)


def _atomic_write(path: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".ledger-")
    with os.fdopen(fd, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)
