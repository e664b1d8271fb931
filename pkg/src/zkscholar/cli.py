"""Command-line frontend over a file-backed ledger, content store and key files.

Every command runs under an exclusive advisory lock on ``<ledger>.lock``.
Failures print one ``error: <code>: <message>`` line on stderr and exit
with the code's own status; a missing input file exits 1.
"""

from __future__ import annotations

import argparse
import contextlib
import fcntl
import hashlib
import json
import os
import random
import sys
import time
from pathlib import Path

from . import crypto
from .authority import AuthorizationRequest, CertificateAuthority, ProofTuple
from .circuits import OracleBackend, WitnessRegistry
from .errors import (
    AuditIncomplete,
    AuditMismatch,
    ConfigError,
    NotAwarded,
    ProtocolError,
    RootsNotSet,
    UsageError,
)
from .identity import VerifiableCredential, did_of, issue_credential, parse_time
from .ledger import Ledger, ScholarshipConfig
from .selection import CONSISTENT, INCOMPLETE, ContentStore, audit, canonical_json, fetch_list, finalize
from .student import StudentAgent

ROLES = ("student", "ca", "admin")


# -- files -------------------------------------------------------------------

def read_json(path: str | os.PathLike):
    text = Path(path).read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: not valid JSON ({exc.msg})") from None


def write_json(path: str | os.PathLike, obj, *, private: bool = False) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = json.dumps(obj, sort_keys=True, indent=2) + "\n"
    if private:
        fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
        with os.fdopen(fd, "w") as fh:
            fh.write(data)
    else:
        path.write_text(data)


def load_key(path: str | os.PathLike) -> crypto.KeyPair:
    obj = read_json(path)
    try:
        kp = crypto.KeyPair.from_secret(bytes.fromhex(obj["secret"]))
    except (KeyError, TypeError, ValueError):
        raise UsageError(f"{path}: not a key file") from None
    if "public" in obj and obj["public"] != kp.public.hex():
        raise UsageError(f"{path}: public key does not match secret")
    return kp


def create_key(path: Path, seed: str | None, label: str) -> crypto.KeyPair:
    material = hashlib.sha256(f"key/{seed}/{label}".encode()).digest() if seed is not None else os.urandom(32)
    kp = crypto.keygen(material)
    write_json(path, {"did": did_of(kp.public), "public": kp.public.hex(), "secret": kp.secret.hex()}, private=True)
    return kp


def load_ca(directory: str | os.PathLike, backend) -> CertificateAuthority:
    directory = Path(directory)
    meta = read_json(directory / "ca.json")
    ca = CertificateAuthority(load_key(directory / "key.json"), meta["dimension"], backend,
                              bind_student=meta.get("bindStudent", False))
    for f in sorted((directory / "credentials").glob("*.json")):
        ca.store_credential(VerifiableCredential.from_json(read_json(f)))
    return ca


def emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


# -- session -------------------------------------------------------------------

class Session:
    """Ledger, backend and store for one command, saved on exit if changed."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.ledger_path = Path(args.ledger)
        stem = self.ledger_path.with_suffix("")
        self.store = ContentStore(args.store or f"{stem}.store")
        oracle_path = Path(args.oracle or f"{stem}.oracle.json")
        seed = hashlib.sha256(f"oracle/{args.seed}".encode()).digest() if args.seed is not None else None
        registry = WitnessRegistry(oracle_path)
        if registry.seed is not None and seed is not None and registry.seed != seed:
            raise ConfigError(f"{oracle_path}: created under a different --seed")
        self.backend = OracleBackend(seed=seed, registry=registry)
        if not oracle_path.exists():
            registry.save()
        self.ledger = Ledger.load(self.ledger_path, self.backend, seed=args.seed)
        self._height = self.ledger.height
        self.now = parse_time(args.time) if args.time is not None else int(time.time())

    def close(self) -> None:
        if self.ledger.height != self._height or not self.ledger_path.exists():
            self.ledger.save(self.ledger_path)


@contextlib.contextmanager
def locked(ledger_path: Path):
    ledger_path.parent.mkdir(parents=True, exist_ok=True)
    with open(f"{ledger_path}.lock", "a") as fh:
        fcntl.flock(fh, fcntl.LOCK_EX)
        try:
            yield
        finally:
            fcntl.flock(fh, fcntl.LOCK_UN)


# -- commands --------------------------------------------------------------------

def cmd_register(s: Session, args) -> None:
    if args.role == "ca":
        if not args.ca_dir or not args.dimension:
            raise UsageError("registering a CA needs --ca-dir and --dimension")
        key_path = Path(args.ca_dir) / "key.json"
        label = f"ca/{args.dimension}"
    else:
        if not args.key:
            raise UsageError("--key is required")
        key_path = Path(args.key)
        label = key_path.stem
    kp = load_key(key_path) if key_path.exists() else create_key(key_path, args.seed, label)
    doc = s.ledger.register_did(kp.public, not args.no_kyc, s.now, role=args.role)
    if args.role == "ca":
        meta = {"dimension": args.dimension, "bindStudent": args.bind_student}
        write_json(Path(args.ca_dir) / "ca.json", meta)
        (Path(args.ca_dir) / "credentials").mkdir(exist_ok=True)
    print(doc.did)


def _config_from_file(obj: dict, s: Session) -> ScholarshipConfig:
    try:
        weights = obj["weights"]
        if not isinstance(weights, dict) or not weights:
            raise ConfigError("weights: must be a non-empty object of dimension -> weight")
        if len(weights) > 16:
            raise ConfigError("weights: at most 16 dimensions")
        cas = {}
        for dim, ref in obj["cas"].items():
            did = ref if str(ref).startswith("did:") else did_of(load_key(Path(ref) / "key.json").public)
            doc = s.ledger.registry.get(did)
            if doc is None:
                raise ConfigError(f"cas: {dim!r} CA {did} is not registered")
            cas[dim] = (did, doc.public_key)
        _, wvk = s.backend.setup_weighted()
        _, avk = s.backend.setup_aggregate(len(weights))
        return ScholarshipConfig(
            id=obj["id"],
            name=obj.get("name", "Academic Scholarship"),
            prize_counts=dict(obj["prizeCounts"]),
            weights=dict(weights),
            ca_registry=cas,
            start_time=parse_time(obj["startTime"]),
            end_time=parse_time(obj["endTime"]),
            weighted_vk=wvk,
            aggregate_vk=avk,
            bind_student=bool(obj.get("bindStudent", False)),
        )
    except KeyError as exc:
        raise ConfigError(f"{exc.args[0]}: missing field") from None
    except (TypeError, AttributeError, ValueError) as exc:
        if isinstance(exc, ProtocolError):
            raise
        raise ConfigError(f"malformed config ({exc})") from None


def cmd_deploy(s: Session, args) -> None:
    config = _config_from_file(read_json(args.config), s)
    admin = load_key(args.admin_key)
    print(s.ledger.deploy(config, did_of(admin.public), s.now))


def _claims_arg(text: str) -> dict:
    obj = json.loads(text) if text.lstrip().startswith("{") else read_json(text)
    if not isinstance(obj, dict):
        raise UsageError("--claims must be a JSON object")
    return obj


def cmd_issue_vc(s: Session, args) -> None:
    issuer = load_key(args.issuer_key)
    claims = _claims_arg(args.claims)
    rng = None
    if args.seed is not None:
        rng = random.Random(f"vc/{args.seed}/{args.subject}/{args.cptid}/{s.now}/{canonical_json(claims).hex()}")
    vc = issue_credential(issuer, args.subject, claims, args.cptid, s.now, parse_time(args.expires), rng=rng)
    if args.ca_dir:
        ca = load_ca(args.ca_dir, s.backend)
        ca.store_credential(vc)
        write_json(Path(args.ca_dir) / "credentials" / f"{vc.id}.json", vc.to_json())
    if args.out:
        write_json(args.out, vc.to_json())
    print(vc.id)


def cmd_authorize(s: Session, args) -> None:
    student = load_key(args.key)
    identity = VerifiableCredential.from_json(read_json(args.identity_vc))
    disclosed = identity.disclose([k for k in (args.disclose or "").split(",") if k])
    ca = load_ca(args.ca, s.backend)
    req = AuthorizationRequest(did_of(student.public), disclosed, args.vc_id, args.scholarship, ca.dimension)
    t = ca.handle_authorization(req.signed(student), s.ledger, s.now)
    write_json(args.out, t.to_json())
    emit({"dimension": ca.dimension, "w": t.weight, "sw": t.weighted_score, "out": args.out})


def cmd_apply(s: Session, args) -> None:
    agent = StudentAgent(load_key(args.key), s.backend)
    tuples = []
    for f in args.tuples:
        try:
            tuples.append(ProofTuple.from_json(read_json(f)))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ProtocolError):
                raise
            raise UsageError(f"{f}: not a proof tuple") from None
    app = agent.build_application(args.scholarship, tuples, s.ledger)
    if args.out:
        write_json(args.out, app.to_json())
    record = s.ledger.submit_application(app, s.now)
    emit({"height": s.ledger.height - 1, **record.to_json()})


def cmd_finalize(s: Session, args) -> None:
    admin = load_key(args.admin_key)
    entries = finalize(s.ledger, s.store, args.scholarship, did_of(admin.public), s.now)
    for e in entries:
        emit(e.to_json())


def cmd_claim(s: Session, args) -> None:
    agent = StudentAgent(load_key(args.key), s.backend)
    state = s.ledger.scholarship(args.scholarship)
    if not state.award_roots:
        raise RootsNotSet(f"no award roots set for scholarship {args.scholarship}")
    record = state.applications.get(agent.did)
    if record is None:
        raise NotAwarded(f"{agent.did} has no accepted application")
    for entry in state.award_roots.values():
        awardees = fetch_list(s.store, entry.list_cid)
        if awardees.index_of(agent.did) is not None:
            break
    else:
        raise NotAwarded(f"{agent.did} is on no awardee list")
    claim = agent.build_claim(awardees, record.total, args.scholarship)
    vc = s.ledger.claim_scholarship(claim, load_key(args.admin_key), s.now)
    if args.out:
        write_json(args.out, vc.to_json())
    print(vc.id)


def cmd_audit(s: Session, args) -> None:
    report = audit(s.ledger, s.store, args.scholarship)
    print(report)
    if report.status == INCOMPLETE:
        raise AuditIncomplete("award roots missing for some tiers")
    if report.status != CONSISTENT:
        raise AuditMismatch("published lists do not match the ledger")


def cmd_events(s: Session, args) -> None:
    for e in s.ledger.get_events(args.since):
        print(canonical_json(e.to_json()).decode())


# -- parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="zkscholar", description="Privacy-preserving scholarship workflow.")
    p.add_argument("--ledger", default="ledger.json", help="ledger event log (default: %(default)s)")
    p.add_argument("--store", help="content store directory (default: <ledger>.store)")
    p.add_argument("--oracle", help="proof backend state file (default: <ledger>.oracle.json)")
    p.add_argument("--seed", help="determinism seed for keys, salts and proofs")
    p.add_argument("--time", help="logical time, unix seconds or ISO-8601 (default: now)")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("register", help="register a DID, creating its key file if needed")
    c.add_argument("--role", choices=ROLES, default="student")
    c.add_argument("--key", help="key file (students and admins)")
    c.add_argument("--ca-dir", help="CA state directory (role ca)")
    c.add_argument("--dimension", help="dimension served (role ca)")
    c.add_argument("--bind-student", action="store_true", help="CA binds tuples to the requesting student")
    c.add_argument("--no-kyc", action="store_true", help="registrant has not completed KYC")
    c.set_defaults(func=cmd_register)

    c = sub.add_parser("deploy", help="deploy a scholarship from a config file")
    c.add_argument("config")
    c.add_argument("--admin-key", required=True)
    c.set_defaults(func=cmd_deploy)

    c = sub.add_parser("issue-vc", help="issue a verifiable credential")
    c.add_argument("--issuer-key", required=True)
    c.add_argument("--subject", required=True, help="subject DID")
    c.add_argument("--claims", required=True, help="JSON object, inline or a file path")
    c.add_argument("--cptid", type=int, default=1000)
    c.add_argument("--expires", required=True)
    c.add_argument("--ca-dir", help="also store the credential with this CA")
    c.add_argument("--out")
    c.set_defaults(func=cmd_issue_vc)

    c = sub.add_parser("authorize", help="ask a CA for a proof tuple")
    c.add_argument("--key", required=True, help="student key file")
    c.add_argument("--ca", required=True, help="CA state directory")
    c.add_argument("--identity-vc", required=True)
    c.add_argument("--disclose", help="comma-separated identity claims to reveal")
    c.add_argument("--vc-id", required=True, help="score credential id held by the CA")
    c.add_argument("--scholarship", type=int, required=True)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_authorize)

    c = sub.add_parser("apply", help="aggregate tuples and submit an application")
    c.add_argument("--key", required=True)
    c.add_argument("--scholarship", type=int, required=True)
    c.add_argument("--out", help="also write the application here")
    c.add_argument("tuples", nargs="+")
    c.set_defaults(func=cmd_apply)

    c = sub.add_parser("finalize", help="rank, publish awardee lists, set roots")
    c.add_argument("--admin-key", required=True)
    c.add_argument("--scholarship", type=int, required=True)
    c.set_defaults(func=cmd_finalize)

    c = sub.add_parser("claim", help="claim an award credential")
    c.add_argument("--key", required=True)
    c.add_argument("--admin-key", required=True, help="key the contract issues credentials with")
    c.add_argument("--scholarship", type=int, required=True)
    c.add_argument("--out")
    c.set_defaults(func=cmd_claim)

    c = sub.add_parser("audit", help="check published lists against on-ledger roots")
    c.add_argument("--scholarship", type=int, required=True)
    c.set_defaults(func=cmd_audit)

    c = sub.add_parser("events", help="print the event log as JSON lines")
    c.add_argument("--since", type=int, default=0)
    c.set_defaults(func=cmd_events)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with locked(Path(args.ledger)):
            session = Session(args)
            try:
                args.func(session, args)
            finally:
                session.close()
    except ProtocolError as exc:
        print(exc.diagnostic(), file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: missing-file: {exc.filename}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
