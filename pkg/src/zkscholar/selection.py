"""Off-chain result selection: ranking, tier allocation, Merkle trees, publishing.

Leaves are ``H(LEAF, utf8(did) | u32(total))`` and internal nodes
``H(NODE, left | right)``; an odd node at any layer is paired with itself.
"""

from __future__ import annotations

import json
import os
import tempfile
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .crypto import DIGEST_SIZE, MAX_WEIGHTED_SCORE, Tag, hash_tagged, u32
from .errors import NotFound, RangeError, TamperError, UsageError

LEFT = "left"
RIGHT = "right"


def leaf(did: str, total: int) -> bytes:
    if not isinstance(total, int) or not 0 <= total <= MAX_WEIGHTED_SCORE:
        raise RangeError(f"total {total!r} outside [0, {MAX_WEIGHTED_SCORE}]")
    return hash_tagged(Tag.LEAF, str(did).encode("utf-8") + u32(total))


def node(left: bytes, right: bytes) -> bytes:
    return hash_tagged(Tag.NODE, left + right)


@dataclass(frozen=True)
class AwardeeEntry:
    did: str
    total: int
    leaf: bytes


@dataclass(frozen=True)
class AwardeeList:
    tier: str
    entries: tuple[AwardeeEntry, ...]

    def to_json(self) -> dict:
        return {
            "tier": self.tier,
            "entries": [{"did": e.did, "total": e.total, "leaf": e.leaf.hex()} for e in self.entries],
        }

    def to_bytes(self) -> bytes:
        return canonical_json(self.to_json())

    @classmethod
    def from_json(cls, obj: dict) -> "AwardeeList":
        return cls(obj["tier"], tuple(
            AwardeeEntry(e["did"], e["total"], bytes.fromhex(e["leaf"])) for e in obj["entries"]
        ))

    def leaves(self) -> list[bytes]:
        return [e.leaf for e in self.entries]

    def index_of(self, did: str) -> int | None:
        for i, e in enumerate(self.entries):
            if e.did == str(did):
                return i
        return None


def canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def rank_and_allocate(records: Iterable, prize_counts: Mapping[str, int]) -> list[AwardeeList]:
    """Sort by descending total (ties: ascending DID) and fill tiers best-first."""
    for tier, quota in prize_counts.items():
        if quota < 0:
            raise UsageError(f"negative quota for tier {tier!r}")
    ranked = sorted(records, key=lambda r: (-r.total, str(r.student)))
    lists, pos = [], 0
    for tier, quota in prize_counts.items():
        chosen = ranked[pos:pos + quota]
        pos += len(chosen)
        lists.append(AwardeeList(tier, tuple(
            AwardeeEntry(str(r.student), r.total, leaf(r.student, r.total)) for r in chosen
        )))
    return lists


@dataclass(frozen=True)
class MerkleTree:
    levels: tuple[tuple[bytes, ...], ...]

    @property
    def root(self) -> bytes:
        return self.levels[-1][0]

    @property
    def height(self) -> int:
        return len(self.levels) - 1

    def __len__(self) -> int:
        return len(self.levels[0])


@dataclass(frozen=True)
class MerkleProof:
    path: tuple[tuple[bytes, str], ...]

    def to_json(self) -> list:
        return [{"sibling": d.hex(), "side": side} for d, side in self.path]

    @classmethod
    def from_json(cls, items: list) -> "MerkleProof":
        return cls(tuple((bytes.fromhex(i["sibling"]), i["side"]) for i in items))


def build_tree(leaves: Sequence[bytes]) -> MerkleTree:
    if not leaves:
        raise UsageError("cannot build a Merkle tree without leaves")
    level = tuple(bytes(x) for x in leaves)
    levels = [level]
    while len(level) > 1:
        nxt = []
        for i in range(0, len(level), 2):
            right = level[i + 1] if i + 1 < len(level) else level[i]
            nxt.append(node(level[i], right))
        level = tuple(nxt)
        levels.append(level)
    return MerkleTree(tuple(levels))


def tree_height(size: int) -> int:
    return (size - 1).bit_length() if size > 0 else 0


def prove_membership(tree: MerkleTree, index: int) -> MerkleProof:
    if not 0 <= index < len(tree):
        raise UsageError(f"leaf index {index} out of range for {len(tree)} leaves")
    path = []
    for level in tree.levels[:-1]:
        if index % 2 == 0:
            sibling = level[index + 1] if index + 1 < len(level) else level[index]
            path.append((sibling, RIGHT))
        else:
            path.append((level[index - 1], LEFT))
        index //= 2
    return MerkleProof(tuple(path))


def verify_membership(root: bytes, leaf_digest: bytes, proof: MerkleProof, size: int | None = None) -> bool:
    """Fold ``leaf_digest`` up the sibling path and compare with ``root``.

    When the tier ``size`` is known the path length must equal the tree height.
    """
    if size is not None and len(proof.path) != tree_height(size):
        return False
    acc = bytes(leaf_digest)
    for sibling, side in proof.path:
        if len(sibling) != DIGEST_SIZE:
            return False
        if side == LEFT:
            acc = node(sibling, acc)
        elif side == RIGHT:
            acc = node(acc, sibling)
        else:
            return False
    return acc == root


class ContentStore:
    """Content-addressed blob store; ids are hex digests of the blob.

    With ``path`` set, blobs live as files named by their id. Reads re-hash
    the blob, so any modification on disk surfaces as :class:`TamperError`.
    """

    def __init__(self, path: str | os.PathLike | None = None):
        self.path = Path(path) if path is not None else None
        self._blobs: dict[str, bytes] = {}
        self._lock = threading.Lock()
        if self.path is not None:
            self.path.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def content_id(blob: bytes) -> str:
        return hash_tagged(Tag.CREDENTIAL, blob).hex()

    def put(self, blob: bytes) -> str:
        cid = self.content_id(blob)
        with self._lock:
            if self.path is None:
                self._blobs[cid] = bytes(blob)
            elif not (self.path / cid).exists():
                fd, tmp = tempfile.mkstemp(dir=self.path, prefix=".blob-")
                with os.fdopen(fd, "wb") as fh:
                    fh.write(blob)
                os.replace(tmp, self.path / cid)
        return cid

    def get(self, cid: str) -> bytes:
        if self.path is None:
            blob = self._blobs.get(cid)
        else:
            target = self.path / cid
            blob = target.read_bytes() if target.is_file() else None
        if blob is None:
            raise NotFound(f"no blob with id {cid}")
        if self.content_id(blob) != cid:
            raise TamperError(f"blob {cid} does not match its content id")
        return blob

    def tamper(self, cid: str, blob: bytes) -> None:
        """Overwrite a stored blob in place. Test hook only."""
        if self.path is None:
            self._blobs[cid] = blob
        else:
            (self.path / cid).write_bytes(blob)


def publish_list(store: ContentStore, awardees: AwardeeList) -> str:
    for e in awardees.entries:
        if e.leaf != leaf(e.did, e.total):
            raise UsageError(f"awardee {e.did} has an inconsistent leaf")
    return store.put(awardees.to_bytes())


def fetch_list(store: ContentStore, cid: str) -> AwardeeList:
    return AwardeeList.from_json(json.loads(store.get(cid)))


@dataclass(frozen=True)
class AwardRootEntry:
    tier: str
    root: bytes
    list_cid: str
    size: int

    def to_json(self) -> dict:
        return {"tier": self.tier, "root": self.root.hex(), "listCid": self.list_cid, "size": self.size}

    @classmethod
    def from_json(cls, obj: dict) -> "AwardRootEntry":
        return cls(obj["tier"], bytes.fromhex(obj["root"]), obj["listCid"], obj["size"])


# Empty tiers still get a root so every tier is settled exactly once.
EMPTY_ROOT = hash_tagged(Tag.NODE, b"")


def root_of(awardees: AwardeeList) -> bytes:
    return build_tree(awardees.leaves()).root if awardees.entries else EMPTY_ROOT


def finalize(ledger, store: ContentStore, scholarship_id: int, admin: str, now: int) -> list[AwardRootEntry]:
    """The administrator's off-chain script: rank, publish lists, set roots."""
    state = ledger.scholarship(scholarship_id)
    lists = rank_and_allocate(ledger.list_applications(scholarship_id), state.config.prize_counts)
    entries = [
        AwardRootEntry(a.tier, root_of(a), publish_list(store, a), len(a.entries))
        for a in lists
    ]
    ledger.set_award_roots(scholarship_id, entries, admin, now)
    return entries


@dataclass(frozen=True)
class AuditReport:
    status: str
    details: tuple[str, ...] = ()

    def __str__(self) -> str:
        return "\n".join((self.status,) + self.details)


CONSISTENT = "CONSISTENT"
ROOT_MISMATCH = "ROOT MISMATCH"
INCOMPLETE = "INCOMPLETE"


def audit(ledger, store: ContentStore, scholarship_id: int) -> AuditReport:
    """Re-derive every tier from public data and compare with the ledger.

    Checks, per tier: the published list is intact and rebuilds to the
    on-ledger root, and the list equals what ranking the on-ledger
    applications produces.
    """
    state = ledger.scholarship(scholarship_id)
    tiers = list(state.config.prize_counts)
    missing = [t for t in tiers if t not in state.award_roots]
    if missing:
        return AuditReport(INCOMPLETE, tuple(f"{t}: root not set" for t in missing))
    expected = {a.tier: a for a in rank_and_allocate(ledger.list_applications(scholarship_id), state.config.prize_counts)}
    problems = []
    for tier in tiers:
        entry = state.award_roots[tier]
        try:
            published = fetch_list(store, entry.list_cid)
        except (TamperError, NotFound, ValueError, KeyError) as exc:
            problems.append(f"{tier}: published list unusable ({exc})")
            continue
        if root_of(published) != entry.root or len(published.entries) != entry.size:
            problems.append(f"{tier}: rebuilt root differs from ledger root")
        if published != expected[tier]:
            problems.append(f"{tier}: list differs from re-ranked applications")
    if problems:
        return AuditReport(ROOT_MISMATCH, tuple(problems))
    return AuditReport(CONSISTENT, tuple(f"{t}: {state.award_roots[t].root.hex()}" for t in tiers))
