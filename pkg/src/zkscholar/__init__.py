"""Privacy-preserving scholarship evaluation.

Credential authorities prove weighted per-dimension scores, students
aggregate the signed proofs into one application exposing only a total,
a simulated ledger verifies and ranks applications, and awardees claim
credentials with Merkle membership proofs.
"""

from .authority import AuthorizationRequest, CertificateAuthority, ProofTuple
from .circuits import OracleBackend, Proof, ProvingKey, VerifyingKey
from .crypto import KeyPair, Tag, encode_weighted, hash_tagged, keygen, sign, verify
from .identity import (
    Did,
    DidRegistry,
    DisclosedCredential,
    VerifiableCredential,
    credential_digest,
    disclose,
    issue_credential,
    verify_credential,
)
from .ledger import ApplicationRecord, Ledger, LedgerEvent, ScholarshipConfig
from .selection import (
    AwardeeList,
    AwardRootEntry,
    ContentStore,
    MerkleProof,
    MerkleTree,
    audit,
    build_tree,
    finalize,
    leaf,
    prove_membership,
    publish_list,
    rank_and_allocate,
    verify_membership,
)
from .student import AggregateApplication, ClaimRequest, StudentAgent, total_score

__version__ = "0.1.0"

__all__ = [
    "AggregateApplication",
    "ApplicationRecord",
    "AuthorizationRequest",
    "AwardRootEntry",
    "AwardeeList",
    "CertificateAuthority",
    "ClaimRequest",
    "ContentStore",
    "Did",
    "DidRegistry",
    "DisclosedCredential",
    "KeyPair",
    "Ledger",
    "LedgerEvent",
    "MerkleProof",
    "MerkleTree",
    "OracleBackend",
    "Proof",
    "ProofTuple",
    "ProvingKey",
    "ScholarshipConfig",
    "StudentAgent",
    "Tag",
    "VerifiableCredential",
    "VerifyingKey",
    "audit",
    "build_tree",
    "credential_digest",
    "disclose",
    "encode_weighted",
    "finalize",
    "hash_tagged",
    "issue_credential",
    "keygen",
    "leaf",
    "prove_membership",
    "publish_list",
    "rank_and_allocate",
    "sign",
    "total_score",
    "verify",
    "verify_credential",
    "verify_membership",
]
