import itertools
import json
import random
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zkscholar.crypto import keygen
from zkscholar.errors import MalformedCredential, NotFound, RegistrationRefused, UsageError
from zkscholar.identity import (
    Did,
    DidRegistry,
    DisclosedCredential,
    Hidden,
    Revealed,
    VerifiableCredential,
    canonical_value,
    credential_digest,
    disclose,
    issue_credential,
    parse_time,
    register_did,
    verify_credential,
)

ISSUED = parse_time("2025-06-26T16:02:50Z")
EXPIRES = parse_time("2029-06-26T16:02:50Z")
ADMIN = keygen(b"\x0a" * 32)
ALICE = keygen(b"\x0b" * 32)

AWARD_CLAIMS = {
    "applyScore": 87.2,
    "claimTime": "2025-06-26",
    "level": "firstPrize",
    "scholarshipID": 5,
    "scholarshipName": "Academic Scholarship",
    "studentDID": str(Did.from_public_key(ALICE.public)),
}


def scholarship_vc(seed=1, claims=AWARD_CLAIMS):
    return issue_credential(ADMIN, AWARD_CLAIMS["studentDID"], claims, 1014, ISSUED, EXPIRES, rng=random.Random(seed))


def test_did_format_and_parse():
    did = Did.from_public_key(ALICE.public)
    text = str(did)
    assert text.startswith("did:weid:666:0x") and len(text) == len("did:weid:666:0x") + 40
    assert Did.parse(text) == did
    with pytest.raises(UsageError):
        Did.parse("did:weid:666:0x1234")


def test_register_did_idempotent_and_kyc():
    registry = DidRegistry()
    doc = register_did(registry, ALICE.public, True, 10)
    again = register_did(registry, ALICE.public, True, 20)
    assert doc == again and again.registered_at == 10
    assert registry.resolve(doc.did).public_key == ALICE.public
    with pytest.raises(RegistrationRefused):
        register_did(registry, ADMIN.public, False, 10)
    with pytest.raises(UsageError):
        register_did(registry, b"\x00" * 33, True, 10)
    with pytest.raises(NotFound):
        registry.resolve(str(Did.from_public_key(ADMIN.public)))


def test_issue_matches_credential_shape():
    vc = scholarship_vc()
    out = vc.to_json()
    assert out["claim"]["applyScore"] == 87.2
    assert out["cptid"] == 1014
    assert out["issuanceDate"] == "2025-06-26T16:02:50Z"
    assert out["expirationDate"] == "2029-06-26T16:02:50Z"
    assert out["proof"]["type"] == "Secp256k1"
    assert out["proof"]["creator"] == out["issuer"] == str(Did.from_public_key(ADMIN.public))
    assert set(out["proof"]["salt"]) == set(AWARD_CLAIMS)
    assert all(len(s) == 5 and s.isalnum() for s in out["proof"]["salt"].values())
    assert out["type"] == ["VerifiableCredential", "original"]
    assert VerifiableCredential.from_json(json.loads(json.dumps(out))) == vc


def test_issue_is_reproducible_with_seeded_salts():
    assert scholarship_vc(3).to_json() == scholarship_vc(3).to_json()
    assert scholarship_vc(3).salts != scholarship_vc(4).salts


def test_issue_rejects_bad_input():
    with pytest.raises(UsageError):
        issue_credential(ADMIN, "did:x", {}, 1, ISSUED, EXPIRES)
    with pytest.raises(UsageError):
        issue_credential(ADMIN, "did:x", {"a": 1}, 1, EXPIRES, ISSUED)
    with pytest.raises(MalformedCredential):
        issue_credential(ADMIN, "did:x", {"a": [1]}, 1, ISSUED, EXPIRES)


def test_canonical_value_is_type_tagged():
    assert canonical_value(87.2) == b"f87.2"
    assert canonical_value(81.0) == b"f81.0"
    assert canonical_value(5) == b"i5"
    assert canonical_value("5") == b"s5"
    assert canonical_value(True) == b"b1"


def test_digest_equal_for_full_disclosure_and_hiding():
    vc = scholarship_vc()
    base = credential_digest(vc)
    assert credential_digest(vc.disclose()) == base
    for key in AWARD_CLAIMS:
        assert credential_digest(disclose(vc, set(AWARD_CLAIMS) - {key})) == base


def test_digest_sensitive_to_salt():
    vc = scholarship_vc()
    salts = dict(vc.salts)
    s = salts["level"]
    salts["level"] = ("A" if s[0] != "A" else "B") + s[1:]
    assert credential_digest(replace(vc, salts=salts)) != credential_digest(vc)


def test_missing_salt_is_malformed():
    vc = scholarship_vc()
    salts = dict(vc.salts)
    del salts["level"]
    with pytest.raises(MalformedCredential):
        credential_digest(replace(vc, salts=salts))
    obj = vc.to_json()
    del obj["proof"]["salt"]["level"]
    with pytest.raises(MalformedCredential):
        DisclosedCredential.from_json(obj)


def test_verify_credential_subsets_and_window():
    vc = scholarship_vc()
    keys = list(AWARD_CLAIMS)
    for r in range(len(keys) + 1):
        for subset in itertools.combinations(keys, r):
            dc = disclose(vc, subset)
            assert verify_credential(dc, ADMIN.public, ISSUED + 1)
            assert verify_credential(DisclosedCredential.from_json(json.loads(json.dumps(dc.to_json()))), ADMIN.public, ISSUED)
    assert not verify_credential(vc, ADMIN.public, EXPIRES + 1)
    assert not verify_credential(vc, ADMIN.public, ISSUED - 1)
    assert not verify_credential(vc, ALICE.public, ISSUED)


def test_reveal_none_and_all():
    vc = scholarship_vc()
    assert disclose(vc, []).revealed() == {}
    assert disclose(vc, AWARD_CLAIMS).revealed() == AWARD_CLAIMS
    with pytest.raises(UsageError):
        disclose(vc, ["nope"])


def test_tampered_disclosed_value_fails():
    vc = scholarship_vc()
    dc = disclose(vc, ["applyScore", "level"])
    claims = dict(dc.claims)
    claims["applyScore"] = Revealed(99.9, claims["applyScore"].salt)
    assert not verify_credential(replace(dc, claims=claims), ADMIN.public, ISSUED)
    claims = dict(dc.claims)
    claims["studentDID"] = Hidden(b"\x00" * 32)
    assert not verify_credential(replace(dc, claims=claims), ADMIN.public, ISSUED)


def test_hidden_claims_leak_neither_value_nor_salt():
    vc = scholarship_vc()
    dc = disclose(vc, ["level"])
    wire = json.dumps(dc.to_json())
    assert vc.salts["scholarshipName"] not in wire
    assert "Academic Scholarship" not in wire
    assert "87.2" not in wire
    assert "firstPrize" in wire


@settings(max_examples=200, deadline=None)
@given(
    st.dictionaries(
        st.text("abcdefgh", min_size=1, max_size=4),
        st.one_of(st.integers(-10**6, 10**6), st.text(max_size=8), st.floats(allow_nan=False, allow_infinity=False)),
        min_size=1,
        max_size=5,
    ),
    st.integers(0, 2**16),
    st.data(),
)
def test_selective_disclosure_property(claims, seed, data):
    vc = issue_credential(ADMIN, "did:weid:666:0x" + "00" * 20, claims, seed, ISSUED, EXPIRES, rng=random.Random(seed))
    subset = data.draw(st.sets(st.sampled_from(sorted(claims))))
    assert verify_credential(disclose(vc, subset), ADMIN.public, ISSUED) == verify_credential(vc, ADMIN.public, ISSUED) is True


def test_credential_digest_no_collisions():
    rng = random.Random(11)
    seen = set()
    for i in range(10_000):
        vc = VerifiableCredential(
            id="x",
            cptid=rng.randint(0, 3),
            issuer=rng.choice(["did:a", "did:b"]),
            subject=rng.choice(["did:c", "did:d", "did:a"]),
            claims={k: rng.choice([0, 1, "0", "1", 0.5]) for k in rng.sample("abc", rng.randint(1, 3))},
            salts={},
            issuance=rng.randint(0, 3),
            expiration=rng.randint(4, 6),
        )
        vc = replace(vc, salts={k: rng.choice(["AAAAA", "AAAAB", "zzzzz"]) for k in vc.claims})
        key = (vc.issuer, vc.cptid, vc.subject, tuple(sorted((k, repr(v), type(v).__name__) for k, v in vc.claims.items())),
               tuple(sorted(vc.salts.items())), vc.issuance, vc.expiration)
        seen.add((key, credential_digest(vc)))
    keys = {k for k, _ in seen}
    digests = {d for _, d in seen}
    assert len(keys) == len(digests)
