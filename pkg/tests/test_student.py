import itertools
import json
from dataclasses import replace

import pytest
from scenario import SCORES, WEIGHTS, authorize_all, build_world, seeded_key

from zkscholar.circuits import Proof
from zkscholar.crypto import sign, u32, verify
from zkscholar.errors import NotAwarded, TupleInvalid, UsageError
from zkscholar.selection import AwardeeList, build_tree, leaf, rank_and_allocate, verify_membership
from zkscholar.student import AggregateApplication, ClaimRequest, total_score


@pytest.fixture(scope="module")
def world():
    w = build_world(seed=31)
    authorize_all(w)
    return w


def expected_total(name):
    return sum(SCORES[name][d] * WEIGHTS[d] for d in WEIGHTS)


def test_total_scores_match_hand_computation(world):
    assert expected_total("alice") == 8720
    assert expected_total("bob") == 8100
    assert total_score(world.tuples["alice"]) == 8720
    assert total_score(world.tuples["bob"]) == 8100
    for perm in itertools.permutations(world.tuples["alice"]):
        assert total_score(perm) == 8720
    with pytest.raises(UsageError):
        total_score([])


def test_zero_total():
    zero = {"z": {d: 0 for d in WEIGHTS}}
    w = build_world(seed=32, scores=zero)
    authorize_all(w)
    assert total_score(w.tuples["z"]) == 0


def test_verify_tuple_accepts_and_rejects(world):
    alice = world.students["alice"]
    vk = world.config.weighted_vk
    t = world.tuples["alice"][0]
    pk = world.cas["percentage"].keypair.public
    assert alice.verify_tuple(t, pk, vk)
    assert not alice.verify_tuple(t, world.cas["research"].keypair.public, vk)
    assert not alice.verify_tuple(replace(t, weighted_score=t.weighted_score + 1), pk, vk)
    assert not alice.verify_tuple(replace(t, weight=t.weight - 1), pk, vk)
    assert not alice.verify_tuple(replace(t, ca_signature=world.tuples["alice"][1].ca_signature), pk, vk)
    assert not alice.verify_tuple(replace(t, tuple_hash=b"\x00" * 32), pk, vk)
    assert not alice.verify_tuple(replace(t, proof=Proof("oracle", b"\x00" * 50, "weighted/1")), pk, vk)


def test_forged_tuple_aborts_application(world):
    alice = world.students["alice"]
    tuples = list(world.tuples["alice"])
    # Self-consistent tuple (fresh hash) signed by a key that is not the registered CA.
    t = tuples[2]
    rogue = seeded_key(31, "rogue")
    tuples[2] = replace(t, ca_signature=sign(rogue.secret, t.tuple_hash))
    with pytest.raises(TupleInvalid) as err:
        alice.build_application(world.config.id, tuples, world.ledger)
    assert err.value.dimension == "volunteer"


def test_unknown_ca_key_tuple(world):
    alice = world.students["alice"]
    tuples = list(world.tuples["alice"])
    tuples[0] = replace(tuples[0], ca_public_key=seeded_key(31, "rogue").public)
    with pytest.raises(TupleInvalid):
        alice.build_application(world.config.id, tuples, world.ledger)
    with pytest.raises(TupleInvalid):
        alice.build_application(world.config.id, [world.tuples["alice"][0]] * 4, world.ledger)


def test_arity_mismatch(world):
    with pytest.raises(UsageError):
        world.students["alice"].build_application(world.config.id, world.tuples["alice"][:3], world.ledger)


def test_application_is_order_independent_and_signed(world):
    alice = world.students["alice"]
    app = alice.build_application(world.config.id, world.tuples["alice"], world.ledger)
    shuffled = alice.build_application(world.config.id, list(reversed(world.tuples["alice"])), world.ledger)
    assert app == shuffled
    assert app.total == 8720
    assert verify(alice.keypair.public, app.digest(), app.signature)
    assert [p.public_key for p in app.publics] == [pk for _, pk in world.config.ca_registry.values()]
    assert AggregateApplication.from_json(json.loads(json.dumps(app.to_json()))) == app


def test_application_hides_sub_scores(world):
    for name in ("alice", "bob"):
        app = world.students[name].build_application(world.config.id, world.tuples[name], world.ledger)
        wire = json.dumps(app.to_json())
        for d in WEIGHTS:
            s, sw = SCORES[name][d], SCORES[name][d] * WEIGHTS[d]
            assert u32(s).hex() not in wire and u32(sw).hex() not in wire
            assert f'"{sw}"' not in wire and f":{sw}," not in wire


def _lists(world):
    recs = [type("R", (), {"student": world.students[n].did, "total": expected_total(n)}) for n in SCORES]
    return {a.tier: a for a in rank_and_allocate(recs, world.config.prize_counts)}


def test_build_claim_for_awardee(world):
    alice = world.students["alice"]
    first = _lists(world)["firstPrize"]
    claim = alice.build_claim(first, 8720, world.config.id)
    assert claim.leaf == leaf(alice.did, 8720)
    assert claim.merkle_proof.path == ()  # single awardee: the leaf is the root
    assert verify_membership(build_tree(first.leaves()).root, claim.leaf, claim.merkle_proof, 1)
    assert verify(alice.keypair.public, claim.digest(), claim.signature)
    assert ClaimRequest.from_json(json.loads(json.dumps(claim.to_json()))) == claim


def test_build_claim_not_awarded(world):
    alice = world.students["alice"]
    lists = _lists(world)
    with pytest.raises(NotAwarded):
        alice.build_claim(lists["secondPrize"], 8720, world.config.id)
    with pytest.raises(NotAwarded):
        alice.build_claim(lists["firstPrize"], 8721, world.config.id)
    with pytest.raises(NotAwarded):
        alice.build_claim(AwardeeList("firstPrize", ()), 8720, world.config.id)
