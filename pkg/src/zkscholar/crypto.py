"""Hashing, fixed-width encodings and secp256k1 signatures.

All hashes are SHA-256 over a one-byte domain tag followed by the payload.
Signatures are deterministic ECDSA (RFC 6979) over secp256k1, always over a
32-byte digest, serialized as 64-byte ``r || s`` with low-s normalization.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from enum import IntEnum
from functools import lru_cache

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric import ec, utils
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from .errors import RangeError, UsageError

DIGEST_SIZE = 32
SIGNATURE_SIZE = 64
PUBLIC_KEY_SIZE = 33

MAX_WEIGHT = 100
MAX_WEIGHTED_SCORE = 10_000

# secp256k1 group order
CURVE_ORDER = 0xFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFEBAAEDCE6AF48A03BBFD25E8CD0364141
_HALF_ORDER = CURVE_ORDER // 2
_CURVE = ec.SECP256K1()
_ECDSA = ec.ECDSA(utils.Prehashed(hashes.SHA256()), deterministic_signing=True)


class Tag(IntEnum):
    """Domain-separation prefixes for every hash context."""

    LEAF = 0x00
    NODE = 0x01
    TUPLE_HASH = 0x02
    CLAIM = 0x03
    CREDENTIAL = 0x04
    REQUEST = 0x05


def hash_tagged(tag: Tag, payload: bytes = b"") -> bytes:
    if not isinstance(tag, Tag):
        try:
            tag = Tag(tag)
        except ValueError:
            raise UsageError(f"unknown hash tag {tag!r}") from None
    return hashlib.sha256(bytes([tag]) + bytes(payload)).digest()


def encode_weighted(w: int, s_w: int) -> bytes:
    """6-byte encoding: 2-byte big-endian weight, 4-byte big-endian weighted score."""
    if not 0 <= w <= MAX_WEIGHT:
        raise RangeError(f"weight {w} outside [0, {MAX_WEIGHT}]")
    if not 0 <= s_w <= MAX_WEIGHTED_SCORE:
        raise RangeError(f"weighted score {s_w} outside [0, {MAX_WEIGHTED_SCORE}]")
    return struct.pack(">HI", w, s_w)


def u32(value: int) -> bytes:
    return struct.pack(">I", value)


def lp(data: bytes | str) -> bytes:
    """Length-prefix a field (2-byte big-endian length) for injective concatenation."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    if len(data) > 0xFFFF:
        raise UsageError("field too long to length-prefix")
    return struct.pack(">H", len(data)) + data


@dataclass(frozen=True)
class KeyPair:
    secret: bytes = field(repr=False)
    public: bytes

    @classmethod
    def from_secret(cls, secret: bytes) -> "KeyPair":
        private = _private_key(secret)
        public = private.public_key().public_bytes(Encoding.X962, PublicFormat.CompressedPoint)
        return cls(secret=bytes(secret), public=public)


def keygen(seed: bytes) -> KeyPair:
    """Derive a keypair deterministically from 32 bytes of entropy."""
    if not isinstance(seed, (bytes, bytearray)) or len(seed) != 32:
        raise UsageError("keygen seed must be exactly 32 bytes")
    scalar = int.from_bytes(hashlib.sha256(b"zkscholar/keygen" + bytes(seed)).digest(), "big")
    scalar = scalar % (CURVE_ORDER - 1) + 1
    return KeyPair.from_secret(scalar.to_bytes(32, "big"))


def _private_key(secret: bytes) -> ec.EllipticCurvePrivateKey:
    if not isinstance(secret, (bytes, bytearray)) or len(secret) != 32:
        raise UsageError("secret key must be 32 bytes")
    return _load_private_key(bytes(secret))


@lru_cache(maxsize=1024)
def _load_private_key(secret: bytes) -> ec.EllipticCurvePrivateKey:
    # Deriving the public point dominates signing cost; key objects are immutable.
    scalar = int.from_bytes(secret, "big")
    if not 0 < scalar < CURVE_ORDER:
        raise UsageError("secret key scalar out of range")
    return ec.derive_private_key(scalar, _CURVE)


def sign(secret: bytes, digest: bytes) -> bytes:
    if len(digest) != DIGEST_SIZE:
        raise UsageError("can only sign 32-byte digests")
    der = _private_key(secret).sign(bytes(digest), _ECDSA)
    r, s = utils.decode_dss_signature(der)
    if s > _HALF_ORDER:
        s = CURVE_ORDER - s
    return r.to_bytes(32, "big") + s.to_bytes(32, "big")


def verify(public: bytes, digest: bytes, sig: bytes) -> bool:
    """True iff ``sig`` is a valid low-s signature of ``digest`` under ``public``.

    Never raises: malformed keys, digests or signatures all yield False.
    Results are memoized, so re-checking a signature seen earlier costs a
    dictionary lookup (the same idea as a node's signature cache).
    """
    try:
        return _verify_cached(bytes(public), bytes(digest), bytes(sig))
    except TypeError:
        return False


@lru_cache(maxsize=1 << 16)
def _verify_cached(public: bytes, digest: bytes, sig: bytes) -> bool:
    if len(digest) != DIGEST_SIZE or len(sig) != SIGNATURE_SIZE or len(public) != PUBLIC_KEY_SIZE:
        return False
    r = int.from_bytes(sig[:32], "big")
    s = int.from_bytes(sig[32:], "big")
    if not (0 < r < CURVE_ORDER and 0 < s <= _HALF_ORDER):
        return False
    try:
        key = ec.EllipticCurvePublicKey.from_encoded_point(_CURVE, public)
        key.verify(utils.encode_dss_signature(r, s), digest, _ECDSA)
    except (InvalidSignature, ValueError):
        return False
    return True


def is_public_key(public: bytes) -> bool:
    if not isinstance(public, (bytes, bytearray)) or len(public) != PUBLIC_KEY_SIZE:
        return False
    try:
        ec.EllipticCurvePublicKey.from_encoded_point(_CURVE, bytes(public))
    except ValueError:
        return False
    return True
