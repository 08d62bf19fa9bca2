"""Cryptographic primitives: AES-128 keystream, keyed MAC, digests, ECDHE and ECDSA.

Every source of randomness is an explicit :class:`Rng` so a whole simulation
replays bit-exactly from one seed.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache

import numpy as np
from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

CURVE = ec.SECP256R1()
_ECDSA = ec.ECDSA(hashes.SHA256(), deterministic_signing=True)

# recorded in every report header
ALGORITHMS = {
    "block_cipher": "AES-128 (counter mode, 128-bit counter = 64-bit block address || 64-bit VN)",
    "mac": "keyed BLAKE2b truncated to the MAC width (default 64 bits)",
    "hash": "SHA-256 with a one-byte domain tag",
    "key_exchange": "ECDHE over NIST P-256, HKDF-SHA256 to a 128-bit session key",
    "signature": "ECDSA P-256 / SHA-256 (deterministic nonces)",
    "transport": "AES-128-GCM under the session key",
    "rng": "seeded PCG64",
}


class CryptoError(Exception):
    pass


class HandshakeError(CryptoError):
    """The peer's public value is not a usable group element."""


class TransportError(CryptoError):
    """A session-channel message failed authentication."""


class KeyRole(str, Enum):
    SESSION = "Session"
    MEM_ENC = "MemEnc"
    MAC = "Mac"


class Rng:
    """Seedable stand-in for the device's true random number generator."""

    def __init__(self, seed: int | np.random.SeedSequence):
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        self._ss = ss
        self.gen = np.random.Generator(np.random.PCG64(ss))

    def bytes(self, n: int) -> bytes:
        return self.gen.bytes(n)

    def scalar(self) -> int:
        """A uniformly random P-256 private scalar."""
        order = 0xFFFFFFFF00000000FFFFFFFFFFFFFFFFBCE6FAADA7179E84F3B9CAC2FC632551
        while True:
            k = int.from_bytes(self.gen.bytes(32), "big")
            if 0 < k < order:
                return k

    def spawn(self) -> "Rng":
        return Rng(self._ss.spawn(1)[0])


@dataclass(frozen=True)
class SymmetricKey:
    material: bytes = field(repr=False)
    role: KeyRole

    def __post_init__(self):
        if len(self.material) != 16:
            raise ValueError("symmetric keys are 16 bytes")

    @classmethod
    def generate(cls, rng: Rng, role: KeyRole) -> "SymmetricKey":
        return cls(rng.bytes(16), role)

    @property
    def fingerprint(self) -> str:
        return hashlib.sha256(b"fp" + self.material).hexdigest()[:16]


def _ecb(key: SymmetricKey):
    return Cipher(algorithms.AES(key.material), modes.ECB()).encryptor()


def counter_block(block_addr: int, vn: int) -> bytes:
    return block_addr.to_bytes(8, "big") + vn.to_bytes(8, "big")


def keystream(key: SymmetricKey, block_addr: int, vn: int) -> bytes:
    """One 16-byte keystream block for the counter (block_addr, vn)."""
    if key.role is not KeyRole.MEM_ENC:
        raise ValueError("keystream needs a memory-encryption key")
    return _ecb(key).update(counter_block(block_addr, vn))


def keystream_blocks(key: SymmetricKey, addrs: np.ndarray, vns: np.ndarray) -> np.ndarray:
    """Vectorised keystream: one 16-byte block per (addr, vn) pair, as uint8 rows."""
    if key.role is not KeyRole.MEM_ENC:
        raise ValueError("keystream needs a memory-encryption key")
    ctr = np.empty((len(addrs), 2), dtype=">u8")
    ctr[:, 0] = addrs
    ctr[:, 1] = vns
    out = _ecb(key).update(ctr.tobytes())
    return np.frombuffer(out, dtype=np.uint8).reshape(-1, 16)


def mac(key: SymmetricKey, payload: bytes, width: int = 8) -> bytes:
    if key.role is not KeyRole.MAC:
        raise ValueError("mac needs a MAC key")
    return hashlib.blake2b(payload, key=key.material, digest_size=width).digest()


class DigestTag(bytes, Enum):
    INPUT = b"\x01"
    WEIGHT = b"\x02"
    OUTPUT = b"\x03"
    INSTR_LOG = b"\x04"


class Digest:
    """Incremental SHA-256 over a domain-separated stream."""

    def __init__(self, tag: DigestTag):
        self.tag = tag
        self._h = hashlib.sha256(tag.value)

    def absorb(self, data: bytes) -> None:
        self._h.update(len(data).to_bytes(8, "big"))
        self._h.update(data)

    def value(self) -> bytes:
        return self._h.copy().digest()


# -- asymmetric ---------------------------------------------------------------

def public_bytes(key: ec.EllipticCurvePublicKey) -> bytes:
    return key.public_bytes(serialization.Encoding.X962, serialization.PublicFormat.UncompressedPoint)


def load_public(data: bytes) -> ec.EllipticCurvePublicKey:
    try:
        return ec.EllipticCurvePublicKey.from_encoded_point(CURVE, bytes(data))
    except (ValueError, TypeError) as exc:
        raise HandshakeError(f"invalid public element: {exc}") from None


def generate_keypair(rng: Rng) -> ec.EllipticCurvePrivateKey:
    return ec.derive_private_key(rng.scalar(), CURVE)


def key_agree(local_ephemeral: ec.EllipticCurvePrivateKey, remote_public: bytes,
              context: bytes = b"") -> SymmetricKey:
    peer = load_public(remote_public)
    shared = local_ephemeral.exchange(ec.ECDH(), peer)
    okm = HKDF(hashes.SHA256(), 16, salt=None, info=b"session" + context).derive(shared)
    return SymmetricKey(okm, KeyRole.SESSION)


def sign(private_key: ec.EllipticCurvePrivateKey, message: bytes) -> bytes:
    return private_key.sign(message, _ECDSA)


def verify_sig(public_key: bytes | ec.EllipticCurvePublicKey, message: bytes, signature: bytes) -> bool:
    try:
        pk = load_public(public_key) if isinstance(public_key, (bytes, bytearray)) else public_key
        pk.verify(bytes(signature), message, _ECDSA)
        return True
    except (InvalidSignature, HandshakeError, ValueError, TypeError):
        return False


@dataclass(frozen=True)
class DeviceIdentity:
    private_key: ec.EllipticCurvePrivateKey = field(repr=False)
    public_key: bytes
    certificate: bytes

    @classmethod
    def manufacture(cls, rng: Rng, root: ec.EllipticCurvePrivateKey) -> "DeviceIdentity":
        sk = generate_keypair(rng)
        pk = public_bytes(sk.public_key())
        return cls(sk, pk, sign(root, b"device-cert" + pk))


def verify_certificate(root_public: bytes, device_public: bytes, certificate: bytes) -> bool:
    return verify_sig(root_public, b"device-cert" + device_public, certificate)


@lru_cache(maxsize=8)
def manufacturer_root(seed: int = 0x6D616E75) -> ec.EllipticCurvePrivateKey:
    """Fixture manufacturer signing key."""
    return generate_keypair(Rng(seed))


# -- session channel ----------------------------------------------------------

TO_DEVICE = 0
TO_USER = 1


def seal(key: SymmetricKey, direction: int, seq: int, plaintext: bytes, aad: bytes = b"") -> bytes:
    nonce = bytes([direction, 0, 0, 0]) + seq.to_bytes(8, "big")
    return nonce + AESGCM(key.material).encrypt(nonce, plaintext, aad)


def open_sealed(key: SymmetricKey, direction: int, message: bytes, aad: bytes = b"") -> bytes:
    message = bytes(message)
    if len(message) < 28 or message[0] != direction:
        raise TransportError("malformed channel message")
    try:
        return AESGCM(key.material).decrypt(message[:12], message[12:], aad)
    except InvalidTag:
        raise TransportError("channel message failed authentication") from None
