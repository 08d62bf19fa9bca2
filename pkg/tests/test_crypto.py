import numpy as np
import pytest
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes
from hypothesis import given, strategies as st

from guardnn import crypto
from guardnn.crypto import HandshakeError, KeyRole, Rng, SymmetricKey, TransportError


def ctr_oracle(key: SymmetricKey, addr: int, vn: int) -> bytes:
    # first block of AES-CTR started at the counter equals AES(counter)
    nonce = addr.to_bytes(8, "big") + vn.to_bytes(8, "big")
    return Cipher(algorithms.AES(key.material), modes.CTR(nonce)).encryptor().update(bytes(16))


def test_keystream_matches_ctr_mode(keys):
    mem, _ = keys
    for addr, vn in [(0, 0), (16, 1), (0x1000, (2 << 62) | (1 << 32)), (2**40, 2**63 + 5)]:
        assert crypto.keystream(mem, addr, vn) == ctr_oracle(mem, addr, vn)


def test_keystream_deterministic_and_counter_sensitive(keys):
    mem, _ = keys
    assert crypto.keystream(mem, 64, 3) == crypto.keystream(mem, 64, 3)
    assert crypto.keystream(mem, 64, 3) != crypto.keystream(mem, 64, 4)
    assert crypto.keystream(mem, 64, 3) != crypto.keystream(mem, 80, 3)


@given(st.lists(st.tuples(st.integers(0, 2**48), st.integers(0, 2**64 - 1)), min_size=1, max_size=20))
def test_vectorised_keystream_agrees(pairs):
    mem = SymmetricKey(bytes(range(16)), KeyRole.MEM_ENC)
    addrs = np.array([a for a, _ in pairs], dtype=np.uint64)
    vns = np.array([v for _, v in pairs], dtype=np.uint64)
    rows = crypto.keystream_blocks(mem, addrs, vns)
    for (a, v), row in zip(pairs, rows):
        assert row.tobytes() == crypto.keystream(mem, a, v)


@given(st.binary(max_size=512), st.integers(0, 2**40), st.integers(0, 2**64 - 1))
def test_xor_involution(data, addr, vn):
    mem = SymmetricKey(bytes(16), KeyRole.MEM_ENC)
    n = -(-len(data) // 16)
    ks = b"".join(crypto.keystream(mem, addr + 16 * i, vn) for i in range(n))
    ct = bytes(a ^ b for a, b in zip(data, ks))
    assert bytes(a ^ b for a, b in zip(ct, ks)) == data


def test_key_roles_are_enforced(keys):
    mem, mac = keys
    with pytest.raises(ValueError):
        crypto.keystream(mac, 0, 0)
    with pytest.raises(ValueError):
        crypto.mac(mem, b"x")


def test_mac_basics(keys):
    _, mac = keys
    assert crypto.mac(mac, b"payload") == crypto.mac(mac, b"payload")
    assert len(crypto.mac(mac, b"")) == 8
    assert len(crypto.mac(mac, b"", 16)) == 16


def test_mac_single_bit_flips_always_change_the_tag(keys):
    _, mac = keys
    rng = np.random.default_rng(0)
    for _ in range(1000):
        payload = bytearray(rng.integers(0, 256, 80, dtype=np.uint8).tobytes())
        tag = crypto.mac(mac, bytes(payload))
        bit = int(rng.integers(0, len(payload) * 8))
        payload[bit // 8] ^= 1 << (bit % 8)
        assert crypto.mac(mac, bytes(payload)) != tag


def test_key_agreement_round_trip_and_freshness():
    rng = Rng(3)
    a, b = crypto.generate_keypair(rng), crypto.generate_keypair(rng)
    pa, pb = crypto.public_bytes(a.public_key()), crypto.public_bytes(b.public_key())
    assert crypto.key_agree(a, pb) == crypto.key_agree(b, pa)
    c = crypto.generate_keypair(rng)
    assert crypto.key_agree(c, pb) != crypto.key_agree(a, pb)


@pytest.mark.parametrize("bad", [b"", b"\x00", b"\x04" + bytes(64), b"\x05" * 65, b"\x04" + b"\xff" * 64])
def test_degenerate_public_elements_rejected(bad):
    with pytest.raises(HandshakeError):
        crypto.key_agree(crypto.generate_keypair(Rng(1)), bad)


def test_signatures():
    root = crypto.manufacturer_root()
    d1 = crypto.DeviceIdentity.manufacture(Rng(1), root)
    d2 = crypto.DeviceIdentity.manufacture(Rng(2), root)
    sig = crypto.sign(d1.private_key, b"message")
    assert crypto.verify_sig(d1.public_key, b"message", sig)
    assert not crypto.verify_sig(d1.public_key, b"messagf", sig)
    assert not crypto.verify_sig(d2.public_key, b"message", sig)
    for junk in (b"", b"\x30\x00", sig[:-1], bytes(len(sig))):
        assert not crypto.verify_sig(d1.public_key, b"message", junk)
    assert not crypto.verify_sig(b"not a key", b"message", sig)
    root_pk = crypto.public_bytes(root.public_key())
    assert crypto.verify_certificate(root_pk, d1.public_key, d1.certificate)
    assert not crypto.verify_certificate(root_pk, d2.public_key, d1.certificate)


def test_sealed_channel():
    key = SymmetricKey(bytes(range(16)), KeyRole.SESSION)
    msg = crypto.seal(key, crypto.TO_DEVICE, 5, b"weights", b"aad")
    assert crypto.open_sealed(key, crypto.TO_DEVICE, msg, b"aad") == b"weights"
    tampered = bytearray(msg)
    tampered[-1] ^= 1
    for bad, aad, d in [(bytes(tampered), b"aad", crypto.TO_DEVICE), (msg, b"other", crypto.TO_DEVICE),
                        (msg, b"aad", crypto.TO_USER), (msg[:10], b"aad", crypto.TO_DEVICE)]:
        with pytest.raises(TransportError):
            crypto.open_sealed(key, d, bad, aad)


def test_digest_is_order_sensitive():
    a, b = crypto.Digest(crypto.DigestTag.INPUT), crypto.Digest(crypto.DigestTag.INPUT)
    a.absorb(b"x"); a.absorb(b"y")
    b.absorb(b"y"); b.absorb(b"x")
    assert a.value() != b.value()
    c = crypto.Digest(crypto.DigestTag.WEIGHT)
    c.absorb(b"x"); c.absorb(b"y")
    assert c.value() != a.value()


def test_rng_is_seeded():
    assert Rng(5).bytes(32) == Rng(5).bytes(32)
    assert Rng(5).bytes(32) != Rng(6).bytes(32)
