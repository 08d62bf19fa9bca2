"""The remote user's side of the protocol.

The user trusts only the manufacturer's public key.  It checks the device
certificate, runs the key exchange, seals imports, opens exports and keeps
its own copy of the attestation digests.
"""
from __future__ import annotations

import hashlib

from . import crypto
from .crypto import Digest, DigestTag, Rng
from .isa import (ExportOutput, InitSession, Instruction, Opcode, Response, SetInput, SetWeight,
                  attestation_message, key_exchange_message, parse_sign_payload)

PK_BYTES = 65


class RemoteUser:
    def __init__(self, seed: int | Rng = 0, root_public: bytes | None = None):
        self.rng = seed if isinstance(seed, Rng) else Rng(seed)
        if root_public is None:
            root_public = crypto.public_bytes(crypto.manufacturer_root().public_key())
        self.root_public = root_public
        self.device_public: bytes | None = None
        self.session_key: crypto.SymmetricKey | None = None
        self.session_id = b""
        self.want_integrity = True
        self._eph = None
        self._eph_pub = b""
        self.seq = 0
        self.expected = {t: Digest(t) for t in DigestTag}

    # -- attestation of the device ----------------------------------------
    def accept_device(self, resp: Response) -> bool:
        if not resp.ok or len(resp.payload) <= PK_BYTES:
            return False
        pk, cert = resp.payload[:PK_BYTES], resp.payload[PK_BYTES:]
        if not crypto.verify_certificate(self.root_public, pk, cert):
            return False
        self.device_public = pk
        return True

    # -- session setup -------------------------------------------------------
    def init_instruction(self, want_integrity: bool = True) -> InitSession:
        self._eph = crypto.generate_keypair(self.rng)
        self._eph_pub = crypto.public_bytes(self._eph.public_key())
        self.want_integrity = want_integrity
        return InitSession(self._eph_pub, want_integrity)

    def complete_handshake(self, ins: InitSession, resp: Response) -> bool:
        if self.device_public is None or not resp.ok or len(resp.payload) <= PK_BYTES:
            return False
        dev_eph, sig = resp.payload[:PK_BYTES], resp.payload[PK_BYTES:]
        if not crypto.verify_sig(self.device_public, key_exchange_message(ins.user_public, dev_eph), sig):
            return False
        context = ins.user_public + dev_eph
        self.session_key = crypto.key_agree(self._eph, dev_eph, context)
        self.session_id = hashlib.sha256(context).digest()
        self.seq = 0
        self.expected = {t: Digest(t) for t in DigestTag}
        self.note(ins)
        return True

    # -- expected attestation state --------------------------------------------
    def note(self, ins: Instruction, plaintext: bytes | None = None) -> None:
        """Record an instruction the user expects the device to accept."""
        if ins.opcode in (Opcode.GET_PK, Opcode.SIGN_OUTPUT):
            return
        self.expected[DigestTag.INSTR_LOG].absorb(ins.log_bytes())
        if plaintext is None:
            return
        if ins.opcode is Opcode.SET_WEIGHT:
            self.expected[DigestTag.WEIGHT].absorb(plaintext)
        elif ins.opcode is Opcode.SET_INPUT:
            self.expected[DigestTag.INPUT].absorb(plaintext)
        elif ins.opcode is Opcode.EXPORT_OUTPUT:
            self.expected[DigestTag.OUTPUT].absorb(plaintext)

    # -- payloads ------------------------------------------------------------
    def _seal(self, template: Instruction, plaintext: bytes) -> bytes:
        ct = crypto.seal(self.session_key, crypto.TO_DEVICE, self.seq, plaintext, template.log_bytes())
        self.seq += 1
        return ct

    def set_weight(self, regions: tuple[str, ...], plaintext: bytes) -> SetWeight:
        tmpl = SetWeight(None, tuple(regions))
        ins = SetWeight(self._seal(tmpl, plaintext), tuple(regions))
        self.note(ins, plaintext)
        return ins

    def set_input(self, region: str, plaintext: bytes) -> SetInput:
        tmpl = SetInput(None, region)
        ins = SetInput(self._seal(tmpl, plaintext), region)
        self.note(ins, plaintext)
        return ins

    def open_export(self, ins: ExportOutput, resp: Response) -> bytes:
        if not resp.ok:
            raise crypto.TransportError(f"export rejected: {resp.error}")
        return crypto.open_sealed(self.session_key, crypto.TO_USER, resp.payload, ins.log_bytes())

    def verify_attestation(self, resp: Response) -> bool:
        """Check a SignOutput response against the locally expected digests."""
        if not resp.ok or self.device_public is None:
            return False
        values, sig = parse_sign_payload(resp.payload)
        expected = {t: d.value() for t, d in self.expected.items()}
        if values != expected:
            return False
        return crypto.verify_sig(self.device_public, attestation_message(self.session_id, expected), sig)
