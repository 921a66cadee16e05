"""Canonical wire format with deterministic byte accounting.

Every message is a fixed 16-byte header plus a kind-specific body:

    kind(1) epoch(4) sender(2) tag_a(2) tag_b(2) body_len(4) reserved(1)

tag_a/tag_b carry the instance coordinates (proposer and step for broadcast
messages, instance index and round for binary agreement). Body sizes are
fixed functions of the security parameter K and any carried payload length,
so byte accounting is identical across runs:

    COIN_SHARE      K
    PPB_SEND        |value| + K, plus K more when a step proof is carried
    PPB_ACK         K
    PROPOSE         |ciphertext| + K
    SUGGEST         |ciphertext| + K + 2
    ABA_EST/ABA_AUX 2
    ABA_COIN_SHARE  K
    DEC_SHARE       K + 4
    PROPOSAL_ECHO   |ciphertext| + K

where |ciphertext| = |plaintext| + K.
"""

from __future__ import annotations

import enum
import hashlib
import struct
from dataclasses import dataclass

HEADER_SIZE = 16
_HEADER = struct.Struct("<BIHHHIB")


class MessageKind(enum.IntEnum):
    COIN_SHARE = 1
    PPB_SEND = 2
    PPB_ACK = 3
    PROPOSE = 4
    SUGGEST = 5
    ABA_EST = 6
    ABA_AUX = 7
    ABA_COIN_SHARE = 8
    DEC_SHARE = 9
    PROPOSAL_ECHO = 10


@dataclass(frozen=True)
class Message:
    kind: MessageKind
    epoch: int
    sender: int
    tag_a: int = 0
    tag_b: int = 0
    body: bytes = b""

    @property
    def size(self) -> int:
        return HEADER_SIZE + len(self.body)

    def serialize(self) -> bytes:
        return _HEADER.pack(int(self.kind), self.epoch, self.sender,
                            self.tag_a, self.tag_b, len(self.body), 0) + self.body

    def digest(self) -> str:
        return hashlib.sha256(self.serialize()).hexdigest()[:16]


def deserialize(data: bytes) -> Message:
    if len(data) < HEADER_SIZE:
        raise ValueError("message shorter than header")
    kind, epoch, sender, tag_a, tag_b, blen, _ = _HEADER.unpack_from(data)
    body = data[HEADER_SIZE:]
    if blen != len(body):
        raise ValueError("body length field does not match body")
    return Message(MessageKind(kind), epoch, sender, tag_a, tag_b, body)


def multicast(n: int, msg: Message) -> list[tuple[int, Message]]:
    """Address one message to every party, self included."""
    return [(dest, msg) for dest in range(n)]


def expected_body_size(kind: MessageKind, K: int, *, value_len: int = 0,
                       ciphertext_len: int = 0, carries_proof: bool = False) -> int:
    """The documented size function, used by tests and the metrics checks."""
    if kind == MessageKind.COIN_SHARE:
        return K
    if kind == MessageKind.PPB_SEND:
        return value_len + K + (K if carries_proof else 0)
    if kind == MessageKind.PPB_ACK:
        return K
    if kind == MessageKind.PROPOSE:
        return ciphertext_len + K
    if kind == MessageKind.SUGGEST:
        return ciphertext_len + K + 2
    if kind in (MessageKind.ABA_EST, MessageKind.ABA_AUX):
        return 2
    if kind == MessageKind.ABA_COIN_SHARE:
        return K
    if kind == MessageKind.DEC_SHARE:
        return K + 4
    if kind == MessageKind.PROPOSAL_ECHO:
        return ciphertext_len + K
    raise ValueError(f"unknown kind {kind}")
