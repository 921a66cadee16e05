"""Prioritized provable broadcast (P-PB) and multi-step proposal promotion.

A committee member multicasts its value; every receiver that accepts the
send answers with a sign-share, and 2f+1 distinct shares combine into a
threshold signature that proves at least f+1 honest parties received and
signed that exact value. Receivers sign only committee members' values
(the prioritization), only the first value per instance (no equivocation),
and for steps past the first only when the send carries a verifying proof
for the previous step on the same value (external validity).

Promotion runs the send/ack round `steps` times, threading each step's
proof into the next send; receivers file the step 2/3/4 proofs away as
prepare/lock/commit. The single-proof configuration uses steps=1.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

from .crypto import CryptoProvider, SigShare, ThresholdSig, digest, stretch_digest
from .wire import Message, MessageKind, multicast


class NotProposer(Exception):
    pass


class Abandoned(Exception):
    pass


def sig_message(epoch: int, proposer: int, step: int, value_digest: bytes) -> bytes:
    """Bytes a receiver signs to ack one (instance, value) pair."""
    return b"ppb|" + struct.pack("<IHH", epoch, proposer, step) + value_digest


@dataclass(frozen=True)
class DeliveryProof:
    epoch: int
    proposer: int
    step: int
    value_digest: bytes
    sig: ThresholdSig

    def verify(self, provider: CryptoProvider) -> bool:
        msg = sig_message(self.epoch, self.proposer, self.step, self.value_digest)
        return provider.verify_threshold_sig(msg, self.sig)


def pack_send_body(value: bytes, K: int, carried: DeliveryProof | None) -> bytes:
    body = value + stretch_digest(value, K)
    if carried is not None:
        body += carried.sig.sig_bytes
    return body


def parse_send_body(body: bytes, K: int, epoch: int, proposer: int,
                    step: int) -> tuple[bytes, DeliveryProof | None]:
    """Split a PPB_SEND body into (value, carried proof). Steps past the first
    must carry the previous step's proof; the value digest in the proof is
    recomputed from the value itself."""
    trailer = 2 * K if step >= 2 else K
    if len(body) < trailer:
        raise ValueError("send body too short")
    value = body[:len(body) - trailer]
    if step < 2:
        return value, None
    sig_bytes = body[-K:]
    vd = digest(value)
    proof = DeliveryProof(epoch, proposer, step - 1, vd,
                          ThresholdSig(digest(sig_message(epoch, proposer, step - 1, vd)),
                                       sig_bytes, frozenset()))
    return value, proof


def make_send(me: int, epoch: int, proposer: int, step: int, value: bytes,
              carried: DeliveryProof | None, n: int, K: int) -> list[tuple[int, Message]]:
    if me != proposer:
        raise NotProposer(f"party {me} is not the proposer of this instance")
    msg = Message(MessageKind.PPB_SEND, epoch, me, tag_a=proposer, tag_b=step,
                  body=pack_send_body(value, K, carried))
    return multicast(n, msg)


class PpbSender:
    """Sender half: drives the step loop and collects acks into proofs."""

    def __init__(self, me: int, epoch: int, value: bytes, steps: int,
                 n: int, provider: CryptoProvider):
        if steps not in (1, 4):
            raise ValueError("steps must be 1 or 4")
        self.me = me
        self.epoch = epoch
        self.value = value
        self.value_digest = digest(value)
        self.steps = steps
        self.n = n
        self.provider = provider
        self.step = 0
        self.acks: dict[int, SigShare] = {}
        self.proofs: list[DeliveryProof] = []
        self.final: DeliveryProof | None = None
        self.abandoned = False

    def start(self) -> list[tuple[int, Message]]:
        return self._send_step(1, None)

    def _send_step(self, step: int, carried: DeliveryProof | None) -> list[tuple[int, Message]]:
        self.step = step
        self.acks = {}
        return make_send(self.me, self.epoch, self.me, step, self.value,
                         carried, self.n, self.provider.K)

    def on_ack(self, step: int, signer: int,
               share_bytes: bytes) -> tuple[DeliveryProof | None, list[tuple[int, Message]], str | None]:
        """Absorb one ack. Returns (final proof if promotion just completed,
        messages for the next step if one opened, drop reason if rejected)."""
        if self.abandoned:
            return None, [], "abandoned"
        if self.final is not None or step != self.step:
            return None, [], "stale_ack"
        if signer in self.acks:
            return None, [], "duplicate_ack"
        msg = sig_message(self.epoch, self.me, step, self.value_digest)
        share = SigShare(signer, digest(msg), share_bytes)
        if not self.provider.verify_sig_share(share, msg):
            return None, [], "invalid_ack"
        self.acks[signer] = share
        if len(self.acks) < self.provider.sig_t:
            return None, [], None
        sig = self.provider.combine_signature(msg, self.acks.values())
        proof = DeliveryProof(self.epoch, self.me, step, self.value_digest, sig)
        self.proofs.append(proof)
        if step < self.steps:
            return None, self._send_step(step + 1, proof), None
        self.final = proof
        return proof, [], None

    def abandon(self) -> None:
        self.abandoned = True


@dataclass
class PromotionReceiver:
    """Receiver-side record for one (epoch, proposer) promotion."""

    acked: dict[int, bytes] = field(default_factory=dict)  # step -> value digest
    prepare: tuple[bytes, DeliveryProof] | None = None
    lock: tuple[bytes, DeliveryProof] | None = None
    commit: tuple[bytes, DeliveryProof] | None = None
    abandoned: bool = False


def handle_send(recv: PromotionReceiver, me: int, epoch: int, proposer: int, step: int,
                value: bytes, carried: DeliveryProof | None, committee: list[int],
                provider: CryptoProvider, max_step: int) -> tuple[SigShare | None, str | None]:
    """Decide whether to ack a PPB_SEND; record prepare/lock/commit as a side
    effect. Returns (sign-share to send back, drop reason)."""
    if recv.abandoned:
        return None, "abandoned"
    if proposer not in committee:
        return None, "not_committee"
    if not 1 <= step <= max_step:
        return None, "bad_step"
    if step in recv.acked:
        return None, "duplicate_send"
    vd = digest(value)
    if step >= 2:
        if carried is None or carried.value_digest != vd or not carried.verify(provider):
            return None, "bad_carried_proof"
        if step == 2:
            recv.prepare = (value, carried)
        elif step == 3:
            recv.lock = (value, carried)
        elif step == 4:
            recv.commit = (value, carried)
    recv.acked[step] = vd
    return provider.sign_share(me, sig_message(epoch, proposer, step, vd)), None


def abandon(recv: PromotionReceiver) -> None:
    """Freeze the receiver: all current and future sends are ignored, while
    proofs recorded before the abandon stay readable. Idempotent."""
    recv.abandoned = True
