"""Per-epoch atomic-broadcast orchestration.

Each party is a deterministic state machine: one inbound message at a time,
emitting outbound (destination, message) pairs plus effect records that the
simulator folds into the trace. An epoch runs

    committee selection -> encrypt + promote -> propose -> suggest ->
    kappa binary agreement instances -> totality echo -> threshold
    decryption -> block delivery

and epochs are sequential per party: epoch e+1 starts only once e has
delivered locally. Proposals spread by suggestion flooding: a party
multicasts a SUGGEST carrying the full proposal the first time it sees it,
from whichever carrier (PROPOSE, SUGGEST, or PROPOSAL_ECHO), which is what
gives totality. Decryption shares are released strictly after the party's
last binary-agreement decision for the epoch, so proposal contents stay
hidden until the decided set is fixed.

Messages that need the committee before they can be validated (broadcast
sends, proposals, suggestions, echoes) are deferred in arrival order until
the committee forms, never dropped.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from .aba import AbaInstance
from .committee import CommitteeState, handle_coin_share, start_selection
from .crypto import Ciphertext, CryptoProvider, DecShare, ThresholdSig, digest
from .params import ProtocolParams, Request, decode_batch, derive_thresholds, encode_batch
from .ppb import DeliveryProof, PpbSender, PromotionReceiver, handle_send, sig_message
from .ppb import abandon as ppb_abandon_receiver
from .wire import Message, MessageKind, multicast


class EpochAlreadyActive(Exception):
    pass


@dataclass(frozen=True)
class Proposal:
    """A committee member's ciphertext with its delivery proof."""

    epoch: int
    j: int
    proposer: int
    ciphertext: Ciphertext
    proof: DeliveryProof


@dataclass(frozen=True)
class DeliveredBlock:
    epoch: int
    decided: tuple[int, ...]        # committee indices that decided 1, sorted
    q: int
    requests: tuple[Request, ...]   # deduplicated, deterministically ordered
    byte_total: int


def request_digest(r: Request) -> str:
    return hashlib.sha256(r.client_tag + b"|" + r.payload).hexdigest()[:16]


def select_batch(buffer: list[Request], batch_size: int,
                 delivered_tags=frozenset()) -> list[Request]:
    """First batch_size pending requests in arrival order, skipping anything
    already delivered. An empty buffer yields an empty batch; the epoch still runs."""
    out = []
    for r in buffer:
        if r.client_tag in delivered_tags:
            continue
        out.append(r)
        if len(out) == batch_size:
            break
    return out


class EpochState:
    def __init__(self, epoch: int, kappa: int):
        self.epoch = epoch
        self.cs = CommitteeState(epoch, kappa)
        self.committee: list[int] | None = None
        self.started = False
        self.deferred: list[Message] = []          # pre-committee arrivals
        self.receivers: dict[int, PromotionReceiver] = {}
        self.promotion: PpbSender | None = None
        self.my_ciphertext: Ciphertext | None = None
        self.proposals: dict[int, Proposal] = {}
        self.suggested: set[int] = set()           # j values we already suggested
        self.suggesters: set[int] = set()
        self.suggested_for: dict[int, set[int]] = {j: set() for j in range(kappa)}
        self.zero_sent = False
        self.abas: dict[int, AbaInstance] = {}
        self.decisions: dict[int, int] = {}
        self.echoed: set[int] = set()
        self.released = False
        self.decided_set: list[int] | None = None
        self.dec_store: dict[int, dict[int, bytes]] = {}
        self.plaintexts: dict[int, bytes] = {}
        self.delivered: DeliveredBlock | None = None


class Party:
    """One protocol participant; all state lives here, all I/O is messages."""

    def __init__(self, pid: int, params: ProtocolParams,
                 provider: CryptoProvider | None = None, steps: int = 1):
        if steps not in (1, 4):
            raise ValueError("promotion steps must be 1 or 4")
        self.pid = pid
        self.params = params
        self.thresholds = derive_thresholds(params)
        self.provider = provider if provider is not None else CryptoProvider.from_params(params)
        self.steps = steps
        self.buffer: list[Request] = []
        self.delivered_tags: set[bytes] = set()
        self.blocks: list[DeliveredBlock] = []
        self.epochs: dict[int, EpochState] = {}

    # -- public surface -----------------------------------------------------------

    def enqueue_requests(self, requests) -> None:
        self.buffer.extend(requests)

    def start_epoch(self, epoch: int) -> tuple[list, list]:
        """Join epoch actively: contribute a committee coin share and, once the
        committee is known and includes us, encrypt a batch and promote it."""
        st = self._epoch(epoch)
        if st.started:
            raise EpochAlreadyActive(f"epoch {epoch} already started at party {self.pid}")
        if epoch > 0:
            prev = self.epochs.get(epoch - 1)
            if prev is None or prev.delivered is None:
                raise EpochAlreadyActive(f"epoch {epoch - 1} not delivered yet")
        st.started = True
        out: list = []
        effects: list = [{"type": "epoch_started", "epoch": epoch}]
        out.extend(start_selection(st.cs, self.pid, self.params.n, self.provider))
        self._maybe_promote(st, out, effects)
        return out, effects

    def handle(self, msg: Message) -> tuple[list, list]:
        out: list = []
        effects: list = []
        try:
            self._dispatch(msg, out, effects)
        except ValueError:
            self._drop(effects, msg, "malformed")
        return out, effects

    def ppb_abandon(self, epoch: int, proposer: int) -> None:
        """Freeze all promotion steps for (epoch, proposer); idempotent."""
        st = self._epoch(epoch)
        recv = st.receivers.setdefault(proposer, PromotionReceiver())
        ppb_abandon_receiver(recv)
        if proposer == self.pid and st.promotion is not None:
            st.promotion.abandon()

    # -- internals ------------------------------------------------------------------

    def _epoch(self, epoch: int) -> EpochState:
        if epoch not in self.epochs:
            self.epochs[epoch] = EpochState(epoch, self.params.kappa)
        return self.epochs[epoch]

    def _aba(self, st: EpochState, j: int) -> AbaInstance:
        if j not in st.abas:
            st.abas[j] = AbaInstance(self.pid, st.epoch, j, self.params.n,
                                     self.params.f, self.provider)
        return st.abas[j]

    def _drop(self, effects, msg: Message, reason: str) -> None:
        effects.append({"type": "drop", "reason": reason, "kind": msg.kind.name,
                        "epoch": msg.epoch, "from": msg.sender})

    def _dispatch(self, msg: Message, out, effects) -> None:
        st = self._epoch(msg.epoch)
        kind = msg.kind
        if kind == MessageKind.COIN_SHARE:
            self._on_coin_share(st, msg, out, effects)
        elif kind == MessageKind.PPB_SEND:
            self._on_ppb_send(st, msg, out, effects)
        elif kind == MessageKind.PPB_ACK:
            self._on_ppb_ack(st, msg, out, effects)
        elif kind == MessageKind.PROPOSE:
            self._on_propose(st, msg, out, effects)
        elif kind == MessageKind.SUGGEST:
            self._on_suggest(st, msg, out, effects)
        elif kind == MessageKind.PROPOSAL_ECHO:
            self._on_echo(st, msg, out, effects)
        elif kind in (MessageKind.ABA_EST, MessageKind.ABA_AUX, MessageKind.ABA_COIN_SHARE):
            self._on_aba(st, msg, out, effects)
        elif kind == MessageKind.DEC_SHARE:
            self._on_dec_share(st, msg, out, effects)
        else:
            self._drop(effects, msg, "unknown_kind")

    # committee phase

    def _on_coin_share(self, st, msg, out, effects) -> None:
        committee, reason = handle_coin_share(st.cs, msg, self.provider)
        if reason is not None:
            self._drop(effects, msg, reason)
        if committee is not None:
            st.committee = committee
            effects.append({"type": "committee", "epoch": st.epoch,
                            "committee": list(committee)})
            deferred, st.deferred = st.deferred, []
            for m in deferred:
                self._dispatch(m, out, effects)
            self._maybe_promote(st, out, effects)

    def _maybe_promote(self, st, out, effects) -> None:
        if not st.started or st.committee is None or st.promotion is not None:
            return
        if self.pid not in st.committee:
            return
        batch = select_batch(self.buffer, self.params.batch_size, self.delivered_tags)
        plaintext = encode_batch(batch)
        st.my_ciphertext = self.provider.encrypt(st.epoch, self.pid, plaintext)
        st.promotion = PpbSender(self.pid, st.epoch, st.my_ciphertext.ct_bytes,
                                 self.steps, self.params.n, self.provider)
        out.extend(st.promotion.start())

    # provable broadcast phase

    def _on_ppb_send(self, st, msg, out, effects) -> None:
        if st.committee is None:
            st.deferred.append(msg)
            return
        proposer, step = msg.tag_a, msg.tag_b
        if proposer != msg.sender:
            self._drop(effects, msg, "sender_mismatch")
            return
        from .ppb import parse_send_body
        value, carried = parse_send_body(msg.body, self.params.K, st.epoch, proposer, step)
        recv = st.receivers.setdefault(proposer, PromotionReceiver())
        share, reason = handle_send(recv, self.pid, st.epoch, proposer, step, value,
                                    carried, st.committee, self.provider, self.steps)
        if reason is not None:
            self._drop(effects, msg, reason)
            return
        effects.append({"type": "ppb_ack", "epoch": st.epoch, "proposer": proposer,
                        "step": step, "value_digest": digest(value).hex()})
        ack = Message(MessageKind.PPB_ACK, st.epoch, self.pid,
                      tag_a=proposer, tag_b=step, body=share.share_bytes)
        out.append((proposer, ack))

    def _on_ppb_ack(self, st, msg, out, effects) -> None:
        proposer, step = msg.tag_a, msg.tag_b
        if proposer != self.pid or st.promotion is None:
            self._drop(effects, msg, "not_proposer")
            return
        final, next_msgs, reason = st.promotion.on_ack(step, msg.sender, msg.body)
        if reason is not None:
            self._drop(effects, msg, reason)
            return
        out.extend(next_msgs)
        if final is not None:
            effects.append({"type": "promotion_complete", "epoch": st.epoch,
                            "proposer": self.pid,
                            "value_digest": final.value_digest.hex(),
                            "signers": sorted(final.sig.signer_set)})
            body = st.my_ciphertext.ct_bytes + final.sig.sig_bytes
            propose = Message(MessageKind.PROPOSE, st.epoch, self.pid,
                              tag_a=self.pid, tag_b=self.steps, body=body)
            out.extend(multicast(self.params.n, propose))

    # propose / suggest / echo phase

    def _make_proposal(self, epoch: int, proposer: int, ct_bytes: bytes,
                       sig_bytes: bytes, committee: list[int]):
        if proposer not in committee:
            return None, "not_committee"
        j = committee.index(proposer)
        vd = digest(ct_bytes)
        signed = sig_message(epoch, proposer, self.steps, vd)
        sig = ThresholdSig(digest(signed), sig_bytes, frozenset())
        proof = DeliveryProof(epoch, proposer, self.steps, vd, sig)
        if not proof.verify(self.provider):
            return None, "bad_proof"
        return Proposal(epoch, j, proposer, Ciphertext(epoch, proposer, ct_bytes), proof), None

    def _on_propose(self, st, msg, out, effects) -> None:
        if st.committee is None:
            st.deferred.append(msg)
            return
        K = self.params.K
        if len(msg.body) < 2 * K:
            self._drop(effects, msg, "malformed")
            return
        proposal, reason = self._make_proposal(st.epoch, msg.sender,
                                               msg.body[:-K], msg.body[-K:], st.committee)
        if reason is not None:
            self._drop(effects, msg, reason)
            return
        st.suggested_for[proposal.j].add(msg.sender)
        self._absorb_proposal(st, proposal, out, effects)
        self._add_suggester(st, msg.sender, out, effects)

    def _on_suggest(self, st, msg, out, effects) -> None:
        if st.committee is None:
            st.deferred.append(msg)
            return
        K = self.params.K
        if len(msg.body) < 2 * K + 2:
            self._drop(effects, msg, "malformed")
            return
        proposer = int.from_bytes(msg.body[-2:], "little")
        ct_bytes, sig_bytes = msg.body[:-K - 2], msg.body[-K - 2:-2]
        proposal, reason = self._make_proposal(st.epoch, proposer, ct_bytes,
                                               sig_bytes, st.committee)
        if reason is not None:
            self._drop(effects, msg, reason)
            return
        st.suggested_for[proposal.j].add(msg.sender)
        self._absorb_proposal(st, proposal, out, effects)
        self._add_suggester(st, msg.sender, out, effects)

    def _on_echo(self, st, msg, out, effects) -> None:
        if st.committee is None:
            st.deferred.append(msg)
            return
        K = self.params.K
        if len(msg.body) < 2 * K:
            self._drop(effects, msg, "malformed")
            return
        proposal, reason = self._make_proposal(st.epoch, msg.tag_a,
                                               msg.body[:-K], msg.body[-K:], st.committee)
        if reason is not None:
            self._drop(effects, msg, reason)
            return
        self._absorb_proposal(st, proposal, out, effects)

    def _absorb_proposal(self, st, proposal: Proposal, out, effects) -> None:
        j = proposal.j
        if j not in st.proposals:
            # Only the first proposal per index can ever verify (uniqueness of
            # delivery proofs), so keeping the first is safe.
            st.proposals[j] = proposal
            effects.append({"type": "stored_proposal", "epoch": st.epoch, "j": j,
                            "proposer": proposal.proposer,
                            "value_digest": proposal.proof.value_digest.hex()})
            if j not in st.suggested:
                st.suggested.add(j)
                body = (proposal.ciphertext.ct_bytes + proposal.proof.sig.sig_bytes
                        + proposal.proposer.to_bytes(2, "little"))
                suggest = Message(MessageKind.SUGGEST, st.epoch, self.pid,
                                  tag_a=proposal.proposer, tag_b=self.steps, body=body)
                out.extend(multicast(self.params.n, suggest))
            self._maybe_echo(st, j, out, effects)
            self._maybe_release(st, out, effects)
        self._input_one(st, j, out, effects)

    def _add_suggester(self, st, sender: int, out, effects) -> None:
        if sender in st.suggesters:
            return
        st.suggesters.add(sender)
        effects.append({"type": "suggesters", "epoch": st.epoch,
                        "count": len(st.suggesters)})
        if not st.zero_sent and len(st.suggesters) >= self.params.n - self.params.f:
            st.zero_sent = True
            for j in range(self.params.kappa):
                if not st.suggested_for[j] and j not in st.proposals:
                    self._input_zero(st, j, out, effects)

    # binary agreement phase

    def _input_one(self, st, j: int, out, effects) -> None:
        inst = self._aba(st, j)
        if inst.input_taken is None:
            msgs = inst.input(1)
            effects.append({"type": "aba_input", "epoch": st.epoch, "j": j,
                            "bit": 1, "origin": "input"})
            for m in msgs:
                out.extend(multicast(self.params.n, m))
        elif inst.input_taken == 0:
            msgs, upgraded = inst.try_upgrade()
            if upgraded:
                effects.append({"type": "aba_input", "epoch": st.epoch, "j": j,
                                "bit": 1, "origin": "upgrade"})
                for m in msgs:
                    out.extend(multicast(self.params.n, m))

    def _input_zero(self, st, j: int, out, effects) -> None:
        inst = self._aba(st, j)
        if inst.input_taken is not None:
            return
        msgs = inst.input(0)
        effects.append({"type": "aba_input", "epoch": st.epoch, "j": j,
                        "bit": 0, "origin": "input"})
        for m in msgs:
            out.extend(multicast(self.params.n, m))

    def _on_aba(self, st, msg, out, effects) -> None:
        j = msg.tag_a
        if j >= self.params.kappa:
            self._drop(effects, msg, "bad_instance")
            return
        inst = self._aba(st, j)
        msgs, decision, reason = inst.handle(msg)
        if reason is not None:
            self._drop(effects, msg, reason)
        for m in msgs:
            out.extend(multicast(self.params.n, m))
        if decision is not None:
            self._on_decision(st, j, decision[0], decision[1], out, effects)

    def _on_decision(self, st, j: int, bit: int, rnd: int, out, effects) -> None:
        if j in st.decisions:
            return
        st.decisions[j] = bit
        effects.append({"type": "decide", "epoch": st.epoch, "j": j,
                        "bit": bit, "round": rnd})
        self._maybe_echo(st, j, out, effects)
        self._maybe_release(st, out, effects)

    def _maybe_echo(self, st, j: int, out, effects) -> None:
        if st.decisions.get(j) == 1 and j in st.proposals and j not in st.echoed:
            st.echoed.add(j)
            p = st.proposals[j]
            echo = Message(MessageKind.PROPOSAL_ECHO, st.epoch, self.pid,
                           tag_a=p.proposer, tag_b=self.steps,
                           body=p.ciphertext.ct_bytes + p.proof.sig.sig_bytes)
            out.extend(multicast(self.params.n, echo))

    # decryption and delivery phase

    def _maybe_release(self, st, out, effects) -> None:
        if st.released or st.delivered is not None:
            return
        if len(st.decisions) < self.params.kappa:
            return
        decided_set = [j for j in range(self.params.kappa) if st.decisions[j] == 1]
        if any(j not in st.proposals for j in decided_set):
            return  # an echo or suggestion will eventually supply the holder
        st.released = True
        st.decided_set = decided_set
        for j in decided_set:
            share = self.provider.decryption_share(self.pid, st.proposals[j].ciphertext)
            effects.append({"type": "dec_share_release", "epoch": st.epoch, "j": j})
            body = share.share_bytes + j.to_bytes(4, "little")
            msg = Message(MessageKind.DEC_SHARE, st.epoch, self.pid, tag_a=j, body=body)
            out.extend(multicast(self.params.n, msg))
        self._maybe_deliver(st, out, effects)

    def _on_dec_share(self, st, msg, out, effects) -> None:
        if len(msg.body) != self.params.K + 4:
            self._drop(effects, msg, "malformed")
            return
        j = int.from_bytes(msg.body[-4:], "little")
        if j != msg.tag_a or j >= self.params.kappa:
            self._drop(effects, msg, "bad_instance")
            return
        store = st.dec_store.setdefault(j, {})
        if msg.sender not in store:
            store[msg.sender] = msg.body[:self.params.K]
        self._maybe_deliver(st, out, effects)

    def _valid_dec_shares(self, st, j: int, effects) -> list[DecShare]:
        ct = st.proposals[j].ciphertext
        ref = digest(ct.ct_bytes)
        store = st.dec_store.get(j, {})
        valid = []
        for sender in sorted(store):
            share = DecShare(sender, ref, store[sender])
            if self.provider.verify_dec_share(share, ct):
                valid.append(share)
            else:
                del store[sender]
                effects.append({"type": "drop", "reason": "invalid_dec_share",
                                "kind": "DEC_SHARE", "epoch": st.epoch, "from": sender})
        return valid

    def _maybe_deliver(self, st, out, effects) -> None:
        if not st.released or st.delivered is not None:
            return
        for j in st.decided_set:
            if j in st.plaintexts:
                continue
            valid = self._valid_dec_shares(st, j, effects)
            if len(valid) < self.thresholds.dec_t:
                return
            ct = st.proposals[j].ciphertext
            st.plaintexts[j] = self.provider.combine_decryption(ct, valid[:self.thresholds.dec_t])
        self._deliver(st, effects)

    def _deliver(self, st, effects) -> None:
        requests: list[Request] = []
        for j in st.decided_set:
            try:
                requests.extend(decode_batch(st.plaintexts[j]))
            except ValueError:
                effects.append({"type": "drop", "reason": "undecodable_batch",
                                "kind": "DEC_SHARE", "epoch": st.epoch, "from": j})
        requests.sort(key=lambda r: (r.client_tag, hashlib.sha256(r.payload).digest()))
        final: list[Request] = []
        seen: set[bytes] = set()
        for r in requests:
            if r.client_tag in seen or r.client_tag in self.delivered_tags:
                continue
            seen.add(r.client_tag)
            final.append(r)
        self.delivered_tags |= seen
        block = DeliveredBlock(epoch=st.epoch, decided=tuple(st.decided_set),
                               q=len(st.decided_set), requests=tuple(final),
                               byte_total=sum(len(r.client_tag) + len(r.payload) for r in final))
        st.delivered = block
        self.blocks.append(block)
        self.buffer = [r for r in self.buffer if r.client_tag not in self.delivered_tags]
        effects.append({"type": "deliver_block", "epoch": st.epoch,
                        "S": list(st.decided_set), "q": block.q,
                        "requests": [request_digest(r) for r in final]})
