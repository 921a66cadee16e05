"""Asynchronous binary agreement on the common coin.

One instance runs per committee index. Each round r a party broadcasts its
estimate, relays a bit after f+1 matching receipts, accepts it into
bin_values after 2f+1, broadcasts one AUX value from bin_values, and after
n-f AUX values that all lie inside bin_values compares the supported value
set against the round coin: a single supported value b sets est to b and
decides when b equals the coin, a mixed set adopts the coin as est.

Rounds 1 and 2 use the fixed coin values 1 and 0, so unanimous inputs
decide within two rounds on every schedule; later rounds draw the
threshold coin, whose share is released only after the AUX quorum. A
decided party stops opening rounds and instead answers any message from a
later round once per round with its decision-carrying EST/AUX (plus a coin
share where one is drawn), which is what lets laggards catch up without
the decided majority running rounds forever.
"""

from __future__ import annotations

import random
import struct
from dataclasses import dataclass, field

from .crypto import CoinShare, CryptoProvider
from .wire import Message, MessageKind

# Round 1 favors the all-ones fast path, round 2 the all-zeros one.
FIXED_COINS = {1: 1, 2: 0}


class DoubleInput(Exception):
    pass


def aba_coin_id(epoch: int, j: int, rnd: int) -> bytes:
    return b"aba|" + struct.pack("<IHI", epoch, j, rnd)


@dataclass
class RoundState:
    est_sent: set = field(default_factory=set)
    est_recv: dict = field(default_factory=lambda: {0: set(), 1: set()})
    bin_values: set = field(default_factory=set)
    aux_sent: int | None = None
    aux_recv: dict = field(default_factory=dict)       # sender -> bit
    values: frozenset | None = None                    # frozen at AUX quorum
    coin_sent: bool = False
    coin_shares: dict = field(default_factory=dict)    # sender -> CoinShare
    coin: int | None = None
    evaluated: bool = False


class AbaInstance:
    """One binary agreement instance for committee index j of an epoch."""

    def __init__(self, pid: int, epoch: int, j: int, n: int, f: int,
                 provider: CryptoProvider):
        self.pid = pid
        self.epoch = epoch
        self.j = j
        self.n = n
        self.f = f
        self.provider = provider
        self.rounds: dict[int, RoundState] = {}
        self.round = 1
        self.est: int | None = None
        self.input_taken: int | None = None
        self.decided: int | None = None
        self.decide_round: int | None = None
        self.responded: set[int] = set()

    # -- message builders ------------------------------------------------------

    def _round_state(self, r: int) -> RoundState:
        if r not in self.rounds:
            self.rounds[r] = RoundState()
        return self.rounds[r]

    def _est_msg(self, r: int, bit: int) -> Message:
        return Message(MessageKind.ABA_EST, self.epoch, self.pid,
                       tag_a=self.j, tag_b=r, body=bytes([bit, 0]))

    def _aux_msg(self, r: int, bit: int) -> Message:
        return Message(MessageKind.ABA_AUX, self.epoch, self.pid,
                       tag_a=self.j, tag_b=r, body=bytes([bit, 0]))

    def _coin_msg(self, r: int) -> Message:
        share = self.provider.coin_share(self.pid, aba_coin_id(self.epoch, self.j, r))
        return Message(MessageKind.ABA_COIN_SHARE, self.epoch, self.pid,
                       tag_a=self.j, tag_b=r, body=share.share_bytes)

    # -- inputs ----------------------------------------------------------------

    def input(self, bit: int) -> list[Message]:
        if bit not in (0, 1):
            raise ValueError("input must be 0 or 1")
        if self.input_taken is None:
            self.input_taken = bit
            self.est = bit
            rs = self._round_state(1)
            if bit in rs.est_sent:
                return []
            rs.est_sent.add(bit)
            return [self._est_msg(1, bit)]
        if self.input_taken == bit:
            return []
        if self.input_taken == 0 and bit == 1:
            msgs, upgraded = self.try_upgrade()
            if not upgraded:
                raise DoubleInput("upgrade window closed (round-1 AUX already sent)")
            return msgs
        raise DoubleInput("conflicting re-input")

    def try_upgrade(self) -> tuple[list[Message], bool]:
        """The 0-to-1 input upgrade: allowed until this party's round-1 AUX."""
        rs = self._round_state(1)
        if (self.input_taken != 0 or self.decided is not None
                or self.round != 1 or rs.aux_sent is not None):
            return [], False
        self.input_taken = 1
        self.est = 1
        if 1 in rs.est_sent:
            return [], True
        rs.est_sent.add(1)
        return [self._est_msg(1, 1)], True

    def decided_value(self) -> int | None:
        return self.decided

    # -- message handling --------------------------------------------------------

    def handle(self, msg: Message) -> tuple[list[Message], tuple[int, int] | None, str | None]:
        """Absorb one ABA message. Returns (outgoing messages, decision as
        (bit, round) the moment it is reached, drop reason)."""
        r = msg.tag_b
        if r < 1:
            return [], None, "malformed_aba"
        if self.decided is not None:
            if r <= self.decide_round:
                return [], None, "aba_stale"
            return self._respond(r), None, None

        if msg.kind == MessageKind.ABA_COIN_SHARE:
            return self._on_coin_share(r, msg)
        if len(msg.body) != 2 or msg.body[0] not in (0, 1):
            return [], None, "malformed_aba"
        bit = msg.body[0]
        if msg.kind == MessageKind.ABA_EST:
            return self._on_est(r, bit, msg.sender)
        if msg.kind == MessageKind.ABA_AUX:
            return self._on_aux(r, bit, msg.sender)
        return [], None, "malformed_aba"

    def _on_est(self, r: int, bit: int, sender: int):
        rs = self._round_state(r)
        if sender in rs.est_recv[bit]:
            return [], None, None
        rs.est_recv[bit].add(sender)
        out = []
        if len(rs.est_recv[bit]) >= self.f + 1 and bit not in rs.est_sent:
            rs.est_sent.add(bit)
            out.append(self._est_msg(r, bit))
        if len(rs.est_recv[bit]) >= 2 * self.f + 1 and bit not in rs.bin_values:
            rs.bin_values.add(bit)
            if rs.aux_sent is None:
                rs.aux_sent = bit
                out.append(self._aux_msg(r, bit))
        more, decision = self._advance()
        return out + more, decision, None

    def _on_aux(self, r: int, bit: int, sender: int):
        rs = self._round_state(r)
        if sender not in rs.aux_recv:
            rs.aux_recv[sender] = bit
        out, decision = self._advance()
        return out, decision, None

    def _on_coin_share(self, r: int, msg: Message):
        if r in FIXED_COINS:
            return [], None, "aba_stale"
        rs = self._round_state(r)
        share = CoinShare(msg.sender, aba_coin_id(self.epoch, self.j, r), msg.body)
        if not self.provider.coin_verify(share):
            return [], None, "invalid_share"
        if msg.sender not in rs.coin_shares:
            rs.coin_shares[msg.sender] = share
        out, decision = self._advance()
        return out, decision, None

    def _respond(self, r: int) -> list[Message]:
        if r in self.responded:
            return []
        self.responded.add(r)
        out = [self._est_msg(r, self.decided), self._aux_msg(r, self.decided)]
        if r not in FIXED_COINS:
            out.append(self._coin_msg(r))
        return out

    # -- round progression -------------------------------------------------------

    def _advance(self) -> tuple[list[Message], tuple[int, int] | None]:
        """Drive the current round as far as the received state allows; loops
        because buffered messages may complete several rounds at once."""
        out: list[Message] = []
        while True:
            r = self.round
            rs = self._round_state(r)
            progressed = False

            if rs.values is None:
                supported = [s for s, b in rs.aux_recv.items() if b in rs.bin_values]
                if len(supported) >= self.n - self.f:
                    rs.values = frozenset(rs.aux_recv[s] for s in supported)
                    progressed = True
                    if r in FIXED_COINS:
                        rs.coin = FIXED_COINS[r]
                    elif not rs.coin_sent:
                        rs.coin_sent = True
                        out.append(self._coin_msg(r))

            if rs.values is not None and rs.coin is None:
                if len(rs.coin_shares) >= self.provider.coin_t:
                    toss = self.provider.coin_toss(aba_coin_id(self.epoch, self.j, r),
                                                   rs.coin_shares.values(), 1)
                    rs.coin = toss[0] & 1
                    progressed = True

            if rs.values is not None and rs.coin is not None and not rs.evaluated:
                rs.evaluated = True
                progressed = True
                if len(rs.values) == 1:
                    bit = next(iter(rs.values))
                    self.est = bit
                    if bit == rs.coin:
                        self.decided = bit
                        self.decide_round = r
                        return out, (bit, r)
                else:
                    self.est = rs.coin
                self.round = r + 1
                nxt = self._round_state(self.round)
                if self.est not in nxt.est_sent:
                    nxt.est_sent.add(self.est)
                    out.append(self._est_msg(self.round, self.est))

            if not progressed:
                return out, None


def run_aba_trial(n: int, f: int, inputs: list[int], seed: int, K: int = 16,
                  crash: dict[int, int] | None = None,
                  max_steps: int = 200_000) -> dict[int, tuple[int, int]]:
    """One isolated instance across n parties under a seeded fair scheduler.

    crash maps a party to the scheduler step after which it neither sends
    nor processes. Returns party -> (decided bit, decide round) for every
    party that decided before the step cap.
    """
    provider = CryptoProvider(n, f, K, seed)
    instances = [AbaInstance(p, 0, 0, n, f, provider) for p in range(n)]
    rng = random.Random(seed ^ 0x5EED5EED)
    crash = crash or {}
    pending: list[tuple[int, Message]] = []

    def emit(src: int, msgs: list[Message], step: int) -> None:
        if src in crash and step >= crash[src]:
            return
        for m in msgs:
            for dest in range(n):
                pending.append((dest, m))

    decisions: dict[int, tuple[int, int]] = {}
    for p, bit in enumerate(inputs):
        emit(p, instances[p].input(bit), 0)
    alive = n - len(crash)
    step = 0
    while pending and len(decisions) < alive and step < max_steps:
        step += 1
        dest, m = pending.pop(rng.randrange(len(pending)))
        if dest in crash and step >= crash[dest]:
            continue
        msgs, decision, _ = instances[dest].handle(m)
        emit(dest, msgs, step)
        if decision is not None and dest not in decisions:
            decisions[dest] = decision
    return decisions
