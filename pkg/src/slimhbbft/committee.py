"""Per-epoch committee selection and leader election on the threshold coin.

Each party multicasts its coin share for the epoch id; once f+1 distinct
valid shares are collected the toss yields the same ordered kappa-party
committee at every honest party. The epoch identifier doubles as the coin
id, and the committee is an ordered list so proposal indices j in [0, kappa)
are well defined.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .crypto import CoinShare, CryptoProvider, InsufficientShares
from .wire import Message, MessageKind, multicast


class DuplicateStart(Exception):
    pass


def committee_coin_id(epoch: int) -> bytes:
    return b"cs|" + epoch.to_bytes(4, "little")


def leader_coin_id(epoch: int, tag: bytes = b"") -> bytes:
    return b"le|" + epoch.to_bytes(4, "little") + tag


@dataclass
class CommitteeState:
    epoch: int
    kappa: int
    shares: dict[int, CoinShare] = field(default_factory=dict)
    committee: list[int] | None = None
    started: bool = False


def start_selection(state: CommitteeState, me: int, n: int,
                    provider: CryptoProvider) -> list[tuple[int, Message]]:
    """Multicast our own coin share for this epoch (self-delivery included)."""
    if state.started:
        raise DuplicateStart(f"committee selection for epoch {state.epoch} already started")
    state.started = True
    share = provider.coin_share(me, committee_coin_id(state.epoch))
    msg = Message(MessageKind.COIN_SHARE, state.epoch, me, body=share.share_bytes)
    return multicast(n, msg)


def handle_coin_share(state: CommitteeState, msg: Message,
                      provider: CryptoProvider) -> tuple[list[int] | None, str | None]:
    """Absorb one COIN_SHARE message.

    Returns (committee, drop_reason): the committee exactly once, on the
    share that completes the f+1 quorum. Invalid shares are discarded and
    reported so the caller can count them; duplicates are ignored.
    """
    if len(msg.body) != provider.K:
        return None, "invalid_share"
    share = CoinShare(msg.sender, committee_coin_id(state.epoch), msg.body)
    if not provider.coin_verify(share):
        return None, "invalid_share"
    if msg.sender in state.shares:
        return None, "duplicate_share"
    state.shares[msg.sender] = share
    if state.committee is None and len(state.shares) >= provider.coin_t:
        state.committee = provider.coin_toss(committee_coin_id(state.epoch),
                                             state.shares.values(), state.kappa)
        return state.committee, None
    return None, None


def elect_leader(provider: CryptoProvider, epoch: int, shares, tag: bytes = b"") -> int:
    """Single elected party, identical across honest parties holding any
    coin_t-quorum of valid shares for the election id."""
    result = provider.coin_toss(leader_coin_id(epoch, tag), shares, 1)
    return result[0]


def sample_committee(provider: CryptoProvider, coin_id: bytes, kappa: int) -> list[int]:
    """Dealer-side shortcut: build a coin_t quorum locally and toss.

    Used by Monte Carlo committee-validity sweeps where running the full
    message exchange per sample would be pointless.
    """
    shares = [provider.coin_share(p, coin_id) for p in range(provider.coin_t)]
    return provider.coin_toss(coin_id, shares, kappa)
