"""Deterministic discrete-event asynchronous network simulation.

Logical steps, not wall-clock time: a seeded scheduler repeatedly picks one
pending (sender, destination, message) triple and delivers it; the handler
output re-enters the pool. Identical configs produce byte-identical traces.
Adversarial scheduling policies may reorder and starve but never drop, and
every policy forces delivery of messages past a bounded age, so eventual
delivery holds on every trace. Byzantine parties run the normal state
machine with their outgoing traffic rewritten by a behavior from a closed
set (crash, mute, equivocate, withhold-proposal, garbage).

The run terminates once every honest party has delivered every epoch, then
drains the remaining pool so that each sent message has a matching delivery
in the trace; hitting the step cap first raises LivenessTimeout.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field

from .acs import Party
from .crypto import CryptoProvider, stretch_digest
from .params import BATCH_HEADER, REQUEST_OVERHEAD, ProtocolParams, Request
from .ppb import parse_send_body, pack_send_body
from .wire import Message, MessageKind

WORKLOAD_TAG_LEN = 8  # "p%03de%03d"


class ConfigInvalid(Exception):
    pass


class LivenessTimeout(Exception):
    def __init__(self, message: str, trace: "Trace | None" = None):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class ByzBehavior:
    kind: str                  # crash | mute | equivocate | withhold | garbage
    crash_at_step: int = 0     # used by crash only

    KNOWN = ("crash", "mute", "equivocate", "withhold", "garbage")


@dataclass
class SimConfig:
    params: ProtocolParams
    epochs: int = 1
    scheduler: str = "fair"
    scheduler_params: dict = field(default_factory=dict)
    byzantine: dict[int, ByzBehavior] = field(default_factory=dict)
    max_steps: int | None = None
    payload_bytes: int = 256   # per-proposer plaintext size; 0 means no workload
    steps: int = 1             # promotion steps, 1 or 4

    def resolved_max_steps(self) -> int:
        if self.max_steps is not None:
            return self.max_steps
        return 10_000 * self.params.n * self.epochs

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigInvalid("epochs must be at least 1")
        if len(self.byzantine) > self.params.f:
            raise ConfigInvalid(f"{len(self.byzantine)} byzantine parties exceeds f={self.params.f}")
        for pid, b in self.byzantine.items():
            if not 0 <= pid < self.params.n:
                raise ConfigInvalid(f"byzantine pid {pid} out of range")
            if b.kind not in ByzBehavior.KNOWN:
                raise ConfigInvalid(f"unknown byzantine behavior {b.kind!r}")
        if self.steps not in (1, 4):
            raise ConfigInvalid("promotion steps must be 1 or 4")
        if self.payload_bytes != 0 and self.payload_bytes < BATCH_HEADER + REQUEST_OVERHEAD + WORKLOAD_TAG_LEN:
            raise ConfigInvalid(f"payload_bytes must be 0 or >= {BATCH_HEADER + REQUEST_OVERHEAD + WORKLOAD_TAG_LEN}")
        if self.resolved_max_steps() <= 0:
            raise ConfigInvalid("max_steps must be positive")
        if self.scheduler not in ("fair", "targeted", "lifo"):
            raise ConfigInvalid(f"unknown scheduler {self.scheduler!r}")

    def honest(self) -> list[int]:
        return [p for p in range(self.params.n) if p not in self.byzantine]

    def meta(self) -> dict:
        p = self.params
        return {"n": p.n, "f": p.f, "kappa": p.kappa, "batch_size": p.batch_size,
                "K": p.K, "seed": p.seed, "epochs": self.epochs,
                "scheduler": self.scheduler, "scheduler_params": dict(self.scheduler_params),
                "byzantine": {str(pid): b.kind for pid, b in sorted(self.byzantine.items())},
                "crash_steps": {str(pid): b.crash_at_step for pid, b in sorted(self.byzantine.items())
                                if b.kind == "crash"},
                "max_steps": self.resolved_max_steps(),
                "payload_bytes": self.payload_bytes, "steps": self.steps}


def make_byzantine_map(profile: str, params: ProtocolParams,
                       crash_at_step: int | None = None) -> dict[int, ByzBehavior]:
    """Adversary profiles used by the CLI and sweeps: the last f parties follow
    the named behavior."""
    if profile in ("none", ""):
        return {}
    if profile not in ByzBehavior.KNOWN:
        raise ConfigInvalid(f"unknown adversary profile {profile!r}")
    crash_at = crash_at_step if crash_at_step is not None else 25 * params.n
    return {pid: ByzBehavior(profile, crash_at_step=crash_at if profile == "crash" else 0)
            for pid in range(params.n - params.f, params.n)}


# -- trace ----------------------------------------------------------------------------

EVENT_KINDS = ("send", "deliver", "drop", "decide", "deliver_block", "dec_share_release")


@dataclass
class TraceEvent:
    idx: int
    step: int
    kind: str
    party: int
    digest: str
    size: int
    info: dict

    def to_dict(self) -> dict:
        return {"idx": self.idx, "step": self.step, "kind": self.kind,
                "party": self.party, "digest": self.digest, "bytes": self.size,
                "info": self.info}


@dataclass
class Trace:
    meta: dict
    events: list[TraceEvent] = field(default_factory=list)

    def to_jsonl(self) -> str:
        lines = [json.dumps({"type": "meta", **self.meta}, sort_keys=True, separators=(",", ":"))]
        for ev in self.events:
            lines.append(json.dumps({"type": "event", **ev.to_dict()},
                                    sort_keys=True, separators=(",", ":")))
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_jsonl().encode()).hexdigest()

    @classmethod
    def from_jsonl(cls, text: str) -> "Trace":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise ValueError("empty trace")
        meta = json.loads(lines[0])
        if meta.pop("type", None) != "meta":
            raise ValueError("trace must start with a meta line")
        trace = cls(meta=meta)
        for ln in lines[1:]:
            rec = json.loads(ln)
            if rec.get("type") != "event":
                raise ValueError("unexpected record type")
            trace.events.append(TraceEvent(rec["idx"], rec["step"], rec["kind"],
                                           rec["party"], rec["digest"], rec["bytes"],
                                           rec["info"]))
        return trace

    def honest_parties(self) -> set[int]:
        byz = set(int(p) for p in self.meta.get("byzantine", {}))
        return set(range(self.meta["n"])) - byz

    def blocks_by_party(self) -> dict[int, list[dict]]:
        out: dict[int, list[dict]] = {}
        for ev in self.events:
            if ev.kind == "deliver_block":
                out.setdefault(ev.party, []).append(ev.info)
        return out


# -- schedulers ------------------------------------------------------------------------

@dataclass
class Pending:
    seq: int
    send_step: int
    src: int
    dest: int
    msg: Message


class FairScheduler:
    """Uniform choice over the pending pool."""

    def pick(self, pending: list[Pending], rng: random.Random, now: int) -> int:
        return rng.randrange(len(pending))


class TargetedDelayScheduler:
    """Starve one (destination, kind) stream up to a bounded age, then force
    the oldest overdue message through. Never drops anything."""

    def __init__(self, party: int, kinds, age_bound: int):
        self.party = party
        self.kinds = frozenset(kinds)
        self.age_bound = age_bound

    def _oldest(self, pending, indices) -> int:
        return min(indices, key=lambda i: (pending[i].send_step, pending[i].seq))

    def pick(self, pending: list[Pending], rng: random.Random, now: int) -> int:
        overdue = [i for i, p in enumerate(pending) if now - p.send_step >= self.age_bound]
        if overdue:
            return self._oldest(pending, overdue)
        candidates = [i for i, p in enumerate(pending)
                      if not (p.dest == self.party and p.msg.kind in self.kinds)]
        if not candidates:
            return self._oldest(pending, range(len(pending)))
        return candidates[rng.randrange(len(candidates))]


class LifoScheduler:
    """Newest-first delivery; the age bound keeps old messages from starving."""

    def __init__(self, age_bound: int):
        self.age_bound = age_bound

    def pick(self, pending: list[Pending], rng: random.Random, now: int) -> int:
        overdue = [i for i, p in enumerate(pending) if now - p.send_step >= self.age_bound]
        if overdue:
            return min(overdue, key=lambda i: (pending[i].send_step, pending[i].seq))
        return max(range(len(pending)), key=lambda i: pending[i].seq)


def make_scheduler(name: str, sched_params: dict, params: ProtocolParams):
    if name == "fair":
        return FairScheduler()
    if name == "targeted":
        kinds = sched_params.get("kinds", ("PROPOSE",))
        return TargetedDelayScheduler(
            party=sched_params.get("party", 0),
            kinds=frozenset(MessageKind[k] for k in kinds),
            age_bound=sched_params.get("age_bound", max(48, 6 * params.n)))
    if name == "lifo":
        return LifoScheduler(age_bound=sched_params.get("age_bound", max(48, 6 * params.n)))
    raise ConfigInvalid(f"unknown scheduler {name!r}")


# -- byzantine behaviors -----------------------------------------------------------------

class ByzantineActor:
    """Rewrites one party's outgoing traffic according to its behavior."""

    def __init__(self, behavior: ByzBehavior, pid: int, params: ProtocolParams,
                 provider: CryptoProvider, seed: int):
        self.behavior = behavior
        self.pid = pid
        self.params = params
        self.provider = provider
        self.rng = random.Random((seed << 8) ^ pid ^ 0xB1ZA)
        self._alt_ct: dict[tuple, bytes] = {}

    def _alt_ciphertext(self, epoch: int, length: int) -> bytes:
        key = (epoch, length)
        if key not in self._alt_ct:
            alt_pt = stretch_digest(b"equiv|%d|%d" % (epoch, self.pid), length - self.params.K)
            self._alt_ct[key] = self.provider.encrypt(epoch, self.pid, alt_pt).ct_bytes
        return self._alt_ct[key]

    def transform(self, outgoing: list[tuple[int, Message]], step: int) -> list[tuple[int, Message]]:
        kind = self.behavior.kind
        if kind == "crash":
            return [] if step >= self.behavior.crash_at_step else outgoing
        if kind == "mute":
            return []
        if kind == "withhold":
            return [(d, m) for d, m in outgoing if m.kind != MessageKind.PROPOSE]
        if kind == "garbage":
            return [(d, Message(m.kind, m.epoch, m.sender, m.tag_a, m.tag_b,
                                self.rng.randbytes(len(m.body)))) for d, m in outgoing]
        if kind == "equivocate":
            out = []
            half = self.params.n // 2
            for d, m in outgoing:
                if d >= half and m.kind == MessageKind.PPB_SEND:
                    value, carried = parse_send_body(m.body, self.params.K, m.epoch,
                                                     m.tag_a, m.tag_b)
                    alt = self._alt_ciphertext(m.epoch, len(value))
                    m = Message(m.kind, m.epoch, m.sender, m.tag_a, m.tag_b,
                                pack_send_body(alt, self.params.K, carried))
                elif d >= half and m.kind == MessageKind.PROPOSE:
                    K = self.params.K
                    alt = self._alt_ciphertext(m.epoch, len(m.body) - K)
                    m = Message(m.kind, m.epoch, m.sender, m.tag_a, m.tag_b,
                                alt + m.body[-K:])
                out.append((d, m))
            return out
        raise ConfigInvalid(f"unknown behavior {kind!r}")


def apply_byzantine(behavior: ByzBehavior, pid: int, params: ProtocolParams,
                    provider: CryptoProvider, seed: int,
                    outgoing: list[tuple[int, Message]], step: int = 0):
    """One-shot functional form of the outgoing-traffic rewrite."""
    return ByzantineActor(behavior, pid, params, provider, seed).transform(outgoing, step)


# -- workload ---------------------------------------------------------------------------

def workload_request(pid: int, epoch: int, payload_bytes: int, seed: int) -> Request:
    tag = b"p%03de%03d" % (pid, epoch)
    tag = tag[:WORKLOAD_TAG_LEN].ljust(WORKLOAD_TAG_LEN, b"_")
    payload_len = payload_bytes - BATCH_HEADER - REQUEST_OVERHEAD - WORKLOAD_TAG_LEN
    payload = stretch_digest(b"wl|" + tag + seed.to_bytes(8, "little"), payload_len)
    return Request(client_tag=tag, payload=payload)


# -- the simulator ------------------------------------------------------------------------

def run_simulation(config: SimConfig) -> Trace:
    """Execute one full run; deterministic in the config. Raises LivenessTimeout
    (with the partial trace attached) if the step cap is hit or the pool drains
    while an honest party still has undelivered epochs."""
    try:
        config.validate()
    except ConfigInvalid:
        raise
    params = config.params
    provider = CryptoProvider.from_params(params)
    parties = [Party(p, params, provider, steps=config.steps) for p in range(params.n)]
    actors = {pid: ByzantineActor(b, pid, params, provider, params.seed)
              for pid, b in config.byzantine.items()}
    scheduler = make_scheduler(config.scheduler, config.scheduler_params, params)
    rng = random.Random(params.seed)
    trace = Trace(meta=config.meta())
    pending: list[Pending] = []
    seq = 0
    step = 0
    max_steps = config.resolved_max_steps()
    honest = config.honest()

    def crashed(pid: int, at_step: int) -> bool:
        b = config.byzantine.get(pid)
        return b is not None and b.kind == "crash" and at_step >= b.crash_at_step

    def log(kind: str, party: int, digest: str = "", size: int = 0,
            info: dict | None = None) -> TraceEvent:
        ev = TraceEvent(len(trace.events), step, kind, party, digest, size, info or {})
        trace.events.append(ev)
        return ev

    def emit(src: int, outgoing, at_step: int) -> None:
        nonlocal seq
        if crashed(src, at_step):
            return
        actor = actors.get(src)
        if actor is not None:
            outgoing = actor.transform(outgoing, at_step)
        for dest, msg in outgoing:
            log("send", src, msg.digest(), msg.size,
                {"dest": dest, "kind": msg.kind.name, "epoch": msg.epoch, "seq": seq})
            pending.append(Pending(seq, at_step, src, dest, msg))
            seq += 1

    def route_effects(party: int, effects, deliver_info: dict | None) -> None:
        for e in effects:
            t = e["type"]
            if t in ("decide", "deliver_block", "dec_share_release", "drop"):
                log(t, party, info=e)
            elif deliver_info is not None:
                deliver_info["effects"].append(e)

    def start_epoch(pid: int, epoch: int, at_step: int, deliver_info: dict | None) -> None:
        parties[pid].enqueue_requests(
            [workload_request(pid, epoch, config.payload_bytes, params.seed)]
            if config.payload_bytes else [])
        out, effects = parties[pid].start_epoch(epoch)
        route_effects(pid, effects, deliver_info)
        emit(pid, out, at_step)

    def deliver_one() -> None:
        i = scheduler.pick(pending, rng, step)
        pm = pending.pop(i)
        if crashed(pm.dest, step):
            log("deliver", pm.dest, pm.msg.digest(), pm.msg.size,
                {"from": pm.src, "kind": pm.msg.kind.name, "epoch": pm.msg.epoch,
                 "seq": pm.seq, "crashed": True, "effects": []})
            return
        info = {"from": pm.src, "kind": pm.msg.kind.name, "epoch": pm.msg.epoch,
                "seq": pm.seq, "effects": []}
        log("deliver", pm.dest, pm.msg.digest(), pm.msg.size, info)
        out, effects = parties[pm.dest].handle(pm.msg)
        route_effects(pm.dest, effects, info)
        emit(pm.dest, out, step)
        for e in effects:
            if e["type"] == "deliver_block" and e["epoch"] + 1 < config.epochs:
                if not crashed(pm.dest, step):
                    start_epoch(pm.dest, e["epoch"] + 1, step, info)

    for p in range(params.n):
        if not crashed(p, 0):
            start_epoch(p, 0, 0, None)

    def all_done() -> bool:
        return all(len(parties[p].blocks) >= config.epochs for p in honest)

    while not all_done():
        if not pending:
            raise LivenessTimeout("no pending messages but epochs undelivered", trace)
        step += 1
        if step > max_steps:
            raise LivenessTimeout(f"step cap {max_steps} reached", trace)
        deliver_one()

    # Drain so every sent message has a delivery on the trace. Handlers may
    # still emit (late first receipts), but the protocol quiesces: each party
    # suggests, echoes, and responds at most once per item.
    drain_guard = 20 * max_steps
    while pending:
        step += 1
        if step > drain_guard:
            raise LivenessTimeout("drain did not quiesce", trace)
        deliver_one()

    return trace
