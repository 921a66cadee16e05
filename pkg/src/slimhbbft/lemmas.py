"""Trace property checkers: proposal-spread counting, censorship ordering,
and the agreement / validity / totality obligations of the common-subset
output. Every failed flag carries the index of a counterexample event."""

from __future__ import annotations

from dataclasses import dataclass, field

from .sim import Trace


class TraceMalformed(Exception):
    pass


@dataclass
class LemmaReport:
    lemma1_holds: bool = True          # some proposal at >= 2 parties once every honest party holds one
    lemma2_holds: bool = True          # some proposal at >= 2f+1 parties at the n-f suggester instant
    censorship_ordering_holds: bool = True
    agreement_holds: bool = True
    totality_holds: bool = True
    validity_holds: bool = True
    aba_agreement_holds: bool = True
    aba_validity_holds: bool = True
    counterexamples: dict[str, int] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def all_ok(self) -> bool:
        return (self.lemma1_holds and self.lemma2_holds and self.censorship_ordering_holds
                and self.agreement_holds and self.totality_holds and self.validity_holds
                and self.aba_agreement_holds and self.aba_validity_holds)

    def _fail(self, flag: str, idx: int) -> None:
        setattr(self, flag, False)
        self.counterexamples.setdefault(flag, idx)


class _EpochView:
    def __init__(self):
        self.holds: list[tuple[int, int, int]] = []        # (idx, party, j)
        self.first_hold: dict[int, int] = {}               # party -> idx of first proposal
        self.suggester_hits: list[tuple[int, int, int]] = []  # (idx, party, count)
        self.decides: dict[int, list[tuple[int, int, int, int]]] = {}  # party -> [(idx, j, bit, round)]
        self.releases: dict[int, list[int]] = {}           # party -> [idx]
        self.blocks: dict[int, tuple[int, dict]] = {}      # party -> (idx, info)
        self.proposal_id: dict[int, set[tuple[int, str]]] = {}  # j -> {(proposer, digest)}
        self.promotions: dict[tuple[int, str], list[int]] = {}  # (proposer, digest) -> signers
        self.acks: set[tuple[int, int, int, str]] = set()  # (party, proposer, step, digest)
        self.inputs: list[tuple[int, int, int, str]] = []  # (party, j, bit, origin)


def _scan(trace: Trace) -> dict[int, _EpochView]:
    epochs: dict[int, _EpochView] = {}

    def view(e: int) -> _EpochView:
        if e not in epochs:
            epochs[e] = _EpochView()
        return epochs[e]

    sent_seqs: dict[int, int] = {}
    delivered_seqs: set[int] = set()

    for ev in trace.events:
        if ev.kind == "send":
            sent_seqs[ev.info["seq"]] = ev.idx
        elif ev.kind == "deliver":
            seq = ev.info["seq"]
            if seq not in sent_seqs or sent_seqs[seq] >= ev.idx:
                raise TraceMalformed(f"deliver without prior send at event {ev.idx}")
            if seq in delivered_seqs:
                raise TraceMalformed(f"message seq {seq} delivered twice at event {ev.idx}")
            delivered_seqs.add(seq)
            for eff in ev.info.get("effects", []):
                t = eff["type"]
                if t == "stored_proposal":
                    v = view(eff["epoch"])
                    v.holds.append((ev.idx, ev.party, eff["j"]))
                    v.first_hold.setdefault(ev.party, ev.idx)
                    v.proposal_id.setdefault(eff["j"], set()).add(
                        (eff["proposer"], eff["value_digest"]))
                elif t == "suggesters":
                    view(eff["epoch"]).suggester_hits.append((ev.idx, ev.party, eff["count"]))
                elif t == "ppb_ack":
                    view(eff["epoch"]).acks.add(
                        (ev.party, eff["proposer"], eff["step"], eff["value_digest"]))
                elif t == "promotion_complete":
                    view(eff["epoch"]).promotions[
                        (eff["proposer"], eff["value_digest"])] = eff["signers"]
                elif t == "aba_input":
                    view(eff["epoch"]).inputs.append(
                        (ev.party, eff["j"], eff["bit"], eff["origin"]))
        elif ev.kind == "decide":
            view(ev.info["epoch"]).decides.setdefault(ev.party, []).append(
                (ev.idx, ev.info["j"], ev.info["bit"], ev.info["round"]))
        elif ev.kind == "dec_share_release":
            view(ev.info["epoch"]).releases.setdefault(ev.party, []).append(ev.idx)
        elif ev.kind == "deliver_block":
            v = view(ev.info["epoch"])
            if ev.party not in v.blocks:
                v.blocks[ev.party] = (ev.idx, ev.info)
    return epochs


def _holders_at(v: _EpochView, idx: int) -> dict[int, set[int]]:
    holders: dict[int, set[int]] = {}
    for i, party, j in v.holds:
        if i <= idx:
            holders.setdefault(j, set()).add(party)
    return holders


def check_lemmas(trace: Trace) -> LemmaReport:
    """Evaluate every per-trace property. The report never raises on a
    violation; malformed traces (delivery without a send) do raise."""
    meta = trace.meta
    n, f, kappa = meta["n"], meta["f"], meta["kappa"]
    steps = meta.get("steps", 1)
    total_epochs = meta.get("epochs", 1)
    honest = trace.honest_parties()
    report = LemmaReport()
    views = _scan(trace)

    for e in sorted(views):
        v = views[e]

        # Proposal-spread check 1: once every honest party holds a proposal,
        # pigeonhole over kappa proposals puts one at two or more parties.
        if all(p in v.first_hold for p in honest):
            trigger = max(v.first_hold[p] for p in honest)
            holders = _holders_at(v, trigger)
            if not holders or max(len(s) for s in holders.values()) < 2:
                report._fail("lemma1_holds", trigger)
        else:
            report.notes.append(f"epoch {e}: not every honest party held a proposal")

        # Proposal-spread check 2: at the first honest n-f suggester quorum,
        # some proposal has reached 2f+1 parties.
        quorum_hits = [i for i, p, c in v.suggester_hits if p in honest and c >= n - f]
        if quorum_hits:
            trigger = min(quorum_hits)
            holders = _holders_at(v, trigger)
            if not holders or max(len(s) for s in holders.values()) < 2 * f + 1:
                report._fail("lemma2_holds", trigger)
        else:
            report.notes.append(f"epoch {e}: no honest party reached n-f suggesters")

        # Censorship ordering: decryption shares strictly after the final
        # binary-agreement decision of the releasing party.
        for party, idxs in v.releases.items():
            if party not in honest:
                continue
            decides = v.decides.get(party, [])
            if len(decides) < kappa:
                report._fail("censorship_ordering_holds", min(idxs))
                continue
            final_decide = max(i for i, _, _, _ in decides)
            if min(idxs) < final_decide:
                report._fail("censorship_ordering_holds", min(idxs))

        # Agreement: identical decided set and request list at every honest party.
        honest_blocks = [(idx, info) for p, (idx, info) in sorted(v.blocks.items())
                         if p in honest]
        if len(honest_blocks) >= 2:
            _, first = honest_blocks[0]
            for idx, info in honest_blocks[1:]:
                if (info["S"], info["q"], info["requests"]) != (first["S"], first["q"], first["requests"]):
                    report._fail("agreement_holds", idx)

        # Validity and the q bound.
        for p, (idx, info) in sorted(v.blocks.items()):
            if p not in honest:
                continue
            q = info["q"]
            if not 1 <= q <= kappa or q != len(info["S"]):
                report._fail("validity_holds", idx)
                continue
            for j in info["S"]:
                ids = v.proposal_id.get(j, set())
                if len(ids) != 1:
                    report._fail("validity_holds", idx)
                    continue
                proposer, vd = next(iter(ids))
                signers = v.promotions.get((proposer, vd))
                if signers is None or len(set(signers)) < 2 * f + 1:
                    report._fail("validity_holds", idx)
                    continue
                honest_signers = [s for s in set(signers) if s in honest]
                if len(honest_signers) < f + 1:
                    report._fail("validity_holds", idx)
                    continue
                if any((s, proposer, steps, vd) not in v.acks for s in honest_signers):
                    report._fail("validity_holds", idx)

        # Binary agreement: no conflicting honest decisions, and each decided
        # bit was input (or upgraded to) by some honest party.
        for j in range(kappa):
            bits = {}
            for party, decs in v.decides.items():
                if party not in honest:
                    continue
                for idx, jj, bit, _ in decs:
                    if jj == j:
                        bits[party] = (bit, idx)
            if len({b for b, _ in bits.values()}) > 1:
                report._fail("aba_agreement_holds", max(i for _, i in bits.values()))
            if bits:
                bit = next(iter(bits.values()))[0]
                if not any(party in honest and jj == j and b == bit
                           for party, jj, b, _ in v.inputs):
                    report._fail("aba_validity_holds", next(iter(bits.values()))[1])

    # Totality: every honest party delivered every epoch.
    for e in range(total_epochs):
        v = views.get(e)
        for p in sorted(honest):
            if v is None or p not in v.blocks:
                report._fail("totality_holds", len(trace.events) - 1 if trace.events else 0)
                break

    return report
