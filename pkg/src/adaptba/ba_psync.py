"""Adaptive partially synchronous Byzantine Agreement.

Views of ``9 * delta`` with a round-robin leader.  In each view the leader
runs four request/response phases (suggestion, key, lock, commit), each
closed by ``n - t`` answers, and then broadcasts the resulting commit proof.
Parties answer at most four messages per view and stay silent when no
leader asks, which is what makes the honest word count ``O(n + n*f)`` after
GST.

The pure decision rules (``leader_select_proposal``, ``party_check_key``,
...) are module-level functions over :class:`PartyState`;
:class:`BaPsyncNode` wires them to the simulator.
"""

from __future__ import annotations

import random
from collections import Counter
from dataclasses import dataclass, field

from .core import BinValue, NodeId, leader_of
from .crypto import (PartialSig, SchemeId, ThresholdSig, digest, statement, tcombine,
                     threshold_scheme, tverify)
from .simnet import Node

VIEW_MULTIPLE = 9
CLOCK = "ba"

REQ_SUGG = "REQ_SUGG"
SUGGEST = "SUGGEST"
PROP_KEY = "PROP_KEY"
CHK_KEY = "CHK_KEY"
PROP_LOCK = "PROP_LOCK"
CHK_LOCK = "CHK_LOCK"
PROP_COMMIT = "PROP_COMMIT"
CHK_COMMIT = "CHK_COMMIT"
SEND_COMMIT = "SEND_COMMIT"
TAGS = (REQ_SUGG, SUGGEST, PROP_KEY, CHK_KEY, PROP_LOCK, CHK_LOCK, PROP_COMMIT, CHK_COMMIT, SEND_COMMIT)


class MalformedSuggestion(ValueError):
    pass


class InvalidJustification(ValueError):
    pass


# --- proofs ----------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class KeyProof:
    value: BinValue
    view: int
    sig: ThresholdSig


@dataclass(frozen=True, slots=True)
class LockProof:
    value: BinValue
    view: int
    sig: ThresholdSig


@dataclass(frozen=True, slots=True)
class CommitProof:
    value: BinValue
    view: int
    sig: ThresholdSig


@dataclass(frozen=True, slots=True)
class Suggestion:
    kind: str  # COMMIT | KEY | INPUT
    commit: CommitProof | None = None
    key: KeyProof | None = None
    value: BinValue | None = None
    partial: PartialSig | None = None


@dataclass(frozen=True, slots=True)
class Proposal:
    value: BinValue
    kind: str  # KEY | COMBINE
    key: KeyProof | None = None
    combined: ThresholdSig | None = None
    view: int | None = None


@dataclass(frozen=True, slots=True)
class PhaseProposal:
    """Payload of ProposeLock / ProposeCommit."""

    value: BinValue
    proof: ThresholdSig


@dataclass(frozen=True, slots=True)
class SendCommit:
    proof: CommitProof


def key_stmt(value, view):
    return statement("KEY", value, view)


def lock_stmt(value, view):
    return statement("LOCK", value, view)


def commit_stmt(value, view):
    return statement("COMMIT", value, view)


def input_stmt(value):
    return statement("INPUT", value)


@dataclass(frozen=True)
class BaSetup:
    """Trusted setup of one agreement instance among ``members``."""

    members: tuple[NodeId, ...]
    t: int
    global_scheme: SchemeId
    suggest_scheme: SchemeId
    clock: str = CLOCK

    @classmethod
    def create(cls, members, t: int, label: str = "BA", clock: str = CLOCK) -> "BaSetup":
        members = tuple(sorted(members))
        m = len(members)
        if 3 * t >= m:
            raise ValueError(f"agreement needs t < m/3 (m={m}, t={t})")
        return cls(members, t,
                   threshold_scheme(f"{label}/GLOBAL", members, m - t),
                   threshold_scheme(f"{label}/SUGGEST", members, t + 1),
                   clock)

    @property
    def size(self) -> int:
        return len(self.members)

    @property
    def quorum(self) -> int:
        return self.size - self.t

    def leader(self, view: int) -> NodeId:
        return self.members[leader_of(view, self.size)]

    # validity checks
    def valid_key(self, kp) -> bool:
        return (isinstance(kp, KeyProof) and kp.value in (0, 1)
                and tverify(self.global_scheme, key_stmt(kp.value, kp.view), kp.sig))

    def valid_commit(self, cp) -> bool:
        return (isinstance(cp, CommitProof) and cp.value in (0, 1)
                and tverify(self.global_scheme, commit_stmt(cp.value, cp.view), cp.sig))

    def valid_suggestion(self, s, sender: NodeId) -> bool:
        if not isinstance(s, Suggestion):
            return False
        if s.kind == "COMMIT":
            return self.valid_commit(s.commit)
        if s.kind == "KEY":
            return self.valid_key(s.key)
        if s.kind == "INPUT":
            p = s.partial
            return (s.value in (0, 1) and isinstance(p, PartialSig) and p.scheme == self.suggest_scheme
                    and p.signer == sender and p.digest == digest(input_stmt(s.value)))
        return False

    def valid_proposal(self, p) -> bool:
        if not isinstance(p, Proposal) or p.value not in (0, 1):
            return False
        if p.kind == "KEY":
            return self.valid_key(p.key) and p.key.value == p.value
        if p.kind == "COMBINE":
            return tverify(self.suggest_scheme, input_stmt(p.value), p.combined)
        return False

    def valid_partial(self, ps, sender: NodeId, stmt: bytes) -> bool:
        return (isinstance(ps, PartialSig) and ps.scheme == self.global_scheme
                and ps.signer == sender and ps.digest == digest(stmt))


# --- party state and rules -------------------------------------------------

@dataclass
class PartyState:
    v_in: BinValue
    key: KeyProof | None = None
    lock: LockProof | None = None
    commit: CommitProof | None = None
    decided: BinValue | None = None
    sent_commit_to: set = field(default_factory=set)
    view: int = -1
    phase: str = "REQ"  # REQ -> KEY -> LOCK -> COMMIT -> DONE, or IDLE


def leader_select_proposal(setup: BaSetup, suggestions, view: int):
    """Pick what the leader proposes from ``(sender, Suggestion)`` pairs.

    Returns the ``CommitProof`` if any party reported one, a key-justified
    ``Proposal`` for the highest-view key otherwise, and failing both the
    majority input (ties go to 0) backed by ``t+1`` combined partials.
    Invalid suggestions are dropped before counting.
    """
    valid = [(s, sug) for s, sug in suggestions if setup.valid_suggestion(sug, s)]
    if len(valid) < setup.quorum:
        raise MalformedSuggestion(f"only {len(valid)} valid suggestions, need {setup.quorum}")
    for _, sug in valid:
        if sug.kind == "COMMIT":
            return sug.commit
    best = None
    for _, sug in valid:
        if sug.kind == "KEY" and (best is None or sug.key.view > best.view):
            best = sug.key
    if best is not None:
        return Proposal(best.value, "KEY", key=best)
    counts = Counter(sug.value for _, sug in valid)
    value = 1 if counts[1] > counts[0] else 0
    partials = [sug.partial for _, sug in valid if sug.value == value][: setup.t + 1]
    combined = tcombine(setup.suggest_scheme, input_stmt(value), partials)
    return Proposal(value, "COMBINE", combined=combined, view=view)


def party_check_key(state: PartyState, p: Proposal) -> bool:
    """Accept unless locked and the proposal is a combine, or carries a key
    older than the lock."""
    if p.kind not in ("KEY", "COMBINE"):
        raise InvalidJustification(p.kind)
    if state.lock is None:
        return True
    return p.kind == "KEY" and p.key.view >= state.lock.view


def party_on_request_suggestion(setup: BaSetup, state: PartyState, keys, leader: NodeId):
    """Answer a leader's request; ``None`` means stay silent."""
    if state.commit is not None:
        if leader in state.sent_commit_to:
            return None
        state.sent_commit_to.add(leader)
        return Suggestion("COMMIT", commit=state.commit)
    if state.key is not None:
        return Suggestion("KEY", key=state.key)
    return Suggestion("INPUT", value=state.v_in, partial=keys.tsign(setup.suggest_scheme, input_stmt(state.v_in)))


def party_on_propose_lock(setup: BaSetup, state: PartyState, keys, value, key_proof):
    if not tverify(setup.global_scheme, key_stmt(value, state.view), key_proof):
        return None
    state.key = KeyProof(value, state.view, key_proof)
    return keys.tsign(setup.global_scheme, lock_stmt(value, state.view))


def party_on_propose_commit(setup: BaSetup, state: PartyState, keys, value, lock_proof):
    if not tverify(setup.global_scheme, lock_stmt(value, state.view), lock_proof):
        return None
    state.lock = LockProof(value, state.view, lock_proof)
    return keys.tsign(setup.global_scheme, commit_stmt(value, state.view))


def party_on_send_commit(setup: BaSetup, state: PartyState, proof) -> bool:
    """Adopt a valid commit proof from any view.  True if this decides."""
    if state.commit is not None or not setup.valid_commit(proof):
        return False
    state.commit = proof
    state.decided = proof.value
    return True


@dataclass
class LeaderRun:
    view: int
    phase: str = "SUGG"  # SUGG -> KEY -> LOCK -> COMMIT -> DONE
    suggestions: dict = field(default_factory=dict)
    value: BinValue | None = None
    partials: dict = field(default_factory=dict)


# --- node ------------------------------------------------------------------

class BaPsyncNode(Node):
    """One honest participant; runs the party protocol every view and the
    leader protocol in views it leads while it holds no commit."""

    def __init__(self, setup: BaSetup, me: NodeId, v_in: BinValue):
        self.setup = setup
        self.me = me
        self.state = PartyState(v_in)
        self.buffer: dict[str, object] = {}
        self.lead: LeaderRun | None = None
        self.key_views: list[int] = []
        self.lock_views: list[int] = []

    # clock
    def on_view(self, ctx, clock, view):
        if clock != self.setup.clock:
            return
        st = self.state
        st.view = view
        st.phase = "REQ"
        self.buffer = {}
        self.lead = None
        if self.setup.leader(view) == self.me and st.commit is None:
            self.start_leading(ctx, view)

    def start_leading(self, ctx, view):
        self.lead = LeaderRun(view)
        ctx.broadcast(REQ_SUGG, None, view, self.setup.members)

    # dispatch
    def on_message(self, ctx, msg):
        tag = msg.tag
        if tag == SEND_COMMIT:
            self._adopt_commit(ctx, msg.payload.proof if isinstance(msg.payload, SendCommit) else None)
            return
        if tag == SUGGEST:
            self._on_suggest(ctx, msg)
            return
        if msg.view != self.state.view or msg.sender not in self.setup.members:
            return
        if tag in (CHK_KEY, CHK_LOCK, CHK_COMMIT):
            self._on_check(ctx, msg)
        elif tag in (REQ_SUGG, PROP_KEY, PROP_LOCK, PROP_COMMIT):
            self._on_leader_msg(ctx, msg)

    def _adopt_commit(self, ctx, proof):
        if party_on_send_commit(self.setup, self.state, proof):
            ctx.decide(proof.value, view=self.state.view, commit=proof)

    # party side
    def _on_leader_msg(self, ctx, msg):
        st = self.state
        if msg.sender != self.setup.leader(st.view):
            return
        slot = {REQ_SUGG: "REQ", PROP_KEY: "KEY", PROP_LOCK: "LOCK", PROP_COMMIT: "COMMIT"}[msg.tag]
        if slot in self.buffer:
            return
        p = msg.payload
        if slot == "KEY":
            if not self.setup.valid_proposal(p):
                return
        elif slot == "LOCK":
            if not (isinstance(p, PhaseProposal) and
                    tverify(self.setup.global_scheme, key_stmt(p.value, st.view), p.proof)):
                return
        elif slot == "COMMIT":
            if not (isinstance(p, PhaseProposal) and
                    tverify(self.setup.global_scheme, lock_stmt(p.value, st.view), p.proof)):
                return
        self.buffer[slot] = p
        self._advance(ctx)

    def _advance(self, ctx):
        st = self.state
        setup = self.setup
        leader = setup.leader(st.view)
        view = st.view
        while True:
            phase = st.phase
            if phase == "REQ" and "REQ" in self.buffer:
                had_commit = st.commit is not None
                sug = party_on_request_suggestion(setup, st, ctx.keys, leader)
                if sug is not None:
                    ctx.send(leader, SUGGEST, sug, view)
                st.phase = "IDLE" if had_commit else "KEY"
            elif phase == "KEY" and "KEY" in self.buffer:
                prop = self.buffer["KEY"]
                if party_check_key(st, prop):
                    ctx.send(leader, CHK_KEY, ctx.keys.tsign(setup.global_scheme, key_stmt(prop.value, view)), view)
                    st.phase = "LOCK"
                else:
                    st.phase = "IDLE"
            elif phase == "LOCK" and "LOCK" in self.buffer:
                p = self.buffer["LOCK"]
                ps = party_on_propose_lock(setup, st, ctx.keys, p.value, p.proof)
                self.key_views.append(view)
                ctx.send(leader, CHK_LOCK, ps, view)
                st.phase = "COMMIT"
            elif phase == "COMMIT" and "COMMIT" in self.buffer:
                p = self.buffer["COMMIT"]
                ps = party_on_propose_commit(setup, st, ctx.keys, p.value, p.proof)
                self.lock_views.append(view)
                ctx.send(leader, CHK_COMMIT, ps, view)
                st.phase = "DONE"
            else:
                return

    # leader side
    def _on_suggest(self, ctx, msg):
        sug = msg.payload
        if msg.sender not in self.setup.members or not self.setup.valid_suggestion(sug, msg.sender):
            return
        if sug.kind == "COMMIT":
            # a valid commit proof is decisive whenever it arrives
            self._adopt_commit(ctx, sug.commit)
            run = self.lead
            if run is not None and run.phase != "DONE" and msg.view == run.view == self.state.view:
                run.phase = "DONE"
                ctx.broadcast(SEND_COMMIT, SendCommit(sug.commit), run.view, self.setup.members)
            return
        run = self.lead
        if run is None or run.phase != "SUGG" or msg.view != run.view or msg.view != self.state.view:
            return
        if msg.sender in run.suggestions:
            return
        run.suggestions[msg.sender] = sug
        if len(run.suggestions) >= self.setup.quorum:
            choice = leader_select_proposal(self.setup, list(run.suggestions.items()), run.view)
            if isinstance(choice, CommitProof):
                run.phase = "DONE"
                ctx.broadcast(SEND_COMMIT, SendCommit(choice), run.view, self.setup.members)
                return
            run.value = choice.value
            run.phase = "KEY"
            ctx.broadcast(PROP_KEY, choice, run.view, self.setup.members)

    def _on_check(self, ctx, msg):
        run = self.lead
        if run is None or msg.view != run.view:
            return
        expected = {CHK_KEY: "KEY", CHK_LOCK: "LOCK", CHK_COMMIT: "COMMIT"}[msg.tag]
        if run.phase != expected:
            return
        stmt = {"KEY": key_stmt, "LOCK": lock_stmt, "COMMIT": commit_stmt}[expected](run.value, run.view)
        if not self.setup.valid_partial(msg.payload, msg.sender, stmt):
            return
        run.partials[msg.sender] = msg.payload
        if len(run.partials) < self.setup.quorum:
            return
        proof = tcombine(self.setup.global_scheme, stmt, run.partials.values())
        run.partials = {}
        if expected == "KEY":
            run.phase = "LOCK"
            ctx.broadcast(PROP_LOCK, PhaseProposal(run.value, proof), run.view, self.setup.members)
        elif expected == "LOCK":
            run.phase = "COMMIT"
            ctx.broadcast(PROP_COMMIT, PhaseProposal(run.value, proof), run.view, self.setup.members)
        else:
            run.phase = "DONE"
            ctx.broadcast(SEND_COMMIT, SendCommit(CommitProof(run.value, run.view, proof)),
                          run.view, self.setup.members)


# --- byzantine behaviours --------------------------------------------------

class SilentLeaderNode(BaPsyncNode):
    """Behaves as an honest party but never does anything as leader."""

    def start_leading(self, ctx, view):
        self.lead = None


class EquivocatorNode(BaPsyncNode):
    """Coalition member that signs anything it is asked to and, as leader,
    proposes both values to different halves of the parties, pushes whatever
    reaches ``n - t`` signatures (topped up with coalition shares) and hands
    commits to a random subset.  It leads in every view, decided or not.

    With ``withhold=True`` it instead drags every honest party through all
    four phases and never releases the commit, maximising honest words.
    """

    def __init__(self, setup: BaSetup, me: NodeId, v_in: BinValue, coalition, rng: random.Random,
                 withhold: bool = False):
        super().__init__(setup, me, v_in)
        self.coalition = coalition
        self.rng = rng
        self.withhold = withhold
        self.runs: dict = {}

    def _coalition_sign(self, scheme, stmt):
        return {i: kr.tsign(scheme, stmt) for i, kr in self.coalition.keyrings.items()
                if i in self.setup.members}

    def _honest_members(self):
        return [m for m in self.setup.members if m not in self.coalition.keyrings]

    def on_view(self, ctx, clock, view):
        if clock != self.setup.clock:
            return
        self.state.view = view
        self.runs = {}
        if self.setup.leader(view) == self.me:
            self.runs = {"view": view, "sugg": {}, "phase": "SUGG", "acks": {0: {}, 1: {}}}
            ctx.broadcast(REQ_SUGG, None, view, self._honest_members())

    def on_message(self, ctx, msg):
        p = msg.payload
        view = self.state.view
        if msg.view != view and msg.tag != SEND_COMMIT:
            return
        if msg.tag == REQ_SUGG and msg.sender == self.setup.leader(view):
            v = self.rng.randint(0, 1)
            sug = Suggestion("INPUT", value=v, partial=ctx.keys.tsign(self.setup.suggest_scheme, input_stmt(v)))
            ctx.send(msg.sender, SUGGEST, sug, view)
        elif msg.tag == PROP_KEY and msg.sender == self.setup.leader(view) and self.setup.valid_proposal(p):
            ctx.send(msg.sender, CHK_KEY, ctx.keys.tsign(self.setup.global_scheme, key_stmt(p.value, view)), view)
        elif msg.tag == PROP_LOCK and isinstance(p, PhaseProposal) and msg.sender == self.setup.leader(view):
            ctx.send(msg.sender, CHK_LOCK, ctx.keys.tsign(self.setup.global_scheme, lock_stmt(p.value, view)), view)
        elif msg.tag == PROP_COMMIT and isinstance(p, PhaseProposal) and msg.sender == self.setup.leader(view):
            ctx.send(msg.sender, CHK_COMMIT, ctx.keys.tsign(self.setup.global_scheme, commit_stmt(p.value, view)), view)
        elif self.runs and msg.view == self.runs["view"]:
            self._lead(ctx, msg)

    def _lead(self, ctx, msg):
        run = self.runs
        setup = self.setup
        view = run["view"]
        honest = self._honest_members()
        coal = [m for m in setup.members if m in self.coalition.keyrings]
        if msg.tag == SUGGEST and run["phase"] == "SUGG":
            if not setup.valid_suggestion(msg.payload, msg.sender):
                return
            run["sugg"][msg.sender] = msg.payload
            if len(run["sugg"]) + len(coal) < setup.quorum:
                return
            run["phase"] = "KEY"
            commits = [s.commit for s in run["sugg"].values() if s.kind == "COMMIT"]
            if commits:
                if self.withhold:
                    return
                targets = self.rng.sample(honest, self.rng.randint(0, len(honest)))
                ctx.broadcast(SEND_COMMIT, SendCommit(commits[0]), view, targets)
                return
            props = {}
            keys = [s.key for s in run["sugg"].values() if s.kind == "KEY"]
            if keys:
                best = max(keys, key=lambda k: k.view)
                props[best.value] = Proposal(best.value, "KEY", key=best)
            for v in (0, 1):
                if v in props:
                    continue
                partials = [s.partial for s in run["sugg"].values() if s.kind == "INPUT" and s.value == v]
                partials += list(self._coalition_sign(setup.suggest_scheme, input_stmt(v)).values())
                if len(partials) >= setup.t + 1:
                    props[v] = Proposal(v, "COMBINE",
                                        combined=tcombine(setup.suggest_scheme, input_stmt(v), partials), view=view)
            order = honest[:]
            self.rng.shuffle(order)
            vals = sorted(props)
            if not vals:
                return
            for i, dst in enumerate(order):
                ctx.send(dst, PROP_KEY, props[vals[i % len(vals)]], view)
        elif msg.tag in (CHK_KEY, CHK_LOCK, CHK_COMMIT):
            phase = {CHK_KEY: "KEY", CHK_LOCK: "LOCK", CHK_COMMIT: "COMMIT"}[msg.tag]
            ps = msg.payload
            if not isinstance(ps, PartialSig) or ps.scheme != setup.global_scheme or ps.signer != msg.sender:
                return
            mk = {"KEY": key_stmt, "LOCK": lock_stmt, "COMMIT": commit_stmt}[phase]
            for v in (0, 1):
                stmt = mk(v, view)
                if ps.digest != digest(stmt):
                    continue
                bucket = run["acks"].setdefault((phase, v), {})
                bucket[msg.sender] = ps
                if run.get(("done", phase, v)):
                    return
                shares = dict(bucket)
                shares.update(self._coalition_sign(setup.global_scheme, stmt))
                if len(shares) < setup.quorum:
                    return
                run[("done", phase, v)] = True
                proof = tcombine(setup.global_scheme, stmt, shares.values())
                if self.withhold:
                    if phase == "COMMIT":
                        return
                    targets = honest
                else:
                    k = self.rng.randint(setup.quorum - len(coal), len(honest)) if phase != "COMMIT" else \
                        self.rng.randint(0, len(honest))
                    targets = self.rng.sample(honest, max(0, min(k, len(honest))))
                if phase == "KEY":
                    ctx.broadcast(PROP_LOCK, PhaseProposal(v, proof), view, targets)
                elif phase == "LOCK":
                    ctx.broadcast(PROP_COMMIT, PhaseProposal(v, proof), view, targets)
                else:
                    ctx.broadcast(SEND_COMMIT, SendCommit(CommitProof(v, view, proof)), view, targets)
