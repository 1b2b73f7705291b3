"""Quorum-to-All Broadcast.

A quorum whose honest members share a value ``v_in`` hands it to every
party.  All parties hold a predicate ``verify`` that accepts exactly
``v_in``, so deciding is just "receive something that verifies".

Asynchronous variant (three stages over a party/relayer expander):

1. each quorum node sends ``v_in`` to every relayer; a relayer that
   verifies it forwards it once to its committee;
2. each party acks every relayer it heard from with a share of that
   relayer's aggregate scheme; a relayer with acks from its whole
   committee sends the aggregate to the quorum;
3. a quorum node that has certificates covering ``n - 2t`` parties sends
   ``v_in`` directly to everyone else.

Partially synchronous variant: views of ``3 * delta``; an undecided leader
asks the quorum, forwards the first verified answer to all parties.  Quorum
nodes answer each requester at most once.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Any, Callable

from .core import BinValue, NodeId, leader_of
from .crypto import SchemeId, aggregate_scheme, digest, statement, tcombine, tverify
from .expander import (BipartiteGraph, build_graph, build_verified_graph, default_degree,
                       default_relayers, links, relayer_hosts, EXHAUSTIVE_LIMIT)
from .simnet import Node

QAB_VAL = "QAB_VAL"
QAB_ACK = "QAB_ACK"
QAB_CERT = "QAB_CERT"
QAB_DIRECT = "QAB_DIRECT"
QAB_REQ = "QAB_REQ"
QAB_REPLY = "QAB_REPLY"
QAB_BCAST = "QAB_BCAST"
ASYNC_TAGS = (QAB_VAL, QAB_ACK, QAB_CERT, QAB_DIRECT)
PSYNC_TAGS = (QAB_REQ, QAB_REPLY, QAB_BCAST)
TAGS = ASYNC_TAGS + PSYNC_TAGS

VIEW_MULTIPLE = 3
CLOCK = "qab"


class VerifyFailed(ValueError):
    pass


class NotInQuorum(RuntimeError):
    pass


def plain_value(v) -> BinValue:
    """Binary value carried by a QAB payload (plain int or certified value)."""
    return v if isinstance(v, int) else v.value


def sentinel_predicate(expected: BinValue) -> Callable[[Any], bool]:
    """Stand-alone predicate: accepts exactly ``expected``."""
    return lambda v: isinstance(v, int) and not isinstance(v, bool) and v == expected


def ack_stmt(value: BinValue) -> bytes:
    return statement("ACK", value)


@dataclass(frozen=True, slots=True)
class RelayVal:
    relayer: int
    value: Any
    to_party: bool


@dataclass(frozen=True, slots=True)
class Ack:
    relayer: int
    share: Any


@dataclass(frozen=True, slots=True)
class CommitteeCert:
    relayer: int
    sig: Any


@dataclass
class QuorumProgress:
    acknowledged: set = field(default_factory=set)
    certs: set = field(default_factory=set)
    fired: bool = False


@dataclass(frozen=True)
class QabSetup:
    n: int
    t: int
    quorum: tuple[NodeId, ...]
    verify: Callable[[Any], bool]
    graph: BipartiteGraph | None = None
    hosts: tuple[NodeId, ...] = ()
    committees: tuple[tuple[NodeId, ...], ...] = ()
    schemes: tuple[SchemeId, ...] = ()
    direct: bool = False  # relayer cap exceeded: quorum sends to everyone
    clock: str = CLOCK

    @property
    def n_relayers(self) -> int:
        return len(self.hosts)

    def relayers_of(self, node: NodeId) -> list[int]:
        return [r for r, h in enumerate(self.hosts) if h == node]

    @property
    def threshold(self) -> int:
        return self.n - 2 * self.t


def quorum_of(n: int, t: int, size: int | None = None) -> tuple[NodeId, ...]:
    """Lowest-indexed ``3t+1`` nodes (or ``size`` nodes)."""
    q = 3 * t + 1 if size is None else size
    if q > n or q <= t:
        raise ValueError(f"quorum of {q} impossible with n={n}, t={t}")
    return tuple(range(q))


def async_setup(n: int, t: int, verify, quorum=None, c: float = 2.0, seed: int = 0,
                D: int | None = None, R: int | None = None, relayer_cap: int = 1 << 16,
                graph: BipartiteGraph | None = None) -> QabSetup:
    quorum = tuple(quorum) if quorum is not None else quorum_of(n, t)
    if graph is None:
        D = default_degree(n, c) if D is None else D
        R = default_relayers(n, t, c) if R is None else R
        R = max(R, D)
        if R > relayer_cap:
            return QabSetup(n, t, quorum, verify, direct=True)
        if math.comb(n, 2 * t + 1) <= EXHAUSTIVE_LIMIT // 100:
            graph = build_verified_graph(n, t, c, seed, D, R)
        else:
            graph = build_graph(n, t, c, seed, D, R)
    hosts = relayer_hosts(graph.n_right, n)
    comm = tuple(tuple(sorted(s)) for s in links(graph, hosts))
    schemes = tuple(aggregate_scheme(cm, label=f"AGG/{r}") for r, cm in enumerate(comm))
    return QabSetup(n, t, quorum, verify, graph, hosts, comm, schemes)


def psync_setup(n: int, t: int, verify, quorum=None) -> QabSetup:
    quorum = tuple(quorum) if quorum is not None else quorum_of(n, t)
    return QabSetup(n, t, quorum, verify)


# --- asynchronous QAB ------------------------------------------------------

class AsyncQabNode(Node):
    """Party role for every node, plus the relayer roles it hosts and the
    quorum role if it is a quorum member."""

    def __init__(self, setup: QabSetup, me: NodeId, v_in=None, autostart: bool = True):
        self.setup = setup
        self.me = me
        self.v_in = v_in
        self.autostart = autostart
        self.decided = None
        self.acked: set[int] = set()
        # relayer roles
        self.hosted = setup.relayers_of(me)
        self.relay_value: dict[int, Any] = {}
        self.relay_acks: dict[int, dict] = {r: {} for r in self.hosted}
        self.relay_done: set[int] = set()
        self.progress = QuorumProgress()
        self.initiated = False

    @property
    def in_quorum(self) -> bool:
        return self.me in self.setup.quorum

    def start(self, ctx):
        if self.autostart and self.in_quorum and self.v_in is not None:
            self.initiate(ctx, self.v_in)

    def initiate(self, ctx, v_in):
        """Quorum entry point: fan ``v_in`` out to every relayer."""
        if not self.in_quorum:
            raise NotInQuorum(f"node {self.me} is not a quorum member")
        if self.initiated:
            return
        self.initiated = True
        self.v_in = v_in
        self._decide(ctx, v_in)
        s = self.setup
        if s.direct:
            ctx.broadcast(QAB_DIRECT, v_in)
            return
        for r, h in enumerate(s.hosts):
            ctx.send(h, QAB_VAL, RelayVal(r, v_in, False))
        self._maybe_fire(ctx)

    def _decide(self, ctx, v):
        if self.decided is None:
            self.decided = v
            ctx.decide(plain_value(v), qab=v)

    def on_message(self, ctx, msg):
        tag = msg.tag
        p = msg.payload
        if tag == QAB_VAL and isinstance(p, RelayVal):
            if p.to_party:
                self.party_on_value(ctx, p, msg.sender)
            else:
                self.relayer_on_value(ctx, p, msg.sender)
        elif tag == QAB_ACK and isinstance(p, Ack):
            self.relayer_on_ack(ctx, p, msg.sender)
        elif tag == QAB_CERT and isinstance(p, CommitteeCert):
            self.quorum_on_cert(ctx, p)
        elif tag == QAB_DIRECT:
            if self.setup.verify(p):
                self._decide(ctx, p)

    def relayer_on_value(self, ctx, p: RelayVal, sender):
        r = p.relayer
        if r not in self.relay_acks or r in self.relay_value or sender not in self.setup.quorum:
            return
        if not self.setup.verify(p.value):
            return
        self.relay_value[r] = p.value
        for party in self.setup.committees[r]:
            ctx.send(party, QAB_VAL, RelayVal(r, p.value, True))

    def party_on_value(self, ctx, p: RelayVal, sender):
        r = p.relayer
        s = self.setup
        if not 0 <= r < s.n_relayers or s.hosts[r] != sender or r in self.acked:
            return
        if self.me not in s.schemes[r] or not s.verify(p.value):
            return
        self.acked.add(r)
        self._decide(ctx, p.value)
        share = ctx.keys.tsign(s.schemes[r], ack_stmt(plain_value(p.value)))
        ctx.send(sender, QAB_ACK, Ack(r, share))

    def relayer_on_ack(self, ctx, p: Ack, sender):
        r = p.relayer
        if r not in self.relay_value or r in self.relay_done:
            return
        scheme = self.setup.schemes[r]
        share = p.share
        value = plain_value(self.relay_value[r])
        if (getattr(share, "scheme", None) != scheme or share.signer != sender
                or share.digest != digest(ack_stmt(value))):
            return
        acks = self.relay_acks[r]
        acks[sender] = share
        if len(acks) == scheme.k:
            self.relay_done.add(r)
            cert = CommitteeCert(r, tcombine(scheme, ack_stmt(value), acks.values()))
            for q in self.setup.quorum:
                ctx.send(q, QAB_CERT, cert)

    def quorum_on_cert(self, ctx, cert: CommitteeCert):
        if not self.in_quorum or self.v_in is None:
            return
        r = cert.relayer
        s = self.setup
        if not 0 <= r < s.n_relayers or r in self.progress.certs:
            return
        if not tverify(s.schemes[r], ack_stmt(plain_value(self.v_in)), cert.sig):
            return
        self.progress.certs.add(r)
        self.progress.acknowledged.update(s.committees[r])
        self._maybe_fire(ctx)

    def _maybe_fire(self, ctx):
        pr = self.progress
        if pr.fired or not self.initiated or len(pr.acknowledged) < self.setup.threshold:
            return
        pr.fired = True
        for p in range(self.setup.n):
            if p not in pr.acknowledged:
                ctx.send(p, QAB_DIRECT, self.v_in)


class AsyncQabByzantine(AsyncQabNode):
    """Corrupted quorum member pushing a value that fails verification to
    every relayer, and otherwise silent."""

    def __init__(self, setup, me, bogus):
        super().__init__(setup, me, None, autostart=False)
        self.bogus = bogus

    def start(self, ctx):
        if self.in_quorum and not self.setup.direct:
            for r, h in enumerate(self.setup.hosts):
                ctx.send(h, QAB_VAL, RelayVal(r, self.bogus, False))

    def on_message(self, ctx, msg):
        pass


# --- partially synchronous QAB ---------------------------------------------

class PsyncQabNode(Node):
    def __init__(self, setup: QabSetup, me: NodeId, v_in=None):
        self.setup = setup
        self.me = me
        self.v_in = v_in
        self.decided = None
        self.served: set[NodeId] = set()
        self.view = -1
        if v_in is not None and me in setup.quorum:
            self.decided = v_in

    @property
    def in_quorum(self) -> bool:
        return self.me in self.setup.quorum

    def start(self, ctx):
        if self.decided is not None:
            ctx.decide(plain_value(self.decided), qab=self.decided)

    def initiate(self, ctx, v_in):
        if not self.in_quorum:
            raise NotInQuorum(f"node {self.me} is not a quorum member")
        if self.v_in is not None:
            return
        self.v_in = v_in
        self._decide(ctx, v_in)

    def _decide(self, ctx, v):
        if self.decided is None:
            self.decided = v
            ctx.decide(plain_value(v), qab=v)

    def on_view(self, ctx, clock, view):
        if clock != self.setup.clock:
            return
        self.view = view
        if leader_of(view, self.setup.n) == self.me and self.decided is None:
            ctx.broadcast(QAB_REQ, None, view, self.setup.quorum)

    def on_message(self, ctx, msg):
        tag = msg.tag
        if tag == QAB_REQ:
            self.quorum_reply(ctx, msg.sender, msg.view)
        elif tag == QAB_REPLY:
            if self.decided is None and self.setup.verify(msg.payload):
                self._decide(ctx, msg.payload)
                ctx.broadcast(QAB_BCAST, msg.payload, msg.view)
        elif tag == QAB_BCAST:
            if self.setup.verify(msg.payload):
                self._decide(ctx, msg.payload)

    def quorum_reply(self, ctx, requester, view=0):
        """Answer a value request, at most once per requesting party."""
        if not self.in_quorum or self.v_in is None or requester in self.served:
            return False
        self.served.add(requester)
        ctx.send(requester, QAB_REPLY, self.v_in, view)
        return True


class PsyncQabSpammer(PsyncQabNode):
    """Corrupted node that requests the value in every view, and when it
    obtains it forwards it to a random subset of parties."""

    def __init__(self, setup, me, rng: random.Random, v_in=None):
        super().__init__(setup, me, v_in)
        self.rng = rng
        self.got = None

    def start(self, ctx):
        pass

    def on_view(self, ctx, clock, view):
        if clock == self.setup.clock:
            self.view = view
            ctx.broadcast(QAB_REQ, None, view, self.setup.quorum)

    def on_message(self, ctx, msg):
        if msg.tag == QAB_REPLY and self.got is None and self.setup.verify(msg.payload):
            self.got = msg.payload
            k = self.rng.randint(0, self.setup.n)
            ctx.broadcast(QAB_BCAST, msg.payload, msg.view, self.rng.sample(range(self.setup.n), k))


class PsyncQabSilentLeader(PsyncQabNode):
    """Corrupted node that behaves honestly except that it never requests
    when it leads."""

    def on_view(self, ctx, clock, view):
        if clock == self.setup.clock:
            self.view = view


def worst_case_placement(setup: QabSetup, f: int, inside_quorum: int | None = None) -> list[NodeId]:
    """Faulty set for the asynchronous variant.

    ``inside_quorum`` faults (default ``f // 2``) go to quorum members and
    the rest anywhere.  Each pick maximises the number of parties cut off
    from every relayer, then the number of newly blocked relayers, which
    piles the faults onto overlapping committees."""
    if f <= 0:
        return []
    k = f // 2 if inside_quorum is None else min(inside_quorum, f)
    if setup.direct:
        return sorted(set(setup.quorum[:k]) | set(range(setup.n - (f - k), setup.n)))
    reach = [0] * setup.n  # relayers blocked by corrupting p
    for p, nbrs in enumerate(setup.graph.adjacency):
        for r in nbrs:
            reach[p] |= 1 << r
    for r, h in enumerate(setup.hosts):
        reach[h] |= 1 << r
    # a party's relayers are exactly the ones its corruption would block
    chosen: list[NodeId] = []
    blocked = 0

    def score(p):
        b = blocked | reach[p]
        cut = sum(1 for m in reach if m & ~b == 0)
        return cut, (b & ~blocked).bit_count(), -p

    for pool, count in ((setup.quorum, k), (range(setup.n), f - k)):
        for _ in range(count):
            best = max((p for p in pool if p not in chosen), key=score)
            chosen.append(best)
            blocked |= reach[best]
    return sorted(chosen)
