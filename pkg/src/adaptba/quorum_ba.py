"""Reference randomized binary agreement run inside the quorum.

Rounds follow the usual common-coin pattern: BV-broadcast of estimates
(echo at ``t+1``, admit at ``2t+1``), one AUX vote per round, then a
comparison against the round's coin.  A node that decides keeps playing
rounds and meanwhile collects ``q - t`` signed DECIDE shares into a
transferable :class:`DecisionCert`.  Holding a valid certificate ends
participation.

The coin is an ideal functionality keyed by the run seed.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field
from typing import Callable

from .core import BinValue, NodeId, check_bin
from .crypto import SchemeId, ThresholdSig, digest, statement, tcombine, threshold_scheme, tverify
from .simnet import Node

EST = "EST"
AUX = "AUX"
DEC_SHARE = "DEC_SHARE"
DEC_CERT = "DEC_CERT"
TAGS = (EST, AUX, DEC_SHARE, DEC_CERT)


def common_coin(round_no: int, seed: int = 0) -> BinValue:
    h = hashlib.sha256(f"coin/{seed}/{round_no}".encode()).digest()
    return h[0] & 1


def decide_stmt(value: BinValue) -> bytes:
    return statement("DECIDE", value)


@dataclass(frozen=True, slots=True)
class DecisionCert:
    value: BinValue
    sig: ThresholdSig


@dataclass(frozen=True)
class QuorumBaSetup:
    members: tuple[NodeId, ...]
    t: int
    scheme: SchemeId
    coin_seed: int = 0

    @classmethod
    def create(cls, members, t: int, coin_seed: int = 0, label: str = "QUORUM") -> "QuorumBaSetup":
        members = tuple(members)
        if len(members) <= 3 * t:
            raise ValueError(f"quorum of {len(members)} cannot tolerate t={t}")
        return cls(members, t, threshold_scheme(label, members, len(members) - t), coin_seed)

    @property
    def q(self) -> int:
        return len(self.members)

    def coin(self, round_no: int) -> BinValue:
        return common_coin(round_no, self.coin_seed)

    def valid_cert(self, cert) -> bool:
        return (isinstance(cert, DecisionCert) and cert.value in (0, 1)
                and tverify(self.scheme, decide_stmt(cert.value), cert.sig))


@dataclass
class RoundState:
    est_from: tuple = field(default_factory=lambda: (set(), set()))
    echoed: list = field(default_factory=lambda: [False, False])
    bin_values: set = field(default_factory=set)
    aux_from: dict = field(default_factory=dict)
    aux_sent: bool = False


def round_outcome(values: set, coin: BinValue) -> tuple[BinValue, bool]:
    """Rule (c): new estimate and whether to decide, given the AUX value set."""
    if len(values) == 1:
        (v,) = values
        return v, v == coin
    return coin, False


class QuorumBaNode(Node):
    """One quorum member.  Emits ``ctx.decide(value, round=r)`` on deciding
    and calls ``on_cert(ctx, cert)`` once a certificate is held."""

    def __init__(self, setup: QuorumBaSetup, me: NodeId, proposal: BinValue,
                 on_cert: Callable | None = None):
        self.setup = setup
        self.me = me
        self.est = check_bin(proposal)
        self.on_cert = on_cert
        self.round = 0
        self.rounds: dict[int, RoundState] = {}
        self.decided: BinValue | None = None
        self.decided_round: int | None = None
        self.shares: dict[BinValue, dict] = {0: {}, 1: {}}
        self.cert: DecisionCert | None = None
        self.halted = False

    def _rs(self, r: int) -> RoundState:
        rs = self.rounds.get(r)
        if rs is None:
            rs = self.rounds[r] = RoundState()
        return rs

    def _bcast(self, ctx, tag, payload, view=0):
        ctx.broadcast(tag, payload, view, self.setup.members)

    def start(self, ctx):
        self._enter(ctx, 1)

    def _enter(self, ctx, r):
        self.round = r
        rs = self._rs(r)
        if not rs.echoed[self.est]:
            rs.echoed[self.est] = True
            self._bcast(ctx, EST, self.est, r)
        self._after_bin(ctx, r)

    def on_message(self, ctx, msg):
        if self.halted or msg.sender not in self.setup.members:
            return
        tag, r, v = msg.tag, msg.view, msg.payload
        if tag == DEC_CERT:
            self._on_cert(ctx, v)
        elif tag == DEC_SHARE:
            self._on_share(ctx, msg.sender, v)
        elif tag in (EST, AUX) and v in (0, 1) and isinstance(r, int) and r >= 1:
            rs = self._rs(r)
            if tag == EST:
                self._on_est(ctx, rs, r, v, msg.sender)
            elif msg.sender not in rs.aux_from:
                rs.aux_from[msg.sender] = v
                if r == self.round:
                    self._try_complete(ctx, r)

    def _on_est(self, ctx, rs, r, v, sender):
        got = rs.est_from[v]
        if sender in got:
            return
        got.add(sender)
        t = self.setup.t
        if len(got) >= t + 1 and not rs.echoed[v]:
            rs.echoed[v] = True
            self._bcast(ctx, EST, v, r)
        if len(got) >= 2 * t + 1 and v not in rs.bin_values:
            rs.bin_values.add(v)
            if r == self.round:
                self._after_bin(ctx, r)

    def _after_bin(self, ctx, r):
        rs = self._rs(r)
        if rs.bin_values and not rs.aux_sent:
            rs.aux_sent = True
            w = self.est if self.est in rs.bin_values else min(rs.bin_values)
            self._bcast(ctx, AUX, w, r)
        self._try_complete(ctx, r)

    def _try_complete(self, ctx, r):
        rs = self._rs(r)
        if not rs.aux_sent or self.halted:
            return
        vals = [v for v in rs.aux_from.values() if v in rs.bin_values]
        if len(vals) < self.setup.q - self.setup.t:
            return
        est, decide = round_outcome(set(vals), self.setup.coin(r))
        self.est = est
        if decide and self.decided is None:
            self._decide(ctx, est, r)
        if not self.halted:
            self._enter(ctx, r + 1)

    def _decide(self, ctx, v, r):
        self.decided, self.decided_round = v, r
        ctx.decide(v, round=r)
        share = ctx.keys.tsign(self.setup.scheme, decide_stmt(v))
        self._bcast(ctx, DEC_SHARE, share)

    def _on_share(self, ctx, sender, share):
        s = self.setup
        if getattr(share, "scheme", None) != s.scheme or share.signer != sender:
            return
        for v in (0, 1):
            if share.digest == digest(decide_stmt(v)):
                got = self.shares[v]
                got.setdefault(sender, share)
                if len(got) >= s.scheme.k and self.cert is None:
                    cert = DecisionCert(v, tcombine(s.scheme, decide_stmt(v), got.values()))
                    self._hold(ctx, cert)

    def _on_cert(self, ctx, cert):
        if self.cert is None and self.setup.valid_cert(cert):
            self._hold(ctx, cert)

    def _hold(self, ctx, cert: DecisionCert):
        self.cert = cert
        if self.decided is None:
            self.decided, self.decided_round = cert.value, self.round
            ctx.decide(cert.value, round=self.round)
        self._bcast(ctx, DEC_CERT, cert)
        self.halted = True
        if self.on_cert is not None:
            self.on_cert(ctx, cert)


class QuorumBaEquivocator(Node):
    """Corrupted quorum member: for every round it hears about, it votes
    both values to a random half of the quorum each, and signs DECIDE for
    both values."""

    def __init__(self, setup: QuorumBaSetup, me: NodeId, rng: random.Random):
        self.setup = setup
        self.me = me
        self.rng = rng
        self.spammed: set[int] = set()

    def start(self, ctx):
        for v in (0, 1):
            share = ctx.keys.tsign(self.setup.scheme, decide_stmt(v))
            ctx.broadcast(DEC_SHARE, share, 0, self.setup.members)
        self._spam(ctx, 1)

    def _spam(self, ctx, r):
        if r in self.spammed or r > 64:
            return
        self.spammed.add(r)
        members = list(self.setup.members)
        self.rng.shuffle(members)
        half = len(members) // 2
        for i, p in enumerate(members):
            v = 0 if i < half else 1
            ctx.send(p, EST, v, r)
            ctx.send(p, EST, 1 - v, r)
            ctx.send(p, AUX, v, r)

    def on_message(self, ctx, msg):
        if msg.tag in (EST, AUX) and isinstance(msg.view, int):
            self._spam(ctx, msg.view)
