"""End-to-end agreement: a quorum of ``3t+1`` parties agrees first, then
hands the certified outcome to everyone through QAB.

Partially synchronous model: the quorum runs :mod:`ba_psync` and the
commit proof it ends with is the evidence carried by QAB.  Asynchronous
model: the quorum runs :mod:`quorum_ba` and the evidence is its decision
certificate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable

from . import ba_psync, quorum_ba
from .core import BinValue, NodeId
from .simnet import Node, SubContext

PSYNC = "psync"
ASYNC = "async"


@dataclass(frozen=True, slots=True)
class CertifiedValue:
    value: BinValue
    evidence: Any


@dataclass(frozen=True)
class ComposedConfig:
    model: str
    n: int
    t: int
    quorum_size: int | None = None

    def __post_init__(self):
        if self.model not in (PSYNC, ASYNC):
            raise ValueError(f"unknown model {self.model!r}")
        if 3 * self.t >= self.n:
            raise ValueError(f"composition needs t < n/3 (n={self.n}, t={self.t})")
        if self.n < self.q:
            raise ValueError(f"quorum of {self.q} does not fit in n={self.n}")

    @property
    def q(self) -> int:
        return 3 * self.t + 1 if self.quorum_size is None else self.quorum_size

    @property
    def quorum(self) -> tuple[NodeId, ...]:
        return tuple(range(self.q))


def make_verify_predicate(evidence_kind: str, setup) -> Callable[[Any], bool]:
    """Predicate accepting a :class:`CertifiedValue` whose evidence verifies
    under the quorum's trusted-setup scheme for the value it carries."""
    if evidence_kind == PSYNC:
        def check(cv) -> bool:
            return (isinstance(cv, CertifiedValue) and isinstance(cv.evidence, ba_psync.CommitProof)
                    and cv.evidence.value == cv.value and setup.valid_commit(cv.evidence))
    elif evidence_kind == ASYNC:
        def check(cv) -> bool:
            return (isinstance(cv, CertifiedValue) and isinstance(cv.evidence, quorum_ba.DecisionCert)
                    and cv.evidence.value == cv.value and setup.valid_cert(cv.evidence))
    else:
        raise ValueError(f"unknown evidence kind {evidence_kind!r}")
    return check


def note_inner_decision(ctx, node: NodeId, value, **extra) -> None:
    """Record a quorum-internal decision in the trace metadata (used only for
    the round/view count, never for auditing)."""
    rec = {"value": value, "time": ctx.now}
    rec.update({k: v for k, v in extra.items() if k in ("round", "view")})
    ctx.sim.trace.meta.setdefault("inner_decisions", {})[node] = rec


class ComposedNode(Node):
    """A party running the inner agreement (quorum members only) and QAB.

    ``inner`` receives messages whose tag is in ``inner_tags`` through a
    sub-context; its decision is turned into a QAB input by ``to_qab``.
    ``to_qab`` returns ``None`` when the inner decision is not yet final
    (the asynchronous inner agreement only hands over once certified).
    """

    def __init__(self, me: NodeId, inner, qab, inner_tags, to_qab: Callable[..., Any]):
        self.me = me
        self.inner = inner
        self.qab = qab
        self.inner_tags = frozenset(inner_tags)
        self.to_qab = to_qab

    def _sub(self, ctx):
        def decided(value, **extra):
            note_inner_decision(ctx, self.me, value, **extra)
            v = self.to_qab(value, **extra)
            if v is not None:
                self.qab.initiate(ctx, v)
        return SubContext(ctx, decided)

    def start(self, ctx):
        if self.inner is not None:
            self.inner.start(self._sub(ctx))
        self.qab.start(ctx)

    def on_view(self, ctx, clock, view):
        if self.inner is not None:
            self.inner.on_view(self._sub(ctx), clock, view)
        self.qab.on_view(ctx, clock, view)

    def on_message(self, ctx, msg):
        if msg.tag in self.inner_tags:
            if self.inner is not None:
                self.inner.on_message(self._sub(ctx), msg)
        else:
            self.qab.on_message(ctx, msg)

    def on_timer(self, ctx, key):
        self.qab.on_timer(ctx, key)


def psync_to_qab(value, commit=None, **_):
    return CertifiedValue(value, commit)


class _CertHandoff:
    """Async inner agreement: wire ``on_cert`` to QAB initiation."""

    def __init__(self, composite_getter):
        self.get = composite_getter

    def __call__(self, ctx, cert):
        comp = self.get()
        parent = ctx.parent if isinstance(ctx, SubContext) else ctx
        comp.qab.initiate(parent, CertifiedValue(cert.value, cert))


def async_node(me: NodeId, inner_setup, qab_node, proposal: BinValue | None) -> ComposedNode:
    """Composite for the asynchronous model; ``proposal`` is ``None`` for
    parties outside the quorum."""
    comp = ComposedNode(me, None, qab_node, quorum_ba.TAGS, lambda value, **_: None)
    if proposal is not None:
        comp.inner = quorum_ba.QuorumBaNode(inner_setup, me, proposal, on_cert=_CertHandoff(lambda: comp))
    return comp
