"""Deterministic discrete-event network simulator.

Time is an integer tick count; ``delta`` is expressed in ticks.  Events are
totally ordered by ``(time, seq)``.  Every run is a pure function of the
scenario (including its seed) and the adversary policy.
"""

from __future__ import annotations

import heapq
import json
import random
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable

from .core import ConfigError, Decision, NodeId, ProtocolMessage, SystemParams
from .crypto import Keyring, SignLedger

SEND, DELIVER, DECIDE, VIEW_ENTER, TIMER = "Send", "Deliver", "Decide", "ViewEnter", "TimerFire"


class HorizonExceeded(RuntimeError):
    """A run hit its horizon before every honest node decided."""

    def __init__(self, msg: str, trace: "Trace"):
        super().__init__(msg)
        self.trace = trace


@dataclass(slots=True)
class Event:
    time: int
    seq: int
    kind: str
    message: ProtocolMessage | None = None
    node: NodeId | None = None
    view: int = 0
    value: int | None = None

    def as_record(self) -> dict:
        m = self.message
        if m is not None:
            return {"time": self.time, "seq": self.seq, "kind": self.kind,
                    "from": m.sender, "to": m.receiver, "view": m.view, "tag": m.tag,
                    "msg": m.msg_id, "sent": m.send_time, "honest": m.honest}
        rec = {"time": self.time, "seq": self.seq, "kind": self.kind,
               "from": self.node, "to": None, "view": self.view, "tag": None}
        if self.value is not None:
            rec["value"] = self.value
        return rec


# metadata echoed into the JSONL header so that traces can be audited offline
HEADER_META = ("behaviors", "scheduler", "fairness", "inputs", "v_in", "quorum", "members", "c_nodes",
               "view_length", "qab_view_length", "first_view_after_gst", "inner_deadline",
               "graph", "hosts", "released_at", "forced_release", "horizon_hit")


@dataclass
class Trace:
    params: SystemParams
    events: list[Event] = field(default_factory=list)
    decisions: dict[NodeId, Decision] = field(default_factory=dict)
    corrupted: frozenset = frozenset()
    meta: dict = field(default_factory=dict)
    ledger: SignLedger | None = None
    end_time: int = 0
    undelivered: list[ProtocolMessage] = field(default_factory=list)

    @property
    def honest(self) -> list[NodeId]:
        return [i for i in range(self.params.n) if i not in self.corrupted]

    def sends(self):
        return (e for e in self.events if e.kind == SEND)

    def header(self) -> dict:
        p = self.params
        return {"kind": "Header", "n": p.n, "t": p.t, "f": p.f, "delta": p.delta,
                "gst": p.gst, "corrupted": sorted(self.corrupted),
                "protocol": self.meta.get("protocol"), "seed": self.meta.get("seed"),
                "end_time": self.end_time,
                "meta": {k: self.meta[k] for k in HEADER_META if k in self.meta}}

    def to_jsonl(self) -> str:
        lines = [json.dumps(self.header(), separators=(",", ":"))]
        lines.extend(json.dumps(e.as_record(), separators=(",", ":")) for e in self.events)
        return "\n".join(lines) + "\n"


# --- delivery policies -----------------------------------------------------

class ImmediateScheduler:
    """Every message arrives one tick after it was sent."""

    name = "immediate"

    def delivery_time(self, msg: ProtocolMessage, now: int) -> int | None:
        return now + 1


class PsyncScheduler:
    """Partial synchrony: a message sent at ``s`` arrives in
    ``(s, max(s, gst) + delta]``, uniformly at random."""

    name = "random"

    def __init__(self, delta: int, gst: int, rng: random.Random):
        self.delta = delta
        self.gst = gst
        self.rng = rng

    def delivery_time(self, msg, now):
        return self.rng.randint(now + 1, max(now, self.gst) + self.delta)


class AsyncScheduler:
    """Arbitrary reordering with a finite bound on how long a message may be
    held, which makes eventual delivery checkable within a run."""

    name = "async"

    def __init__(self, rng: random.Random, fairness_bound: int = 50):
        if fairness_bound < 1:
            raise ValueError("fairness_bound must be finite and positive")
        self.rng = rng
        self.fairness_bound = fairness_bound

    def delivery_time(self, msg, now):
        return now + self.rng.randint(1, self.fairness_bound)


class MainScheduler:
    """Lower-bound schedule: parties in ``C`` never hear from each other, and
    the first ``withhold`` messages from ``B`` to each member of ``C`` are
    held, until every honest node has decided.  Everything else arrives
    immediately."""

    name = "main"

    def __init__(self, n: int, c_nodes: Iterable[NodeId], withhold: int):
        self.c_nodes = frozenset(c_nodes)
        self.withhold = withhold
        self.withheld_count = {p: 0 for p in self.c_nodes}
        self.n = n

    def delivery_time(self, msg, now):
        src, dst = msg.sender, msg.receiver
        if dst in self.c_nodes:
            if src in self.c_nodes:
                return None
            if self.withheld_count[dst] < self.withhold:
                self.withheld_count[dst] += 1
                return None
        return now + 1


def scheduler_psync(delta: int, gst: int, rng: random.Random) -> PsyncScheduler:
    return PsyncScheduler(delta, gst, rng)


def scheduler_async(rng: random.Random, fairness_bound: int = 50) -> AsyncScheduler:
    return AsyncScheduler(rng, fairness_bound)


@dataclass(frozen=True)
class ViewClock:
    """Perfect-clock views: view ``i`` spans ``[L*i*delta, L*(i+1)*delta)``."""

    delta: int
    multiple: int

    @property
    def length(self) -> int:
        return self.delta * self.multiple

    def view_at(self, time) -> int:
        return int(time // self.length)

    def start(self, view: int) -> int:
        return view * self.length

    def first_view_after(self, time) -> int:
        """First view starting at or after ``time``."""
        return -(-int(time) // self.length) if time > 0 else 0


def view_clock(delta: int, view_len_multiple: int) -> ViewClock:
    return ViewClock(delta, view_len_multiple)


# --- node plumbing ---------------------------------------------------------

class Node:
    """No-op handlers; protocols override what they need."""

    def start(self, ctx):
        pass

    def on_message(self, ctx, msg):
        pass

    def on_view(self, ctx, clock, view):
        pass

    def on_timer(self, ctx, key):
        pass


class NodeContext:
    """What a node may do: send, decide, read the clock, set timers, sign
    with its own keys."""

    __slots__ = ("sim", "node", "keys", "honest")

    def __init__(self, sim: "Simulator", node: NodeId, keys: Keyring, honest: bool):
        self.sim = sim
        self.node = node
        self.keys = keys
        self.honest = honest

    @property
    def now(self) -> int:
        return self.sim.now

    @property
    def n(self) -> int:
        return self.sim.params.n

    def send(self, dst: NodeId, tag: str, payload=None, view: int = 0) -> None:
        self.sim.send(self.node, dst, tag, payload, view, self.honest)

    def broadcast(self, tag: str, payload=None, view: int = 0, targets: Iterable[NodeId] | None = None) -> None:
        for dst in (range(self.sim.params.n) if targets is None else targets):
            self.sim.send(self.node, dst, tag, payload, view, self.honest)

    def decide(self, value: int, **extra) -> None:
        self.sim.decide(self.node, value, extra)

    def set_timer(self, at: int, key) -> None:
        self.sim.set_timer(self.node, at, key)


class SubContext:
    """Context seen by a sub-protocol of a composite node.  Decisions are
    routed to ``on_decide`` instead of becoming global decisions."""

    __slots__ = ("parent", "on_decide")

    def __init__(self, parent, on_decide: Callable[..., None]):
        self.parent = parent
        self.on_decide = on_decide

    def __getattr__(self, name):
        return getattr(self.parent, name)

    def decide(self, value, **extra):
        self.on_decide(value, **extra)


class Crashing(Node):
    """Wraps a node; after ``at_time`` it neither sends nor reacts."""

    def __init__(self, inner, at_time: int):
        self.inner = inner
        self.at_time = at_time

    def _alive(self, ctx) -> bool:
        return ctx.now < self.at_time

    def start(self, ctx):
        if self._alive(ctx):
            self.inner.start(_Muzzle(ctx, self))

    def on_message(self, ctx, msg):
        if self._alive(ctx):
            self.inner.on_message(_Muzzle(ctx, self), msg)

    def on_view(self, ctx, clock, view):
        if self._alive(ctx):
            self.inner.on_view(_Muzzle(ctx, self), clock, view)

    def on_timer(self, ctx, key):
        if self._alive(ctx):
            self.inner.on_timer(_Muzzle(ctx, self), key)


class _Muzzle:
    __slots__ = ("ctx", "owner")

    def __init__(self, ctx, owner):
        self.ctx = ctx
        self.owner = owner

    def __getattr__(self, name):
        return getattr(self.ctx, name)

    def send(self, *a, **kw):
        if self.owner._alive(self.ctx):
            self.ctx.send(*a, **kw)

    def broadcast(self, *a, **kw):
        if self.owner._alive(self.ctx):
            self.ctx.broadcast(*a, **kw)


class ScriptedIgnore(Node):
    """Runs the honest protocol but silently drops incoming messages from
    ``ignore_from`` and the first ``first_k`` messages from ``first_from``."""

    def __init__(self, inner, ignore_from=(), first_from=(), first_k: int = 0):
        self.inner = inner
        self.ignore_from = frozenset(ignore_from)
        self.first_from = frozenset(first_from)
        self.remaining = first_k

    def start(self, ctx):
        self.inner.start(ctx)

    def on_message(self, ctx, msg):
        if msg.sender in self.ignore_from:
            return
        if msg.sender in self.first_from and self.remaining > 0:
            self.remaining -= 1
            return
        self.inner.on_message(ctx, msg)

    def on_view(self, ctx, clock, view):
        self.inner.on_view(ctx, clock, view)

    def on_timer(self, ctx, key):
        self.inner.on_timer(ctx, key)


class Silent(Node):
    """A corrupted node that never sends anything."""


# --- adversary -------------------------------------------------------------

@dataclass(frozen=True)
class ByzantineBehavior:
    variant: str  # crash | silent-leader | equivocator | mirror | ignore | silent
    params: tuple = ()


@dataclass
class AdversaryPolicy:
    corrupted: frozenset = frozenset()
    behavior: dict = field(default_factory=dict)
    scheduler: Any = None

    def __post_init__(self):
        self.corrupted = frozenset(self.corrupted)


class Coalition:
    """Signing capabilities of all corrupted nodes, shared by the adversary."""

    def __init__(self, keyrings: dict[NodeId, Keyring]):
        self.keyrings = keyrings
        self.memory: dict = {}

    @property
    def members(self):
        return sorted(self.keyrings)


# --- simulator -------------------------------------------------------------

class Simulator:
    def __init__(self, params: SystemParams, corrupted: Iterable[NodeId], scheduler,
                 clocks: dict[str, ViewClock] | None = None,
                 horizon_time: int | None = None, max_events: int = 10**6):
        self.params = params
        self.corrupted = frozenset(corrupted)
        if len(self.corrupted) > params.t:
            raise ConfigError(f"{len(self.corrupted)} corruptions exceed t={params.t}")
        self.scheduler = scheduler
        self.clocks = clocks or {}
        self.horizon_time = horizon_time
        self.max_events = max_events
        self.ledger = SignLedger()
        self.keyrings = {i: Keyring(i, self.ledger) for i in range(params.n)}
        self.nodes: list = [None] * params.n
        self.contexts = [NodeContext(self, i, self.keyrings[i], i not in self.corrupted)
                         for i in range(params.n)]
        self.now = 0
        self._seq = 0
        self._heap: list = []
        self._pending_honest = 0
        self._held: list[ProtocolMessage] = []
        self.trace = Trace(params, corrupted=self.corrupted, ledger=self.ledger)
        self._undecided = {i for i in range(params.n) if i not in self.corrupted}
        self.all_decided_at: int | None = None

    def coalition(self) -> Coalition:
        return Coalition({i: self.keyrings[i] for i in sorted(self.corrupted)})

    # event helpers
    def _next_seq(self) -> int:
        self._seq += 1
        return self._seq

    def _push(self, time, kind, obj):
        heapq.heappush(self._heap, (time, self._next_seq(), kind, obj))

    def send(self, src, dst, tag, payload, view, honest):
        msg = ProtocolMessage(src, dst, view, tag, payload, 1, self._next_seq(), self.now, honest)
        self.trace.events.append(Event(self.now, msg.msg_id, SEND, msg))
        if honest:
            self._pending_honest += 1
        if src == dst:
            self._push(self.now, DELIVER, msg)
            return
        d = self.scheduler.delivery_time(msg, self.now)
        if d is None:
            self._held.append(msg)
        else:
            if d <= self.now:
                raise ValueError("scheduler must deliver strictly after the send time")
            self._push(d, DELIVER, msg)

    def decide(self, node, value, extra):
        if node in self.trace.decisions and node not in self.corrupted:
            if self.trace.decisions[node].value != value:
                self.trace.events.append(Event(self.now, self._next_seq(), DECIDE, node=node, value=value))
            return
        self.trace.decisions[node] = Decision(value, self.now, extra.get("view", 0), extra)
        self.trace.events.append(Event(self.now, self._next_seq(), DECIDE, node=node, value=value))
        self._undecided.discard(node)
        if not self._undecided and self.all_decided_at is None:
            self.all_decided_at = self.now
            self._release_held()

    def set_timer(self, node, at, key):
        self._push(max(at, self.now), TIMER, (node, key))

    def _release_held(self):
        for msg in self._held:
            self._push(self.now + 1, DELIVER, msg)
        if self._held:
            self.trace.meta["released_at"] = self.now
        self._held = []

    def _finish(self):
        self.trace.end_time = self.now
        self.trace.undelivered = list(self._held) + sorted(
            (obj for (_, _, kind, obj) in self._heap if kind == DELIVER), key=lambda m: m.msg_id)
        return self.trace

    def run(self, nodes: list) -> Trace:
        if len(nodes) != self.params.n:
            raise ValueError("one node object per party is required")
        self.nodes = nodes
        for name, clock in sorted(self.clocks.items()):
            self._push(0, VIEW_ENTER, (name, 0))
        for i, node in enumerate(nodes):
            node.start(self.contexts[i])
        processed = 0
        events = self.trace.events
        while True:
            if not self._undecided and self._pending_honest == 0:
                return self._finish()
            if not self._heap:
                if self._held:
                    # only held messages remain; the schedule cannot progress
                    self._release_held()
                    self.trace.meta["forced_release"] = True
                    continue
                self._finish()
                raise HorizonExceeded("no events left but some honest nodes are undecided", self.trace)
            time, seq, kind, obj = heapq.heappop(self._heap)
            processed += 1
            if processed > self.max_events or (self.horizon_time is not None and time > self.horizon_time):
                self.trace.meta["horizon_hit"] = True
                self._release_held()
                self._finish()
                raise HorizonExceeded(f"horizon reached at t={self.now} with "
                                      f"{len(self._undecided)} undecided honest nodes", self.trace)
            self.now = time
            if kind == DELIVER:
                msg = obj
                if msg.honest:
                    self._pending_honest -= 1
                events.append(Event(time, seq, DELIVER, msg))
                self.nodes[msg.receiver].on_message(self.contexts[msg.receiver], msg)
            elif kind == VIEW_ENTER:
                name, view = obj
                clock = self.clocks[name]
                self._push(clock.start(view + 1), VIEW_ENTER, (name, view + 1))
                for i, node in enumerate(self.nodes):
                    events.append(Event(time, self._next_seq(), VIEW_ENTER, node=i, view=view))
                    node.on_view(self.contexts[i], name, view)
            else:
                node_id, key = obj
                events.append(Event(time, seq, TIMER, node=node_id))
                self.nodes[node_id].on_timer(self.contexts[node_id], key)


# --- scenario config -------------------------------------------------------

_INT_FIELDS = ("n", "t", "f", "delta", "gst", "seed", "horizon", "fairness", "max_events")


@dataclass
class ScenarioConfig:
    protocol: str = "ba_psync"
    n: int = 4
    t: int = 1
    f: int = 0
    behaviors: str = "equivocator"
    delta: int = 10
    gst: int = 0
    seed: int = 0
    horizon: int = 0  # 0 = protocol default
    scheduler: str = "random"
    inputs: str = "random"
    placement: str = "random"
    fairness: int = 50
    c: float = 2.0
    max_events: int = 10**6

    @property
    def params(self) -> SystemParams:
        return SystemParams(self.n, self.t, self.f, self.delta, self.gst)

    def validate(self) -> None:
        self.params  # noqa: B018 - runs SystemParams checks
        if self.scheduler not in ("immediate", "random", "main"):
            raise ConfigError(f"unknown scheduler {self.scheduler!r}")

    def to_text(self) -> str:
        keys = ("protocol", "n", "t", "f", "behaviors", "delta", "gst", "seed", "horizon",
                "scheduler", "inputs", "placement", "fairness", "c", "max_events")
        return "".join(f"{k} = {getattr(self, k)}\n" for k in keys)

    @classmethod
    def from_text(cls, text: str) -> "ScenarioConfig":
        cfg = cls()
        known = set(cls.__dataclass_fields__)
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key = value")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in known:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            try:
                if key in _INT_FIELDS:
                    setattr(cfg, key, int(val))
                elif key == "c":
                    setattr(cfg, key, float(val))
                else:
                    setattr(cfg, key, val)
            except ValueError as e:
                raise ConfigError(f"line {lineno}: bad value for {key}: {val!r}") from e
        return cfg


def run(config: ScenarioConfig, protocol_factory=None, adversary: AdversaryPolicy | None = None) -> Trace:
    """Run one scenario.  ``protocol_factory`` defaults to the builder
    registered for ``config.protocol``."""
    from .scenarios import build, BUILDERS

    if protocol_factory is None:
        protocol_factory = BUILDERS[config.protocol]
    return build(config, protocol_factory, adversary)


def main_schedule(params: SystemParams, protocol: str = "compose_async", seed: int = 0, **kw) -> Trace:
    """Run ``protocol`` with every node honest, every input 0, under the
    lower-bound schedule with ``|C| = floor(t/2)``."""
    cfg = ScenarioConfig(protocol=protocol, n=params.n, t=params.t, f=0, delta=params.delta,
                         gst=0, seed=seed, scheduler="main", inputs="zeros", **kw)
    return run(cfg)
