"""Shared vocabulary: node ids, views, binary values, message envelopes and
word accounting."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

NodeId = int
ViewNumber = int
BinValue = int


class ConfigError(ValueError):
    """Raised when system parameters violate a protocol's resilience bound."""


def check_bin(value: int) -> int:
    if value not in (0, 1):
        raise ValueError(f"binary value expected, got {value!r}")
    return value


def leader_of(view: ViewNumber, n: int) -> NodeId:
    """Round-robin leader of ``view`` among ``n`` parties."""
    if n < 1:
        raise ValueError("n must be positive")
    return view % n


@dataclass(slots=True)
class ProtocolMessage:
    sender: NodeId
    receiver: NodeId
    view: ViewNumber
    tag: str
    payload: Any = None
    # Every message type in this package carries at most one threshold
    # signature plus a constant number of bits, i.e. one word.
    words: int = 1
    msg_id: int = -1
    send_time: int = 0
    honest: bool = True

    @property
    def is_self(self) -> bool:
        return self.sender == self.receiver


@dataclass(frozen=True)
class SystemParams:
    n: int
    t: int
    f: int = 0
    delta: int = 10
    gst: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError("n must be positive")
        if not 0 <= self.f <= self.t <= self.n:
            raise ConfigError(f"need 0 <= f <= t <= n, got f={self.f} t={self.t} n={self.n}")
        if self.delta <= 0:
            raise ConfigError("delta must be positive")
        if self.gst < 0:
            raise ConfigError("gst must be non-negative")

    def require_third(self) -> None:
        """Enforce t < n/3."""
        if 3 * self.t >= self.n:
            raise ConfigError(f"protocol requires t < n/3 (n={self.n}, t={self.t})")


@dataclass(slots=True)
class Decision:
    value: BinValue
    time: int
    view: ViewNumber = 0
    extra: dict = field(default_factory=dict)


def count_words(trace, honest_only: bool = True, after: int | None = None) -> int:
    """Sum the words of send events in ``trace``.

    Self-addressed messages cost nothing. ``after`` keeps only sends at or
    after that time (typically GST).
    """
    total = 0
    for ev in trace.events:
        if ev.kind != "Send":
            continue
        msg = ev.message
        if msg.sender == msg.receiver:
            continue
        if honest_only and not msg.honest:
            continue
        if after is not None and ev.time < after:
            continue
        total += msg.words
    return total
