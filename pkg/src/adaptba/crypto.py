"""Signature, threshold-signature and aggregate-signature schemes.

The backend is symbolic: a signature is a record of (scheme, digest,
signers).  Unforgeability is a property of the capability model, not of
the bytes: each node only ever receives a :class:`Keyring` for its own
identity, corrupted nodes' keyrings go to the adversary, and every signing
call is logged so that :mod:`adaptba.audit` can check that each signature
seen on the wire is backed by real signing events.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable

from .core import NodeId


class CryptoError(Exception):
    pass


class NotParticipant(CryptoError):
    pass


class InsufficientShares(CryptoError):
    pass


class MixedMessages(CryptoError):
    pass


class ForeignShare(CryptoError):
    pass


class EmptyParticipants(CryptoError):
    pass


def _field(x) -> bytes:
    if isinstance(x, bytes):
        return x
    if isinstance(x, str):
        return x.encode()
    if isinstance(x, bool):
        return bytes([int(x)])
    if isinstance(x, int):
        return struct.pack("<q", x)
    raise TypeError(f"cannot encode {type(x).__name__}")


def encode(*fields) -> bytes:
    """Length-prefixed concatenation of the fields.

    ``str`` becomes UTF-8, ``int`` an 8-byte little-endian integer.
    """
    out = bytearray()
    for f in fields:
        b = _field(f)
        out += struct.pack("<I", len(b))
        out += b
    return bytes(out)


def statement(tag: str, value: int, view: int | None = None) -> bytes:
    """Canonical encoding of a signed protocol statement.

    The value is encoded as a single byte; the view, when present, as an
    8-byte little-endian integer.
    """
    if view is None:
        return encode(tag, bytes([value]))
    return encode(tag, bytes([value]), view)


@lru_cache(maxsize=1 << 16)
def digest(message: bytes) -> bytes:
    return hashlib.sha256(message).digest()


@dataclass(frozen=True)
class SchemeId:
    label: str
    participants: tuple[NodeId, ...]
    k: int

    def __post_init__(self):
        if self.k < 1 or self.k > len(self.participants):
            raise CryptoError(f"threshold {self.k} invalid for {len(self.participants)} participants")
        object.__setattr__(self, "_members", frozenset(self.participants))

    def __contains__(self, node: NodeId) -> bool:
        return node in self._members  # type: ignore[attr-defined]

    def __hash__(self):
        return hash(self.label)

    def __repr__(self):
        return f"SchemeId({self.label!r}, n={len(self.participants)}, k={self.k})"


@dataclass(frozen=True, slots=True)
class PartialSig:
    scheme: SchemeId
    signer: NodeId
    digest: bytes


@dataclass(frozen=True, slots=True)
class ThresholdSig:
    scheme: SchemeId
    digest: bytes
    signers: tuple[NodeId, ...]


@dataclass(frozen=True, slots=True)
class PlainSig:
    signer: NodeId
    digest: bytes


def threshold_scheme(label: str, participants: Iterable[NodeId], k: int) -> SchemeId:
    return SchemeId(label, tuple(sorted(participants)), k)


def aggregate_scheme(participants: Iterable[NodeId], label: str = "AGG") -> SchemeId:
    """Aggregate signatures are threshold signatures where everyone signs."""
    members = tuple(sorted(set(participants)))
    if not members:
        raise EmptyParticipants("aggregate scheme needs at least one participant")
    return SchemeId(label, members, len(members))


def tsign(scheme: SchemeId, signer: NodeId, message: bytes) -> PartialSig:
    if signer not in scheme:
        raise NotParticipant(f"node {signer} is not in {scheme.label}")
    return PartialSig(scheme, signer, digest(message))


def tcombine(scheme: SchemeId, message: bytes, partials: Iterable[PartialSig]) -> ThresholdSig:
    d = digest(message)
    signers = set()
    for p in partials:
        if p.scheme != scheme:
            raise ForeignShare(f"share from {p.scheme.label} offered to {scheme.label}")
        if p.digest != d:
            raise MixedMessages("partial signatures over different messages")
        if p.signer not in scheme:
            raise NotParticipant(f"node {p.signer} is not in {scheme.label}")
        signers.add(p.signer)
    if len(signers) < scheme.k:
        raise InsufficientShares(f"{len(signers)} of {scheme.k} shares for {scheme.label}")
    # keep the k lowest signers so equal signatures compare equal
    return ThresholdSig(scheme, d, tuple(sorted(signers)[: scheme.k]))


def tverify(scheme: SchemeId, message: bytes, sig) -> bool:
    if not isinstance(sig, ThresholdSig) or sig.scheme != scheme:
        return False
    if sig.digest != digest(message):
        return False
    signers = sig.signers
    if len(set(signers)) != len(signers) or len(signers) < scheme.k:
        return False
    return all(s in scheme for s in signers)


def sign(signer: NodeId, message: bytes) -> PlainSig:
    return PlainSig(signer, digest(message))


def verify(message: bytes, sig, signer: NodeId) -> bool:
    return isinstance(sig, PlainSig) and sig.signer == signer and sig.digest == digest(message)


class SignLedger:
    """Record of every signing call made during one run."""

    def __init__(self):
        self.events: set[tuple[str, bytes, NodeId]] = set()

    def record(self, label: str, d: bytes, signer: NodeId) -> None:
        self.events.add((label, d, signer))

    def signed(self, label: str, d: bytes, signer: NodeId) -> bool:
        return (label, d, signer) in self.events


class Keyring:
    """Signing capability of a single node."""

    __slots__ = ("node", "_ledger")

    def __init__(self, node: NodeId, ledger: SignLedger):
        self.node = node
        self._ledger = ledger

    def tsign(self, scheme: SchemeId, message: bytes) -> PartialSig:
        ps = tsign(scheme, self.node, message)
        self._ledger.record(scheme.label, ps.digest, self.node)
        return ps

    def sign(self, message: bytes) -> PlainSig:
        s = sign(self.node, message)
        self._ledger.record("PKI", s.digest, self.node)
        return s
