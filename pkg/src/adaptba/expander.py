"""Unbalanced bipartite expanders between parties and relayers.

Left vertices are the ``n`` parties, right vertices the relayers.  Every
party is linked to exactly ``D`` relayers.  The property the dissemination
protocol relies on is that any set of more than ``2t`` parties sees more
than ``t*D`` relayers, so ``t`` faulty parties (who can block at most
``t*D`` relayers) cannot cut off more than ``2t`` parties.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Sequence

EXHAUSTIVE_LIMIT = 10**6


class DegreeExceedsRelayers(ValueError):
    pass


@dataclass(frozen=True)
class BipartiteGraph:
    n_left: int
    n_right: int
    degree: int
    adjacency: tuple[tuple[int, ...], ...]
    seed: int | None = None
    t: int = 0
    c: float = 2.0
    committees: tuple[tuple[int, ...], ...] = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        if len(self.adjacency) != self.n_left:
            raise ValueError("one adjacency list per left vertex")
        right = [[] for _ in range(self.n_right)]
        for p, nbrs in enumerate(self.adjacency):
            if len(nbrs) != self.degree or len(set(nbrs)) != len(nbrs) or list(nbrs) != sorted(nbrs):
                raise ValueError(f"left vertex {p} must have {self.degree} sorted distinct neighbours")
            for r in nbrs:
                if not 0 <= r < self.n_right:
                    raise ValueError(f"relayer {r} out of range")
                right[r].append(p)
        object.__setattr__(self, "committees", tuple(tuple(c) for c in right))

    def neighbours(self, parties: Iterable[int]) -> set[int]:
        out: set[int] = set()
        for p in parties:
            out.update(self.adjacency[p])
        return out

    def committee(self, r: int) -> tuple[int, ...]:
        return self.committees[r]

    def degree_histogram(self) -> dict[int, int]:
        hist: dict[int, int] = {}
        for nbrs in self.adjacency:
            hist[len(nbrs)] = hist.get(len(nbrs), 0) + 1
        return hist

    def to_text(self) -> str:
        head = f"{self.n_left} {self.n_right} {self.degree} {self.t} {self.c} {self.seed}\n"
        return head + "".join(" ".join(map(str, nbrs)) + "\n" for nbrs in self.adjacency)

    @classmethod
    def from_text(cls, text: str) -> "BipartiteGraph":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        n, r, d, t, c, seed = lines[0].split()
        adj = tuple(tuple(int(x) for x in ln.split()) for ln in lines[1:])
        return cls(int(n), int(r), int(d), adj, None if seed == "None" else int(seed), int(t), float(c))


@dataclass(frozen=True)
class ExpansionCertificate:
    mode: str  # "exhaustive" or "sampled"
    verified: bool
    worst_ratio: float
    checked: int
    counterexample: tuple[int, ...] | None = None


def default_degree(n: int, c: float = 2.0) -> int:
    return max(1, math.ceil(c * math.log2(n))) if n > 1 else 1


def default_relayers(n: int, t: int, c: float = 2.0) -> int:
    return math.ceil(8 * c * t * math.log2(n)) if n > 1 else 0


def build_graph(n: int, t: int, c: float = 2.0, seed: int = 0,
                D: int | None = None, R: int | None = None) -> BipartiteGraph:
    """Random left-regular graph: each party picks ``D`` distinct relayers
    uniformly among ``R``.  Deterministic in ``seed``.  Without faults the
    default relayer count would be zero, so it never drops below ``D``."""
    if n < 1 or t < 0:
        raise ValueError("need n >= 1 and t >= 0")
    D = default_degree(n, c) if D is None else D
    R = max(default_relayers(n, t, c), D) if R is None else R
    if D > R:
        raise DegreeExceedsRelayers(f"degree {D} exceeds {R} relayers")
    rng = random.Random(seed)
    adj = tuple(tuple(sorted(rng.sample(range(R), D))) for _ in range(n))
    return BipartiteGraph(n, R, D, adj, seed, t, c)


def complete_graph(n: int, R: int, t: int = 0) -> BipartiteGraph:
    return BipartiteGraph(n, R, R, tuple(tuple(range(R)) for _ in range(n)), None, t)


def _masks(g: BipartiteGraph) -> list[int]:
    masks = []
    for nbrs in g.adjacency:
        m = 0
        for r in nbrs:
            m |= 1 << r
        masks.append(m)
    return masks


def verify_expansion(g: BipartiteGraph, t: int, samples: int = 20000, seed: int = 0,
                     limit: int = EXHAUSTIVE_LIMIT) -> ExpansionCertificate:
    """Check ``|N(S)| > t*D`` for parties sets ``S`` of size ``2t+1``.

    Size ``2t+1`` suffices because ``N`` is monotone under inclusion.  The
    check is exhaustive when there are at most ``limit`` such sets and
    sampled otherwise (a sampled pass is evidence, not proof).
    """
    size = 2 * t + 1
    bound = t * g.degree
    if size > g.n_left:
        return ExpansionCertificate("exhaustive", True, math.inf, 0)
    masks = _masks(g)
    total = math.comb(g.n_left, size)
    worst = math.inf
    worst_set = None
    checked = 0

    if total <= limit:
        # depth-first over combinations, carrying the union of the prefix
        stack = [(0, 0, ())]
        while stack:
            start, acc, chosen = stack.pop()
            if len(chosen) == size:
                checked += 1
                k = acc.bit_count()
                if k < worst:
                    worst, worst_set = k, chosen
                continue
            need = size - len(chosen)
            for p in range(g.n_left - need, start - 1, -1):
                stack.append((p + 1, acc | masks[p], chosen + (p,)))
        mode = "exhaustive"
    else:
        rng = random.Random(seed)
        for _ in range(samples):
            s = tuple(sorted(rng.sample(range(g.n_left), size)))
            acc = 0
            for p in s:
                acc |= masks[p]
            k = acc.bit_count()
            checked += 1
            if k < worst:
                worst, worst_set = k, s
        mode = "sampled"

    ok = worst > bound
    return ExpansionCertificate(mode, ok, worst / (bound + 1), checked, None if ok else worst_set)


def build_verified_graph(n: int, t: int, c: float = 2.0, seed: int = 0,
                         D: int | None = None, R: int | None = None, attempts: int = 64) -> BipartiteGraph:
    """``build_graph`` with seed resampling until ``verify_expansion`` passes.

    Falls back to the last graph built if no attempt passes, which only
    happens for parameters that are too tight to expand."""
    g = None
    for i in range(attempts):
        g = build_graph(n, t, c, seed + i * 7919, D, R)
        if verify_expansion(g, t, samples=2000, seed=seed).verified:
            return g
    return g


def relayer_hosts(n_right: int, n: int) -> tuple[int, ...]:
    """Relayer roles are spread round-robin over the physical nodes."""
    return tuple(r % n for r in range(n_right))


def links(g: BipartiteGraph, hosts: Sequence[int] | None = None) -> list[set[int]]:
    """Parties linked to each relayer.  A node that holds both a party role
    and relayer ``r`` counts as linked to ``r``."""
    out = [set(c) for c in g.committees]
    if hosts is not None:
        for r, h in enumerate(hosts):
            out[r].add(h)
    return out


def blocked_relayers(g: BipartiteGraph, faulty: Iterable[int], hosts: Sequence[int] | None = None) -> set[int]:
    faulty = set(faulty)
    if not faulty:
        return set()
    blocked = g.neighbours(faulty)
    if hosts is not None:
        blocked.update(r for r, h in enumerate(hosts) if h in faulty)
    return blocked


def disconnected_parties(g: BipartiteGraph, faulty: Iterable[int], hosts: Sequence[int] | None = None) -> set[int]:
    """Parties every one of whose relayers is blocked."""
    blocked = blocked_relayers(g, faulty, hosts)
    if not blocked:
        return set()
    party_relayers = [set(nbrs) for nbrs in g.adjacency]
    if hosts is not None:
        for r, h in enumerate(hosts):
            party_relayers[h].add(r)
    return {p for p, rs in enumerate(party_relayers) if rs <= blocked}
