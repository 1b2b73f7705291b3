"""Scenario builders: turn a :class:`ScenarioConfig` into a simulator plus one
node object per party, honest or corrupted."""

from __future__ import annotations

import random

from .core import ConfigError
from .simnet import (AdversaryPolicy, ByzantineBehavior, Crashing, HorizonExceeded, ImmediateScheduler,
                     MainScheduler, Silent, Simulator, ScenarioConfig, Trace, scheduler_async,
                     scheduler_psync, view_clock)


def stream(cfg: ScenarioConfig, name: str) -> random.Random:
    return random.Random(f"{cfg.seed}/{name}")


def make_inputs(cfg: ScenarioConfig, n: int) -> list[int]:
    kind = cfg.inputs
    if kind == "zeros":
        return [0] * n
    if kind == "ones":
        return [1] * n
    if kind == "split":
        return [0 if i < n // 2 else 1 for i in range(n)]
    if kind == "random":
        rng = stream(cfg, "inputs")
        return [rng.randint(0, 1) for _ in range(n)]
    if kind == "cycle":
        # seed-dependent mix of unanimous and random inputs
        return make_inputs(ScenarioConfig(inputs=("zeros", "ones", "random")[cfg.seed % 3], seed=cfg.seed), n)
    raise ConfigError(f"unknown inputs {kind!r}")


def behaviour_list(cfg: ScenarioConfig) -> list[str]:
    return [b.strip() for b in cfg.behaviors.split(",") if b.strip()] or ["silent"]


def default_adversary(cfg: ScenarioConfig, preferred: list[int] | None = None) -> AdversaryPolicy:
    """Corrupt ``f`` nodes.  ``placement=random`` samples them; otherwise the
    first ``f`` of ``preferred`` (a protocol-specific worst-case order)."""
    n, f = cfg.n, cfg.f
    if cfg.placement == "random" or preferred is None:
        corrupted = sorted(stream(cfg, "corrupt").sample(range(n), f))
    else:
        seen = []
        for p in preferred:
            if p not in seen:
                seen.append(p)
        corrupted = sorted(seen[:f])
    kinds = behaviour_list(cfg)
    crash_rng = stream(cfg, "crash")
    behavior = {}
    for idx, node in enumerate(corrupted):
        kind, _, arg = kinds[idx % len(kinds)].partition(":")
        params = (arg,) if arg else ()
        if kind == "crash":
            params = (int(arg),) if arg else (crash_rng.randint(0, cfg.gst + 30 * cfg.delta),)
        elif kind == "mirror":
            params = (int(arg),) if arg else ()
        behavior[node] = ByzantineBehavior(kind, params)
    return AdversaryPolicy(frozenset(corrupted), behavior)


def make_scheduler(cfg: ScenarioConfig, synchrony: str, c_nodes=()):
    if cfg.scheduler == "immediate":
        return ImmediateScheduler()
    if cfg.scheduler == "main":
        return MainScheduler(cfg.n, c_nodes, cfg.t // 2)
    if synchrony == "psync":
        return scheduler_psync(cfg.delta, cfg.gst, stream(cfg, "sched"))
    return scheduler_async(stream(cfg, "sched"), cfg.fairness)


def main_c_nodes(cfg: ScenarioConfig) -> list[int]:
    """The ``floor(t/2)`` parties cut off by the lower-bound schedule."""
    return list(range(cfg.t // 2))


def wrap_generic(behavior: ByzantineBehavior, honest_node):
    """Behaviours that make sense for every protocol."""
    if behavior.variant == "crash":
        return Crashing(honest_node, behavior.params[0] if behavior.params else 0)
    if behavior.variant in ("silent", "crash0"):
        return Silent()
    if behavior.variant == "mirror":
        return honest_node
    return None


def build_ba_psync(cfg: ScenarioConfig, adversary: AdversaryPolicy | None):
    from .ba_psync import BaPsyncNode, BaSetup, EquivocatorNode, SilentLeaderNode, VIEW_MULTIPLE

    params = cfg.params
    params.require_third()
    n = cfg.n
    clock = view_clock(cfg.delta, VIEW_MULTIPLE)
    first = clock.first_view_after(cfg.gst)
    if adversary is None:
        adversary = default_adversary(cfg, [v % n for v in range(first, first + n)])
    setup = BaSetup.create(range(n), cfg.t)
    horizon = cfg.horizon or (first + 20 * n) * clock.length
    sim = Simulator(params, adversary.corrupted, adversary.scheduler or make_scheduler(cfg, "psync", main_c_nodes(cfg)),
                    {setup.clock: clock}, horizon_time=horizon, max_events=cfg.max_events)
    inputs = make_inputs(cfg, n)
    coalition = sim.coalition()
    byz_rng = stream(cfg, "byz")
    nodes = []
    for i in range(n):
        if i not in adversary.corrupted:
            nodes.append(BaPsyncNode(setup, i, inputs[i]))
            continue
        b = adversary.behavior.get(i, ByzantineBehavior("silent"))
        node = wrap_generic(b, BaPsyncNode(setup, i, b.params[0] if b.variant == "mirror" and b.params else inputs[i]))
        if node is None:
            if b.variant == "silent-leader":
                node = SilentLeaderNode(setup, i, inputs[i])
            elif b.variant == "equivocator":
                node = EquivocatorNode(setup, i, inputs[i], coalition, byz_rng,
                                       withhold="withhold" in b.params)
            else:
                raise ConfigError(f"behaviour {b.variant!r} not supported by ba_psync")
        nodes.append(node)
    meta = {"inputs": inputs, "view_length": clock.length, "first_view_after_gst": first,
            "members": list(range(n)), "clock": setup.clock}
    return sim, nodes, meta


def _psync_qab_byzantine(b: ByzantineBehavior, qsetup, i, rng, v_in=None):
    from .qab import PsyncQabSilentLeader, PsyncQabSpammer

    if b.variant == "equivocator":
        return PsyncQabSpammer(qsetup, i, rng, v_in)
    if b.variant == "silent-leader":
        return PsyncQabSilentLeader(qsetup, i, v_in)
    raise ConfigError(f"behaviour {b.variant!r} not supported by psync QAB")


def _psync_horizon(cfg, first_qab_view, qab_len, extra=0):
    return cfg.horizon or extra + (first_qab_view + 4 * cfg.n) * qab_len


def build_qab_psync(cfg: ScenarioConfig, adversary: AdversaryPolicy | None):
    from .qab import CLOCK, VIEW_MULTIPLE, PsyncQabNode, psync_setup, quorum_of, sentinel_predicate

    params = cfg.params
    n, t = cfg.n, cfg.t
    quorum = quorum_of(n, t)
    v_in = stream(cfg, "v_in").randint(0, 1)
    setup = psync_setup(n, t, sentinel_predicate(v_in), quorum)
    clock = view_clock(cfg.delta, VIEW_MULTIPLE)
    first = clock.first_view_after(cfg.gst)
    if adversary is None:
        adversary = default_adversary(cfg, [v % n for v in range(first, first + n)])
    sim = Simulator(params, adversary.corrupted, adversary.scheduler or make_scheduler(cfg, "psync"),
                    {CLOCK: clock}, horizon_time=_psync_horizon(cfg, first, clock.length),
                    max_events=cfg.max_events)
    rng = stream(cfg, "byz")
    nodes = []
    for i in range(n):
        mine = v_in if i in quorum else None
        honest = PsyncQabNode(setup, i, mine)
        if i in adversary.corrupted:
            b = adversary.behavior.get(i, ByzantineBehavior("silent"))
            honest = wrap_generic(b, honest) or _psync_qab_byzantine(b, setup, i, rng, mine)
        nodes.append(honest)
    meta = {"v_in": v_in, "quorum": list(quorum), "view_length": clock.length,
            "first_view_after_gst": first, "clock": CLOCK}
    return sim, nodes, meta


def qab_graph_seed(cfg: ScenarioConfig) -> int:
    return stream(cfg, "graph").randrange(1 << 30)


def build_qab_async(cfg: ScenarioConfig, adversary: AdversaryPolicy | None):
    from .qab import AsyncQabByzantine, AsyncQabNode, async_setup, quorum_of, sentinel_predicate, \
        worst_case_placement

    params = cfg.params
    n, t = cfg.n, cfg.t
    quorum = quorum_of(n, t)
    v_in = stream(cfg, "v_in").randint(0, 1)
    setup = async_setup(n, t, sentinel_predicate(v_in), quorum, c=cfg.c, seed=qab_graph_seed(cfg))
    if adversary is None:
        preferred = worst_case_placement(setup, cfg.f) if cfg.placement != "random" else None
        adversary = default_adversary(cfg, preferred)
    sim = Simulator(params, adversary.corrupted, adversary.scheduler or make_scheduler(cfg, "async"),
                    horizon_time=cfg.horizon or None, max_events=cfg.max_events)
    nodes = []
    for i in range(n):
        honest = AsyncQabNode(setup, i, v_in if i in quorum else None)
        if i in adversary.corrupted:
            b = adversary.behavior.get(i, ByzantineBehavior("silent"))
            node = wrap_generic(b, honest)
            if node is None:
                if b.variant not in ("bogus", "equivocator"):
                    raise ConfigError(f"behaviour {b.variant!r} not supported by async QAB")
                node = AsyncQabByzantine(setup, i, 1 - v_in)
            honest = node
        nodes.append(honest)
    return sim, nodes, qab_meta(setup, v_in)


def qab_meta(setup, v_in) -> dict:
    meta = {"v_in": v_in, "quorum": list(setup.quorum), "direct": setup.direct}
    if not setup.direct:
        meta.update(relayers=setup.n_relayers, degree=setup.graph.degree,
                    graph=setup.graph.to_text(), hosts=list(setup.hosts))
    return meta


def build_quorum_ba(cfg: ScenarioConfig, adversary: AdversaryPolicy | None):
    from .quorum_ba import QuorumBaEquivocator, QuorumBaNode, QuorumBaSetup

    params = cfg.params
    params.require_third()
    n = cfg.n
    if adversary is None:
        adversary = default_adversary(cfg)
    setup = QuorumBaSetup.create(range(n), cfg.t, coin_seed=cfg.seed)
    sim = Simulator(params, adversary.corrupted, adversary.scheduler or make_scheduler(cfg, "async", main_c_nodes(cfg)),
                    horizon_time=cfg.horizon or None, max_events=cfg.max_events)
    inputs = make_inputs(cfg, n)
    rng = stream(cfg, "byz")
    nodes = []
    for i in range(n):
        node = QuorumBaNode(setup, i, inputs[i])
        if i in adversary.corrupted:
            b = adversary.behavior.get(i, ByzantineBehavior("silent"))
            node = wrap_generic(b, node)
            if node is None:
                if b.variant != "equivocator":
                    raise ConfigError(f"behaviour {b.variant!r} not supported by quorum_ba")
                node = QuorumBaEquivocator(setup, i, rng)
        nodes.append(node)
    return sim, nodes, {"inputs": inputs, "members": list(range(n))}


def build_compose_psync(cfg: ScenarioConfig, adversary: AdversaryPolicy | None):
    from . import ba_psync, qab
    from .compose import PSYNC, ComposedConfig, ComposedNode, make_verify_predicate, psync_to_qab

    params = cfg.params
    cc = ComposedConfig(PSYNC, cfg.n, cfg.t)
    n, quorum = cfg.n, cc.quorum
    inner = ba_psync.BaSetup.create(quorum, cfg.t, label="Q")
    qsetup = qab.psync_setup(n, cfg.t, make_verify_predicate(PSYNC, inner), quorum)
    ba_clock = view_clock(cfg.delta, ba_psync.VIEW_MULTIPLE)
    qab_clock = view_clock(cfg.delta, qab.VIEW_MULTIPLE)
    first = ba_clock.first_view_after(cfg.gst)
    if adversary is None:
        # inner leaders after GST first, then QAB leaders
        order = [quorum[v % len(quorum)] for v in range(first, first + len(quorum))]
        q_first = qab_clock.first_view_after(cfg.gst)
        order += [v % n for v in range(q_first, q_first + n)]
        adversary = default_adversary(cfg, order)
    inner_deadline = (first + len(quorum)) * ba_clock.length
    horizon = _psync_horizon(cfg, qab_clock.first_view_after(inner_deadline), qab_clock.length)
    sim = Simulator(params, adversary.corrupted, adversary.scheduler or make_scheduler(cfg, "psync"),
                    {ba_psync.CLOCK: ba_clock, qab.CLOCK: qab_clock}, horizon_time=horizon,
                    max_events=cfg.max_events)
    inputs = make_inputs(cfg, n)
    coalition = sim.coalition()
    rng = stream(cfg, "byz")
    nodes = []
    for i in range(n):
        in_q = i in quorum
        node = ComposedNode(i, ba_psync.BaPsyncNode(inner, i, inputs[i]) if in_q else None,
                            qab.PsyncQabNode(qsetup, i), ba_psync.TAGS, psync_to_qab)
        if i in adversary.corrupted:
            b = adversary.behavior.get(i, ByzantineBehavior("silent"))
            generic = wrap_generic(b, node)
            if generic is not None:
                node = generic
            else:
                bad_inner = None
                if in_q and b.variant == "equivocator":
                    bad_inner = ba_psync.EquivocatorNode(inner, i, inputs[i], coalition, rng,
                                                         withhold="withhold" in b.params)
                elif in_q and b.variant == "silent-leader":
                    bad_inner = ba_psync.SilentLeaderNode(inner, i, inputs[i])
                node = ComposedNode(i, bad_inner, _psync_qab_byzantine(b, qsetup, i, rng),
                                    ba_psync.TAGS, psync_to_qab)
        nodes.append(node)
    meta = {"inputs": inputs, "quorum": list(quorum), "view_length": ba_clock.length,
            "qab_view_length": qab_clock.length, "first_view_after_gst": first,
            "inner_deadline": inner_deadline, "members": list(quorum), "clock": inner.clock,
            "label": "Q"}
    return sim, nodes, meta


def build_compose_async(cfg: ScenarioConfig, adversary: AdversaryPolicy | None):
    from . import qab, quorum_ba
    from .compose import ASYNC, CertifiedValue, ComposedConfig, ComposedNode, async_node, make_verify_predicate

    params = cfg.params
    cc = ComposedConfig(ASYNC, cfg.n, cfg.t)
    n, quorum = cfg.n, cc.quorum
    inner = quorum_ba.QuorumBaSetup.create(quorum, cfg.t, coin_seed=cfg.seed)
    qsetup = qab.async_setup(n, cfg.t, make_verify_predicate(ASYNC, inner), quorum, c=cfg.c,
                             seed=qab_graph_seed(cfg))
    if adversary is None:
        preferred = qab.worst_case_placement(qsetup, cfg.f) if cfg.placement != "random" else None
        adversary = default_adversary(cfg, preferred)
    c_nodes = main_c_nodes(cfg)
    sim = Simulator(params, adversary.corrupted, adversary.scheduler or make_scheduler(cfg, "async", c_nodes),
                    horizon_time=cfg.horizon or None, max_events=cfg.max_events)
    inputs = make_inputs(cfg, n)
    rng = stream(cfg, "byz")
    nodes = []
    for i in range(n):
        in_q = i in quorum
        node = async_node(i, inner, qab.AsyncQabNode(qsetup, i, autostart=False), inputs[i] if in_q else None)
        if i in adversary.corrupted:
            b = adversary.behavior.get(i, ByzantineBehavior("silent"))
            generic = wrap_generic(b, node)
            if generic is not None:
                node = generic
            elif b.variant == "equivocator":
                node = ComposedNode(i, quorum_ba.QuorumBaEquivocator(inner, i, rng) if in_q else None,
                                    qab.AsyncQabByzantine(qsetup, i, CertifiedValue(rng.randint(0, 1), None)),
                                    quorum_ba.TAGS, lambda value, **_: None)
            else:
                raise ConfigError(f"behaviour {b.variant!r} not supported by compose_async")
        nodes.append(node)
    meta = qab_meta(qsetup, None)
    meta.update(inputs=inputs, c_nodes=c_nodes, members=list(quorum))
    return sim, nodes, meta


BUILDERS = {
    "ba_psync": build_ba_psync,
    "qab_psync": build_qab_psync,
    "qab_async": build_qab_async,
    "quorum_ba": build_quorum_ba,
    "compose_psync": build_compose_psync,
    "compose_async": build_compose_async,
}


def build(cfg: ScenarioConfig, factory, adversary: AdversaryPolicy | None = None) -> Trace:
    cfg.validate()
    sim, nodes, meta = factory(cfg, adversary)
    sim.trace.meta.update(meta)
    sim.trace.meta.update(protocol=cfg.protocol, seed=cfg.seed, behaviors=cfg.behaviors,
                          scheduler=cfg.scheduler, fairness=cfg.fairness)
    try:
        return sim.run(nodes)
    except HorizonExceeded as e:
        e.trace.meta.update(meta)
        e.trace.meta.update(protocol=cfg.protocol, seed=cfg.seed, behaviors=cfg.behaviors,
                            scheduler=cfg.scheduler, fairness=cfg.fairness)
        raise
