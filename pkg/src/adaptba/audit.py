"""Trace auditors.

Every check here re-derives its verdict from the recorded trace (events,
decisions, the signing ledger and the scenario metadata), never from state
the protocol objects keep about themselves.  Each check returns a list of
human-readable violations; an empty list means the property holds.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

from .core import Decision, ProtocolMessage, SystemParams
from .crypto import PartialSig, ThresholdSig, digest, statement
from .simnet import DECIDE, DELIVER, SEND, Event, Trace

PSYNC_PROTOCOLS = ("ba_psync", "qab_psync", "compose_psync")


@dataclass
class AuditReport:
    safety: list[str] = field(default_factory=list)
    liveness: list[str] = field(default_factory=list)
    bound: list[str] = field(default_factory=list)

    @property
    def safety_ok(self) -> bool:
        return not self.safety

    @property
    def liveness_ok(self) -> bool:
        return not self.liveness

    @property
    def ok(self) -> bool:
        return self.safety_ok and self.liveness_ok and not self.bound

    def exit_code(self) -> int:
        if self.safety:
            return 3
        if self.liveness:
            return 4
        if self.bound:
            return 5
        return 0


# --- decisions ---------------------------------------------------------------

def honest_decide_events(trace: Trace):
    return [e for e in trace.events if e.kind == DECIDE and e.node not in trace.corrupted]


def check_agreement(trace: Trace) -> list[str]:
    out = []
    per_node: dict[int, set] = {}
    for e in honest_decide_events(trace):
        per_node.setdefault(e.node, set()).add(e.value)
    for node, vals in sorted(per_node.items()):
        if len(vals) > 1:
            out.append(f"node {node} decided several values {sorted(vals)}")
    values = set().union(*per_node.values()) if per_node else set()
    if len(values) > 1:
        out.append(f"honest nodes decided different values {sorted(values)}")
    return out


def expected_value(trace: Trace):
    """Value every honest node must decide, if the inputs force one."""
    meta = trace.meta
    if meta.get("v_in") is not None:
        return meta["v_in"]
    inputs = meta.get("inputs")
    if inputs is None:
        return None
    vals = {inputs[i] for i in trace.honest}
    return vals.pop() if len(vals) == 1 else None


def check_unanimity(trace: Trace) -> list[str]:
    v = expected_value(trace)
    if v is None:
        return []
    return [f"node {e.node} decided {e.value} although every honest input is {v}"
            for e in honest_decide_events(trace) if e.value != v]


def check_termination(trace: Trace) -> list[str]:
    decided = {e.node for e in honest_decide_events(trace)}
    missing = [i for i in trace.honest if i not in decided]
    return [f"honest nodes {missing} never decided"] if missing else []


def first_decisions(trace: Trace) -> dict[int, int]:
    out: dict[int, int] = {}
    for e in honest_decide_events(trace):
        out.setdefault(e.node, e.time)
    return out


def liveness_deadline(trace: Trace) -> int | None:
    """Latest time by which the psync protocols must have every honest node
    decided, derived from GST and the view structure."""
    meta = trace.meta
    proto = meta.get("protocol")
    n = trace.params.n
    if proto == "ba_psync":
        return (meta["first_view_after_gst"] + n) * meta["view_length"]
    if proto in ("compose_psync", "qab_psync"):
        length = meta.get("qab_view_length", meta.get("view_length"))
        start = meta.get("inner_deadline", trace.params.gst)
        decided = first_decisions(trace)
        view = -(-start // length)
        # first QAB view after ``start`` whose leader is honest and undecided
        for view in range(view, view + 2 * n + 1):
            lead = view % n
            begin = view * length
            if lead not in trace.corrupted and decided.get(lead, math.inf) >= begin:
                return (view + 1) * length
        return (view + 1) * length
    return None


def check_deadline(trace: Trace) -> list[str]:
    deadline = liveness_deadline(trace)
    if deadline is None:
        return []
    late = {i: t for i, t in first_decisions(trace).items() if t > deadline}
    return [f"nodes {sorted(late)} decided after the deadline {deadline}"] if late else []


# --- schedule ----------------------------------------------------------------

def message_events(trace: Trace):
    return [e for e in trace.events if e.message is not None and e.kind in (SEND, DELIVER)]


def check_delivery_bounds(trace: Trace) -> list[str]:
    """Psync: ``d <= max(s, GST) + delta``.  Async random scheduler: delay at
    most the fairness bound.  Self-messages are instantaneous."""
    meta = trace.meta
    if meta.get("scheduler", "random") != "random":
        return []
    p = trace.params
    psync = meta.get("protocol") in PSYNC_PROTOCOLS
    out = []
    for e in trace.events:
        if e.kind != DELIVER:
            continue
        m = e.message
        s = m.send_time
        if m.sender == m.receiver:
            limit = s
        elif psync:
            limit = max(s, p.gst) + p.delta
        else:
            limit = s + meta.get("fairness", 50)
        if not s < e.time <= limit and not (m.sender == m.receiver and e.time == s):
            out.append(f"message {m.msg_id} sent at {s} delivered at {e.time} (limit {limit})")
            if len(out) > 20:
                break
    return out


def check_eventual_delivery(trace: Trace) -> list[str]:
    sent = {e.message.msg_id: e.message for e in trace.events if e.kind == SEND and e.message.honest}
    for e in trace.events:
        if e.kind == DELIVER:
            sent.pop(e.message.msg_id, None)
    return [f"{len(sent)} honest messages never delivered"] if sent else []


def check_main_schedule(trace: Trace) -> list[str]:
    """The lower-bound schedule: no message between two C nodes and none of
    the first ``floor(t/2)`` B-to-p messages (p in C) is delivered before the
    last honest decision."""
    meta = trace.meta
    if meta.get("scheduler") != "main":
        return []
    c_nodes = set(meta.get("c_nodes", range(trace.params.t // 2)))
    k = trace.params.t // 2
    decided = first_decisions(trace)
    if len(decided) < len(trace.honest):
        return ["not every honest node decided"]
    last = max(decided.values(), default=0)
    withheld: set[int] = set()
    counts = {p: 0 for p in c_nodes}
    for e in trace.events:
        if e.kind != SEND:
            continue
        m = e.message
        if m.sender == m.receiver:
            continue
        if m.sender in c_nodes and m.receiver in c_nodes:
            withheld.add(m.msg_id)
        elif m.receiver in c_nodes and counts[m.receiver] < k:
            counts[m.receiver] += 1
            withheld.add(m.msg_id)
    out = []
    for e in trace.events:
        if e.kind == DELIVER and e.message.msg_id in withheld and e.time < last:
            out.append(f"withheld message {e.message.msg_id} delivered at {e.time} before {last}")
    return out


# --- signatures ----------------------------------------------------------------

def iter_signatures(obj, _seen=None):
    """Yield every PartialSig / ThresholdSig reachable from a payload."""
    if _seen is None:
        _seen = set()
    stack = [obj]
    while stack:
        o = stack.pop()
        if o is None or isinstance(o, (int, str, bytes, float, bool)):
            continue
        if id(o) in _seen:
            continue
        _seen.add(id(o))
        if isinstance(o, (PartialSig, ThresholdSig)):
            yield o
        elif dataclasses.is_dataclass(o):
            stack.extend(getattr(o, f.name) for f in dataclasses.fields(o))
        elif isinstance(o, (tuple, list, set, frozenset)):
            stack.extend(o)
        elif isinstance(o, dict):
            stack.extend(o.values())


def all_signatures(trace: Trace):
    seen: set = set()
    for e in trace.events:
        if e.kind == SEND and e.message.payload is not None:
            yield from iter_signatures(e.message.payload, seen)


def check_capabilities(trace: Trace) -> list[str]:
    """Every honest signer named in a signature must have a matching signing
    event in the ledger, and a full threshold signature must carry at least
    ``k - (corrupted participants)`` honest signers with such events."""
    ledger = trace.ledger
    if ledger is None:
        return []
    bad = trace.corrupted
    out = []
    checked: set = set()
    for sig in all_signatures(trace):
        key = (type(sig), sig)
        if key in checked:
            continue
        checked.add(key)
        label = sig.scheme.label
        if isinstance(sig, PartialSig):
            if sig.signer not in bad and not ledger.signed(label, sig.digest, sig.signer):
                out.append(f"share of honest {sig.signer} under {label} without a signing event")
            continue
        honest = [s for s in sig.signers if s not in bad]
        unsigned = [s for s in honest if not ledger.signed(label, sig.digest, s)]
        if unsigned:
            out.append(f"{label} signature names honest {unsigned} who never signed")
        if len(sig.signers) >= sig.scheme.k:
            need = sig.scheme.k - len(bad & set(sig.scheme.participants))
            if len(honest) - len(unsigned) < need:
                out.append(f"{label} signature with {len(honest) - len(unsigned)} honest signers, need {need}")
    return out


def check_ba_certificates(trace: Trace) -> list[str]:
    """Agreement-level certificates: at most one value per (kind, view) and a
    single committed value overall."""
    meta = trace.meta
    if trace.ledger is None or meta.get("protocol") not in ("ba_psync", "compose_psync"):
        return []
    label = f"{meta.get('label', 'BA')}/GLOBAL"
    sigs = [s for s in all_signatures(trace)
            if isinstance(s, ThresholdSig) and s.scheme.label == label and len(s.signers) >= s.scheme.k]
    if not sigs:
        return []
    max_view = max((e.message.view for e in trace.events if e.kind == SEND), default=0)
    table = {}
    for view in range(max_view + 2):
        for kind in ("KEY", "LOCK", "COMMIT"):
            for v in (0, 1):
                table[digest(statement(kind, v, view))] = (kind, v, view)
    by_slot: dict = {}
    commits = set()
    for s in sigs:
        hit = table.get(s.digest)
        if hit is None:
            continue
        kind, v, view = hit
        by_slot.setdefault((kind, view), set()).add(v)
        if kind == "COMMIT":
            commits.add(v)
    out = [f"{kind} certificates for both values in view {view}"
           for (kind, view), vals in sorted(by_slot.items()) if len(vals) > 1]
    if len(commits) > 1:
        out.append("commit certificates exist for both values")
    return out


# --- QAB -----------------------------------------------------------------------

def qab_value(payload):
    if payload is None:
        return None
    if hasattr(payload, "relayer") and hasattr(payload, "value"):
        payload = payload.value
    if isinstance(payload, int):
        return payload
    return getattr(payload, "value", None)


def check_qab_precondition(trace: Trace) -> list[str]:
    """Honest quorum members hand the same value to QAB."""
    quorum = set(trace.meta.get("quorum", ()))
    vals = set()
    for e in trace.events:
        if e.kind != SEND or not e.message.honest or e.message.sender not in quorum:
            continue
        m = e.message
        if m.tag in ("QAB_VAL", "QAB_REPLY", "QAB_DIRECT") and m.payload is not None:
            if m.tag == "QAB_VAL" and getattr(m.payload, "to_party", False):
                continue
            vals.add(qab_value(m.payload))
    return [f"honest quorum members initiated QAB with {sorted(vals)}"] if len(vals) > 1 else []


def qab_graph(trace: Trace):
    from .expander import BipartiteGraph

    text = trace.meta.get("graph")
    if not text:
        return None, None
    return BipartiteGraph.from_text(text), tuple(trace.meta["hosts"])


def disconnected(trace: Trace) -> set[int] | None:
    from .expander import disconnected_parties

    g, hosts = qab_graph(trace)
    if g is None:
        return None
    return disconnected_parties(g, trace.corrupted, hosts)


def check_qab_async(trace: Trace) -> list[str]:
    """(I) at most ``2t`` parties disconnected; (II) each connected honest
    party receives a relayed value; (III) each honest quorum member that
    initiated receives certificates covering ``n - 2t`` parties."""
    from .expander import blocked_relayers, links

    g, hosts = qab_graph(trace)
    if g is None:
        return []
    p = trace.params
    out = []
    cut = disconnected(trace)
    if len(cut) > 2 * p.t:
        out.append(f"{len(cut)} parties disconnected, more than 2t = {2 * p.t}")
    blocked = blocked_relayers(g, trace.corrupted, hosts)
    committees = links(g, hosts)
    relayed = set()
    cert_cover: dict[int, set] = {}
    initiated = set()
    for e in trace.events:
        m = e.message
        if m is None:
            continue
        if e.kind == SEND and m.tag == "QAB_VAL" and m.honest and not getattr(m.payload, "to_party", True):
            initiated.add(m.sender)
        if e.kind != DELIVER:
            continue
        if m.tag == "QAB_VAL" and getattr(m.payload, "to_party", False) and m.payload.relayer not in blocked:
            relayed.add(m.receiver)
        elif m.tag == "QAB_CERT" and m.payload is not None and m.honest:
            cert_cover.setdefault(m.receiver, set()).update(committees[m.payload.relayer])
    for party in trace.honest:
        if party not in cut and party not in relayed and initiated:
            out.append(f"connected party {party} never received a relayed value")
    for qn in sorted(initiated):
        if qn not in trace.corrupted and len(cert_cover.get(qn, ())) < p.n - 2 * p.t:
            out.append(f"quorum node {qn} never saw certificates covering n - 2t parties")
    return out


# --- entry points ----------------------------------------------------------------

def audit_trace(trace: Trace) -> AuditReport:
    r = AuditReport()
    r.safety += check_agreement(trace)
    r.safety += check_unanimity(trace)
    r.safety += check_capabilities(trace)
    r.safety += check_ba_certificates(trace)
    r.safety += check_qab_precondition(trace)
    r.safety += check_delivery_bounds(trace)
    r.safety += check_main_schedule(trace)
    r.liveness += check_termination(trace)
    r.liveness += check_deadline(trace)
    r.liveness += check_eventual_delivery(trace)
    if trace.meta.get("protocol") in ("qab_async", "compose_async"):
        r.liveness += check_qab_async(trace)
    return r


def trace_from_jsonl(text: str) -> Trace:
    """Rebuild a payload-free trace.  Signature-level checks are skipped for
    such traces because signatures are not serialised."""
    lines = [json.loads(ln) for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].get("kind") != "Header":
        raise ValueError("trace must start with a Header record")
    h = lines[0]
    params = SystemParams(h["n"], h["t"], h["f"], h["delta"], h["gst"])
    meta = dict(h.get("meta", {}))
    meta.update(protocol=h.get("protocol"), seed=h.get("seed"))
    trace = Trace(params, corrupted=frozenset(h["corrupted"]), meta=meta, ledger=None,
                  end_time=h.get("end_time", 0))
    for rec in lines[1:]:
        kind = rec["kind"]
        if kind in (SEND, DELIVER):
            msg = ProtocolMessage(rec["from"], rec["to"], rec["view"], rec["tag"], None, 1,
                                  rec["msg"], rec["sent"], rec["honest"])
            trace.events.append(Event(rec["time"], rec["seq"], kind, msg))
        else:
            trace.events.append(Event(rec["time"], rec["seq"], kind, node=rec["from"],
                                      view=rec.get("view", 0), value=rec.get("value")))
            if kind == DECIDE and rec["from"] not in trace.decisions:
                trace.decisions[rec["from"]] = Decision(rec["value"], rec["time"])
    return trace


def audit_jsonl(text: str) -> AuditReport:
    trace = trace_from_jsonl(text)
    r = AuditReport()
    r.safety += check_agreement(trace)
    r.safety += check_unanimity(trace)
    r.safety += check_delivery_bounds(trace)
    r.safety += check_main_schedule(trace)
    r.liveness += check_termination(trace)
    r.liveness += check_deadline(trace)
    r.liveness += check_eventual_delivery(trace)
    if trace.meta.get("graph"):
        cut = disconnected(trace)
        if len(cut) > 2 * trace.params.t:
            r.liveness.append(f"{len(cut)} parties disconnected, more than 2t")
    return r
