import json

from adaptba import ba_psync as bp
from adaptba.audit import (audit_jsonl, audit_trace, check_agreement, check_ba_certificates, check_capabilities,
                           check_deadline, check_delivery_bounds, check_unanimity, trace_from_jsonl)
from adaptba.core import SystemParams
from adaptba.crypto import ThresholdSig, digest, threshold_scheme, tsign
from adaptba.simnet import DECIDE, SEND, Event, ScenarioConfig, Trace, run


def base_trace():
    return run(ScenarioConfig(protocol="ba_psync", n=7, t=2, f=2, seed=3, behaviors="equivocator"))


def test_clean_run_passes():
    assert audit_trace(base_trace()).ok


def test_conflicting_decisions_detected():
    tr = base_trace()
    honest = tr.honest[0]
    other = 1 - tr.decisions[honest].value
    tr.events.append(Event(tr.end_time, 10**9, DECIDE, node=honest, value=other))
    assert check_agreement(tr)
    assert audit_trace(tr).exit_code() == 3


def test_unanimity_violation_detected():
    tr = Trace(SystemParams(4, 1), meta={"inputs": [1, 1, 1, 1]})
    tr.events.append(Event(5, 1, DECIDE, node=0, value=0))
    assert check_unanimity(tr)


def test_forged_signature_flagged():
    tr = base_trace()
    setup = bp.BaSetup.create(range(7), 2)
    honest = [i for i in tr.honest][:5]
    stmt = bp.commit_stmt(1, 99)
    forged = bp.CommitProof(1, 99, ThresholdSig(setup.global_scheme, digest(stmt), tuple(sorted(honest))))
    m = tr.events[0].message
    from adaptba.core import ProtocolMessage
    bad = ProtocolMessage(min(tr.corrupted), honest[0], 99, bp.SEND_COMMIT, bp.SendCommit(forged), 1, 10**9, 0, False)
    tr.events.append(Event(0, 10**9, SEND, bad))
    assert check_capabilities(tr)


def test_coalition_signatures_are_legal():
    # corrupted nodes may sign anything; an honest share never signed is not
    tr = base_trace()
    scheme = threshold_scheme("BA/GLOBAL", range(7), 5)
    from adaptba.core import ProtocolMessage
    c = min(tr.corrupted)
    ok = ProtocolMessage(c, tr.honest[0], 0, "X", tsign(scheme, c, b"m"), 1, 10**9, 0, False)
    bad = ProtocolMessage(c, tr.honest[0], 0, "X", tsign(scheme, tr.honest[1], b"m"), 1, 10**9 + 1, 0, False)
    tr.events.append(Event(0, 10**9, SEND, ok))
    assert not check_capabilities(tr)
    tr.events.append(Event(0, 10**9 + 1, SEND, bad))
    assert check_capabilities(tr)


def test_two_commit_values_flagged():
    tr = base_trace()
    setup = bp.BaSetup.create(range(7), 2)
    from adaptba.core import ProtocolMessage
    for i, v in enumerate((0, 1)):
        stmt = bp.commit_stmt(v, 0)
        sig = ThresholdSig(setup.global_scheme, digest(stmt), (0, 1, 2, 3, 4))
        msg = ProtocolMessage(0, 1, 0, bp.SEND_COMMIT, bp.SendCommit(bp.CommitProof(v, 0, sig)), 1, 10**9 + i, 0, False)
        tr.events.append(Event(0, 10**9 + i, SEND, msg))
    assert any("both values" in v for v in check_ba_certificates(tr))


def test_late_delivery_flagged():
    tr = base_trace()
    tr.meta["scheduler"] = "random"
    for e in tr.events:
        if e.kind == "Deliver" and e.message.sender != e.message.receiver:
            e.time = e.message.send_time + 10 * tr.params.delta + tr.params.gst + 1
            break
    assert check_delivery_bounds(tr)


def test_deadline():
    tr = base_trace()
    assert not check_deadline(tr)
    d = next(iter(tr.decisions))
    tr.events.insert(0, Event(10**6, 0, DECIDE, node=tr.honest[0], value=tr.decisions[tr.honest[0]].value))
    assert check_deadline(tr)


def test_jsonl_round_trip_audit():
    tr = base_trace()
    text = tr.to_jsonl()
    back = trace_from_jsonl(text)
    assert len(back.events) == len(tr.events)
    assert {i: d.value for i, d in back.decisions.items()} == {i: d.value for i, d in tr.decisions.items()}
    assert audit_jsonl(text).ok
    lines = text.splitlines()
    rec = json.loads(lines[-1])
    honest = [i for i in tr.honest][0]
    lines.append(json.dumps({"time": rec["time"] + 1, "seq": 10**9, "kind": "Decide", "from": honest, "to": None,
                             "view": 0, "tag": None, "value": 1 - tr.decisions[honest].value}))
    assert not audit_jsonl("\n".join(lines)).safety_ok


def test_async_decomposition_on_real_run():
    tr = run(ScenarioConfig(protocol="qab_async", n=50, t=4, f=4, seed=1, placement="worst"))
    assert audit_trace(tr).ok
