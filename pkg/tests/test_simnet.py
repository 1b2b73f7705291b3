import random

import pytest

from adaptba.audit import check_eventual_delivery, check_main_schedule
from adaptba.core import ConfigError, ProtocolMessage, SystemParams
from adaptba.simnet import (DELIVER, MainScheduler, HorizonExceeded, ScenarioConfig, Simulator, Trace,
                            main_schedule, run, scheduler_async, scheduler_psync, view_clock)


def _msg(src=0, dst=1, honest=True):
    return ProtocolMessage(src, dst, 0, "X", None, 1, 1, 0, honest)


@pytest.mark.parametrize("s", [0, 5, 30, 31, 99])
def test_psync_after_gst_within_delta(s):
    sch = scheduler_psync(10, 30, random.Random(s))
    for _ in range(200):
        d = sch.delivery_time(_msg(), s)
        assert s < d <= max(s, 30) + 10


def test_psync_unit_delta():
    sch = scheduler_psync(1, 0, random.Random(0))
    assert {sch.delivery_time(_msg(), 5) for _ in range(20)} == {6}


def test_async_reorders_and_is_reproducible():
    a = scheduler_async(random.Random(4), 50)
    times = [a.delivery_time(_msg(), 0) for _ in range(50)]
    assert all(1 <= d <= 50 for d in times)
    assert any(x > y for x, y in zip(times, times[1:]))  # a later send may arrive first
    b = scheduler_async(random.Random(4), 50)
    assert times == [b.delivery_time(_msg(), 0) for _ in range(50)]


def test_view_clock():
    c9 = view_clock(1, 9)
    assert c9.view_at(8.5) == 0 and c9.view_at(9) == 1
    assert view_clock(1, 3).view_at(7) == 2
    c = view_clock(10, 9)
    assert c.start(2) == 180 and c.first_view_after(181) == 3 and c.first_view_after(180) == 2


def test_reference_run_decides_in_first_view():
    cfg = ScenarioConfig(protocol="ba_psync", n=4, t=1, f=0, scheduler="immediate", inputs="zeros")
    tr = run(cfg)
    assert {d.value for d in tr.decisions.values()} == {0}
    assert all(d.time < 90 for d in tr.decisions.values())


@pytest.mark.parametrize("protocol", ["ba_psync", "compose_psync", "compose_async", "qab_async"])
def test_same_seed_same_bytes(protocol):
    cfg = ScenarioConfig(protocol=protocol, n=13, t=3, f=2, seed=5, gst=40, behaviors="equivocator,crash")
    assert run(cfg).to_jsonl() == run(cfg).to_jsonl()


def test_too_many_corruptions_rejected():
    with pytest.raises(ConfigError):
        run(ScenarioConfig(protocol="ba_psync", n=4, t=1, f=2))


def test_config_text_round_trip():
    cfg = ScenarioConfig(protocol="qab_async", n=50, t=2, f=1, behaviors="crash:40,silent", c=1.5, seed=9)
    assert ScenarioConfig.from_text(cfg.to_text()) == cfg
    with pytest.raises(ConfigError):
        ScenarioConfig.from_text("bogus = 1")
    with pytest.raises(ConfigError):
        ScenarioConfig.from_text("n = four")


def test_horizon_raises_with_trace():
    cfg = ScenarioConfig(protocol="ba_psync", n=4, t=1, f=0, horizon=5)
    with pytest.raises(HorizonExceeded) as e:
        run(cfg)
    assert e.value.trace.meta["horizon_hit"]


def test_held_message_is_flagged():
    tr = Trace(SystemParams(4, 1))
    m = _msg()
    from adaptba.simnet import SEND, Event
    tr.events.append(Event(0, 1, SEND, m))
    assert check_eventual_delivery(tr)
    tr.events.append(Event(3, 2, DELIVER, m))
    assert not check_eventual_delivery(tr)


def test_main_scheduler_classes():
    sch = MainScheduler(10, [0, 1], 2)
    assert sch.delivery_time(_msg(0, 1), 0) is None        # C to C
    assert sch.delivery_time(_msg(5, 0), 0) is None        # first two B to p0
    assert sch.delivery_time(_msg(6, 0), 0) is None
    assert sch.delivery_time(_msg(7, 0), 0) == 1
    assert sch.delivery_time(_msg(0, 5), 0) == 1


@pytest.mark.parametrize("t", [0, 1])
def test_main_degenerates_without_c(t):
    sch = MainScheduler(10, range(t // 2), t // 2)
    assert sch.delivery_time(_msg(0, 1), 3) == 4


def test_main_schedule_all_decide_zero():
    tr = main_schedule(SystemParams(13, 4), seed=3)
    assert {d.value for d in tr.decisions.values()} == {0}
    assert not check_main_schedule(tr)
    last = max(d.time for d in tr.decisions.values())
    c_nodes = {0, 1}
    early = {}
    for e in tr.events:
        m = e.message
        if e.kind == "Send" and m.receiver in c_nodes and m.sender not in c_nodes:
            early.setdefault(m.receiver, []).append(m.msg_id)
    delivered_after = {e.message.msg_id for e in tr.events if e.kind == DELIVER and e.time > last}
    for p in c_nodes:
        assert all(mid in delivered_after for mid in early[p][:2])


def test_main_schedule_rejects_oversized_t():
    # the composition needs a 3t+1 quorum inside n
    with pytest.raises((ConfigError, ValueError)):
        main_schedule(SystemParams(10, 4))


def test_simulator_rejects_too_many_corruptions():
    with pytest.raises(ConfigError):
        Simulator(SystemParams(4, 1), [0, 1], None)
