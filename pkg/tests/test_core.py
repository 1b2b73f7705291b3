import pytest

from adaptba.core import ConfigError, ProtocolMessage, SystemParams, check_bin, count_words, leader_of
from adaptba.simnet import DELIVER, SEND, Event, ScenarioConfig, Trace, run


@pytest.mark.parametrize("view,n,leader", [(0, 4, 0), (5, 4, 1), (4, 4, 0), (17, 7, 3)])
def test_leader_round_robin(view, n, leader):
    assert leader_of(view, n) == leader


def test_params_validation():
    SystemParams(4, 1, 1)
    with pytest.raises(ConfigError):
        SystemParams(4, 1, 2)
    with pytest.raises(ConfigError):
        SystemParams(4, 1, delta=0)
    with pytest.raises(ConfigError):
        SystemParams(6, 2).require_third()
    SystemParams(7, 2).require_third()


def test_check_bin():
    assert check_bin(1) == 1
    with pytest.raises(ValueError):
        check_bin(2)


def _send(time, src, dst, honest=True):
    return Event(time, time, SEND, ProtocolMessage(src, dst, 0, "X", None, 1, time, time, honest))


def test_count_words_filters():
    params = SystemParams(4, 1, gst=10)
    assert count_words(Trace(params)) == 0
    tr = Trace(params, events=[_send(1, 0, 1), _send(2, 0, 2), _send(10, 1, 2), _send(11, 2, 3),
                               _send(12, 3, 0), _send(13, 3, 1, honest=False), _send(14, 2, 2)])
    assert count_words(tr, honest_only=True, after=10) == 3
    assert count_words(tr, honest_only=False, after=10) == 4
    assert count_words(tr) == 5


def test_count_words_ignores_deliveries():
    tr = Trace(SystemParams(4, 1), events=[_send(1, 0, 1)])
    tr.events.append(Event(2, 9, DELIVER, tr.events[0].message))
    assert count_words(tr) == 1


def test_count_words_reference_run():
    # four nodes, honest leader 0, instant delivery: the leader's five
    # broadcasts reach three peers and each peer answers four times
    cfg = ScenarioConfig(protocol="ba_psync", n=4, t=1, f=0, scheduler="immediate", inputs="zeros")
    assert count_words(run(cfg)) == 27
