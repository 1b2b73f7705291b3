import pytest
from hypothesis import given, settings, strategies as st

from adaptba.crypto import (InsufficientShares, Keyring, MixedMessages, NotParticipant, PartialSig, SignLedger,
                            ThresholdSig, aggregate_scheme, digest, encode, sign, statement, tcombine,
                            threshold_scheme, tsign, tverify, verify)

M = statement("KEY", 1, 3)


@pytest.fixture
def s3():
    return threshold_scheme("S", range(4), 3)


def test_tsign_shape_and_determinism(s3):
    p = tsign(s3, 1, M)
    assert p == PartialSig(s3, 1, digest(M))
    assert tsign(s3, 1, M) == p


def test_tsign_outsider(s3):
    with pytest.raises(NotParticipant):
        tsign(s3, 9, M)


def test_combine_exact_and_short(s3):
    sig = tcombine(s3, M, [tsign(s3, i, M) for i in (0, 1, 2)])
    assert sig.signers == (0, 1, 2)
    assert tverify(s3, M, sig)
    with pytest.raises(InsufficientShares):
        tcombine(s3, M, [tsign(s3, i, M) for i in (0, 1)])


def test_combine_extra_shares_keeps_canonical_subset(s3):
    sig = tcombine(s3, M, [tsign(s3, i, M) for i in (3, 2, 1, 0)])
    assert len(sig.signers) == 3 and tverify(s3, M, sig)


def test_combine_rejects_mixed_messages(s3):
    other = statement("KEY", 0, 3)
    with pytest.raises(MixedMessages):
        tcombine(s3, M, [tsign(s3, 0, M), tsign(s3, 1, M), tsign(s3, 2, other)])


def test_duplicate_shares_do_not_count(s3):
    with pytest.raises(InsufficientShares):
        tcombine(s3, M, [tsign(s3, 0, M)] * 3)


def test_verify_rejects_other_message_and_trimmed_signers(s3):
    sig = tcombine(s3, M, [tsign(s3, i, M) for i in (0, 1, 2)])
    assert not tverify(s3, statement("KEY", 1, 4), sig)
    assert not tverify(s3, M, ThresholdSig(s3, sig.digest, (0, 1)))
    assert not tverify(threshold_scheme("T", range(4), 3), M, sig)


def test_aggregate_scheme_sizes():
    assert aggregate_scheme(range(5)).k == 5
    one = aggregate_scheme([7])
    assert one.k == 1 and tverify(one, M, tcombine(one, M, [tsign(one, 7, M)]))
    five = aggregate_scheme(range(5))
    with pytest.raises(InsufficientShares):
        tcombine(five, M, [tsign(five, i, M) for i in range(4)])


def test_plain_signatures():
    s = sign(2, M)
    assert verify(M, s, 2)
    assert not verify(M, s, 3)
    assert not verify(statement("LOCK", 1, 3), s, 2)


def test_encoding_is_injective_on_field_boundaries():
    assert encode("ab", "c") != encode("a", "bc")
    assert statement("INPUT", 1) != statement("INPUT", 1, 0)


def test_keyring_records_every_signing(s3):
    ledger = SignLedger()
    kr = Keyring(2, ledger)
    kr.tsign(s3, M)
    assert ledger.signed("S", digest(M), 2)
    assert not ledger.signed("S", digest(M), 1)
    with pytest.raises(NotParticipant):
        Keyring(9, ledger).tsign(s3, M)


@settings(max_examples=200, deadline=None)
@given(m=st.integers(1, 9), data=st.data(), msg=st.binary(max_size=32), other=st.binary(max_size=32))
def test_round_trip_property(m, data, msg, other):
    k = data.draw(st.integers(1, m))
    scheme = threshold_scheme("P", range(m), k)
    signers = data.draw(st.lists(st.integers(0, m - 1), min_size=k, max_size=m, unique=True))
    sig = tcombine(scheme, msg, [tsign(scheme, s, msg) for s in signers])
    assert tverify(scheme, msg, sig)
    assert tverify(scheme, other, sig) == (digest(other) == digest(msg))
