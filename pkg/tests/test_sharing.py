import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from utilsignal import field as F
from utilsignal.field import P
from utilsignal.sharing import (AdditiveShare, Dealer, MacKey, MissingShare, PendingChecks, Session,
                                TripleExhausted, mac_check, mac_check_sigma, recover_mali, recover_semi,
                                share_mali, share_semi)
from utilsignal.transport import AddOffset, AdversaryScript, ProtocolAbort

vals = st.integers(0, P - 1)


def test_zero_two_party_shares_are_negatives(rng):
    a, b = share_semi(0, 2, rng)
    assert (a.value.value + b.value.value) % P == 0


@given(vals, st.integers(2, 8))
def test_semi_roundtrip(x, k):
    assert int(recover_semi(share_semi(x, k, np.random.default_rng(x % 1000)))) == x


def test_recover_missing_share(rng):
    shares = share_semi(5, 3, rng)
    with pytest.raises(MissingShare):
        recover_semi(shares[:2], 3)


def test_single_share_is_uniform(rng):
    # chi-square over 16 buckets of the top bits of party 0's share
    tops = [share_semi(7, 3, rng)[0].value.value >> 57 for _ in range(10_000)]
    counts = np.bincount(tops, minlength=16)
    assert stats.chisquare(counts).pvalue > 1e-3


def test_mali_open_queues_check(rng):
    key = MacKey.random(3, rng)
    q = PendingChecks()
    assert int(recover_mali(share_mali(77, key, rng), q)) == 77
    assert len(q) == 1
    recover_mali(share_mali(5, key, rng), q)
    assert mac_check(q, key, b"t")  # two opens, one sigma


def test_sigma_is_minus_alpha_eps(rng):
    key = MacKey.random(3, rng)
    shares = share_mali(10, key, rng)
    eps = 3
    bad = [shares[0].__class__(0, F.FieldElement(shares[0].value_share.value + eps), shares[0].mac_share)]
    q = PendingChecks()
    recover_mali(bad + shares[1:], q)
    # single-item batch: sigma = r * (-alpha * eps) for the public coin r
    from utilsignal.sharing import challenge_vector
    r = int(challenge_vector(b"", 1)[0])
    assert mac_check_sigma(q, key.alpha_shares, b"") == (-r * key.alpha.value * eps) % P
    with pytest.raises(ProtocolAbort):
        mac_check(q, key, b"")


def test_batch_of_eight_one_corruption_fails(rng):
    fails = 0
    for t in range(1000):
        r = np.random.default_rng(t)
        key = MacKey.random(3, r)
        q = PendingChecks()
        bad = int(r.integers(8))
        for i in range(8):
            sh = share_mali(int(r.integers(P)), key, r)
            if i == bad:
                sh[1] = sh[1].__class__(1, F.FieldElement(sh[1].value_share.value + 1), sh[1].mac_share)
            recover_mali(sh, q)
        fails += mac_check_sigma(q, key.alpha_shares, t.to_bytes(4, "little")) != 0
    assert fails == 1000


def test_beaver_mul(msess, rng):
    s = msess
    zero = s.input(0, 0)
    assert int(s.open(s.mul(zero, s.input(1, 99)))) == 0
    two, three = s.input(0, F.DEFAULT_CODEC.encode(2)), s.input(1, F.DEFAULT_CODEC.encode(3))
    assert F.DEFAULT_CODEC.truncate(int(s.open(s.mul(two, three)))) == F.DEFAULT_CODEC.encode(6)
    x, y = rng.integers(0, P, 100, dtype=np.uint64), rng.integers(0, P, 100, dtype=np.uint64)
    got = s.open(s.mul(s.input(0, x), s.input(3, y)))
    assert [int(v) for v in got] == [int(a) * int(b) % P for a, b in zip(x, y)]
    s.finish()


def test_session_offset_caught(rng):
    s = Session(4, seed=2, script=AdversaryScript.single(2, "open:beaver", AddOffset(1)))
    x = s.input(0, [3, 4])
    s.mul(x, x)
    with pytest.raises(ProtocolAbort) as e:
        s.check()
    assert e.value.reason == "mac-check"


def test_triple_pool_exhaustion():
    d = Dealer(3, seed=1)
    pool = d.preprocess(4)
    s = Session(3, seed=1, dealer=Dealer(3, seed=1, pool=pool))
    x = s.input(0, [1, 2, 3])
    s.mul(x, x)
    with pytest.raises(TripleExhausted):
        s.mul(x, x)


def test_masked_openings_look_alike():
    # party 3's view of an authenticated input is x - r for uniform r
    views = {}
    for x in (0, 1 << 40):
        tops = []
        for seed in range(3000):
            s = Session(4, seed=seed)
            r, pair = s.dealer.mask_for(())
            tops.append(int(F.sub(F.asfield(x), r)) >> 58)
        views[x] = np.bincount(tops, minlength=8)
    assert stats.chi2_contingency(np.stack([views[0], views[1 << 40]])).pvalue > 1e-3
