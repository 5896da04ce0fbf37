import math
from fractions import Fraction
from itertools import combinations

import numpy as np
import pytest

from utilsignal import shapley as SH
from utilsignal import utility as U
from utilsignal.sharing import Session
from utilsignal.transport import AddOffset, AdversaryScript, ProtocolAbort

ONE = 1 << 16


def test_bruteforce_additive():
    w = [Fraction(3), Fraction(-1, 2), Fraction(7, 3)]
    res = SH.shapley_bruteforce(3, lambda S: sum((w[i] for i in S), Fraction(0)))
    assert list(res.values) == w


def test_bruteforce_symmetric():
    res = SH.shapley_bruteforce(4, lambda S: len(S) ** 2)
    assert len(set(res.values)) == 1
    assert sum(res.values) == 16


def test_bruteforce_majority_game():
    # v(S) = 1 iff |S| >= 2.  For player 0 the marginal is 1 exactly when the
    # others form a singleton: {1} and {2}, each weighted 1!1!/3! = 1/6.
    res = SH.shapley_bruteforce(3, lambda S: int(len(S) >= 2))
    assert list(res.values) == [Fraction(1, 3)] * 3


def test_bruteforce_limit():
    with pytest.raises(ValueError):
        SH.shapley_bruteforce(13, lambda S: 0)


def test_knn_base_cases():
    x = np.zeros((1, 1), dtype=np.int64)
    assert SH.knn_sv_single_plain(x, [1], x, [1], 1).values == (Fraction(1),)
    assert SH.knn_sv_single_plain(x, [0], x, [1], 1).values == (Fraction(0),)
    with pytest.raises(ValueError):
        SH.knn_sv_single_plain(x, [0], x[:0], [], 1)


def test_knn_crafted_n4_k2():
    x = np.array([[0], [1], [3], [6]]) * ONE
    y = [1, 0, 1, 1]
    xt, yt = np.array([[2]]) * ONE, [1]
    oracle = SH.shapley_bruteforce(4, SH.knn_coalition_utility(x, y, xt, yt, 2))
    assert SH.knn_sv_single_exact(x, y, xt, yt, 2).values == oracle.values
    plain = SH.knn_sv_single_plain(x, y, xt, yt, 2)
    assert all(abs(a - b) <= Fraction(4, ONE) for a, b in zip(plain.values, oracle.values))


def test_knn_against_bruteforce_small_n(rng):
    for N in range(1, 7):
        for _ in range(10):
            K = int(rng.integers(1, N + 1))
            x = rng.integers(-4, 4, (N, 2)) * ONE
            xt = rng.integers(-4, 4, (2, 2)) * ONE
            y, yt = rng.integers(0, 2, N), rng.integers(0, 2, 2)
            oracle = SH.shapley_bruteforce(N, SH.knn_coalition_utility(x, y, xt, yt, K)).values
            assert SH.knn_sv_single_exact(x, y, xt, yt, K).values == oracle
            plain = SH.knn_sv_single_plain(x, y, xt, yt, K).values
            assert max(abs(a - b) for a, b in zip(plain, oracle)) <= Fraction(N, ONE)


def _mpc(x, y, xt, yt, K, script=None):
    s = Session(4, seed=9, script=script)
    res = SH.knn_sv_single_mpc(s.input(0, x), s.input(0, y), s.input(3, xt), s.input(3, yt), K)
    s.finish()
    return res, s


def test_knn_mpc_matches_plain(rng):
    x = rng.integers(-3 * ONE, 3 * ONE, (8, 2))
    xt = rng.integers(-3 * ONE, 3 * ONE, (3, 2))
    y, yt = rng.integers(0, 3, 8), rng.integers(0, 3, 3)
    res, s = _mpc(x, y, xt, yt, 3)
    assert res.encoded == SH.knn_sv_single_plain(x, y, xt, yt, 3).encoded
    # one sort per test point, not an enumeration of coalitions
    assert s.counters["mul"] < 2 ** 8 * 3 * 100


def test_knn_identical_points_equal():
    x = np.full((5, 2), ONE)
    res, _ = _mpc(x, np.ones(5, int), np.zeros((2, 2), int), np.ones(2, int), 2)
    assert len(set(res.values)) == 1
    assert sum(res.values) == pytest.approx(1, abs=5 / ONE)


def test_knn_mpc_deviation_aborts():
    x = np.arange(6).reshape(6, 1) * ONE
    script = AdversaryScript.single(0, "open:knnsv/perm/*", AddOffset(1))
    with pytest.raises(ProtocolAbort) as e:
        _mpc(x, np.ones(6, int), x[:1], [1], 2, script)
    assert e.value.reason == "mac-check"


def test_coalition_weights():
    for M in range(1, 7):
        w = SH.coalition_weights(M)
        assert sum(w[s] * math.comb(M - 1, s) for s in range(M)) == math.factorial(M)


def _sellers_run(id_sets, t_ids):
    s = Session(4, seed=2)
    sellers = [{"id": s.input(i % 3, np.array(ids))} for i, ids in enumerate(id_sets)]
    buyer = {"id": s.input(3, np.array(t_ids))}
    res = SH.shapley_sellers(s, sellers, buyer, lambda d, t: U.evaluate("pm", d, t))
    s.finish()
    return res


def _plain_pm(id_sets, t_ids):
    def v(S):
        return len(set().union(*[set(id_sets[i]) for i in S]) & set(t_ids)) if S else 0
    return v


def test_sellers_single():
    res = _sellers_run([[1, 2, 3]], [2, 3, 9])
    assert res.values == (Fraction(2),) and res.total == 2


def test_sellers_duplicates_equal():
    res = _sellers_run([[1, 5], [1, 5]], [1, 5, 6])
    assert res.values[0] == res.values[1] == 1


def test_sellers_m3_against_table():
    ids = [[1, 2, 3], [3, 4], [5]]
    t = [2, 3, 4, 5, 8]
    res = _sellers_run(ids, t)
    oracle = SH.shapley_bruteforce(3, _plain_pm(ids, t))
    assert res.values == oracle.values
    assert sum(res.values) == res.total == 4
    plain = SH.shapley_sellers_plain([{"id": np.array(i)} for i in ids], {"id": np.array(t)},
                                     lambda d, tt: U.evaluate_plain("pm", d, tt))
    assert plain.values == res.values


def test_sellers_limit():
    with pytest.raises(ValueError):
        _sellers_run([[i] for i in range(9)], [1])


def test_scores_csv():
    r = SH.ShapleyScores((Fraction(1, 2), Fraction(1, 4)), total=Fraction(3, 4))
    assert r.csv([10, 11]) == "entity_id,shapley_value\n10,0.500000\n11,0.250000\nsum=0.75\n"
