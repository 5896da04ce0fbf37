from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from utilsignal import field as F
from utilsignal import utility as U
from utilsignal.sharing import Session

ONE = 1 << 16


def _run(fn, *cols, owners=None, seed=0):
    s = Session(4, seed=seed)
    owners = owners or [0] * (len(cols) - 1) + [3]
    shared = [s.input(o, np.asarray(c)) for o, c in zip(owners, cols)]
    v = F.to_signed_int(int(s.open(fn(*shared))))
    s.finish()
    return v


def psi(d, t, seed=0):
    return _run(U.util_psi_card, d, t, seed=seed)


def cre(d, sc, t, thr, seed=0):
    return _run(lambda a, b, c: U.util_threshold_count(a, b, c, thr), d, sc, t,
                owners=[0, 0, 3], seed=seed)


def knn(x, y, xt, yt, K):
    return _run(lambda a, b, c, d: U.util_knn_accuracy(a, b, c, d, K), x, y, xt, yt,
                owners=[0, 0, 3, 3])


def test_psi_examples():
    assert psi([1, 4, 7, 9], [4, 9, 12]) == 2 * ONE
    assert psi([1, 2], [3, 4]) == 0
    assert psi([5, 6, 7], [7, 6, 5]) == 3 * ONE
    assert psi([0, 2 ** 32 - 1], [2 ** 32 - 1]) == ONE


def test_cre_examples():
    thr = F.FixedPointCodec().encode(Fraction(1, 2))
    sc = [int(0.7 * ONE), int(0.4 * ONE), int(0.9 * ONE)]
    assert cre([1, 2, 3], sc, [1, 2, 3], thr) == 2 * ONE
    assert cre([1, 2, 3], sc, [5, 6], thr) == 0
    assert cre([1, 2, 3], sc, [1, 3], thr) == 2 * ONE
    # strictly greater than the threshold
    assert cre([1], [thr], [1], thr) == 0
    # negative scores against a negative threshold
    neg = F.FixedPointCodec().encode(Fraction(-1))
    assert cre([1, 2], [-ONE // 2, -2 * ONE], [1, 2], neg) == ONE


def test_random_against_set_oracle(rng):
    for seed in range(20):
        n1, n2 = rng.integers(1, 40, 2)
        d = rng.choice(100, n1, replace=False)
        t = rng.choice(100, n2, replace=False)
        sc = rng.integers(-3 * ONE, 3 * ONE, n1)
        thr = int(rng.integers(-ONE, ONE))
        assert psi(d, t, seed) == len(set(d) & set(t)) * ONE
        want = sum(1 for i, s in zip(d, sc) if i in set(t) and s > thr)
        assert cre(d, sc, t, thr % F.P, seed) == want * ONE


@settings(max_examples=15)
@given(st.sets(st.integers(0, 200), max_size=12), st.sets(st.integers(0, 200), min_size=1, max_size=12))
def test_psi_symmetric(a, b):
    if not a:
        a = {0}
    a, b = sorted(a), sorted(b)
    assert psi(a, b) == psi(b, a)


def test_psi_monotone_growth(rng):
    t = list(rng.choice(50, 10, replace=False))
    d, last = [int(rng.integers(100, 200))], 0
    for v in t[:5]:
        d.append(int(v))
        cur = psi(d, t)
        assert cur >= last
        last = cur
    assert last == 5 * ONE


def _knn_oracle(x, y, xt, yt, K):
    hits = 0
    for j in range(len(yt)):
        d = [sum((Fraction(int(a)) - int(b)) ** 2 for a, b in zip(row, xt[j])) for row in x]
        order = sorted(range(len(x)), key=lambda i: (d[i], i))
        hits += sum(1 for i in order[:K] if y[i] == yt[j])
    return Fraction(hits, K * len(yt))


def test_knn_examples(rng):
    x = rng.integers(-4, 4, (6, 2)) * ONE
    y = rng.integers(0, 2, 6)
    # 1/(K*N_test) is rounded once, so the result is within N_test ulp of 1
    assert abs(knn(x, y, x[:3], y[:3], 1) - ONE) <= 3
    assert knn(x, np.zeros(6, int), x[:2], np.ones(2, int), 2) == 0
    xt, yt = rng.integers(-4, 4, (2, 2)) * ONE, rng.integers(0, 2, 2)
    want = _knn_oracle(x, y, xt, yt, 3)
    assert abs(Fraction(knn(x, y, xt, yt, 3), ONE) - want) <= Fraction(2, ONE)


def test_knn_random_against_exact_oracle(rng):
    for _ in range(5):
        N, Nt, K = int(rng.integers(3, 12)), int(rng.integers(1, 4)), int(rng.integers(1, 3))
        x = rng.integers(-3 * ONE, 3 * ONE, (N, 2))
        xt = rng.integers(-3 * ONE, 3 * ONE, (Nt, 2))
        y, yt = rng.integers(0, 3, N), rng.integers(0, 3, Nt)
        got = Fraction(knn(x, y, xt, yt, K), ONE)
        assert abs(got - _knn_oracle(x, y, xt, yt, K)) <= Fraction(Nt, ONE)
        assert U.knn_accuracy_plain(x, y, xt, yt, K) == knn(x, y, xt, yt, K)


def test_knn_K_too_large():
    s = Session(4, seed=0)
    x = s.input(0, np.zeros((2, 1), dtype=np.int64))
    y = s.input(0, np.zeros(2, dtype=np.int64))
    with pytest.raises(ValueError):
        U.util_knn_accuracy(x, y, x, y, 3)
    with pytest.raises(ValueError):
        U.knn_accuracy_plain(np.zeros((2, 1)), [0, 0], np.zeros((1, 1)), [0], 3)


def test_evaluate_dispatch():
    d = {"id": np.array([1, 4, 7, 9])}
    t = {"id": np.array([4, 9, 12])}
    assert U.evaluate_plain("pm", d, t) == 2 * ONE
    with pytest.raises(ValueError):
        U.evaluate_plain("xyz", d, t)
    parts = U.concat_columns([d, t])
    assert parts["id"].tolist() == [1, 4, 7, 9, 4, 9, 12]
