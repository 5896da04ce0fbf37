"""Shapley values: brute-force oracle, KNN-Shapley (plaintext and shared),
and seller-level Shapley over coalition utilities."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from . import field as F
from . import gadgets as G
from .sharing import Session, SharedVec
from .utility import DIST_BITS, concat_columns, knn_order

MAX_BRUTEFORCE = 12
MAX_SELLERS = 8


@dataclass(frozen=True)
class ShapleyScores:
    values: tuple[Fraction, ...]
    encoded: tuple[int, ...] | None = None
    total: Fraction | None = None  # nu(full) - nu(empty), when known

    def __len__(self):
        return len(self.values)

    def floats(self) -> np.ndarray:
        return np.array([float(v) for v in self.values])

    def csv(self, ids: Sequence | None = None) -> str:
        ids = range(len(self.values)) if ids is None else ids
        lines = ["entity_id,shapley_value"]
        lines += [f"{i},{float(v):.6f}" for i, v in zip(ids, self.values)]
        total = sum(self.values, Fraction(0)) if self.total is None else self.total
        lines.append(f"sum={_decimal(total)}")
        return "\n".join(lines) + "\n"


def _decimal(q: Fraction) -> str:
    # exact for dyadic and short rationals, else 12 places
    if q.denominator & (q.denominator - 1) == 0:
        return F.format_fixed(int(q * (1 << 40)) % F.P, 40)
    return f"{float(q):.12f}"


def shapley_bruteforce(contributors, util: Callable[[frozenset], object]) -> ShapleyScores:
    """Exact Shapley values by enumerating every coalition."""
    players = list(range(contributors)) if isinstance(contributors, int) else list(contributors)
    M = len(players)
    if M > MAX_BRUTEFORCE:
        raise ValueError(f"brute force limited to {MAX_BRUTEFORCE} contributors")
    cache: dict[frozenset, Fraction] = {}

    def v(S):
        if S not in cache:
            cache[S] = Fraction(util(S)) if not isinstance(util(S), float) else util(S)
        return cache[S]

    out = []
    for m in players:
        rest = [p for p in players if p != m]
        acc = Fraction(0)
        for size in range(M):
            w = Fraction(1, math.comb(M - 1, size))
            for S in itertools.combinations(rest, size):
                S = frozenset(S)
                acc += w * (v(S | {m}) - v(S))
        out.append(acc / M)
    return ShapleyScores(tuple(out))


# -- KNN-Shapley --------------------------------------------------------------------

def knn_coalition_utility(x_int, y, xt_int, yt, K: int, frac_bits: int = F.FRAC_BITS):
    """Per-point coalition utility: mean over test points of top-K label matches / K."""
    y, yt = np.asarray(y), np.asarray(yt)
    orders = [knn_order(x_int, xt_int[j], frac_bits)[0] for j in range(len(yt))]

    def util(S: frozenset) -> Fraction:
        total = Fraction(0)
        for j, order in enumerate(orders):
            ranked = [i for i in order if i in S][:K]
            total += Fraction(sum(int(y[i] == yt[j]) for i in ranked), K)
        return total / len(yt)

    return util


def _coeffs(N: int, K: int) -> list[Fraction]:
    # rank i (1-based): min(K, i) / (K i); the last rank uses 1/N
    c = [Fraction(min(K, i), K * i) for i in range(1, N + 1)]
    return c


def knn_sv_single_exact(x_int, y, xt_int, yt, K: int, frac_bits: int = F.FRAC_BITS) -> ShapleyScores:
    """Exact rational KNN-Shapley (difference recursion over the sorted order)."""
    y, yt = np.asarray(y), np.asarray(yt)
    N = len(y)
    if len(yt) == 0:
        raise ValueError("empty test set")
    c = _coeffs(N, K)
    sv = [Fraction(0)] * N
    for j in range(len(yt)):
        order, _ = knn_order(x_int, xt_int[j], frac_bits)
        e = [int(y[i] == yt[j]) for i in order]
        s = [Fraction(0)] * N
        s[N - 1] = Fraction(e[N - 1], N)
        for i in range(N - 2, -1, -1):
            s[i] = s[i + 1] + (e[i] - e[i + 1]) * c[i]
        for rank, idx in enumerate(order):
            sv[idx] += s[rank]
    return ShapleyScores(tuple(v / len(yt) for v in sv))


def _fixed_coeffs(N: int, K: int, frac_bits: int) -> tuple[np.ndarray, int]:
    codec = F.FixedPointCodec(frac_bits)
    c = [codec.encode(q) for q in _coeffs(N, K)]
    return np.array(c, dtype=object), codec.encode(Fraction(1, N))


def _sorted_scores_int(e: np.ndarray, c: np.ndarray, base: int) -> np.ndarray:
    N = len(e)
    e = e.astype(object)
    s = np.empty(N, dtype=object)
    s[N - 1] = e[N - 1] * base
    for i in range(N - 2, -1, -1):
        s[i] = s[i + 1] + (e[i] - e[i + 1]) * c[i]
    return s


def knn_sv_single_plain(x_int, y, xt_int, yt, K: int, frac_bits: int = F.FRAC_BITS) -> ShapleyScores:
    """Fixed-point KNN-Shapley with exactly the arithmetic of the shared version."""
    y, yt = np.asarray(y), np.asarray(yt)
    N, Nt = len(y), len(yt)
    if Nt == 0:
        raise ValueError("empty test set")
    if not 1 <= K <= N:
        raise ValueError("need 1 <= K <= N")
    c, base = _fixed_coeffs(N, K, frac_bits)
    total = np.zeros(N, dtype=object)
    for j in range(Nt):
        order, _ = knn_order(x_int, xt_int[j], frac_bits)
        e = (y[order] == yt[j]).astype(np.int64)
        total[order] += _sorted_scores_int(e, c, base)
    avg = F.FixedPointCodec(frac_bits).encode(Fraction(1, Nt))
    enc = [(int(t) * avg + (1 << (frac_bits - 1))) >> frac_bits for t in total]
    return ShapleyScores(tuple(Fraction(v, 1 << frac_bits) for v in enc), tuple(enc))


def knn_sv_single_mpc(x: SharedVec, y: SharedVec, x_test: SharedVec, y_test: SharedVec,
                      K: int, dist_bits: int = DIST_BITS, backend: str = "radix",
                      open_to: int | None = None) -> ShapleyScores:
    """Per-point KNN-Shapley under MPC; opened result equals the plaintext version."""
    sess = x.sess
    N, Nt = x.shape[0], x_test.shape[0]
    if Nt == 0:
        raise ValueError("empty test set")
    if not 1 <= K <= N:
        raise ValueError("need 1 <= K <= N")
    f = sess.frac_bits
    c, base = _fixed_coeffs(N, K, f)
    c_pub = F.asfield([int(v) for v in c[:-1]])
    with sess.scope("knnsv"):
        total = sess.zeros((N,))
        for j in range(Nt):
            dist = G.obli_dist(x, x_test[j])
            pi = G.obli_sort_perm(dist, dist_bits, backend)
            inv = G.invert_perm(pi)
            ys = G.scatter(inv, y)
            yt = SharedVec(sess, np.repeat(y_test.val[:, j:j + 1], N, axis=1),
                           None if y_test.mac is None else np.repeat(y_test.mac[:, j:j + 1], N, axis=1))
            e = G.eq(ys, yt)
            # s_i = e_N * base + sum_{l >= i, l < N} (e_l - e_{l+1}) c_l, a reverse prefix sum
            terms = (e[:-1] - e[1:]) * c_pub
            rev = G._apply(terms, lambda a: F.fcumsum(a[..., ::-1], axis=-1)[..., ::-1])
            last = e[N - 1] * base
            s = SharedVec.concat([rev, sess.zeros((1,))]) + G._broadcast(last, N)
            total = total + G.scatter(pi, s)
        avg = F.FixedPointCodec(f).encode(Fraction(1, Nt))
        out = G.truncate(total * avg)
        opened = sess.output(out, "scores", to=open_to)
    enc = [F.to_signed_int(int(v)) for v in opened]
    return ShapleyScores(tuple(Fraction(v, 1 << f) for v in enc), tuple(enc))


# -- seller-level Shapley ----------------------------------------------------------

def coalition_weights(M: int) -> list[int]:
    """|S|! (M - |S| - 1)! for |S| = 0..M-1; Shapley weights times M!."""
    return [math.factorial(s) * math.factorial(M - s - 1) for s in range(M)]


def shapley_sellers(sess: Session, sellers: list[dict], buyer: dict,
                    util: Callable[[dict, dict], SharedVec]) -> ShapleyScores:
    """Shapley value of each seller's dataset under a shared coalition utility.

    Every nonempty coalition's utility is computed on the union of its members'
    shared columns; nu(empty) = 0.  Weighted differences are combined on
    shares, M! * sv is opened and divided exactly.
    """
    M = len(sellers)
    if not 1 <= M <= MAX_SELLERS:
        raise ValueError(f"need 1..{MAX_SELLERS} sellers")
    nu: dict[int, SharedVec] = {0: sess.public(0)}
    for mask in range(1, 1 << M):
        members = [sellers[i] for i in range(M) if mask >> i & 1]
        with sess.scope(f"coalition{mask}"):
            nu[mask] = util(concat_columns(members), buyer)
    w = coalition_weights(M)
    accs = []
    for m in range(M):
        acc = sess.public(0)
        for mask in range(1 << M):
            if mask >> m & 1:
                continue
            size = bin(mask).count("1")
            acc = acc + (nu[mask | (1 << m)] - nu[mask]) * w[size]
        accs.append(acc)
    full = nu[(1 << M) - 1]
    opened = sess.output(SharedVec.stack(accs + [full]), "shapley")
    denom = math.factorial(M) << sess.frac_bits
    vals = tuple(Fraction(F.to_signed_int(int(v)), denom) for v in opened[:M])
    total = Fraction(F.to_signed_int(int(opened[M])), 1 << sess.frac_bits)
    return ShapleyScores(vals, None, total)


def shapley_sellers_plain(sellers: list[dict], buyer: dict,
                          util: Callable[[dict, dict], int], frac_bits: int = F.FRAC_BITS) -> ShapleyScores:
    M = len(sellers)

    def v(S):
        if not S:
            return Fraction(0)
        return Fraction(util(concat_columns([sellers[i] for i in sorted(S)]), buyer), 1 << frac_bits)

    res = shapley_bruteforce(M, v)
    return ShapleyScores(res.values, None, v(frozenset(range(M))))
