"""Task utilities f(D, T) over shares, with plaintext references.

All shared utilities return a fixed-point encoded result: PM and CRE return
count * 2^f, MPV returns the (K-truncated) KNN accuracy.
"""
from __future__ import annotations

from fractions import Fraction

import numpy as np

from . import field as F
from . import gadgets as G
from .sharing import Session, SharedVec

ID_BITS = 32
DIST_BITS = 24


def _scale(sess: Session) -> int:
    return 1 << sess.frac_bits


def _merge_sorted(d_ids: SharedVec, t_ids: SharedVec, extra: SharedVec | None, id_bits: int):
    """Sort D and T ids together on key 2*id + side (side 0 for D, 1 for T).

    Returns the sorted keys, sides and optional extra column, plus the match
    bit for every adjacent pair: a T row directly after a D row with the same
    id.  This stays correct when D repeats an id (coalition unions).
    """
    sess = d_ids.sess
    n1, n2 = d_ids.shape[0], t_ids.shape[0]
    n = n1 + n2
    side = np.concatenate([np.zeros(n1, dtype=np.uint64), np.ones(n2, dtype=np.uint64)])
    key = SharedVec.concat([d_ids, t_ids]) * 2 + side
    pi = G.obli_sort_perm(key, id_bits + 1)
    cols = [key.reshape(n, 1), sess.public(side).reshape(n, 1)]
    if extra is not None:
        cols.append(extra.reshape(n, 1))
    srt = G.apply_perm(pi, SharedVec.concat(cols, axis=1))
    skey, sside = srt[:, 0], srt[:, 1]
    step = G.eq(skey[1:] - skey[:-1], 1)
    match = sess.mul(step, sside[1:], "match")
    return srt, match


def util_psi_card(d_ids: SharedVec, t_ids: SharedVec, id_bits: int = ID_BITS) -> SharedVec:
    """|D ∩ T| by sort-compare over the merged, side-tagged ids."""
    sess = d_ids.sess
    with sess.scope("pm"):
        if d_ids.shape[0] == 0 or t_ids.shape[0] == 0:
            return sess.public(0)
        _, match = _merge_sorted(d_ids, t_ids, None, id_bits)
        return match.sum() * _scale(sess)


def util_threshold_count(d_ids: SharedVec, scores: SharedVec, t_ids: SharedVec,
                         threshold: int, id_bits: int = ID_BITS) -> SharedVec:
    """Number of ids in D ∩ T whose score exceeds the public (encoded) threshold.

    In a matching pair the D row sits directly before the T row, so the score
    on the lower position is D's; a score gate is fused onto every pair.
    """
    sess = d_ids.sess
    with sess.scope("cre"):
        if d_ids.shape[0] == 0 or t_ids.shape[0] == 0:
            return sess.public(0)
        sc = SharedVec.concat([scores, sess.public(np.zeros(t_ids.shape[0], dtype=np.uint64))])
        srt, match = _merge_sorted(d_ids, t_ids, sc, id_bits)
        ssc = srt[:-1, 2]
        above = G.lt(sess.public(np.full(ssc.shape[0], threshold % F.P, dtype=np.uint64)), ssc)
        return sess.mul(match, above, "cre").sum() * _scale(sess)


def knn_norm(K: int, n_test: int, frac_bits: int = F.FRAC_BITS) -> int:
    return F.FixedPointCodec(frac_bits).encode(Fraction(1, K * n_test))


def util_knn_accuracy(x: SharedVec, y: SharedVec, x_test: SharedVec, y_test: SharedVec,
                      K: int, dist_bits: int = DIST_BITS, backend: str = "radix") -> SharedVec:
    """KNN accuracy: for each test point count label matches among the K nearest."""
    sess = x.sess
    N, n_test = x.shape[0], x_test.shape[0]
    if not 1 <= K <= N:
        raise ValueError(f"need 1 <= K <= N, got K={K}, N={N}")
    with sess.scope("mpv"):
        total = sess.public(0)
        for j in range(n_test):
            dist = G.obli_dist(x, x_test[j])
            pi = G.obli_sort_perm(dist, dist_bits, backend)
            labels = G.apply_perm(pi, y)[:K]
            yt = SharedVec(sess, np.repeat(y_test.val[:, j:j + 1], K, axis=1),
                           None if y_test.mac is None else np.repeat(y_test.mac[:, j:j + 1], K, axis=1))
            total = total + G.eq(labels, yt).sum()
        return total * knn_norm(K, n_test, sess.frac_bits)


# -- plaintext references --------------------------------------------------------

def psi_card_plain(d_ids, t_ids) -> int:
    return len(set(int(v) for v in d_ids) & set(int(v) for v in t_ids))


def threshold_count_plain(d_ids, scores, t_ids, threshold: int) -> int:
    """When D repeats an id, its last occurrence supplies the score."""
    last = {int(i): int(s) for i, s in zip(d_ids, scores)}
    return sum(1 for t in set(int(v) for v in t_ids) if t in last and last[t] > threshold)


def knn_order(x_int, t_int, frac_bits: int = F.FRAC_BITS) -> tuple[np.ndarray, np.ndarray]:
    d = G.plain_dist(x_int, t_int, frac_bits).astype(np.int64)
    return np.argsort(d, kind="stable"), d


def knn_accuracy_plain(x_int, y, xt_int, yt, K: int, frac_bits: int = F.FRAC_BITS,
                       dist_bits: int = DIST_BITS) -> int:
    """Same integer arithmetic as the shared version; returns the encoding."""
    y, yt = np.asarray(y), np.asarray(yt)
    if not 1 <= K <= len(y):
        raise ValueError("need 1 <= K <= N")
    matches = 0
    for j in range(len(yt)):
        order, d = knn_order(x_int, xt_int[j], frac_bits)
        if d.max(initial=0) >= 1 << dist_bits:
            raise ValueError("distance exceeds the sort key width")
        matches += int(np.sum(y[order[:K]] == yt[j]))
    return matches * knn_norm(K, len(yt), frac_bits)


def knn_accuracy_float(x, y, xt, yt, K: int) -> float:
    """Reference KNN accuracy on reals (squared L2, stable ties)."""
    x, xt = np.asarray(x, dtype=float), np.asarray(xt, dtype=float)
    y, yt = np.asarray(y), np.asarray(yt)
    acc = 0
    for j in range(len(yt)):
        d = ((x - xt[j]) ** 2).sum(axis=1)
        acc += np.sum(y[np.argsort(d, kind="stable")[:K]] == yt[j])
    return acc / (K * len(yt))


# -- task dispatch ---------------------------------------------------------------

TASKS = ("pm", "cre", "mpv")


def evaluate(task: str, d: dict, t: dict, *, K: int = 1, threshold: int = 0,
             dist_bits: int = DIST_BITS, backend: str = "radix") -> SharedVec:
    """Run one utility on shared column dicts (``id``, ``score``, ``x``, ``label``)."""
    if task == "pm":
        return util_psi_card(d["id"], t["id"])
    if task == "cre":
        return util_threshold_count(d["id"], d["score"], t["id"], threshold)
    if task == "mpv":
        return util_knn_accuracy(d["x"], d["label"], t["x"], t["label"], K, dist_bits, backend)
    raise ValueError(f"unknown task {task!r}")


def evaluate_plain(task: str, d: dict, t: dict, *, K: int = 1, threshold: int = 0,
                   frac_bits: int = F.FRAC_BITS, dist_bits: int = DIST_BITS) -> int:
    """Plaintext mirror of :func:`evaluate`; returns the signed encoding."""
    scale = 1 << frac_bits
    if task == "pm":
        return psi_card_plain(d["id"], t["id"]) * scale
    if task == "cre":
        return threshold_count_plain(d["id"], d["score"], t["id"], F.to_signed_int(threshold)) * scale
    if task == "mpv":
        return knn_accuracy_plain(d["x"], d["label"], t["x"], t["label"], K, frac_bits, dist_bits)
    raise ValueError(f"unknown task {task!r}")


def concat_columns(parts: list[dict]) -> dict:
    """Union of several parties' column dicts (shared or plain)."""
    out = {}
    for name in parts[0]:
        vals = [p[name] for p in parts]
        if isinstance(vals[0], SharedVec):
            out[name] = SharedVec.concat(vals)
        else:
            out[name] = np.concatenate(vals)
    return out
