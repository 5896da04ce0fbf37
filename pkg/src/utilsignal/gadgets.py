"""Oblivious building blocks over :class:`~utilsignal.sharing.SharedVec`.

Comparisons use dealer-supplied shared random bits: a value is masked with a
uniform r in F_p, opened, and the relevant bits are recovered with a
log-depth carry tree over (less-than, equal) pairs.  Permutations are applied
with a dealer-assisted k-pass shuffle followed by a public placement.

Everything is vectorized: inputs are whole share arrays, one call is one batch
of gates.  ``sess.counters`` records multiplications and gadget calls.
"""
from __future__ import annotations

import math

import numpy as np

from . import field as F
from .field import P
from .sharing import Session, SharedVec
from .transport import ProtocolAbort, encode_ints

U64 = np.uint64
NBITS = 61
# comfortably above any fixed-point value and below p/4, so LT stays exact
SENTINEL = (1 << 58) - 1


def _raw(sess: Session, val, mac) -> SharedVec:
    return SharedVec(sess, val, mac)


def _apply(x: SharedVec, fn) -> SharedVec:
    return _raw(x.sess, fn(x.val), None if x.mac is None else fn(x.mac))


def weighted_sum(x: SharedVec, weights) -> SharedVec:
    """sum_i w_i * x[..., i] with public weights (linear, no communication)."""
    w = F.asfield(weights)
    return _apply(x, lambda a: F.fsum(F.mul(a, w), axis=-1))


def bits_value(bits: SharedVec) -> SharedVec:
    m = bits.shape[-1]
    return weighted_sum(bits, [1 << i for i in range(m)])


def public_bits(c: np.ndarray, m: int) -> np.ndarray:
    return (np.asarray(c, dtype=U64)[..., None] >> np.arange(m, dtype=U64)) & U64(1)


def xor_public(a: SharedVec, c) -> SharedVec:
    """a XOR c for a shared bit a and a public bit c."""
    c = np.asarray(c, dtype=np.int64)
    return (a * (1 - 2 * c)) + c


def xor(a: SharedVec, b: SharedVec) -> SharedVec:
    return a + b - a.sess.mul(a, b, "xor") * 2


def _leaves(c_bits: np.ndarray, r: SharedVec):
    """Per-bit (lt, eq) of public c against shared r."""
    c = c_bits.astype(np.int64)
    L = r * (1 - c)
    E = (r * (2 * c - 1)) + (1 - c)
    return L, E


def _last(x: SharedVec, sl) -> SharedVec:
    return x[(Ellipsis, sl)]


def _cat_last(parts) -> SharedVec:
    return SharedVec.concat(parts, axis=len(parts[0].shape) - 1)


def _tree(L: SharedVec, E: SharedVec, need_lt: bool = True):
    """Fold (lt, eq) pairs from the least significant end into one pair."""
    sess = L.sess if L is not None else E.sess
    m = E.shape[-1]
    while m > 1:
        h = m // 2
        lo, hi = slice(0, 2 * h, 2), slice(1, 2 * h, 2)
        E_hi, E_lo = _last(E, hi), _last(E, lo)
        if need_lt:
            L_hi, L_lo = _last(L, hi), _last(L, lo)
            prod = sess.mul(SharedVec.stack([E_hi, E_hi]), SharedVec.stack([L_lo, E_lo]), "cmp")
            newL, newE = L_hi + prod[0], prod[1]
        else:
            newE = sess.mul(E_hi, E_lo, "cmp")
        if m % 2:
            newE = _cat_last([newE, _last(E, slice(m - 1, m))])
            if need_lt:
                newL = _cat_last([newL, _last(L, slice(m - 1, m))])
        E = newE
        if need_lt:
            L = newL
        m = E.shape[-1]
    return (_last(L, 0) if need_lt else None), _last(E, 0)


def _prefix(L: SharedVec, E: SharedVec):
    """Inclusive prefix of the (lt, eq) fold at every bit position."""
    sess = L.sess
    m = L.shape[-1]
    Lv, Lm = L.val.copy(), None if L.mac is None else L.mac.copy()
    Ev, Em = E.val.copy(), None if E.mac is None else E.mac.copy()
    s = 1
    while s < m:
        pos = np.array([i for i in range(m) if (i // s) % 2 == 1])
        par = (pos // s) * s - 1
        Lp, Ep = _raw(sess, Lv, Lm), _raw(sess, Ev, Em)
        E_hi, E_lo, L_lo = _last(Ep, pos), _last(Ep, par), _last(Lp, par)
        prod = sess.mul(SharedVec.stack([E_hi, E_hi]), SharedVec.stack([L_lo, E_lo]), "cmp")
        newL = _last(Lp, pos) + prod[0]
        Lv[..., pos] = newL.val
        Ev[..., pos] = prod[1].val
        if Lm is not None:
            Lm[..., pos] = newL.mac
            Em[..., pos] = prod[1].mac
        s *= 2
    return _raw(sess, Lv, Lm), _raw(sess, Ev, Em)


def _mask_open(x: SharedVec, name: str):
    """Open x + r for uniform r with shared bits; returns (c, r_bits)."""
    sess = x.sess
    r_bits = sess.random_with_bits(x.shape, NBITS)
    c = sess.open(x + bits_value(r_bits), name)
    return c, r_bits


def _wrap(c: np.ndarray, r_bits: SharedVec) -> SharedVec:
    """[c < r] as integers, i.e. whether x = c - r wrapped modulo p."""
    L, E = _leaves(public_bits(c, NBITS), r_bits)
    return _tree(L, E)[0]


def ltz(z: SharedVec) -> SharedVec:
    """[z < 0] for signed z; the LSB of 2z is set exactly when z is negative."""
    sess = z.sess
    with sess.scope("lt"):
        sess.counters["lt"] += int(np.prod(z.shape))
        c, r_bits = _mask_open(z * 2, "mask")
        wrap = _wrap(c, r_bits)
        t = xor_public(_last(r_bits, 0), c & U64(1))
        return xor(t, wrap)


def lt(x: SharedVec, y) -> SharedVec:
    """Shared bit [x < y] for signed fixed-point (or integer) operands."""
    return ltz(x - y)


obli_lt = lt


def eqz(z: SharedVec) -> SharedVec:
    sess = z.sess
    with sess.scope("eq"):
        sess.counters["eq"] += int(np.prod(z.shape))
        c, r_bits = _mask_open(z, "mask")
        _, E = _leaves(public_bits(c, NBITS), r_bits)
        return _tree(None, E, need_lt=False)[1]


def eq(x: SharedVec, y) -> SharedVec:
    return eqz(x - y)


obli_eq = eq


def decompose(x: SharedVec, nbits: int) -> SharedVec:
    """Bits (LSB first, trailing axis) of x, given 0 <= x < 2^nbits."""
    if not 1 <= nbits <= 60:
        raise ValueError("nbits must be in 1..60")
    sess = x.sess
    with sess.scope("bits"):
        c, r_bits = _mask_open(x, "mask")
        wrap = _wrap(c, r_bits)
        # x = (c - r - wrap) mod 2^nbits; the wrap enters as a borrow below bit 0
        cb = public_bits(c, nbits)
        L, E = _leaves(cb, _last(r_bits, slice(0, nbits)))
        w = wrap.reshape(*wrap.shape, 1)
        L = _cat_last([w, L])
        E = _cat_last([(-w) + 1, E])
        PL, _ = _prefix(L, E)
        borrow = _last(PL, slice(0, nbits))
        d = xor_public(_last(r_bits, slice(0, nbits)), cb)
        return xor(d, borrow)


def truncate(x: SharedVec, frac_bits: int | None = None) -> SharedVec:
    """Exact round-half-up rescale by 2^-f of signed values with |x| < 2^59."""
    sess = x.sess
    f = sess.frac_bits if frac_bits is None else frac_bits
    with sess.scope("trunc"):
        sess.counters["trunc"] += int(np.prod(x.shape))
        bias = (1 << 59) + (1 << (f - 1))
        u = x + bias
        c, r_bits = _mask_open(u, "mask")
        wrap = _wrap(c, r_bits)
        r_low = _last(r_bits, slice(0, f))
        Lf, Ef = _tree(*_leaves(public_bits(c, f), r_low))
        neg = Lf + sess.mul(Ef, wrap, "trunc")
        c_low = (c & U64((1 << f) - 1)).astype(np.int64)
        umod = (-bits_value(r_low) - wrap + neg * (1 << f)) + c_low
        inv = pow(1 << f, P - 2, P)
        return (u - umod) * inv - (1 << (59 - f))


def mod2(x: SharedVec, bound_bits: int, kappa: int = 48) -> SharedVec:
    """Parity of 0 <= x < 2^bound_bits, statistically masked (no multiplications)."""
    if bound_bits + kappa > 59:
        raise ValueError("mask would wrap the field")
    sess = x.sess
    r0, r = sess.mod2_mask(x.shape, kappa)
    c = sess.open(x + r, "mod2")
    return xor_public(r0, c & U64(1))


# -- permutations ------------------------------------------------------------------

def shuffle_rows(X: SharedVec) -> SharedVec:
    """Obliviously permute the rows of an (n, w) share array.

    Each party in turn receives everyone's masked shares, permutes the masked
    rows with its dealer-issued permutation and hands back fresh shares.  MACs
    travel under independent masks, so an additive change by the shuffler is
    caught by the next MAC check.
    """
    sess = X.sess
    k = sess.k
    n, w = X.shape
    mats = sess.dealer.shuffle_material(n, w)
    val, mac = X.val, X.mac
    sess.counters["shuffle"] += 1
    for i, m in enumerate(mats):
        rho = m["rho"]
        mv = F.add(val, m["m"])
        mm = None if mac is None else F.add(mac, m["mm"])
        payloads = [encode_ints(mv[j].ravel()) + (b"" if mm is None else encode_ints(mm[j].ravel()))
                    for j in range(k)]
        sess.net.gather_to(i, payloads)
        Y = F.fsum(mv, axis=0)
        if i == sess.runner.corrupted:
            Y = sess._hook_share(f"shuffle:{sess.label('pass')}", Y)
        nv = F.neg(m["m_rho"])
        nv[i] = F.add(nv[i], Y[rho])
        val = nv
        if mac is not None:
            Z = F.fsum(mm, axis=0)
            nm = F.neg(m["mm_rho"])
            nm[i] = F.add(nm[i], Z[rho])
            mac = nm
    return _raw(sess, val, mac)


def _as_cols(x: SharedVec) -> tuple[SharedVec, bool]:
    if len(x.shape) == 1:
        return x.reshape(x.shape[0], 1), True
    return x, False


def scatter(dest: SharedVec, x: SharedVec) -> SharedVec:
    """out[dest_i] = x_i for a shared permutation ``dest``."""
    n = dest.shape[0]
    if x.shape[0] != n:
        raise ValueError(f"length mismatch: {n} vs {x.shape[0]}")
    sess = dest.sess
    cols, flat = _as_cols(x)
    joint = SharedVec.concat([dest.reshape(n, 1), cols], axis=1)
    with sess.scope("perm"):
        moved = shuffle_rows(joint)
        w = sess.open(moved[:, 0], "dest")
    w = w.astype(np.int64)
    if not np.array_equal(np.sort(w), np.arange(n)):
        sess._abort("mac-check", "opened permutation is not a bijection")
    body = moved[:, 1:]
    val = np.empty_like(body.val)
    val[:, w] = body.val
    mac = None
    if body.mac is not None:
        mac = np.empty_like(body.mac)
        mac[:, w] = body.mac
    out = _raw(sess, val, mac)
    return out.reshape(n) if flat else out


def apply_inv_perm(pi: SharedVec, x: SharedVec) -> SharedVec:
    """Inverse application: out[pi(i)] = x_i."""
    return scatter(pi, x)


def invert_perm(pi: SharedVec) -> SharedVec:
    n = pi.shape[0]
    return scatter(pi, pi.sess.public(np.arange(n, dtype=U64)))


def apply_perm(pi: SharedVec, x: SharedVec) -> SharedVec:
    """Gather: out_i = x_{pi(i)}."""
    if pi.shape[0] != x.shape[0]:
        raise ValueError(f"length mismatch: {pi.shape[0]} vs {x.shape[0]}")
    return scatter(invert_perm(pi), x)


def _cumsum(x: SharedVec) -> SharedVec:
    return _apply(x, lambda a: F.fcumsum(a, axis=-1))


def obli_radix_perm(keys: SharedVec, bit_len: int) -> SharedVec:
    """Stable sort permutation (gather form) of keys in [0, 2^bit_len), LSD radix."""
    sess = keys.sess
    n = keys.shape[0]
    with sess.scope("radix"):
        cols = decompose(keys, bit_len)  # (n, bit_len), carried along in current order
        h = sess.public(np.arange(n, dtype=U64))
        for t in range(bit_len):
            b = cols[:, 0]
            ones = _cumsum(b)
            zeros = _cumsum((-b) + 1)
            total0 = zeros[n - 1]
            s0 = zeros - 1
            s1 = ones + _broadcast(total0, n) - 1
            dest = s0 + sess.mul(b, s1 - s0, "dest")
            rest = SharedVec.concat([h.reshape(n, 1), cols[:, 1:]], axis=1)
            moved = scatter(dest, rest)
            h, cols = moved[:, 0], moved[:, 1:]
        return h


def _broadcast(x: SharedVec, n: int) -> SharedVec:
    return _raw(x.sess, np.repeat(x.val[:, None], n, axis=1),
                None if x.mac is None else np.repeat(x.mac[:, None], n, axis=1))


def _pow2(n: int) -> int:
    return 1 << max(0, math.ceil(math.log2(max(n, 1))))


def obli_sort_bitonic(keys: SharedVec, sentinel: int = SENTINEL) -> SharedVec:
    """Bitonic sorting network on signed keys; pads with a +inf sentinel."""
    sess = keys.sess
    n = keys.shape[0]
    m = _pow2(n)
    x = keys
    if m > n:
        x = SharedVec.concat([keys, sess.public(np.full(m - n, sentinel, dtype=U64))])
    with sess.scope("bitonic"):
        size = 2
        while size <= m:
            j = size // 2
            while j >= 1:
                i = np.arange(m)
                l = i ^ j
                sel = l > i
                i, l = i[sel], l[sel]
                asc = (i & size) == 0
                first = np.where(asc, l, i)
                second = np.where(asc, i, l)
                s = lt(x.gather(first), x.gather(second))  # 1 => swap
                sess.counters["ce"] += len(i)
                xi, xl = x.gather(i), x.gather(l)
                delta = sess.mul(s, xl - xi, "swap")
                new_i, new_l = xi + delta, xl - delta
                order = np.empty(m, dtype=np.int64)
                order[i] = np.arange(len(i))
                order[l] = len(i) + np.arange(len(i))
                x = SharedVec.concat([new_i, new_l]).gather(order)
                j //= 2
            size *= 2
    return x[:n]


def obli_sort_perm(keys: SharedVec, bit_len: int, backend: str = "radix") -> SharedVec:
    """Stable sort permutation via radix sort or via bitonic sort on key||index."""
    if backend == "radix":
        return obli_radix_perm(keys, bit_len)
    if backend != "bitonic":
        raise ValueError(f"unknown backend {backend!r}")
    sess = keys.sess
    n = keys.shape[0]
    L = max(1, math.ceil(math.log2(n))) if n > 1 else 1
    idx = sess.public(np.arange(n, dtype=U64))
    kp = keys * (1 << L) + idx
    with sess.scope("baseline"):
        srt = obli_sort_bitonic(kp, sentinel=1 << (bit_len + L))
        bits = decompose(srt, bit_len + L)
        return bits_value(_last(bits, slice(0, L)))


def obli_dist(x: SharedVec, t: SharedVec, frac_bits: int | None = None) -> SharedVec:
    """Squared L2 distance of every row of x (n, d) to t (d,), single scale."""
    sess = x.sess
    n, d = x.shape
    tt = _raw(sess, np.repeat(t.val[:, None, :], n, axis=1),
              None if t.mac is None else np.repeat(t.mac[:, None, :], n, axis=1))
    diff = x - tt
    sq = sess.mul(diff, diff, "dist")
    return truncate(sq.sum(axis=1), frac_bits)


# plaintext mirrors, same integer semantics

def plain_truncate(v, frac_bits: int = F.FRAC_BITS):
    v = np.asarray(v, dtype=object)
    return np.vectorize(lambda a: (int(a) + (1 << (frac_bits - 1))) >> frac_bits, otypes=[object])(v)


def plain_dist(x_int: np.ndarray, t_int: np.ndarray, frac_bits: int = F.FRAC_BITS) -> np.ndarray:
    """Truncated squared distances on signed fixed-point integers (python ints)."""
    diff = np.asarray(x_int, dtype=object) - np.asarray(t_int, dtype=object)
    return plain_truncate((diff * diff).sum(axis=1), frac_bits)


def assert_bits(x: SharedVec, reason: str = "input-mismatch") -> None:
    """Abort unless every entry of x is 0 or 1 (opens x(x-1), zero when honest)."""
    sess = x.sess
    with sess.scope("bitcheck"):
        z = sess.output(sess.mul(x, x - 1, "bitcheck"), "zero")
    if np.any(z != 0):
        sess._abort(reason, "shared input is not a bit string")
