"""Additive and authenticated (SPDZ-style) secret sharing over F_p.

The per-value API (:func:`share_semi`, :func:`share_mali`, :func:`mac_check`,
...) mirrors the textbook definitions.  :class:`Session` is the workhorse: it
holds all k parties' shares as ``(k, ...)`` arrays, routes every opening through
the :class:`~utilsignal.transport.Network`, consumes dealer preprocessing and
keeps the deferred MAC-check queue.
"""
from __future__ import annotations

import contextlib
import hashlib
from collections import Counter
from dataclasses import dataclass
from typing import BinaryIO, Iterable, Sequence

import numpy as np

from . import field as F
from .field import P, FieldElement
from .transport import (
    AddOffset,
    AdversaryScript,
    DropMacCheck,
    Network,
    ProtocolAbort,
    Recv,
    ScriptRunner,
    Send,
    Transcript,
    decode_ints,
    encode_ints,
    inject_deviation,
)

U64 = np.uint64


class MissingShare(ValueError):
    pass


class TripleExhausted(RuntimeError):
    pass


# -- per-value types -----------------------------------------------------------

@dataclass(frozen=True)
class AdditiveShare:
    owner: int
    value: FieldElement


@dataclass(frozen=True)
class AuthShare:
    owner: int
    value_share: FieldElement
    mac_share: FieldElement


@dataclass(frozen=True)
class MacKey:
    alpha_shares: tuple[FieldElement, ...]

    @classmethod
    def random(cls, k: int, rng: np.random.Generator) -> "MacKey":
        while True:
            shares = tuple(FieldElement(int(v)) for v in rng.integers(0, P, k, dtype=U64))
            if sum(s.value for s in shares) % P:
                return cls(shares)

    @property
    def alpha(self) -> FieldElement:
        # dealer/test use only; never opened inside a protocol
        return FieldElement(sum(s.value for s in self.alpha_shares))


@dataclass(frozen=True)
class BeaverTriple:
    a: tuple[AuthShare, ...]
    b: tuple[AuthShare, ...]
    c: tuple[AuthShare, ...]


def _split(secret: int, k: int, rng: np.random.Generator) -> list[int]:
    parts = [int(v) for v in rng.integers(0, P, k - 1, dtype=U64)]
    parts.append((secret - sum(parts)) % P)
    return parts


def share_semi(secret, k: int, rng: np.random.Generator) -> list[AdditiveShare]:
    if k < 2:
        raise ValueError("need at least two parties")
    return [AdditiveShare(i, FieldElement(v)) for i, v in enumerate(_split(int(secret), k, rng))]


def recover_semi(shares: Sequence[AdditiveShare], k: int | None = None) -> FieldElement:
    owners = {s.owner for s in shares}
    k = len(shares) if k is None else k
    if owners != set(range(k)) or len(shares) != k:
        raise MissingShare(f"have shares from {sorted(owners)}, need 0..{k - 1}")
    return FieldElement(sum(s.value.value for s in shares))


def share_mali(secret, key: MacKey, rng: np.random.Generator) -> list[AuthShare]:
    k = len(key.alpha_shares)
    x = int(secret) % P
    vals = _split(x, k, rng)
    macs = _split(key.alpha.value * x % P, k, rng)
    return [AuthShare(i, FieldElement(v), FieldElement(m)) for i, (v, m) in enumerate(zip(vals, macs))]


class PendingChecks(list):
    """Opened values awaiting a batched MAC check: (value, [mac shares])."""


def recover_mali(shares: Sequence[AuthShare], queue: PendingChecks) -> FieldElement:
    k = len(shares)
    if {s.owner for s in shares} != set(range(k)):
        raise MissingShare("one authenticated share per party required")
    ordered = sorted(shares, key=lambda s: s.owner)
    value = FieldElement(sum(s.value_share.value for s in ordered))
    queue.append((value, [s.mac_share for s in ordered]))
    return value


def challenge_vector(seed: bytes, n: int) -> np.ndarray:
    """Public-coin challenge r in F_p^n derived from a transcript hash."""
    rng = np.random.default_rng(int.from_bytes(hashlib.sha256(seed).digest(), "little"))
    return rng.integers(0, P, n, dtype=U64)


def mac_check_sigma(opened, alpha_shares, challenge_seed: bytes) -> int:
    """Compute the opened check value sigma for a batch (0 iff consistent)."""
    if not opened:
        return 0
    k = len(alpha_shares)
    r = challenge_vector(challenge_seed, len(opened))
    values = F.asfield([int(v) for v, _ in opened])
    macs = F.asfield([[int(m[i]) for _, m in opened] for i in range(k)])
    v_comb = F.fsum(F.mul(r, values))
    alphas = F.asfield([int(a) for a in alpha_shares])
    sigma_shares = F.sub(F.fsum(F.mul(r, macs), axis=1), F.mul(v_comb, alphas))
    return int(F.fsum(sigma_shares))


def mac_check(opened, key: MacKey, challenge_seed: bytes = b"") -> bool:
    sigma = mac_check_sigma(opened, key.alpha_shares, challenge_seed)
    if sigma != 0:
        raise ProtocolAbort("mac-check", f"sigma={sigma}")
    return True


# -- party programs for run_protocol -----------------------------------------

def open_and_check_program(share: AuthShare, alpha_share: FieldElement):
    """Party program: broadcast a value share, then run CheckMAC on it."""

    def program(ctx):
        state = ctx.hook("open", {"share": share.value_share.value})
        mine = state["share"]
        for j in range(ctx.k):
            if j != ctx.party:
                yield Send(j, encode_ints([mine]))
        total = mine
        for j in range(ctx.k):
            if j != ctx.party:
                total += int(decode_ints((yield Recv(j)))[0])
        value = total % P
        r = int(challenge_vector(value.to_bytes(8, "little"), 1)[0])
        sigma_i = (r * share.mac_share.value - r * value * alpha_share.value) % P
        state = ctx.hook("mac-check", {"share": sigma_i})
        if state.get("drop_mac_check"):
            return None
        for j in range(ctx.k):
            if j != ctx.party:
                yield Send(j, encode_ints([state["share"]]))
        sigma = state["share"]
        for j in range(ctx.k):
            if j != ctx.party:
                sigma += int(decode_ints((yield Recv(j)))[0])
        if sigma % P:
            raise ProtocolAbort("mac-check", f"party {ctx.party} saw sigma != 0")
        return FieldElement(value)

    return program


# -- dealer ----------------------------------------------------------------------

@dataclass
class TriplePool:
    """Preprocessed authenticated triples, arrays of shape (k, n)."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    mac_a: np.ndarray
    mac_b: np.ndarray
    mac_c: np.ndarray

    @property
    def size(self) -> int:
        return self.a.shape[1]


def dump_triples(pool: TriplePool, party: int, fp: BinaryIO):
    """Write one party's triples: (a, b, c, mac_a, mac_b, mac_c) little-endian u64."""
    rec = np.stack([pool.a[party], pool.b[party], pool.c[party],
                    pool.mac_a[party], pool.mac_b[party], pool.mac_c[party]], axis=1)
    fp.write(rec.astype("<u8").tobytes())


def load_triples(fps: Sequence[BinaryIO]) -> TriplePool:
    per_party = [np.frombuffer(fp.read(), dtype="<u8").astype(U64).reshape(-1, 6) for fp in fps]
    cols = [np.stack([pp[:, j] for pp in per_party]) for j in range(6)]
    return TriplePool(*cols)


class Dealer:
    """Trusted offline dealer: the only holder of alpha; silent online.

    Randomness is drawn lazily from a seeded stream, which is equivalent to a
    precomputed tape.  With ``pool`` set, triples come from that tape only and
    running out raises :class:`TripleExhausted`.
    """

    def __init__(self, k: int, seed: int = 0, authenticated: bool = True,
                 pool: TriplePool | None = None):
        self.k = k
        self.authenticated = authenticated
        self.rng = np.random.default_rng(np.random.SeedSequence([seed, 0xDEA1]))
        self.key = MacKey.random(k, self.rng)
        self.alpha = self.key.alpha.value
        self.alpha_shares = F.asfield([s.value for s in self.key.alpha_shares])
        self.pool = pool
        self._pool_pos = 0

    def _rand(self, shape) -> np.ndarray:
        return self.rng.integers(0, P, shape, dtype=U64)

    def additive(self, values: np.ndarray) -> np.ndarray:
        values = F.asfield(values)
        shares = self._rand((self.k - 1,) + values.shape)
        last = F.sub(values, F.fsum(shares, axis=0))
        return np.concatenate([shares, last[None]], axis=0)

    def auth(self, values: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
        values = F.asfield(values)
        val = self.additive(values)
        mac = self.additive(F.mul(values, U64(self.alpha))) if self.authenticated else None
        return val, mac

    def triples(self, shape) -> tuple:
        n = int(np.prod(shape))
        if self.pool is not None:
            if self._pool_pos + n > self.pool.size:
                raise TripleExhausted(f"need {n} triples, {self.pool.size - self._pool_pos} left")
            s = slice(self._pool_pos, self._pool_pos + n)
            self._pool_pos += n
            pool = self.pool
            out = []
            for v, m in ((pool.a, pool.mac_a), (pool.b, pool.mac_b), (pool.c, pool.mac_c)):
                out.append((v[:, s].reshape((self.k,) + tuple(shape)),
                            m[:, s].reshape((self.k,) + tuple(shape)) if self.authenticated else None))
            return tuple(out)
        a = self._rand(shape)
        b = self._rand(shape)
        c = F.mul(a, b)
        return self.auth(a), self.auth(b), self.auth(c)

    def preprocess(self, n: int) -> TriplePool:
        (a, ma), (b, mb), (c, mc) = self.triples((n,))
        return TriplePool(a, b, c, ma, mb, mc)

    def random_bits(self, shape) -> tuple[np.ndarray, tuple]:
        bits = self.rng.integers(0, 2, shape, dtype=U64)
        return bits, self.auth(bits)

    def random_with_bits(self, shape, nbits: int = 61) -> tuple:
        """Uniform r in [0, p) (or [0, 2^nbits) when nbits < 61) with shared bits."""
        shape = tuple(shape)
        if nbits >= 61:
            r = self._rand(shape)
        else:
            r = self.rng.integers(0, 1 << nbits, shape, dtype=U64)
        nb = min(nbits, 61)
        bits = (r[..., None] >> np.arange(nb, dtype=U64)) & U64(1)
        return self.auth(bits)

    def mod2_mask(self, shape, kappa: int) -> tuple:
        """r = r0 + 2 r' with r' < 2^kappa; returns shares of r0 and r."""
        r0 = self.rng.integers(0, 2, shape, dtype=U64)
        rp = self.rng.integers(0, 1 << kappa, shape, dtype=U64)
        r = r0 + (rp << U64(1))
        return self.auth(r0), self.auth(r)

    def mask_for(self, shape) -> tuple[np.ndarray, tuple]:
        r = self._rand(shape)
        return r, self.auth(r)

    def shuffle_material(self, n: int, width: int) -> list[dict]:
        """Per-party permutation plus additive mask pairs for a k-pass shuffle."""
        out = []
        for _ in range(self.k):
            rho = self.rng.permutation(n)
            m = self._rand((n, width))
            mm = self._rand((n, width)) if self.authenticated else None
            item = {"rho": rho, "m": self.additive(m), "m_rho": self.additive(m[rho])}
            if mm is not None:
                item["mm"] = self.additive(mm)
                item["mm_rho"] = self.additive(mm[rho])
            out.append(item)
        return out


# -- vectorized shares -------------------------------------------------------------

class SharedVec:
    """All parties' shares of an array of secrets: ``val[i]`` is party i's share."""

    __slots__ = ("sess", "val", "mac")

    def __init__(self, sess: "Session", val: np.ndarray, mac: np.ndarray | None):
        self.sess = sess
        self.val = val
        self.mac = mac

    @property
    def shape(self):
        return self.val.shape[1:]

    def __len__(self):
        return self.val.shape[1]

    def _wrap(self, val, mac):
        return SharedVec(self.sess, val, mac)

    def _macop(self, fn, *args):
        return None if self.mac is None else fn(*args)

    def __getitem__(self, idx):
        idx = idx if isinstance(idx, tuple) else (idx,)
        sel = (slice(None),) + idx
        return self._wrap(self.val[sel], self._macop(lambda: self.mac[sel]))

    def __add__(self, other):
        if isinstance(other, SharedVec):
            return self._wrap(F.add(self.val, other.val),
                              self._macop(lambda: F.add(self.mac, other.mac)))
        return self.add_public(other)

    __radd__ = __add__

    def __neg__(self):
        return self._wrap(F.neg(self.val), self._macop(lambda: F.neg(self.mac)))

    def __sub__(self, other):
        if isinstance(other, SharedVec):
            return self + (-other)
        return self.add_public(F.neg(F.asfield(other)))

    def __rsub__(self, other):
        return (-self).add_public(other)

    def __mul__(self, c):
        """Multiply by a public scalar or array (shared x shared goes via Session.mul)."""
        if isinstance(c, SharedVec):
            raise TypeError("use Session.mul for shared products")
        c = F.asfield(c)
        return self._wrap(F.mul(self.val, c), self._macop(lambda: F.mul(self.mac, c)))

    __rmul__ = __mul__

    def add_public(self, c):
        c = np.broadcast_to(F.asfield(c), self.shape)
        val = self.val.copy()
        val[0] = F.add(val[0], c)
        mac = None
        if self.mac is not None:
            mac = F.add(self.mac, F.mul(self.sess.alpha_shares.reshape((-1,) + (1,) * len(self.shape)), c))
        return self._wrap(val, mac)

    def reshape(self, *shape):
        return self._wrap(self.val.reshape((self.val.shape[0],) + shape),
                          self._macop(lambda: self.mac.reshape((self.mac.shape[0],) + shape)))

    def gather(self, idx, axis: int = 0):
        """Public re-indexing along an element axis (local to each party)."""
        return self._wrap(np.take(self.val, idx, axis=axis + 1),
                          self._macop(lambda: np.take(self.mac, idx, axis=axis + 1)))

    def sum(self, axis: int = 0):
        return self._wrap(F.fsum(self.val, axis=axis + 1),
                          self._macop(lambda: F.fsum(self.mac, axis=axis + 1)))

    def copy(self):
        return self._wrap(self.val.copy(), self._macop(lambda: self.mac.copy()))

    @staticmethod
    def concat(parts: Sequence["SharedVec"], axis: int = 0) -> "SharedVec":
        sess = parts[0].sess
        val = np.concatenate([p.val for p in parts], axis=axis + 1)
        mac = None if parts[0].mac is None else np.concatenate([p.mac for p in parts], axis=axis + 1)
        return SharedVec(sess, val, mac)

    @staticmethod
    def stack(parts: Sequence["SharedVec"], axis: int = 0) -> "SharedVec":
        sess = parts[0].sess
        val = np.stack([p.val for p in parts], axis=axis + 1)
        mac = None if parts[0].mac is None else np.stack([p.mac for p in parts], axis=axis + 1)
        return SharedVec(sess, val, mac)

    def share_of(self, party: int) -> list[AuthShare]:
        mac = self.mac if self.mac is not None else np.zeros_like(self.val)
        return [AuthShare(party, FieldElement(int(v)), FieldElement(int(m)))
                for v, m in zip(self.val[party].ravel(), mac[party].ravel())]


# -- session -------------------------------------------------------------------------

class Session:
    """One protocol run among k parties in lockstep.

    ``authenticated=False`` gives the semi-honest flavour: no MACs, openings are
    accepted as-is, so scripted offsets go unnoticed.
    """

    def __init__(self, k: int = 4, *, authenticated: bool = True, seed: int = 0,
                 frac_bits: int = F.FRAC_BITS, script: AdversaryScript | None = None,
                 transcript: Transcript | None = None, dealer: Dealer | None = None,
                 check_every: int = 1 << 20):
        self.k = k
        self.authenticated = authenticated
        self.seed = seed
        self.codec = F.FixedPointCodec(frac_bits)
        self.net = Network(k, transcript)
        self.dealer = dealer or Dealer(k, seed, authenticated)
        self.alpha_shares = self.dealer.alpha_shares
        self.runner = ScriptRunner(script)
        self.rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5E55]))
        self.counters: Counter = Counter()
        self._pending_vals: list[np.ndarray] = []
        self._pending_macs: list[np.ndarray] = []
        self._pending_n = 0
        self._scope: list[str] = []
        self.check_every = check_every
        self.aborted: ProtocolAbort | None = None

    @property
    def transcript(self) -> Transcript:
        return self.net.transcript

    @property
    def frac_bits(self) -> int:
        return self.codec.frac_bits

    # labels / hooks

    @contextlib.contextmanager
    def scope(self, name: str):
        self._scope.append(name)
        try:
            yield
        finally:
            self._scope.pop()

    def label(self, name: str) -> str:
        return "/".join(self._scope + [name])

    def _hook_share(self, hook: str, party_share: np.ndarray) -> np.ndarray:
        c = self.runner.corrupted
        if c is None:
            return party_share
        for act in self.runner.match(c, hook):
            party_share = inject_deviation({"share": party_share}, act)["share"]
        return party_share

    def hook_input(self, party: int, name: str, data):
        """Give the adversary a chance to replace a party's raw input."""
        for act in self.runner.match(party, f"input:{name}"):
            data = inject_deviation({"input": data}, act)["input"]
        return data

    # construction

    def public(self, values) -> SharedVec:
        values = F.asfield(values)
        val = np.zeros((self.k,) + values.shape, dtype=U64)
        val[0] = values
        mac = None
        if self.authenticated:
            mac = F.mul(self.alpha_shares.reshape((-1,) + (1,) * values.ndim), values)
        return SharedVec(self, val, mac)

    def zeros(self, shape) -> SharedVec:
        return self.public(np.zeros(shape, dtype=U64))

    def _from_dealer(self, pair) -> SharedVec:
        return SharedVec(self, pair[0], pair[1])

    def input(self, owner: int, values) -> SharedVec:
        """Secret-share ``values`` held by ``owner``."""
        values = F.asfield(values)
        self.counters["input"] += values.size
        if self.authenticated:
            r, pair = self.dealer.mask_for(values.shape)
            d = F.sub(values, r)
            payloads = [b""] * self.k
            payloads[owner] = encode_ints(d.ravel())
            self.net.broadcast(payloads, senders=[owner])
            return self._from_dealer(pair).add_public(d)
        shares = self.rng.integers(0, P, (self.k,) + values.shape, dtype=U64)
        shares[owner] = 0
        shares[owner] = F.sub(values, F.fsum(shares, axis=0))
        self.net.scatter_from(owner, [encode_ints(s.ravel()) for s in shares])
        return SharedVec(self, shares, None)

    # openings

    def open(self, x: SharedVec, name: str = "open") -> np.ndarray:
        label = self.label(name)
        val = x.val
        c = self.runner.corrupted
        if c is not None:
            mine = self._hook_share(f"open:{label}", val[c])
            if mine is not val[c]:
                val = val.copy()
                val[c] = mine
        self.net.broadcast([encode_ints(v.ravel()) for v in val])
        opened = F.fsum(val, axis=0)
        self.transcript.absorb(opened.tobytes())
        self.counters["open"] += opened.size
        self.counters["open_rounds"] += 1
        if self.authenticated:
            self._pending_vals.append(opened.ravel())
            self._pending_macs.append(x.mac.reshape(self.k, -1))
            self._pending_n += opened.size
            if self._pending_n >= self.check_every:
                self.check()
        return opened

    def open_to(self, x: SharedVec, party: int, name: str = "output") -> np.ndarray:
        """Deliver x to one party only; everyone else sees a uniformly masked value."""
        if self.authenticated:
            r, pair = self.dealer.mask_for(x.shape)
            masked = self.open(x + self._from_dealer(pair), name)
            return F.sub(masked, r)
        label = self.label(name)
        val = x.val
        c = self.runner.corrupted
        if c is not None and c != party:
            val = val.copy()
            val[c] = self._hook_share(f"open:{label}", val[c])
        self.net.gather_to(party, [encode_ints(v.ravel()) for v in val])
        return F.fsum(val, axis=0)

    def check(self):
        """Batched CheckMAC over everything opened since the last check."""
        if not self.authenticated or not self._pending_n:
            return
        c = self.runner.corrupted
        if c is not None and self.runner.match(c, "mac-check") and \
                self._drops_check():
            self._abort("mac-check", f"party {c} did not take part in the check")
        vals = np.concatenate(self._pending_vals)
        macs = np.concatenate(self._pending_macs, axis=1)
        self._pending_vals, self._pending_macs, self._pending_n = [], [], 0
        r = challenge_vector(self.transcript.digest(), vals.size)
        v_comb = F.fsum(F.mul(r, vals))
        gamma = F.fsum(F.mul(r[None, :], macs), axis=1)
        sigma_sh = F.sub(gamma, F.mul(v_comb, self.alpha_shares))
        self.net.broadcast([encode_ints([s]) for s in sigma_sh])
        self.counters["mac_checks"] += 1
        sigma = int(F.fsum(sigma_sh))
        if sigma != 0:
            self._abort("mac-check", f"sigma={sigma}")

    def _drops_check(self) -> bool:
        return any(isinstance(a.deviation, DropMacCheck) for a in self.runner.script.actions)

    def _abort(self, reason: str, detail: str = ""):
        self.aborted = ProtocolAbort(reason, detail)
        raise self.aborted

    def output(self, x: SharedVec, name: str = "output", to: int | None = None) -> np.ndarray:
        value = self.open(x, name) if to is None else self.open_to(x, to, name)
        self.check()
        return value

    def finish(self):
        self.check()
        self.runner.assert_all_fired()

    # multiplication

    def mul(self, x: SharedVec, y: SharedVec, name: str = "beaver") -> SharedVec:
        """Beaver multiplication of equally-shaped (or broadcastable) shared arrays."""
        shape = np.broadcast_shapes(x.shape, y.shape)
        if x.shape != shape:
            x = self._broadcast(x, shape)
        if y.shape != shape:
            y = self._broadcast(y, shape)
        (a, ma), (b, mb), (c, mc) = self.dealer.triples(shape)
        A, B, C = SharedVec(self, a, ma), SharedVec(self, b, mb), SharedVec(self, c, mc)
        n = int(np.prod(shape))
        self.counters["mul"] += n
        de = self.open(SharedVec.concat([(x - A).reshape(n), (y - B).reshape(n)]), name)
        d = de[:n].reshape(shape)
        e = de[n:].reshape(shape)
        z = C + B * d + A * e
        return z.add_public(F.mul(d, e))

    def _broadcast(self, x: SharedVec, shape) -> SharedVec:
        val = np.broadcast_to(x.val, (self.k,) + tuple(shape)).copy()
        mac = None if x.mac is None else np.broadcast_to(x.mac, (self.k,) + tuple(shape)).copy()
        return SharedVec(self, val, mac)

    # dealer material as SharedVec

    def random_bits(self, shape) -> SharedVec:
        _, pair = self.dealer.random_bits(shape)
        return self._from_dealer(pair)

    def random_with_bits(self, shape, nbits: int = 61) -> SharedVec:
        return self._from_dealer(self.dealer.random_with_bits(shape, nbits))

    def mod2_mask(self, shape, kappa: int) -> tuple[SharedVec, SharedVec]:
        r0, r = self.dealer.mod2_mask(shape, kappa)
        return self._from_dealer(r0), self._from_dealer(r)


def bits_msb_first(data: bytes) -> np.ndarray:
    return np.unpackbits(np.frombuffer(data, dtype=np.uint8)).astype(U64)


def share_bits(sess: Session, owner: int, data: bytes) -> SharedVec:
    return sess.input(owner, bits_msb_first(data))
