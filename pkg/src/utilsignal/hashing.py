"""Davies–Meyer compression over a seeded LowMC-style cipher, Merkle–Damgård
chaining, and a Merkle hash tree.

The cipher has a 128-bit block and key and 10 rounds, with ten 3-bit S-boxes
per round covering bits 0..29. Everything else (linear layers, round
constants, key matrices) comes from a fixed public seed. It is NOT meant as a
secure cipher. It keeps the circuit shape and AND count of the real thing.

Bits are numbered MSB-first within the 16-byte big-endian serialization, so
bit 0 is the top bit of byte 0.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import field as F
from .gadgets import mod2
from .sharing import Session, SharedVec

BLOCK = 128
ROUNDS = 10
N_SBOX = 10
DIGEST_BYTES = BLOCK // 8
DEFAULT_SEED = 0x5157_4E41_4C31  # fixed public seed
IV = bytes(DIGEST_BYTES)

Digest = bytes


def _gf2_rank(m: np.ndarray) -> int:
    m = m.copy() % 2
    rows, cols = m.shape
    r = 0
    for c in range(cols):
        piv = np.nonzero(m[r:, c])[0]
        if not len(piv):
            continue
        p = r + piv[0]
        m[[r, p]] = m[[p, r]]
        others = np.nonzero(m[:, c])[0]
        others = others[others != r]
        m[others] ^= m[r]
        r += 1
        if r == rows:
            break
    return r


def _gf2_inv(m: np.ndarray) -> np.ndarray:
    n = m.shape[0]
    aug = np.concatenate([m % 2, np.eye(n, dtype=np.uint8)], axis=1)
    for c in range(n):
        p = c + np.nonzero(aug[c:, c])[0][0]
        aug[[c, p]] = aug[[p, c]]
        others = np.nonzero(aug[:, c])[0]
        others = others[others != c]
        aug[others] ^= aug[c]
    return aug[:, n:]


def _random_invertible(rng: np.random.Generator, n: int) -> np.ndarray:
    while True:
        m = rng.integers(0, 2, (n, n), dtype=np.uint8)
        if _gf2_rank(m) == n:
            return m


def _sbox(a, b, c):
    return a ^ (b & c), a ^ b ^ (a & c), a ^ b ^ c ^ (a & b)


SBOX = np.array([(lambda t: t[0] << 2 | t[1] << 1 | t[2])(_sbox(v >> 2 & 1, v >> 1 & 1, v & 1))
                 for v in range(8)], dtype=np.uint8)
SBOX_INV = np.argsort(SBOX).astype(np.uint8)


@dataclass(frozen=True)
class BlockCipherSpec:
    """Round material derived from ``seed``; every linear layer is invertible."""

    seed: int = DEFAULT_SEED
    rounds: int = ROUNDS
    lin: np.ndarray = field(init=False, repr=False, compare=False)
    lin_inv: np.ndarray = field(init=False, repr=False, compare=False)
    consts: np.ndarray = field(init=False, repr=False, compare=False)
    keymats: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        rng = np.random.default_rng(self.seed)
        lin = np.stack([_random_invertible(rng, BLOCK) for _ in range(self.rounds)])
        consts = rng.integers(0, 2, (self.rounds, BLOCK), dtype=np.uint8)
        keymats = np.stack([_random_invertible(rng, BLOCK) for _ in range(self.rounds + 1)])
        object.__setattr__(self, "lin", lin)
        object.__setattr__(self, "lin_inv", np.stack([_gf2_inv(m) for m in lin]))
        object.__setattr__(self, "consts", consts)
        object.__setattr__(self, "keymats", keymats)

    @property
    def and_gates(self) -> int:
        return self.rounds * N_SBOX * 3


@lru_cache(maxsize=4)
def cipher_spec(seed: int = DEFAULT_SEED) -> BlockCipherSpec:
    return BlockCipherSpec(seed)


def _gf2_apply(m: np.ndarray, x: np.ndarray) -> np.ndarray:
    # float32 BLAS is exact here: sums never exceed 128
    y = x.astype(np.float32) @ m.T.astype(np.float32)
    return (y.astype(np.int64) & 1).astype(np.uint8)


def _sbox_layer(s: np.ndarray, table: np.ndarray) -> np.ndarray:
    s = s.copy()
    t = s[..., : 3 * N_SBOX].reshape(s.shape[:-1] + (N_SBOX, 3))
    idx = (t[..., 0] << 2) | (t[..., 1] << 1) | t[..., 2]
    out = table[idx]
    t = np.stack([(out >> 2) & 1, (out >> 1) & 1, out & 1], axis=-1)
    s[..., : 3 * N_SBOX] = t.reshape(s.shape[:-1] + (3 * N_SBOX,))
    return s


def _round_keys(spec: BlockCipherSpec, key: np.ndarray) -> np.ndarray:
    flat = spec.keymats.reshape(-1, BLOCK)
    return _gf2_apply(flat, key).reshape(key.shape[:-1] + (spec.rounds + 1, BLOCK))


def encrypt_bits(key: np.ndarray, pt: np.ndarray, spec: BlockCipherSpec | None = None) -> np.ndarray:
    """Batched encryption of bit arrays with trailing axis 128."""
    spec = spec or cipher_spec()
    key = np.asarray(key, dtype=np.uint8)
    rk = _round_keys(spec, key)
    s = np.asarray(pt, dtype=np.uint8) ^ rk[..., 0, :]
    for r in range(spec.rounds):
        s = _sbox_layer(s, SBOX)
        s = _gf2_apply(spec.lin[r], s) ^ spec.consts[r] ^ rk[..., r + 1, :]
    return s


def decrypt_bits(key: np.ndarray, ct: np.ndarray, spec: BlockCipherSpec | None = None) -> np.ndarray:
    spec = spec or cipher_spec()
    rk = _round_keys(spec, np.asarray(key, dtype=np.uint8))
    s = np.asarray(ct, dtype=np.uint8)
    for r in reversed(range(spec.rounds)):
        s = s ^ spec.consts[r] ^ rk[..., r + 1, :]
        s = _gf2_apply(spec.lin_inv[r], s)
        s = _sbox_layer(s, SBOX_INV)
    return s ^ rk[..., 0, :]


def to_bits(data: bytes) -> np.ndarray:
    return np.unpackbits(np.frombuffer(data, dtype=np.uint8))


def from_bits(bits) -> bytes:
    return np.packbits(np.asarray(bits, dtype=np.uint8)).tobytes()


def _check_width(x: bytes, what: str):
    if len(x) != DIGEST_BYTES:
        raise ValueError(f"{what} must be {DIGEST_BYTES} bytes, got {len(x)}")


def encrypt(key: bytes, pt: bytes) -> bytes:
    _check_width(key, "key")
    _check_width(pt, "plaintext")
    return from_bits(encrypt_bits(to_bits(key), to_bits(pt)))


def decrypt(key: bytes, ct: bytes) -> bytes:
    return from_bits(decrypt_bits(to_bits(key), to_bits(ct)))


def compress_bits(h_prev: np.ndarray, block: np.ndarray) -> np.ndarray:
    return encrypt_bits(block, h_prev) ^ np.asarray(h_prev, dtype=np.uint8)


def compress(h_prev: Digest, block: bytes) -> Digest:
    """Davies–Meyer: Enc(key=block, pt=h_prev) XOR h_prev."""
    _check_width(h_prev, "chaining value")
    _check_width(block, "block")
    return from_bits(compress_bits(to_bits(h_prev), to_bits(block)))


def md_pad(data: bytes) -> bytes:
    n = len(data)
    pad = b"\x80" + bytes((-(n + 9)) % DIGEST_BYTES)
    return data + pad + (8 * n).to_bytes(8, "big")


def md_hash(data: bytes) -> Digest:
    padded = md_pad(data)
    blocks = to_bits(padded).reshape(-1, BLOCK)
    h = np.zeros(BLOCK, dtype=np.uint8)
    for b in blocks:
        h = compress_bits(h, b)
    return from_bits(h)


def md_hash_many(chunks: list[bytes]) -> list[Digest]:
    """md_hash over many equal-length inputs at once (vectorized chaining)."""
    if not chunks:
        return []
    lens = {len(c) for c in chunks}
    if len(lens) > 1:
        return [md_hash(c) for c in chunks]
    blocks = np.stack([to_bits(md_pad(c)).reshape(-1, BLOCK) for c in chunks])
    h = np.zeros((len(chunks), BLOCK), dtype=np.uint8)
    for j in range(blocks.shape[1]):
        h = compress_bits(h, blocks[:, j])
    return [from_bits(row) for row in h]


def md_compress_calls(nbytes: int) -> int:
    return len(md_pad(bytes(nbytes))) // DIGEST_BYTES


# -- Merkle tree --------------------------------------------------------------------

@lru_cache(maxsize=1 << 16)
def node_hash(left: Digest, right: Digest) -> Digest:
    return compress(compress(IV, left), right)


def _node_hash_many(left: np.ndarray, right: np.ndarray) -> np.ndarray:
    h = compress_bits(np.zeros_like(left), left)
    return compress_bits(h, right)


@dataclass
class MerkleTree:
    levels: list[list[Digest]]

    @property
    def leaves(self) -> list[Digest]:
        return self.levels[0]

    @property
    def root(self) -> Digest:
        return self.levels[-1][0]

    @property
    def height(self) -> int:
        return len(self.levels) - 1


@dataclass(frozen=True)
class MerklePath:
    index: int
    steps: tuple[tuple[Digest, str], ...]  # (sibling, side of the sibling)


def mht_commit(leaves: list[Digest]) -> MerkleTree:
    if not leaves:
        raise ValueError("a Merkle tree needs at least one leaf")
    levels = [list(leaves)]
    cur = np.stack([to_bits(l) for l in leaves])
    while cur.shape[0] > 1:
        h = cur.shape[0] // 2
        nxt = _node_hash_many(cur[0:2 * h:2], cur[1:2 * h:2])
        if cur.shape[0] % 2:
            nxt = np.concatenate([nxt, cur[-1:]])  # odd node promoted unchanged
        cur = nxt
        levels.append([from_bits(r) for r in cur])
    return MerkleTree(levels)


def mht_gen_proof(tree: MerkleTree, i: int) -> MerklePath:
    if not 0 <= i < len(tree.leaves):
        raise IndexError(f"leaf index {i} out of range")
    steps = []
    idx = i
    for level in tree.levels[:-1]:
        sib = idx ^ 1
        if sib < len(level):
            steps.append((level[sib], "left" if sib < idx else "right"))
        idx //= 2
    return MerklePath(i, tuple(steps))


def mht_verify(path: MerklePath, leaf: Digest, root: Digest) -> bool:
    h = leaf
    for sib, side in path.steps:
        h = node_hash(sib, h) if side == "left" else node_hash(h, sib)
    return h == root


def leaf_digests(blocks: list[bytes]) -> list[Digest]:
    return md_hash_many(blocks)


def split_blocks(data: bytes, block_bits: int) -> list[bytes]:
    if block_bits % 8 or block_bits <= 0:
        raise ValueError("block_bits must be a positive multiple of 8")
    step = block_bits // 8
    return [data[i:i + step] for i in range(0, max(len(data), 1), step)]


# -- shared-input variants ------------------------------------------------------

def mpc_compress(sess: Session, h_prev: SharedVec, block: SharedVec,
                 spec: BlockCipherSpec | None = None) -> SharedVec:
    """Compression on {0,1}-embedded shared bits, batched over leading axes.

    XORs are kept as unreduced integer sums; a single statistically masked
    parity extraction per round brings the state back to bits.  Each round
    costs 30 AND gates (Beaver products) per instance.
    """
    spec = spec or cipher_spec()
    if h_prev.shape[-1] != BLOCK or block.shape[-1] != BLOCK:
        raise ValueError("mpc_compress expects 128-bit operands")
    batch = int(np.prod(h_prev.shape[:-1]))
    sess.counters["compress"] += batch
    keymats, lins = _float_mats(spec)
    with sess.scope("compress"):
        rk = _matvec(block, keymats)  # (..., 11*128) unreduced
        rk = rk.reshape(*block.shape[:-1], spec.rounds + 1, BLOCK)
        s = mod2(h_prev + rk[..., 0, :], 8)
        n3 = 3 * N_SBOX
        for r in range(spec.rounds):
            a, b, c = s[..., 0:n3:3], s[..., 1:n3:3], s[..., 2:n3:3]
            prods = sess.mul(SharedVec.stack([b, a, a], axis=len(a.shape)),
                             SharedVec.stack([c, c, b], axis=len(a.shape)), "and")
            sess.counters["and"] += n3 * batch
            bc, ac, ab = prods[..., 0], prods[..., 1], prods[..., 2]
            sb = SharedVec.stack([a + bc, a + b + ac, a + b + c + ab], axis=len(a.shape))
            sb = sb.reshape(*a.shape[:-1], n3)
            u = SharedVec.concat([sb, s[..., n3:]], axis=len(s.shape) - 1)
            t = _matvec(u, lins[r]) + rk[..., r + 1, :]
            t = t + spec.consts[r].astype(np.int64)
            if r == spec.rounds - 1:
                t = t + h_prev  # feed-forward folds into the last parity
            s = mod2(t, 10)
    return s


@lru_cache(maxsize=4)
def _float_mats(spec: BlockCipherSpec):
    keymats = np.ascontiguousarray(spec.keymats.reshape(-1, BLOCK).T, dtype=np.float64)
    lins = [np.ascontiguousarray(m.T, dtype=np.float64) for m in spec.lin]
    return keymats, lins


def _matvec(x: SharedVec, m: np.ndarray) -> SharedVec:
    return SharedVec(x.sess, F.matvec(m, x.val), None if x.mac is None else F.matvec(m, x.mac))


def mpc_md_hash(sess: Session, data_bits: SharedVec, nbytes: int) -> SharedVec:
    """MD chaining over shared data bits (leading batch axes allowed)."""
    if data_bits.shape[-1] != 8 * nbytes:
        raise ValueError("bit length does not match byte length")
    tail = md_pad(bytes(nbytes))[nbytes:]
    lead = data_bits.shape[:-1]
    pad = np.broadcast_to(to_bits(tail).astype(np.uint64), lead + (8 * len(tail),))
    full = SharedVec.concat([data_bits, sess.public(pad)], axis=len(lead))
    nblocks = full.shape[-1] // BLOCK
    full = full.reshape(*lead, nblocks, BLOCK)
    h = sess.public(np.zeros(lead + (BLOCK,), dtype=np.uint64))
    for j in range(nblocks):
        h = mpc_compress(sess, h, full[..., j, :])
    return h


# -- serialization ----------------------------------------------------------------

COMMIT_VERSION = 1


@dataclass(frozen=True)
class Commitment:
    block_bits: int
    mode: str  # "MD" or "MHT"
    digest: Digest
    version: int = COMMIT_VERSION

    def line(self) -> str:
        return f"{self.version},{self.block_bits},{self.mode},{self.digest.hex()}"

    @classmethod
    def parse(cls, line: str) -> "Commitment":
        parts = [p.strip() for p in line.strip().split(",")]
        if len(parts) != 4 or parts[2] not in ("MD", "MHT"):
            raise ValueError(f"malformed commitment record: {line!r}")
        digest = bytes.fromhex(parts[3])
        _check_width(digest, "digest")
        return cls(int(parts[1]), parts[2], digest, int(parts[0]))


def write_commitments(records: list[Commitment], path) -> None:
    with open(path, "w", newline="\n") as fp:
        for r in records:
            fp.write(r.line() + "\n")


def read_commitments(path) -> list[Commitment]:
    with open(path) as fp:
        return [Commitment.parse(l) for l in fp if l.strip()]
