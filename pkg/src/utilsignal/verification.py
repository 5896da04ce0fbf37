"""Input-authenticity checks: exact Merkle–Damgård verification and sampled
Merkle-tree verification, plus the (alpha, beta) challenge calculus."""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from . import hashing as H
from .gadgets import assert_bits
from .sharing import Session, SharedVec
from .transport import ProtocolAbort, encode_ints

DEFAULT_LEAF_BITS = 1024


@dataclass(frozen=True)
class AoIParams:
    alpha: float
    beta: float

    def __post_init__(self):
        if not (0 < self.alpha < 1 and 0 < self.beta < 1):
            raise ValueError("alpha and beta must lie in (0, 1)")

    @property
    def c(self) -> int:
        return challenge_count(self.alpha, self.beta)


def challenge_count(alpha: float, beta: float) -> int:
    """Smallest c with 1 - (1 - alpha)^c >= beta (with-replacement bound)."""
    if not (0 < alpha < 1 and 0 < beta < 1):
        raise ValueError("alpha and beta must lie in (0, 1)")
    ratio = math.log1p(-beta) / math.log1p(-alpha)
    c = math.ceil(ratio - 1e-12)
    return max(1, c)


def detection_probability(k: int, t: int, c: int) -> float:
    """Exact probability that c draws without replacement hit one of t bad blocks."""
    return float(detection_probability_exact(k, t, c))


def detection_probability_exact(k: int, t: int, c: int) -> Fraction:
    if not 0 <= t <= k or c < 0:
        raise ValueError("need 0 <= t <= k and c >= 0")
    if c > k - t:
        return Fraction(1) if t > 0 else Fraction(0)
    miss = Fraction(1)
    for i in range(c):
        miss *= Fraction(k - t - i, k - i)
    return 1 - miss


def detection_lower_bound(k: int, t: int, c: int) -> float:
    return 1 - ((k - t) / k) ** c


# -- commitments ----------------------------------------------------------------

def commit_md(data: bytes) -> H.Digest:
    if not data:
        raise ValueError("nothing to commit")
    return H.md_hash(data)


def commit_mht(data: bytes, block_bits: int = DEFAULT_LEAF_BITS) -> tuple[H.Digest, H.MerkleTree]:
    if not data:
        raise ValueError("nothing to commit")
    blocks = H.split_blocks(data, block_bits)
    tree = H.mht_commit(_leaf_digests(blocks))
    return tree.root, tree


def _leaf_digests(blocks: list[bytes]) -> list[H.Digest]:
    full = [b for b in blocks if len(b) == len(blocks[0])]
    out = H.md_hash_many(full)
    return out + [H.md_hash(b) for b in blocks[len(full):]]


# -- exact verification ------------------------------------------------------------

def hashveri_md(sess: Session, data_bits: SharedVec, nbytes: int, h: H.Digest,
                to: int | None = None) -> bool:
    """Chain the compression over the shared data, open, compare with ``h``.

    MACs are checked before the comparison is trusted; a mismatch aborts.
    """
    with sess.scope("hashveri"):
        hk = H.mpc_md_hash(sess, data_bits, nbytes)
        opened = sess.output(hk, "digest", to=to)
    if H.from_bits(opened.astype(np.uint8)) != h:
        sess._abort("input-mismatch", "recomputed digest differs from the commitment")
    return True


def hashveri_md_many(sess: Session, data_bits: SharedVec, nbytes: int,
                     digests: Sequence[H.Digest]) -> np.ndarray:
    """hashveri_md over a batch of independent datasets (leading axis).

    Returns one verdict per dataset instead of aborting; used for Monte Carlo
    sweeps where every trial is an independent verification.
    """
    with sess.scope("hashveri"):
        hk = H.mpc_md_hash(sess, data_bits, nbytes)
        opened = sess.output(hk, "digest")
    got = [H.from_bits(row.astype(np.uint8)) for row in opened]
    return np.array([g == d for g, d in zip(got, digests)])


# -- sampled verification ------------------------------------------------------

class SharedBlocks:
    """The seller's data as shared bits, materialized block by block.

    The seller's bytes are fixed when the object is created (before any
    challenge is drawn); a block is secret-shared the first time a protocol
    step touches it, which keeps memory flat for very large datasets.
    """

    def __init__(self, sess: Session, owner: int, data: bytes, block_bits: int):
        self.sess = sess
        self.owner = owner
        self._data = bytes(data)
        self.block_bits = block_bits
        self.blocks = H.split_blocks(self._data, block_bits)
        self._shared: dict[int, SharedVec] = {}

    def __len__(self):
        return len(self.blocks)

    def block(self, i: int) -> SharedVec:
        if i not in self._shared:
            self._shared[i] = self.share_many([i])[0]
        return self._shared[i]

    def share_many(self, idx: Sequence[int]) -> list[SharedVec]:
        todo = [i for i in idx if i not in self._shared]
        by_len: dict[int, list[int]] = {}
        for i in todo:
            by_len.setdefault(len(self.blocks[i]), []).append(i)
        for n, group in by_len.items():
            bits = np.stack([H.to_bits(self.blocks[i]) for i in group]).astype(np.uint64)
            sh = self.sess.input(self.owner, bits)
            if self.sess.authenticated:
                assert_bits(sh)
            for j, i in enumerate(group):
                self._shared[i] = sh[j]
        return [self._shared[i] for i in idx]


def sample_challenges(k: int, c: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC4A1]))
    return np.sort(rng.choice(k, size=min(c, k), replace=False))


def challenge_record(seed: int, k: int, c: int, indices) -> str:
    return ",".join(str(v) for v in [seed, k, c, *(int(i) for i in indices)])


@dataclass
class APResult:
    ok: bool
    indices: np.ndarray
    record: str


def hashveri_ap(sess: Session, data: SharedBlocks, root: H.Digest, c: int, seed: int,
                prover: Callable[[int], H.MerklePath], buyer: int | None = None,
                log: list | None = None) -> APResult:
    """Sampled verification: hash only the c challenged blocks under MPC.

    ``prover(i)`` is the seller's Merkle path for block i.  The buyer draws the
    indices, publishes them, and checks every opened leaf digest against the
    root; any failure aborts with "input-mismatch".
    """
    buyer = sess.k - 1 if buyer is None else buyer
    k = len(data)
    idx = sample_challenges(k, c, seed)
    payload = encode_ints(idx)
    sess.net.scatter_from(buyer, [payload] * sess.k)
    sess.transcript.absorb(payload)
    record = challenge_record(seed, k, c, idx)
    if log is not None:
        log.append(record)
    shared = data.share_many(list(idx))
    digests: dict[int, H.Digest] = {}
    with sess.scope("hashveri"):
        by_len: dict[int, list[int]] = {}
        for i in idx:
            by_len.setdefault(len(data.blocks[i]), []).append(int(i))
        for nbytes, group in by_len.items():
            bits = SharedVec.stack([shared[list(idx).index(i)] for i in group])
            hk = H.mpc_md_hash(sess, bits, nbytes)
            opened = sess.output(hk, "leaf")
            for i, row in zip(group, opened):
                digests[i] = H.from_bits(row.astype(np.uint8))
    for i in idx:
        path = prover(int(i))
        if not H.mht_verify(path, digests[int(i)], root):
            sess._abort("input-mismatch", f"block {int(i)} does not match the committed root")
    return APResult(True, idx, record)
