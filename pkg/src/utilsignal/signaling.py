"""End-to-end signaling runs: the semi-honest protocol and the fully protected
one (commit, share, verify input, compute, disclose)."""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import field as F
from . import hashing as H
from . import verification as V
from .datasets import Layout, Table, canonical_bytes, shared_column
from .gadgets import assert_bits
from .sharing import Session, SharedVec, bits_msb_first
from .transport import AddOffset, AdversaryScript, SubstituteInput, Transcript
from .utility import DIST_BITS, TASKS, evaluate, evaluate_plain

MODES = ("semi", "mali-md", "mali-ap")
DISCLOSURES = ("buyer", "seller", "both")
SELLER = 0

# columns each task reads from the seller (D) and the buyer (T)
TASK_COLUMNS = {
    "pm": (("id",), ("id",)),
    "cre": (("id", "score"), ("id",)),
    "mpv": (("x", "label"), ("x", "label")),
}


@dataclass(frozen=True)
class SignalingConfig:
    task: str = "pm"
    mode: str = "semi"
    block_bits: int = V.DEFAULT_LEAF_BITS
    alpha: float = 0.1
    beta: float = 0.95
    K: int = 1
    threshold: Fraction = Fraction(0)
    disclosure: str = "both"
    k: int = 4
    seed: int = 0
    backend: str = "radix"
    dist_bits: int = DIST_BITS

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.disclosure not in DISCLOSURES:
            raise ValueError(f"disclosure must be one of {DISCLOSURES}")
        if self.k < 2:
            raise ValueError("need a seller and a buyer")
        if self.block_bits <= 0 or self.block_bits % 8:
            raise ValueError("block_bits must be a positive multiple of 8")
        if self.mode == "mali-ap":
            V.AoIParams(self.alpha, self.beta)

    @property
    def buyer(self) -> int:
        return self.k - 1

    @property
    def commit_mode(self) -> str:
        return "MHT" if self.mode == "mali-ap" else "MD"

    def threshold_field(self, frac_bits: int = F.FRAC_BITS) -> int:
        return F.FixedPointCodec(frac_bits).encode(Fraction(self.threshold))


@dataclass
class SignalResult:
    nu: Fraction | None  # None for parties that only hold a share
    encoded: int | None
    recipient: int | None  # None means everyone
    counters: dict = field(default_factory=dict)
    challenges: str | None = None
    transcript: Transcript | None = None


# -- commitment ---------------------------------------------------------------

def commit_stage(D: Table, mode: str = "MD", block_bits: int = V.DEFAULT_LEAF_BITS) -> H.Commitment:
    """Publish the commitment of D's canonical serialization."""
    mode = mode.upper()
    data = canonical_bytes(D)
    if mode == "MD":
        return H.Commitment(block_bits, "MD", V.commit_md(data))
    if mode == "MHT":
        root, _ = V.commit_mht(data, block_bits)
        return H.Commitment(block_bits, "MHT", root)
    raise ValueError(f"unknown commitment mode {mode!r}")


# -- columns --------------------------------------------------------------------

def plain_columns(table: Table, names) -> dict:
    out = {}
    for n in names:
        out[n] = table.features() if n == "x" else table.columns[n]
    return out


def _check_columns(table: Table, names, who: str):
    for n in names:
        if n == "x":
            if not table.feature_names():
                raise ValueError(f"{who} dataset has no feature columns")
        elif n not in table.columns:
            raise ValueError(f"{who} dataset lacks column {n!r}")


def _share_columns(sess: Session, owner: int, table: Table, names) -> dict:
    out = {}
    for n in names:
        vals = table.features() if n == "x" else table.columns[n]
        out[n] = sess.input(owner, vals)
    return out


def _columns_from_bits(bits: SharedVec, layout: Layout, table_names, names) -> dict:
    out = {}
    for n in names:
        if n == "x":
            feats = [c for c in layout.names if c not in ("id", "label", "score")]
            out[n] = SharedVec.stack([shared_column(bits, layout, c) for c in feats], axis=1)
        else:
            out[n] = shared_column(bits, layout, n)
    return out


def plain_nu(D: Table, T: Table, config: SignalingConfig) -> int:
    """Plaintext utility (signed fixed-point encoding), the oracle for every run."""
    dn, tn = TASK_COLUMNS[config.task]
    return evaluate_plain(config.task, plain_columns(D, dn), plain_columns(T, tn), K=config.K,
                          threshold=config.threshold_field(D.frac_bits), frac_bits=D.frac_bits,
                          dist_bits=config.dist_bits)


def _compute(sess: Session, d: dict, t: dict, config: SignalingConfig) -> SharedVec:
    return evaluate(config.task, d, t, K=config.K, threshold=config.threshold_field(sess.frac_bits),
                    dist_bits=config.dist_bits, backend=config.backend)


def _disclose(sess: Session, nu: SharedVec, config: SignalingConfig) -> SignalResult:
    to = {"buyer": config.buyer, "seller": SELLER, "both": None}[config.disclosure]
    with sess.scope("signal"):
        val = int(sess.output(nu, "nu", to=to))
    enc = F.to_signed_int(val)
    return SignalResult(Fraction(enc, 1 << sess.frac_bits), enc, to)


def _session(config: SignalingConfig, authenticated: bool, script, transcript) -> Session:
    return Session(config.k, authenticated=authenticated, seed=config.seed, script=script,
                   transcript=transcript)


def _finish(sess: Session, res: SignalResult) -> SignalResult:
    sess.finish()
    res.counters = dict(sess.counters)
    res.transcript = sess.transcript
    return res


# -- protocols ----------------------------------------------------------------------

def sign_semi(D: Table, T: Table, config: SignalingConfig, script: AdversaryScript | None = None,
              transcript: Transcript | None = None) -> SignalResult:
    """Semi-honest signaling: values are shared directly, no MACs, no input check.

    Scripted deviations go through unnoticed; that is the point of this mode.
    """
    sess = _session(config, False, script, transcript)
    dn, tn = TASK_COLUMNS[config.task]
    D = sess.hook_input(SELLER, "dataset", D)
    _check_columns(D, dn, "seller")
    _check_columns(T, tn, "buyer")
    with sess.scope("signal"):
        d = _share_columns(sess, SELLER, D, dn)
        t = _share_columns(sess, config.buyer, T, tn)
        nu = _compute(sess, d, t, config)
    return _finish(sess, _disclose(sess, nu, config))


def sign_mali(D: Table, T: Table, commitment: H.Commitment, config: SignalingConfig,
              script: AdversaryScript | None = None, transcript: Transcript | None = None,
              challenge_log: list | None = None) -> SignalResult:
    """Fully protected signaling.

    The seller shares the bits of its canonical CSV, the parties verify them
    against the published commitment (exactly, or on sampled blocks), and only
    then derive the utility inputs from those same shared bits.  Any MAC
    failure aborts with "mac-check", a failed verification with "input-mismatch".
    """
    if config.mode == "semi":
        raise ValueError("sign_mali needs a mali mode")
    if commitment is None:
        raise ValueError("protected modes require a commitment")
    if commitment.mode != config.commit_mode:
        raise ValueError(f"{config.mode} needs a {config.commit_mode} commitment")
    sess = _session(config, True, script, transcript)
    dn, tn = TASK_COLUMNS[config.task]
    # the seller's honest tree is built from what it committed to
    committed = canonical_bytes(D)
    D_in = sess.hook_input(SELLER, "dataset", D)
    _check_columns(D_in, dn, "seller")
    _check_columns(T, tn, "buyer")
    data = canonical_bytes(D_in)
    layout = Layout.of(D_in)
    record = None
    with sess.scope("signal"):
        if config.mode == "mali-md":
            bits = sess.input(SELLER, bits_msb_first(data))
            assert_bits(bits)
            V.hashveri_md(sess, bits, len(data), commitment.digest)
        else:
            _, tree = V.commit_mht(committed, commitment.block_bits)
            blocks = V.SharedBlocks(sess, SELLER, data, commitment.block_bits)
            c = V.challenge_count(config.alpha, config.beta)
            res = V.hashveri_ap(sess, blocks, commitment.digest, c, config.seed,
                                lambda i: H.mht_gen_proof(tree, i), config.buyer, challenge_log)
            record = res.record
            bits = SharedVec.concat(blocks.share_many(range(len(blocks))))
        d = _columns_from_bits(bits, layout, D_in.names, dn)
        t = _share_columns(sess, config.buyer, T, tn)
        nu = _compute(sess, d, t, config)
    out = _disclose(sess, nu, config)
    out.challenges = record
    return _finish(sess, out)


def signal(D: Table, T: Table, config: SignalingConfig, commitment: H.Commitment | None = None,
           script: AdversaryScript | None = None, **kw) -> SignalResult:
    if config.mode == "semi":
        return sign_semi(D, T, config, script, kw.get("transcript"))
    return sign_mali(D, T, commitment, config, script, **kw)


# -- attack catalogue (seller-side; the buyer is assumed honest) -----------------------

def attack_share_offset(eps: int = 1, party: int = SELLER) -> AdversaryScript:
    """Shift the corrupted party's share of nu just before it is recovered."""
    return AdversaryScript.single(party, "open:signal/nu", AddOffset(eps))


def attack_gadget_offset(eps: int = 1, party: int = SELLER, occurrence: int = 1) -> AdversaryScript:
    """Shift a share opened inside an equality gadget of the utility."""
    return AdversaryScript.single(party, "open:signal/*/eq/*", AddOffset(eps), occurrence)


def attack_substitute(D_hat: Table, party: int = SELLER) -> AdversaryScript:
    """Feed D_hat instead of the committed dataset."""
    return AdversaryScript.single(party, "input:dataset", SubstituteInput(D_hat))
