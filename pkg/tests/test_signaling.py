from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from utilsignal import hashing as H
from utilsignal import signaling as SG
from utilsignal.datasets import canonical_bytes, read_csv
from utilsignal.transport import ProtocolAbort, Transcript

DATA = Path(__file__).resolve().parent.parent / "data"


def load(name):
    return read_csv(DATA / name)


PAIRS = {
    "pm": ("pm_seller.csv", "pm_buyer.csv", {}, Fraction(2)),
    "cre": ("cre_seller.csv", "cre_buyer.csv", {"threshold": Fraction(1, 2)}, Fraction(2)),
    "mpv": ("mpv_seller.csv", "mpv_buyer.csv", {"K": 3}, None),
}


def _cfg(task, mode, **kw):
    extra = dict(PAIRS[task][2])
    extra.update(kw)
    return SG.SignalingConfig(task=task, mode=mode, block_bits=256, **extra)


def _run(task, mode, script=None, D=None, **kw):
    s, b, _, _ = PAIRS[task]
    D0, T = load(s), load(b)
    cfg = _cfg(task, mode, **kw)
    com = None if mode == "semi" else SG.commit_stage(D0, cfg.commit_mode, cfg.block_bits)
    if D is not None:
        D0 = D
    return SG.signal(D0, T, cfg, com, script), cfg


def _mpv_oracle():
    # K=3 nearest of 5 points by squared distance, decoded by hand:
    # test (0.8,0.1) -> points 2,3,4 with labels 1,1,0 -> 2 hits
    # test (0.0,0.9) -> points 5,1,3 with labels 0,0,1 -> 2 hits
    return Fraction(4, 6)


def test_commit_stage():
    D = load("pm_seller.csv")
    a, b = SG.commit_stage(D), SG.commit_stage(D)
    assert a == b
    m = SG.commit_stage(D, "MHT")
    assert a.line() != m.line() and a.mode == "MD" and m.mode == "MHT"
    with pytest.raises(ValueError):
        SG.commit_stage(D, "XX")


def test_commit_three_blocks_manual():
    D = read_csv("id\n1\n4\n")
    data = canonical_bytes(D)
    assert len(data) == 25  # three blocks once padded
    padded = H.md_pad(data)
    h = H.IV
    for i in range(0, len(padded), 16):
        h = H.compress(h, padded[i:i + 16])
    assert len(padded) == 48
    assert SG.commit_stage(D).digest == h


@pytest.mark.parametrize("task", ["pm", "cre", "mpv"])
@pytest.mark.parametrize("mode", SG.MODES)
def test_honest_runs(task, mode):
    res, cfg = _run(task, mode)
    want = PAIRS[task][3] or _mpv_oracle()
    assert abs(res.nu - want) <= Fraction(2, 1 << 16)
    s, b, _, _ = PAIRS[task]
    assert res.encoded == SG.plain_nu(load(s), load(b), cfg)


def test_semi_offset_goes_unnoticed():
    res, _ = _run("pm", "semi", SG.attack_share_offset(1))
    assert res.nu == 2 + Fraction(1, 1 << 16)


def test_semi_substitution_returns_substitute_utility():
    D_hat = load("pm_seller_tampered.csv")
    res, _ = _run("pm", "semi", SG.attack_substitute(D_hat))
    assert res.nu == 1  # ids 1,4,7,8 against 4,9,12


@pytest.mark.parametrize("mode", ["mali-md", "mali-ap"])
@pytest.mark.parametrize("attack,reason", [
    (lambda: SG.attack_share_offset(1), "mac-check"),
    (lambda: SG.attack_gadget_offset(3), "mac-check"),
    (lambda: SG.attack_substitute(load("pm_seller_tampered.csv")), "input-mismatch"),
])
def test_mali_attacks_abort(mode, attack, reason):
    with pytest.raises(ProtocolAbort) as e:
        _run("pm", mode, attack())
    assert e.value.reason == reason


def test_mali_requires_matching_commitment():
    D, T = load("pm_seller.csv"), load("pm_buyer.csv")
    cfg = _cfg("pm", "mali-md")
    with pytest.raises(ValueError):
        SG.sign_mali(D, T, None, cfg)
    with pytest.raises(ValueError):
        SG.sign_mali(D, T, SG.commit_stage(D, "MHT", 256), cfg)


def test_config_validation():
    for bad in ({"task": "x"}, {"mode": "x"}, {"disclosure": "none"}, {"k": 1}, {"block_bits": 12}):
        with pytest.raises(ValueError):
            SG.SignalingConfig(**bad)


@pytest.mark.parametrize("disclosure,recipient", [("both", None), ("buyer", 3), ("seller", 0)])
def test_disclosure(disclosure, recipient):
    res, _ = _run("pm", "mali-md", disclosure=disclosure)
    assert res.recipient == recipient
    assert res.nu == 2


def test_mali_ap_partial_substitution_detection_rate():
    # 20 blocks of 128 bits, 2 falsified, c = 29 > k so every run is caught;
    # with c = 5 the exact hit rate is 1 - C(18,5)/C(20,5) ~ 0.447
    ids = np.arange(1, 61)
    D = read_csv("id\n" + "\n".join(map(str, ids)) + "\n")
    T = read_csv("id\n5\n")
    bad = ids.copy()
    bad[[0, 40]] += 1000
    D_hat = read_csv("id\n" + "\n".join(map(str, bad)) + "\n")
    aborts = 0
    trials = 40
    for seed in range(trials):
        cfg = SG.SignalingConfig(mode="mali-ap", block_bits=128, alpha=0.13, beta=0.5, seed=seed)
        com = SG.commit_stage(D, "MHT", 128)
        try:
            res = SG.sign_mali(D, T, com, cfg, SG.attack_substitute(D_hat))
            assert res.nu == 1  # an undetected run still computes on what was shared
        except ProtocolAbort as e:
            assert e.reason == "input-mismatch"
            aborts += 1
    assert 0.2 <= aborts / trials <= 0.75


def test_transcript_has_no_dataset_bytes():
    canary = 0x5EC12E7C
    D = read_csv(f"id\n{canary}\n4\n9\n")
    T = load("pm_buyer.csv")
    cfg = SG.SignalingConfig(mode="mali-md", block_bits=256)
    tr = Transcript(record=True, keep_payloads=True)
    res = SG.sign_mali(D, T, SG.commit_stage(D), cfg, transcript=tr)
    assert res.nu == 2
    raw = canonical_bytes(D)
    needles = [canary.to_bytes(8, "little"), canary.to_bytes(4, "big"), str(canary).encode(),
               raw[3:19]]
    for m in tr.messages:
        for n in needles:
            assert n not in m.payload
    assert tr.n_messages == len(tr.messages) > 0


def test_semi_and_mali_agree():
    a, _ = _run("cre", "semi")
    b, _ = _run("cre", "mali-md")
    assert a.nu == b.nu
