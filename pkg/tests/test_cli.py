from pathlib import Path

import pytest

from utilsignal.cli import main, nu_text, parse_attack, UsageError
from fractions import Fraction

DATA = Path(__file__).resolve().parent.parent / "data"


def d(name):
    return str(DATA / name)


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out


@pytest.fixture
def md_commit(tmp_path, capsys):
    path = tmp_path / "c.txt"
    assert run(capsys, "commit", d("pm_seller.csv"), "--mode", "MD", "--out", path)[0] == 0
    return path


def test_commit_deterministic(tmp_path, capsys):
    a = run(capsys, "commit", d("pm_seller.csv"))[1]
    b = run(capsys, "commit", d("pm_seller.csv"))[1]
    c = run(capsys, "commit", d("pm_seller.csv"), "--mode", "mht")[1]
    assert a == b and a != c
    assert ",MD," in a and ",MHT," in c


def test_signal_semi(capsys):
    assert run(capsys, "signal", d("pm_seller.csv"), d("pm_buyer.csv"), "--seed", 1) == (0, "nu=2\n")


def test_signal_semi_attack_is_silent(capsys):
    code, out = run(capsys, "signal", d("pm_seller.csv"), d("pm_buyer.csv"), "--seed", 1,
                    "--attack", "add-eps:1")
    assert code == 0 and out == f"nu={2 + 2 ** -16}\n"


def test_signal_mali_md(capsys, md_commit):
    base = ["signal", d("pm_seller.csv"), d("pm_buyer.csv"), "--seed", 1, "--mode", "mali-md",
            "--commitment", md_commit]
    assert run(capsys, *base) == (0, "nu=2\n")
    assert run(capsys, *base, "--attack", "add-eps:1") == (11, "abort=mac-check\n")
    assert run(capsys, *base, "--attack", "drop-mac")[0] == 11
    tampered = ["signal", d("pm_seller_tampered.csv"), d("pm_buyer.csv"), "--seed", 1,
                "--mode", "mali-md", "--commitment", md_commit]
    assert run(capsys, *tampered) == (10, "abort=input-mismatch\n")
    sub = base + ["--attack", f"substitute:{d('pm_seller_tampered.csv')}"]
    assert run(capsys, *sub)[0] == 10


def test_signal_mali_ap(tmp_path, capsys):
    com = tmp_path / "m.txt"
    run(capsys, "commit", d("pm_seller.csv"), "--mode", "MHT", "--block-bits", 256, "--out", com)
    log = tmp_path / "log.txt"
    tr = tmp_path / "tr.txt"
    code, out = run(capsys, "signal", d("pm_seller.csv"), d("pm_buyer.csv"), "--seed", 1,
                    "--mode", "mali-ap", "--commitment", com, "--block-bits", 256,
                    "--challenge-log", log, "--transcript", tr)
    assert (code, out) == (0, "nu=2\n")
    assert log.read_text() == "1,2,29,0,1\n"
    assert tr.read_text().count("\n") > 10


def test_signal_other_tasks(capsys):
    code, out = run(capsys, "signal", d("cre_seller.csv"), d("cre_buyer.csv"), "--seed", 0,
                    "--task", "cre", "--threshold", "0.5")
    assert (code, out) == (0, "nu=2\n")
    code, out = run(capsys, "signal", d("mpv_seller.csv"), d("mpv_buyer.csv"), "--seed", 0,
                    "--task", "mpv", "--k", 3)
    assert code == 0 and abs(Fraction(out.strip()[3:]) - Fraction(2, 3)) <= Fraction(2, 2 ** 16)


def test_signal_deterministic(tmp_path, capsys, md_commit):
    outs = []
    for i in range(2):
        tr = tmp_path / f"t{i}.txt"
        run(capsys, "signal", d("pm_seller.csv"), d("pm_buyer.csv"), "--seed", 5, "--mode", "mali-md",
            "--commitment", md_commit, "--transcript", tr)
        outs.append(tr.read_bytes())
    assert outs[0] == outs[1]


@pytest.mark.parametrize("argv", [
    ["signal", d("pm_seller.csv"), d("pm_buyer.csv")],                         # no seed
    ["signal", d("pm_seller.csv"), d("pm_buyer.csv"), "--seed", "1", "--mode", "mali-md"],
    ["signal", "missing.csv", d("pm_buyer.csv"), "--seed", "1"],
    ["signal", d("pm_seller.csv"), d("pm_buyer.csv"), "--seed", "1", "--attack", "bogus"],
    ["signal", d("pm_seller.csv"), d("pm_buyer.csv"), "--seed", "1", "--threshold", "abc"],
    ["shapley", d("pm_buyer.csv"), "--seed", "1"],
    ["market", "missing.json", "--seed", "1"],
    ["frobnicate"],
])
def test_usage_errors(argv, capsys):
    assert main(argv) == 2


def test_shapley_point(capsys):
    code, out = run(capsys, "shapley", d("mpv_seller.csv"), d("mpv_buyer.csv"), "--task", "mpv",
                    "--k", 1, "--seed", 0)
    lines = out.splitlines()
    assert code == 0 and lines[0] == "entity_id,shapley_value" and len(lines) == 7
    assert lines[-1] == "sum=1"
    assert abs(sum(float(l.split(",")[1]) for l in lines[1:-1]) - 1) < 1e-4


def test_shapley_sellers(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    a.write_text("id\n4\n9\n")
    b.write_text("id\n9\n1\n")
    code, out = run(capsys, "shapley", a, b, d("pm_buyer.csv"), "--task", "pm", "--seed", 0)
    assert code == 0
    assert out == "entity_id,shapley_value\n0,1.500000\n1,0.500000\nsum=2\n"


def test_market(capsys):
    code, out = run(capsys, "market", "--regime", "signal-after-pricing", "--trials", 1, "--nu", 2,
                    "--b", 2, "--price", 6, "--seed", 0)
    assert code == 0 and "purchased=false" in out and "buyer_true_payoff=0" in out
    code, out = run(capsys, "market", "--regime", "no-signal", "--trials", 1, "--nu", 2,
                    "--b", 2, "--price", 6, "--seed", 0)
    assert "purchased=true" in out and "buyer_true_payoff=-2" in out
    code, out = run(capsys, "market", d("model.json"), "--theorems", "--trials", 5000, "--seed", 0)
    assert code == 0 and out.count(",holds") == 6
    again = run(capsys, "market", d("model.json"), "--theorems", "--trials", 5000, "--seed", 0)[1]
    assert again == out


def test_helpers():
    assert nu_text(Fraction(5, 2)) == "2.5"
    assert parse_attack(None) is None
    with pytest.raises(UsageError):
        parse_attack("add-eps:0")
    with pytest.raises(UsageError):
        parse_attack("add-eps:x")
