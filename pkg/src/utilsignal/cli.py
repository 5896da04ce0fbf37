"""Command-line front end: commit, signal, shapley, market."""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from fractions import Fraction
from pathlib import Path

from . import hashing as H
from . import market as MK
from . import shapley as SH
from . import signaling as SG
from .datasets import DatasetError, read_csv
from .field import FRAC_BITS, format_fixed
from .sharing import Session
from .transport import AddOffset, AdversaryScript, DropMacCheck, ProtocolAbort, Transcript
from .utility import evaluate

EXIT_OK, EXIT_USAGE, EXIT_MISMATCH, EXIT_MAC = 0, 2, 10, 11
ABORT_CODES = {"input-mismatch": EXIT_MISMATCH, "mac-check": EXIT_MAC}


class UsageError(Exception):
    pass


def nu_text(q: Fraction) -> str:
    """Exact decimal of a dyadic rational."""
    return format_fixed(int(q * (1 << FRAC_BITS)), FRAC_BITS)


def _decimal(text: str) -> Fraction:
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise UsageError(f"not a number: {text!r}") from None


def _table(path):
    if not Path(path).is_file():
        raise UsageError(f"no such file: {path}")
    return read_csv(Path(path))


def parse_attack(spec: str | None, party: int = SG.SELLER) -> AdversaryScript | None:
    """add-eps:EPS[@HOOK] | substitute:PATH | drop-mac"""
    if not spec:
        return None
    name, _, arg = spec.partition(":")
    if name == "add-eps":
        eps, _, hook = arg.partition("@")
        try:
            eps = int(eps)
        except ValueError:
            raise UsageError(f"add-eps needs an integer offset, got {eps!r}") from None
        if eps == 0:
            raise UsageError("add-eps needs a nonzero offset")
        return AdversaryScript.single(party, hook or "open:signal/nu", AddOffset(eps))
    if name == "substitute":
        return SG.attack_substitute(_table(arg), party)
    if name == "drop-mac":
        return AdversaryScript.single(party, "mac-check", DropMacCheck())
    raise UsageError(f"unknown attack {spec!r}")


def _emit(text: str, out):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


# -- commands ---------------------------------------------------------------------

def cmd_commit(args) -> int:
    D = _table(args.dataset)
    rec = SG.commit_stage(D, args.mode, args.block_bits)
    _emit(rec.line() + "\n", args.out)
    return EXIT_OK


def _config(args) -> SG.SignalingConfig:
    try:
        return SG.SignalingConfig(task=args.task, mode=args.mode, block_bits=args.block_bits,
                                  alpha=args.alpha, beta=args.beta, K=args.k,
                                  threshold=_decimal(args.threshold), disclosure=args.disclosure,
                                  k=args.parties, seed=args.seed)
    except ValueError as e:
        raise UsageError(str(e)) from None


def cmd_signal(args) -> int:
    cfg = _config(args)
    D, T = _table(args.seller), _table(args.buyer)
    commitment = None
    if cfg.mode != "semi":
        if not args.commitment:
            raise UsageError(f"--commitment is required in {cfg.mode} mode")
        recs = H.read_commitments(args.commitment)
        if not recs:
            raise UsageError("empty commitment file")
        commitment = recs[-1]
        if commitment.mode != cfg.commit_mode:
            raise UsageError(f"{cfg.mode} needs a {cfg.commit_mode} commitment")
    script = parse_attack(args.attack)
    transcript = Transcript(record=bool(args.transcript))
    log: list[str] = []
    kw = {"transcript": transcript}
    if cfg.mode == "mali-ap":
        kw["challenge_log"] = log
    try:
        res = SG.signal(D, T, cfg, commitment, script, **kw)
        code = EXIT_OK
        line = f"nu={nu_text(res.nu)}\n"
    except ProtocolAbort as e:
        code = ABORT_CODES.get(e.reason, EXIT_MAC)
        line = f"abort={e.reason}\n"
    finally:
        if args.transcript:
            Path(args.transcript).write_text(transcript.export())
        if args.challenge_log and log:
            Path(args.challenge_log).write_text("".join(r + "\n" for r in log))
    _emit(line, args.out)
    return code


def cmd_shapley(args) -> int:
    tables = [_table(p) for p in args.datasets]
    if len(tables) < 2:
        raise UsageError("need at least one seller dataset and a buyer dataset")
    sellers, T = tables[:-1], tables[-1]
    level = args.level or ("point" if len(sellers) == 1 and args.task == "mpv" else "seller")
    sess = Session(args.parties, authenticated=args.mode != "semi", seed=args.seed)
    buyer = args.parties - 1
    threshold = SG.SignalingConfig(threshold=_decimal(args.threshold)).threshold_field()
    dn, tn = SG.TASK_COLUMNS[args.task]
    try:
        if level == "point":
            if args.task != "mpv" or len(sellers) != 1:
                raise UsageError("per-point Shapley needs one seller and --task mpv")
            D = sellers[0]
            d = SG._share_columns(sess, SG.SELLER, D, dn)
            t = SG._share_columns(sess, buyer, T, tn)
            res = SH.knn_sv_single_mpc(d["x"], d["label"], t["x"], t["label"], args.k)
            full = evaluate("mpv", d, t, K=args.k)
            res = replace(res, total=Fraction(SH.F.to_signed_int(int(sess.output(full, "full"))),
                                              1 << sess.frac_bits))
            ids = D.columns["id"] if "id" in D.columns else range(D.nrows)
        else:
            if len(sellers) > SH.MAX_SELLERS:
                raise UsageError(f"at most {SH.MAX_SELLERS} sellers")
            owners = [m % max(1, args.parties - 1) for m in range(len(sellers))]
            sh = [SG._share_columns(sess, o, S, dn) for o, S in zip(owners, sellers)]
            t = SG._share_columns(sess, buyer, T, tn)
            res = SH.shapley_sellers(sess, sh, t, lambda d, tt: evaluate(
                args.task, d, tt, K=args.k, threshold=threshold))
            ids = range(len(sellers))
        sess.finish()
    except ProtocolAbort as e:
        _emit(f"abort={e.reason}\n", args.out)
        return ABORT_CODES.get(e.reason, EXIT_MAC)
    except ValueError as e:
        raise UsageError(str(e)) from None
    _emit(res.csv([int(i) for i in ids]), args.out)
    return EXIT_OK


def cmd_market(args) -> int:
    try:
        model = MK.MarketModel.from_json(Path(args.model).read_text()) if args.model else MK.MarketModel()
    except FileNotFoundError:
        raise UsageError(f"no such file: {args.model}") from None
    except (ValueError, TypeError) as e:
        raise UsageError(f"bad model config: {e}") from None
    if args.theorems:
        _emit(MK.report(MK.verify_theorems(model, args.trials, args.seed)), args.out)
        return EXIT_OK
    stats = MK.simulate_trades(model, args.regime, args.trials, args.seed,
                               nu=args.nu, b=args.b, price=args.price)
    lines = [f"{k}={v}" for k, v in stats.summary().items()]
    if args.trials == 1:
        o = stats.outcome(0)
        lines += [f"price={o.price:g}", f"purchased={str(o.purchased).lower()}",
                  f"buyer_true_payoff={o.buyer_true_payoff:g}", f"seller_true_payoff={o.seller_true_payoff:g}"]
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


# -- parser ----------------------------------------------------------------------------

def _common(p, parties=True):
    p.add_argument("--seed", type=int, required=True, help="seed for every random choice")
    p.add_argument("--out", help="write the result here instead of stdout")
    if parties:
        p.add_argument("--parties", type=int, default=4, help="number of parties (last one is the buyer)")


def _task_args(p):
    p.add_argument("--task", choices=SG.TASKS, default="pm")
    p.add_argument("--k", type=int, default=1, help="neighbours for mpv")
    p.add_argument("--threshold", default="0", help="score threshold for cre (decimal)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="utilsignal", description="Reliable, private data utility signaling.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("commit", help="publish the commitment of a dataset")
    p.add_argument("dataset")
    p.add_argument("--mode", type=str.upper, choices=("MD", "MHT"), default="MD")
    p.add_argument("--block-bits", type=int, default=1024)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_commit)

    p = sub.add_parser("signal", help="compute the utility signal")
    p.add_argument("seller")
    p.add_argument("buyer")
    p.add_argument("--commitment")
    p.add_argument("--mode", choices=SG.MODES, default="semi")
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--beta", type=float, default=0.95)
    p.add_argument("--block-bits", type=int, default=1024)
    p.add_argument("--disclosure", choices=SG.DISCLOSURES, default="both")
    p.add_argument("--attack", help="add-eps:EPS[@HOOK] | substitute:PATH | drop-mac")
    p.add_argument("--transcript", help="write the message transcript here")
    p.add_argument("--challenge-log", help="write the sampled challenge record here")
    _task_args(p)
    _common(p)
    p.set_defaults(fn=cmd_signal)

    p = sub.add_parser("shapley", help="Shapley values of data points or sellers")
    p.add_argument("datasets", nargs="+", help="seller CSVs followed by the buyer CSV")
    p.add_argument("--level", choices=("point", "seller"))
    p.add_argument("--mode", choices=("semi", "mali"), default="mali")
    _task_args(p)
    _common(p)
    p.set_defaults(fn=cmd_shapley)

    p = sub.add_parser("market", help="simulate the posted-price market")
    p.add_argument("model", nargs="?", help="model JSON (default model if omitted)")
    p.add_argument("--regime", choices=MK.REGIMES, default="no-signal")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--nu", type=float)
    p.add_argument("--b", type=float)
    p.add_argument("--price", type=float)
    p.add_argument("--theorems", action="store_true", help="print the theorem report instead")
    _common(p, parties=False)
    p.set_defaults(fn=cmd_market)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.fn(args)
    except (UsageError, DatasetError, MK.MarketError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
