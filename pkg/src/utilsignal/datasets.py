"""CSV ingestion and the canonical byte form that gets committed and hashed.

Canonical form: columns sorted by name, LF line endings, fixed-width fields.
Integer columns (``id``, ``label``) are 10 zero-padded digits; every other
column is fixed point, written as sign, 9 integer digits, '.', 16 fraction
digits.  With 16 fractional bits every encoded value k/2^16 has an exact
16-digit decimal expansion, so the text round-trips bit for bit.

Because the layout is fixed width, the byte offset of every field is public,
and the shared value of a field is a linear function of the shared bits of
its characters (one multiplication more for a sign).
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import field as F
from .field import P
from .gadgets import weighted_sum
from .sharing import Session, SharedVec

INT_COLUMNS = ("id", "label")
INT_WIDTH = 10
INT_DIGITS = 9
FRAC_DIGITS = 16
FIXED_WIDTH = 1 + INT_DIGITS + 1 + FRAC_DIGITS
MAX_ID = (1 << 32) - 1


class DatasetError(ValueError):
    pass


def column_kind(name: str) -> str:
    return "int" if name in INT_COLUMNS else "fixed"


@dataclass
class Table:
    """Columns keyed by name; int columns hold ints, fixed columns hold encodings."""

    columns: dict[str, np.ndarray]
    frac_bits: int = F.FRAC_BITS

    @property
    def names(self) -> list[str]:
        return sorted(self.columns)

    @property
    def nrows(self) -> int:
        return len(next(iter(self.columns.values()))) if self.columns else 0

    def kind(self, name: str) -> str:
        return column_kind(name)

    def feature_names(self) -> list[str]:
        return [n for n in self.names if self.kind(n) == "fixed" and n != "score"]

    def features(self) -> np.ndarray:
        names = self.feature_names()
        if not names:
            return np.zeros((self.nrows, 0), dtype=np.int64)
        return np.stack([self.columns[n] for n in names], axis=1).astype(np.int64)

    def subset(self, rows) -> "Table":
        return Table({k: v[rows] for k, v in self.columns.items()}, self.frac_bits)

    @staticmethod
    def concat(tables: list["Table"]) -> "Table":
        names = tables[0].names
        return Table({n: np.concatenate([t.columns[n] for t in tables]) for n in names},
                     tables[0].frac_bits)


def _parse_int(text: str, col: str) -> int:
    try:
        v = int(text.strip())
    except ValueError:
        raise DatasetError(f"column {col!r}: {text!r} is not an integer") from None
    if v < 0:
        raise DatasetError(f"column {col!r}: negative value {v}")
    if col == "id" and v > MAX_ID:
        raise DatasetError(f"id {v} exceeds 32 bits")
    if v >= 10 ** INT_WIDTH:
        raise DatasetError(f"column {col!r}: {v} too wide")
    return v


def _parse_fixed(text: str, col: str, codec: F.FixedPointCodec) -> int:
    try:
        r = Fraction(text.strip())
    except (ValueError, ZeroDivisionError):
        raise DatasetError(f"column {col!r}: {text!r} is not a decimal") from None
    try:
        return F.to_signed_int(codec.encode(r))
    except F.FixedPointRangeError as e:
        raise DatasetError(f"column {col!r}: {e}") from None


def read_csv(source, frac_bits: int = F.FRAC_BITS) -> Table:
    """Read a CSV (path, file object, or text) with a header row."""
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source
                                      and Path(source).is_file()):
        text = Path(source).read_text()
    elif hasattr(source, "read"):
        text = source.read()
    else:
        text = str(source)
    rows = list(csv.reader(io.StringIO(text)))
    rows = [r for r in rows if any(c.strip() for c in r)]
    if not rows:
        raise DatasetError("empty CSV")
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header):
        raise DatasetError("duplicate column names")
    codec = F.FixedPointCodec(frac_bits)
    cols: dict[str, list] = {h: [] for h in header}
    for lineno, r in enumerate(rows[1:], start=2):
        if len(r) != len(header):
            raise DatasetError(f"line {lineno}: expected {len(header)} fields, got {len(r)}")
        for h, v in zip(header, r):
            cols[h].append(_parse_int(v, h) if column_kind(h) == "int" else _parse_fixed(v, h, codec))
    return Table({h: np.array(v, dtype=np.int64) for h, v in cols.items()}, frac_bits)


def _fmt_fixed(k: int, frac_bits: int) -> str:
    sign = "-" if k < 0 else "+"
    whole, frac = divmod(abs(int(k)), 1 << frac_bits)
    if whole >= 10 ** INT_DIGITS:
        raise DatasetError("fixed-point value too large for the canonical width")
    digits = str(frac * 5 ** frac_bits * 10 ** (FRAC_DIGITS - frac_bits)).rjust(FRAC_DIGITS, "0")
    return f"{sign}{whole:0{INT_DIGITS}d}.{digits}"


def canonical_bytes(table: Table) -> bytes:
    if table.frac_bits > FRAC_DIGITS:
        raise DatasetError("canonical form supports at most 16 fractional bits")
    names = table.names
    lines = [",".join(names)]
    for i in range(table.nrows):
        fields = []
        for n in names:
            v = int(table.columns[n][i])
            fields.append(f"{v:0{INT_WIDTH}d}" if table.kind(n) == "int" else _fmt_fixed(v, table.frac_bits))
        lines.append(",".join(fields))
    return ("\n".join(lines) + "\n").encode("ascii")


@dataclass(frozen=True)
class Layout:
    """Public byte offsets of every field in the canonical form."""

    names: tuple[str, ...]
    nrows: int
    header_len: int
    row_len: int
    offsets: dict = field(hash=False)

    @classmethod
    def of(cls, table: Table) -> "Layout":
        names = tuple(table.names)
        header_len = len(",".join(names)) + 1
        offsets, pos = {}, 0
        for n in names:
            offsets[n] = pos
            pos += (INT_WIDTH if column_kind(n) == "int" else FIXED_WIDTH) + 1
        return cls(names, table.nrows, header_len, pos, offsets)

    @property
    def nbytes(self) -> int:
        return self.header_len + self.nrows * self.row_len

    def field_start(self, row: int, name: str) -> int:
        return self.header_len + row * self.row_len + self.offsets[name]


def _digit_positions(starts: np.ndarray, ndigits: int, skip_at: int | None = None):
    """Bit positions (MSB-first) of the low nibbles of consecutive digit bytes."""
    byte_idx = np.arange(ndigits + (1 if skip_at is not None else 0))
    if skip_at is not None:
        byte_idx = np.delete(byte_idx, skip_at)
    bytes_ = starts[:, None] + byte_idx[None, :]
    nib = 8 * bytes_[..., None] + np.arange(4, 8)  # weights 8,4,2,1
    return nib.reshape(len(starts), -1)


def _digit_weights(ndigits: int) -> list[int]:
    w = []
    for j in range(ndigits):
        place = 10 ** (ndigits - 1 - j)
        w += [8 * place, 4 * place, 2 * place, place]
    return [v % P for v in w]


def shared_column(bits: SharedVec, layout: Layout, name: str) -> SharedVec:
    """Shared values of one column, derived linearly from the shared text bits."""
    sess = bits.sess
    starts = np.array([layout.field_start(r, name) for r in range(layout.nrows)])
    if column_kind(name) == "int":
        pos = _digit_positions(starts, INT_WIDTH)
        return weighted_sum(bits.gather(pos), _digit_weights(INT_WIDTH))
    # '+' and '-' differ in the 0x04 bit, bit 5 counting MSB-first
    sign = bits.gather(8 * starts + 5)
    pos = _digit_positions(starts + 1, INT_DIGITS + FRAC_DIGITS, skip_at=INT_DIGITS)
    X = weighted_sum(bits.gather(pos), _digit_weights(INT_DIGITS + FRAC_DIGITS))
    # X = |value| * 10^16 = k * 5^16 exactly, so dividing by 5^16 in F_p is exact
    scale_fix = pow(5, FRAC_DIGITS, P) * pow(2, FRAC_DIGITS - sess.frac_bits, P) % P
    mag = X * pow(scale_fix, P - 2, P)
    return mag - sess.mul(sign, mag, "sign") * 2


def plain_columns(table: Table) -> dict[str, np.ndarray]:
    return dict(table.columns)


def write_csv(table: Table, path) -> None:
    """Write a human-readable CSV (decimal fixed-point values)."""
    names = table.names
    with open(path, "w", newline="") as fp:
        w = csv.writer(fp, lineterminator="\n")
        w.writerow(names)
        for i in range(table.nrows):
            row = []
            for n in names:
                v = int(table.columns[n][i])
                row.append(str(v) if table.kind(n) == "int" else
                           F.format_fixed(v % P, table.frac_bits))
            w.writerow(row)
