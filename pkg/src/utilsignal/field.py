"""Arithmetic in the prime field F_p with p = 2^61 - 1, plus fixed-point coding.

Scalars are plain Python ints (wrapped by :class:`FieldElement` when a typed
value is wanted); vectors are ``numpy.uint64`` arrays holding canonical
representatives in ``[0, p)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

P = (1 << 61) - 1
HALF = P // 2
FRAC_BITS = 16

_P64 = np.uint64(P)
_M31 = np.uint64((1 << 31) - 1)
_M30 = np.uint64((1 << 30) - 1)
_S61 = np.uint64(61)
_S31 = np.uint64(31)
_S30 = np.uint64(30)


class FixedPointRangeError(ValueError):
    pass


@dataclass(frozen=True)
class FieldElement:
    value: int

    def __post_init__(self):
        object.__setattr__(self, "value", self.value % P)

    def __add__(self, other):
        return FieldElement(self.value + _int(other))

    __radd__ = __add__

    def __sub__(self, other):
        return FieldElement(self.value - _int(other))

    def __rsub__(self, other):
        return FieldElement(_int(other) - self.value)

    def __mul__(self, other):
        return FieldElement(self.value * _int(other))

    __rmul__ = __mul__

    def __neg__(self):
        return FieldElement(-self.value)

    def inverse(self) -> "FieldElement":
        if self.value == 0:
            raise ZeroDivisionError("0 has no inverse in F_p")
        return FieldElement(pow(self.value, P - 2, P))

    def __truediv__(self, other):
        return self * FieldElement(_int(other)).inverse()

    def __int__(self):
        return self.value

    def __index__(self):
        return self.value


def _int(x) -> int:
    return x.value if isinstance(x, FieldElement) else int(x)


# -- vector ops --------------------------------------------------------------

def asfield(x) -> np.ndarray:
    """Coerce ints (possibly negative, possibly huge) to canonical uint64."""
    if isinstance(x, np.ndarray) and x.dtype == np.uint64:
        return x
    arr = np.asarray(x)
    if arr.dtype == object or arr.dtype.kind in "iu" and arr.dtype.itemsize > 8:
        flat = [int(v) % P for v in arr.ravel()]
        return np.array(flat, dtype=np.uint64).reshape(arr.shape)
    if arr.dtype.kind == "i":
        a = arr.astype(np.int64)
        out = np.where(a < 0, (a % P), a).astype(np.uint64)
        return reduce(out)
    if arr.dtype.kind in "ub":
        return reduce(arr.astype(np.uint64))
    raise TypeError(f"cannot coerce {arr.dtype} to field elements")


def _reduce_np(x):
    x = (x & _P64) + (x >> _S61)
    return x - _P64 * (x >= _P64)


def _mul_np(a, b):
    a_lo, a_hi = a & _M31, a >> _S31
    b_lo, b_hi = b & _M31, b >> _S31
    mid = a_hi * b_lo + a_lo * b_hi
    # 2^62 = 2 and 2^61 = 1 (mod p); the four terms sum to < 2^64
    t = ((a_hi * b_hi) << np.uint64(1)) + (mid >> _S30) + ((mid & _M30) << _S31) + a_lo * b_lo
    return _reduce_np(t)


def _add_np(a, b):
    x = a + b
    return x - _P64 * (x >= _P64)


def _sub_np(a, b):
    return _add_np(a, _P64 - b)


try:
    from numba import uint64 as _nb_u64, vectorize as _nb_vectorize
except ImportError:  # pragma: no cover - numpy fallback
    _reduce_k, _mul_k, _add_k, _sub_k = _reduce_np, _mul_np, _add_np, _sub_np
else:
    _sig1 = [_nb_u64(_nb_u64)]
    _sig2 = [_nb_u64(_nb_u64, _nb_u64)]

    @_nb_vectorize(_sig1, cache=True)
    def _reduce_k(x):
        p = np.uint64(P)
        x = (x & p) + (x >> np.uint64(61))
        return x - p if x >= p else x

    @_nb_vectorize(_sig2, cache=True)
    def _mul_k(a, b):
        p = np.uint64(P)
        m31 = np.uint64((1 << 31) - 1)
        m30 = np.uint64((1 << 30) - 1)
        a_lo, a_hi = a & m31, a >> np.uint64(31)
        b_lo, b_hi = b & m31, b >> np.uint64(31)
        mid = a_hi * b_lo + a_lo * b_hi
        t = ((a_hi * b_hi) << np.uint64(1)) + (mid >> np.uint64(30)) \
            + ((mid & m30) << np.uint64(31)) + a_lo * b_lo
        t = (t & p) + (t >> np.uint64(61))
        return t - p if t >= p else t

    @_nb_vectorize(_sig2, cache=True)
    def _add_k(a, b):
        p = np.uint64(P)
        x = a + b
        return x - p if x >= p else x

    @_nb_vectorize(_sig2, cache=True)
    def _sub_k(a, b):
        p = np.uint64(P)
        x = a + (p - b)
        return x - p if x >= p else x


def _u64(x):
    return np.asarray(x, dtype=np.uint64)


def reduce(x: np.ndarray) -> np.ndarray:
    """Reduce any uint64 array to [0, p)."""
    return _reduce_k(_u64(x))


def add(a, b):
    return _add_k(_u64(a), _u64(b))


def sub(a, b):
    return _sub_k(_u64(a), _u64(b))


def neg(a):
    a = _u64(a)
    return _sub_k(np.zeros_like(a), a)


def mul(a, b):
    return _mul_k(_u64(a), _u64(b))


def scale(a, c: int):
    """Multiply an array by a public scalar."""
    return mul(a, np.uint64(int(c) % P))


def fsum(a, axis=None):
    """Sum modulo p along an axis without overflow."""
    a = np.asarray(a, dtype=np.uint64)
    lo = np.sum(a & _M31, axis=axis, dtype=np.uint64)
    hi = np.sum(a >> _S31, axis=axis, dtype=np.uint64)
    lo, hi = reduce(lo), reduce(hi)
    return add(lo, mul(hi, np.uint64(1 << 31)))


def fcumsum(a, axis=-1):
    """Inclusive prefix sums modulo p."""
    a = np.asarray(a, dtype=np.uint64)
    lo = reduce(np.cumsum(a & _M31, axis=axis, dtype=np.uint64))
    hi = reduce(np.cumsum(a >> _S31, axis=axis, dtype=np.uint64))
    return add(lo, mul(hi, np.uint64(1 << 31)))


def matvec(m: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Apply a small non-negative integer matrix to field vectors.

    ``m`` has shape (r, c) with entries < 2^8 and c <= 2^13; ``x`` has shape
    (..., c).  Limb products stay below 2^52, so float64 BLAS is exact.
    A float64 ``m`` is taken to be already transposed.
    """
    mt = m if m.dtype == np.float64 else np.ascontiguousarray(m.T, dtype=np.float64)
    lo = ((x & _M31).astype(np.float64) @ mt).astype(np.uint64)
    hi = ((x >> _S31).astype(np.float64) @ mt).astype(np.uint64)
    return add(reduce(lo), mul(reduce(hi), np.uint64(1 << 31)))


def signed(a) -> np.ndarray:
    """Map canonical representatives to signed int64 in (-p/2, p/2]."""
    a = np.asarray(a, dtype=np.uint64)
    return np.where(a > HALF, a.astype(np.int64) - P, a.astype(np.int64))


def to_signed_int(x: int) -> int:
    x %= P
    return x - P if x > HALF else x


# -- fixed point -------------------------------------------------------------

@dataclass(frozen=True)
class FixedPointCodec:
    frac_bits: int = FRAC_BITS

    @property
    def scale(self) -> int:
        return 1 << self.frac_bits

    @property
    def bound(self) -> float:
        return float(2 ** (44 - self.frac_bits))

    def encode(self, r) -> int:
        r = Fraction(r)
        if abs(r) >= self.bound:
            raise FixedPointRangeError(f"|{float(r)}| exceeds 2^{44 - self.frac_bits}")
        return _round_half_up(r * self.scale) % P

    def decode(self, x) -> float:
        return to_signed_int(int(x)) / self.scale

    def decode_exact(self, x) -> Fraction:
        return Fraction(to_signed_int(int(x)), self.scale)

    def truncate(self, x) -> int:
        """Rescale a double-scale product back to the single scale, rounding to nearest."""
        v = to_signed_int(int(x))
        return ((v + (1 << (self.frac_bits - 1))) >> self.frac_bits) % P

    def encode_array(self, values) -> np.ndarray:
        return asfield([self.encode(v) for v in np.ravel(values)]).reshape(np.shape(values))

    def decode_array(self, x) -> np.ndarray:
        return signed(x) / self.scale


def _round_half_up(q: Fraction) -> int:
    # floor(q + 1/2); matches the truncation rule used in the shared domain
    return (q.numerator * 2 + q.denominator) // (2 * q.denominator)


DEFAULT_CODEC = FixedPointCodec()


def encode_fixed(r, frac_bits: int = FRAC_BITS) -> FieldElement:
    return FieldElement(FixedPointCodec(frac_bits).encode(r))


def decode_fixed(x, frac_bits: int = FRAC_BITS) -> float:
    return FixedPointCodec(frac_bits).decode(_int(x))


def truncate(x, frac_bits: int = FRAC_BITS) -> FieldElement:
    return FieldElement(FixedPointCodec(frac_bits).truncate(_int(x)))


def format_fixed(x, frac_bits: int = FRAC_BITS) -> str:
    """Exact decimal rendering of a fixed-point field element, trailing zeros stripped."""
    v = to_signed_int(_int(x))
    sign = "-" if v < 0 else ""
    v = abs(v)
    whole, frac = divmod(v, 1 << frac_bits)
    if frac == 0:
        return f"{sign}{whole}"
    digits = str(frac * 5 ** frac_bits).rjust(frac_bits, "0").rstrip("0")
    return f"{sign}{whole}.{digits}"
