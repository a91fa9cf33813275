"""Reduced-precision floating-point formats ("S1EyMz"): quantize, encode, decode, bit-pack.

A format has 1 sign bit, ``y`` exponent bits and ``z`` mantissa bits with the
IEEE-style bias ``2**(y-1) - 1``. Unlike IEEE, every bit pattern denotes a
finite value: the top exponent field is ordinary, overflow saturates to the
largest finite magnitude, and there are no infinities or NaNs. Subnormals
(exponent field 0) and signed zero are supported. Rounding is round-to-nearest
with ties to the even significand.

All arithmetic runs in float64, which represents every format value exactly
(z <= 23 mantissa bits, exponents well inside the float64 range).
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from .errors import CorruptBufferError, InvalidInputError

__all__ = [
    "FloatFormat",
    "FP32",
    "PackedBuffer",
    "quantize",
    "encode",
    "decode",
    "pack",
    "unpack",
    "packed_byte_length",
]

_FORMAT_RE = re.compile(r"^S1E([0-9]+)M([0-9]+)$", re.IGNORECASE)


@dataclass(frozen=True)
class FloatFormat:
    """An S1EyMz format descriptor: ``exponent_bits`` = y, ``mantissa_bits`` = z."""

    exponent_bits: int
    mantissa_bits: int

    def __post_init__(self):
        y, z = self.exponent_bits, self.mantissa_bits
        if not 2 <= y <= 8:
            raise InvalidInputError(f"exponent_bits must be in [2, 8], got {y}")
        if not 0 <= z <= 23:
            raise InvalidInputError(f"mantissa_bits must be in [0, 23], got {z}")
        if 1 + y + z > 32:
            raise InvalidInputError(f"total bits 1+{y}+{z} exceeds 32")

    @property
    def total_bits(self) -> int:
        return 1 + self.exponent_bits + self.mantissa_bits

    @property
    def bias(self) -> int:
        return (1 << (self.exponent_bits - 1)) - 1

    @property
    def max_value(self) -> float:
        """Largest finite magnitude: 2^(2^y - 1 - bias) * (2 - 2^-z)."""
        top_exp = (1 << self.exponent_bits) - 1 - self.bias
        return math.ldexp(2.0 - math.ldexp(1.0, -self.mantissa_bits), top_exp)

    @property
    def min_normal(self) -> float:
        return math.ldexp(1.0, 1 - self.bias)

    @property
    def min_subnormal(self) -> float:
        """Smallest positive value: 2^(1 - bias - z)."""
        return math.ldexp(1.0, 1 - self.bias - self.mantissa_bits)

    @classmethod
    def parse(cls, text: str) -> "FloatFormat":
        m = _FORMAT_RE.match(text.strip())
        if m is None:
            raise InvalidInputError(f"not an S1EyMz format string: {text!r}")
        return cls(int(m.group(1)), int(m.group(2)))

    def __str__(self) -> str:
        return f"S1E{self.exponent_bits}M{self.mantissa_bits}"


FP32 = FloatFormat(8, 23)


def _as_float_array(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("values must be finite (no NaN or infinity)")
    return arr


def encode(values, fmt: FloatFormat):
    """Round finite value(s) to ``fmt`` and return the bit pattern(s).

    Scalar in, int out; array-like in, uint32 ndarray out.
    """
    x = _as_float_array(values)
    y, z = fmt.exponent_bits, fmt.mantissa_bits
    bias = fmt.bias

    a = np.abs(x)
    # frexp gives a = f * 2^e with f in [0.5, 1), so e-1 = floor(log2 a) for a > 0.
    e = np.frexp(a)[1].astype(np.int64) - 1
    eq = np.maximum(e, 1 - bias)  # subnormals share the minimum-normal quantum
    # a * 2^(z - eq) is exact in float64 and < 2^(z+1); rint is ties-to-even.
    r = np.rint(np.ldexp(a, z - eq)).astype(np.int64)

    bump = r == (1 << (z + 1))  # rounded up across a binade boundary
    r = np.where(bump, r >> 1, r)
    eq = eq + bump

    normal = r >= (1 << z)
    e_field = np.where(normal, eq + bias, 0)
    m = np.where(normal, r - (1 << z), r)

    top = (1 << y) - 1
    over = e_field > top  # overflow saturates to the largest finite value
    e_field = np.where(over, top, e_field)
    m = np.where(over, (1 << z) - 1, m)

    sign = np.signbit(x).astype(np.int64)
    pattern = (sign << (y + z)) | (e_field << z) | m
    if pattern.ndim == 0:
        return int(pattern)
    return pattern.astype(np.uint32)


def decode(patterns, fmt: FloatFormat):
    """Exact value(s) of bit pattern(s) in ``fmt``. Every pattern is valid and finite."""
    p = np.asarray(patterns, dtype=np.int64)
    y, z = fmt.exponent_bits, fmt.mantissa_bits
    if np.any((p < 0) | (p >= (1 << fmt.total_bits))):
        raise InvalidInputError(f"pattern does not fit in {fmt.total_bits} bits")

    sign = (p >> (y + z)) & 1
    e_field = (p >> z) & ((1 << y) - 1)
    m = p & ((1 << z) - 1)

    significand = np.where(e_field > 0, m + (1 << z), m).astype(np.float64)
    quantum_exp = np.where(e_field > 0, e_field, 1) - fmt.bias - z
    mag = np.ldexp(significand, quantum_exp)
    out = np.where(sign == 1, -mag, mag)  # -0.0 preserved for the zero pattern
    if out.ndim == 0:
        return float(out)
    return out


def quantize(values, fmt: FloatFormat):
    """Nearest representable value(s) of ``fmt`` (ties to even, overflow clamps).

    Scalar in, float out; array-like in, float64 ndarray out. Returned values
    are exact; they also fit float32 for every value reachable from finite
    float32 input except the top binade of y=8 formats with z<23.
    """
    return decode(encode(values, fmt), fmt)


def packed_byte_length(count: int, fmt: FloatFormat) -> int:
    return (count * fmt.total_bits + 7) // 8


@dataclass(frozen=True)
class PackedBuffer:
    """Bit-packed encoded values.

    Element i occupies bitstream bits [i*w, (i+1)*w) for w = total_bits, least
    significant bit first; bitstream bit k is bit (k mod 8) of byte (k div 8).
    Trailing bits of the final byte are zero.
    """

    data: bytes
    count: int
    fmt: FloatFormat

    def __post_init__(self):
        expected = packed_byte_length(self.count, self.fmt)
        if len(self.data) != expected:
            raise CorruptBufferError(
                f"payload is {len(self.data)} bytes, expected {expected} "
                f"for {self.count} x {self.fmt}"
            )
        used = self.count * self.fmt.total_bits
        if used % 8 and self.data and self.data[-1] >> (used % 8):
            raise CorruptBufferError("trailing bits of final byte are not zero")

    @property
    def byte_length(self) -> int:
        return len(self.data)


def pack(values, fmt: FloatFormat) -> PackedBuffer:
    """Quantize and bit-pack a sequence of finite values."""
    patterns = np.atleast_1d(np.asarray(encode(values, fmt), dtype=np.uint64))
    n = patterns.size
    w = fmt.total_bits
    if n == 0:
        return PackedBuffer(b"", 0, fmt)
    bits = (patterns[:, None] >> np.arange(w, dtype=np.uint64)) & 1
    data = np.packbits(bits.astype(np.uint8).reshape(-1), bitorder="little").tobytes()
    return PackedBuffer(data, n, fmt)


def unpack(buf: PackedBuffer) -> np.ndarray:
    """Decode a PackedBuffer back to its float64 values (elementwise quantize of pack input)."""
    n, w = buf.count, buf.fmt.total_bits
    if n == 0:
        return np.empty(0, dtype=np.float64)
    stream = np.unpackbits(
        np.frombuffer(buf.data, dtype=np.uint8), count=n * w, bitorder="little"
    )
    weights = np.uint64(1) << np.arange(w, dtype=np.uint64)
    patterns = (stream.reshape(n, w).astype(np.uint64) * weights).sum(axis=1)
    return decode(patterns.astype(np.int64), buf.fmt)
