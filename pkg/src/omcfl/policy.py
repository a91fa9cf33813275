"""Per-round, per-client choice of which variables are stored quantized.

Selection is a pure function of (seed, round, client): a SHA-256 of the key
tuple seeds a splitmix64 counter generator that drives a partial Fisher-Yates
draw, so results are reproducible regardless of execution order or thread
count.
"""

from __future__ import annotations

import enum
import hashlib
import struct
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import InvalidConfigError, InvalidInputError
from .minifloat import FloatFormat

__all__ = [
    "VariableKind",
    "PolicyConfig",
    "CounterRng",
    "derive_key",
    "eligible_variables",
    "selection_count",
    "select_variables",
]

_MASK64 = (1 << 64) - 1


class VariableKind(enum.Enum):
    """Role of a model variable; assigned explicitly, never inferred from shape."""

    WEIGHT_MATRIX = 0
    BIAS_VECTOR = 1
    NORM_SCALE = 2
    NORM_BIAS = 3
    OTHER = 4


@dataclass(frozen=True)
class PolicyConfig:
    """Quantization policy knobs.

    quantize_fraction is the probability-like share q of eligible variables
    stored quantized per (round, client); weights_only restricts eligibility
    to weight matrices; use_pvt fits a per-variable affine (scale, bias)
    transform to shrink reconstruction error.
    """

    format: FloatFormat
    quantize_fraction: float = 0.9
    weights_only: bool = True
    use_pvt: bool = True
    selection_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.quantize_fraction <= 1.0:
            raise InvalidConfigError(
                f"quantize_fraction must be in [0, 1], got {self.quantize_fraction}"
            )
        if not 0 <= self.selection_seed < (1 << 64):
            raise InvalidConfigError("selection_seed must fit in 64 unsigned bits")


def derive_key(seed: int, *parts: int | str) -> int:
    """Hash (seed, parts...) into a 64-bit stream key."""
    h = hashlib.sha256(struct.pack("<Q", seed & _MASK64))
    for part in parts:
        if isinstance(part, str):
            h.update(b"s" + part.encode())
        else:
            h.update(b"i" + struct.pack("<q", part))
    return int.from_bytes(h.digest()[:8], "little")


class CounterRng:
    """splitmix64 stream: output i is a pure function of (key, i)."""

    def __init__(self, key: int):
        self._state = key & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + 0x9E3779B97F4A7C15) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def next_below(self, n: int) -> int:
        """Uniform draw in [0, n); multiplicative bound (bias < n / 2^64)."""
        if n <= 0:
            raise InvalidInputError(f"bound must be positive, got {n}")
        return (self.next_u64() * n) >> 64

    def sample_without_replacement(self, population: int, k: int) -> list[int]:
        """k distinct indices from range(population), via partial Fisher-Yates."""
        if k > population:
            raise InvalidInputError(f"cannot draw {k} from {population}")
        slots = list(range(population))
        for i in range(k):
            j = i + self.next_below(population - i)
            slots[i], slots[j] = slots[j], slots[i]
        return slots[:k]


def eligible_variables(
    model_vars: Sequence[tuple[str, VariableKind]], cfg: PolicyConfig
) -> list[str]:
    """Names eligible for quantization, in model order."""
    names = [name for name, _ in model_vars]
    if len(set(names)) != len(names):
        raise InvalidInputError("variable names must be unique")
    if cfg.weights_only:
        return [n for n, k in model_vars if k is VariableKind.WEIGHT_MATRIX]
    return list(names)


def selection_count(fraction: float, eligible: int) -> int:
    """round-to-nearest(q * m), ties rounding up."""
    return int(.5 + fraction * eligible)


def select_variables(
    model_vars: Sequence[tuple[str, VariableKind]],
    cfg: PolicyConfig,
    round_index: int,
    client_index: int,
) -> frozenset[str]:
    """The set of variable names stored quantized for one (round, client) pair."""
    if round_index < 0 or client_index < 0:
        raise InvalidInputError("round and client indices must be >= 0")
    names = eligible_variables(model_vars, cfg)
    k = selection_count(cfg.quantize_fraction, len(names))
    rng = CounterRng(derive_key(cfg.selection_seed, "select", round_index, client_index))
    chosen = rng.sample_without_replacement(len(names), k)
    return frozenset(names[i] for i in chosen)
