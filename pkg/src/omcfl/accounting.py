"""Expected parameter-memory / communication accounting from a model census."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import InvalidInputError
from .minifloat import packed_byte_length
from .nn import ModelParams
from .policy import PolicyConfig, VariableKind

__all__ = ["InventoryItem", "model_inventory", "memory_ratio"]


@dataclass(frozen=True)
class InventoryItem:
    """One variable's census entry: name, kind, element count."""

    name: str
    kind: VariableKind
    count: int

    def __post_init__(self):
        if self.count < 0:
            raise InvalidInputError(f"{self.name}: count must be >= 0")


def model_inventory(params: ModelParams) -> list[InventoryItem]:
    return [
        InventoryItem(name, kind, params.values[name].size)
        for name, kind in params.variables()
    ]


def memory_ratio(inventory: Sequence[InventoryItem], policy: PolicyConfig) -> float:
    """Expected compressed bytes / FP32 bytes under the policy.

    Each eligible variable is quantized with probability q
    (= policy.quantize_fraction), costing its packed payload plus the 8-byte
    transform; otherwise (and for ineligible variables) it costs 4 bytes per
    element.
    """
    if not inventory:
        raise InvalidInputError("inventory must be nonempty")
    q = policy.quantize_fraction
    expected = 0.0
    fp32_total = 0
    for item in inventory:
        full = 4 * item.count
        fp32_total += full
        eligible = (
            item.kind is VariableKind.WEIGHT_MATRIX or not policy.weights_only
        )
        if eligible:
            packed = packed_byte_length(item.count, policy.format) + 8
            expected += q * packed + (1.0 - q) * full
        else:
            expected += full
    if fp32_total == 0:
        raise InvalidInputError("inventory has no elements")
    return expected / fp32_total
