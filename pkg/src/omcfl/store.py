"""Model parameters held compressed or full-precision, with decompress-on-demand.

Quantized variables carry a per-variable affine transform (scale s, bias b)
fitted by ordinary least squares so that s * decompressed + b approximates the
original values; the transform never increases the L2 reconstruction error
because (1, 0) is always a feasible fit.

The store tracks transient decompressed bytes: every access window charges the
variable's full-precision size (4 bytes per element) while a consumer holds it,
and a peak counter records the maximum concurrent total.
"""

from __future__ import annotations

import io
import struct
import threading
from contextlib import contextmanager
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterator, Union

import numpy as np

from .errors import (
    CorruptCheckpointError,
    InvalidInputError,
    MissingVariableError,
)
from .minifloat import FloatFormat, PackedBuffer, pack, packed_byte_length, unpack
from .policy import VariableKind

__all__ = [
    "TransformParams",
    "IDENTITY_TRANSFORM",
    "FullPrecision",
    "Quantized",
    "VariableRecord",
    "ParamStore",
    "fit_transform",
    "apply_transform",
    "compress_variable",
    "decompress_variable",
    "with_decompressed",
    "update_variable",
    "parameter_memory_bytes",
    "save_store",
    "load_store",
]


@dataclass(frozen=True)
class TransformParams:
    """Affine reconstruction map: values -> scale * values + bias.

    Both fields hold float32-rounded values (they are stored as 4 bytes each).
    """

    scale: float = 1.0
    bias: float = 0.0


IDENTITY_TRANSFORM = TransformParams(1.0, 0.0)


@dataclass(frozen=True)
class FullPrecision:
    values: np.ndarray  # float32, flat


@dataclass(frozen=True)
class Quantized:
    fmt: FloatFormat
    payload: PackedBuffer
    transform: TransformParams


@dataclass(frozen=True)
class VariableRecord:
    name: str
    shape: tuple[int, ...]
    kind: VariableKind
    storage: Union[FullPrecision, Quantized]

    @property
    def element_count(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64)) if self.shape else 1


def fit_transform(original, dequantized) -> TransformParams:
    """Least-squares (scale, bias) minimizing sum((s*deq + b - orig)^2).

    Sums accumulate in float64; the result is rounded to float32. When the
    denominator n*sum(deq^2) - sum(deq)^2 is exactly zero (all deq equal),
    scale is fixed at 1.0 and bias picks up the mean difference.
    """
    v = np.asarray(original, dtype=np.float64).reshape(-1)
    q = np.asarray(dequantized, dtype=np.float64).reshape(-1)
    if v.size == 0 or q.size == 0:
        raise InvalidInputError("fit_transform needs at least one element")
    if v.size != q.size:
        raise InvalidInputError(f"length mismatch: {v.size} vs {q.size}")
    if not (np.all(np.isfinite(v)) and np.all(np.isfinite(q))):
        raise InvalidInputError("fit_transform requires finite values")

    n = float(v.size)
    sum_v = float(v.sum())
    sum_q = float(q.sum())
    sum_qq = float(np.dot(q, q))
    sum_vq = float(np.dot(v, q))

    denom = n * sum_qq - sum_q * sum_q
    if denom == 0.0:
        scale = 1.0
        bias = (sum_v - sum_q) / n
    else:
        scale = (n * sum_vq - sum_v * sum_q) / denom
        bias = (sum_v - scale * sum_q) / n
    return TransformParams(float(np.float32(scale)), float(np.float32(bias)))


def apply_transform(values, transform: TransformParams) -> np.ndarray:
    """Elementwise scale * values + bias in float32 arithmetic."""
    v = np.asarray(values, dtype=np.float32)
    return v * np.float32(transform.scale) + np.float32(transform.bias)


def compress_variable(
    name: str,
    shape: tuple[int, ...],
    kind: VariableKind,
    values,
    fmt: FloatFormat,
    use_pvt: bool,
) -> VariableRecord:
    """Quantize values into fmt, optionally fitting the reconstruction transform."""
    flat = np.asarray(values, dtype=np.float32).reshape(-1)
    expected = int(np.prod(shape, dtype=np.int64)) if shape else 1
    if flat.size != expected or flat.size == 0:
        raise InvalidInputError(
            f"{name}: got {flat.size} values for shape {shape}"
        )
    payload = pack(flat, fmt)
    if use_pvt:
        transform = fit_transform(flat, unpack(payload))
    else:
        transform = IDENTITY_TRANSFORM
    return VariableRecord(name, tuple(shape), kind, Quantized(fmt, payload, transform))


def decompress_variable(record: VariableRecord) -> np.ndarray:
    """Materialize a record's values as a fresh float32 array of its shape."""
    if isinstance(record.storage, FullPrecision):
        return record.storage.values.reshape(record.shape).copy()
    values = apply_transform(unpack(record.storage.payload), record.storage.transform)
    return values.reshape(record.shape)


class ParamStore:
    """Ordered collection of VariableRecords with transient-memory accounting.

    Single-writer: update() calls must be externally serialized. Concurrent
    read-only access windows are fine; counter updates take a lock.
    """

    def __init__(self, records: Iterator[VariableRecord] | None = None):
        self._records: dict[str, VariableRecord] = {}
        self._lock = threading.Lock()
        self._transient_now = 0
        self._transient_peak = 0
        for record in records or ():
            self.add(record)

    def add(self, record: VariableRecord) -> None:
        if record.name in self._records:
            raise InvalidInputError(f"duplicate variable name {record.name!r}")
        self._records[record.name] = record

    def __contains__(self, name: str) -> bool:
        return name in self._records

    def __len__(self) -> int:
        return len(self._records)

    def names(self) -> list[str]:
        return list(self._records)

    def records(self) -> list[VariableRecord]:
        return list(self._records.values())

    def get(self, name: str) -> VariableRecord:
        try:
            return self._records[name]
        except KeyError:
            raise MissingVariableError(name) from None

    def _replace(self, record: VariableRecord) -> None:
        if record.name not in self._records:
            raise MissingVariableError(record.name)
        self._records[record.name] = record

    @property
    def current_transient_bytes(self) -> int:
        return self._transient_now

    @property
    def peak_transient_bytes(self) -> int:
        return self._transient_peak

    def reset_peak(self) -> None:
        with self._lock:
            self._transient_peak = self._transient_now

    @contextmanager
    def decompressed(self, name: str):
        """Access window yielding the variable's values; accounted while open."""
        record = self.get(name)
        nbytes = 4 * record.element_count
        with self._lock:
            self._transient_now += nbytes
            self._transient_peak = max(self._transient_peak, self._transient_now)
        try:
            yield decompress_variable(record)
        finally:
            with self._lock:
                self._transient_now -= nbytes

    def update(
        self,
        name: str,
        applier: Callable[[np.ndarray], np.ndarray],
        fmt: FloatFormat | None = None,
        use_pvt: bool = False,
    ) -> VariableRecord:
        """Decompress, apply, recompress-or-store; the window is accounted."""
        record = self.get(name)
        with self.decompressed(name) as values:
            updated = np.asarray(applier(values), dtype=np.float32)
            if updated.size != record.element_count:
                raise InvalidInputError(
                    f"{name}: applier returned {updated.size} values, "
                    f"expected {record.element_count}"
                )
            if isinstance(record.storage, FullPrecision):
                new = replace(record, storage=FullPrecision(updated.reshape(-1).copy()))
            else:
                new = compress_variable(
                    name,
                    record.shape,
                    record.kind,
                    updated,
                    fmt if fmt is not None else record.storage.fmt,
                    use_pvt,
                )
        self._replace(new)
        return new

    def parameter_memory_bytes(self) -> int:
        total = 0
        for record in self._records.values():
            n = record.element_count
            if isinstance(record.storage, FullPrecision):
                total += 4 * n
            else:
                # payload plus the two float32 transform scalars
                total += packed_byte_length(n, record.storage.fmt) + 8
        return total


def with_decompressed(store: ParamStore, name: str, consumer: Callable):
    """Run consumer on the decompressed values; transient bytes are accounted."""
    with store.decompressed(name) as values:
        return consumer(values)


def update_variable(
    store: ParamStore,
    name: str,
    applier: Callable[[np.ndarray], np.ndarray],
    fmt: FloatFormat | None = None,
    use_pvt: bool = False,
) -> VariableRecord:
    return store.update(name, applier, fmt, use_pvt)


def parameter_memory_bytes(store: ParamStore) -> int:
    return store.parameter_memory_bytes()


# Checkpoint format (all integers little-endian):
#   magic "OMC1" | u8 version=1 | u32 variable count
#   per variable: u16 name length | name UTF-8 | u8 kind | u8 storage
#                 | u8 rank | rank x u32 dims
#     storage 1 (quantized): u8 y | u8 z | f32 scale | f32 bias
#                            | u64 payload length | payload bytes
#     storage 0 (full):      n x f32 values
_MAGIC = b"OMC1"
_VERSION = 1


def save_store(store: ParamStore, sink) -> None:
    """Write the checkpoint byte stream to a path or binary file object."""
    if isinstance(sink, (str, Path)):
        with open(sink, "wb") as fh:
            save_store(store, fh)
        return
    records = store.records()
    sink.write(_MAGIC)
    sink.write(struct.pack("<BI", _VERSION, len(records)))
    for record in records:
        name_bytes = record.name.encode("utf-8")
        storage_code = 1 if isinstance(record.storage, Quantized) else 0
        sink.write(struct.pack("<H", len(name_bytes)))
        sink.write(name_bytes)
        sink.write(struct.pack("<BBB", record.kind.value, storage_code, len(record.shape)))
        sink.write(struct.pack(f"<{len(record.shape)}I", *record.shape))
        if storage_code == 1:
            q = record.storage
            sink.write(
                struct.pack(
                    "<BBffQ",
                    q.fmt.exponent_bits,
                    q.fmt.mantissa_bits,
                    q.transform.scale,
                    q.transform.bias,
                    len(q.payload.data),
                )
            )
            sink.write(q.payload.data)
        else:
            sink.write(record.storage.values.astype("<f4").tobytes())


class _Reader:
    def __init__(self, fh):
        self._fh = fh
        self.offset = 0

    def read(self, n: int, what: str) -> bytes:
        data = self._fh.read(n)
        if len(data) != n:
            raise CorruptCheckpointError(f"truncated while reading {what}", self.offset)
        self.offset += n
        return data

    def unpack(self, spec: str, what: str):
        return struct.unpack(spec, self.read(struct.calcsize(spec), what))


def load_store(source) -> ParamStore:
    """Read a checkpoint from a path, bytes, or binary file object."""
    if isinstance(source, (str, Path)):
        with open(source, "rb") as fh:
            return load_store(fh)
    if isinstance(source, (bytes, bytearray)):
        return load_store(io.BytesIO(source))

    r = _Reader(source)
    if r.read(4, "magic") != _MAGIC:
        raise CorruptCheckpointError("bad magic", 0)
    (version,) = r.unpack("<B", "version")
    if version != _VERSION:
        raise CorruptCheckpointError(f"unsupported version {version}", 4)
    (count,) = r.unpack("<I", "variable count")

    store = ParamStore()
    for _ in range(count):
        record_offset = r.offset
        (name_len,) = r.unpack("<H", "name length")
        name = r.read(name_len, "name").decode("utf-8")
        kind_code, storage_code, rank = r.unpack("<BBB", "record header")
        try:
            kind = VariableKind(kind_code)
        except ValueError:
            raise CorruptCheckpointError(
                f"unknown kind code {kind_code}", record_offset
            ) from None
        shape = r.unpack(f"<{rank}I", "dims")
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        if storage_code == 1:
            y, z, scale, bias, payload_len = r.unpack("<BBffQ", "quantized header")
            try:
                fmt = FloatFormat(y, z)
            except InvalidInputError:
                raise CorruptCheckpointError(
                    f"invalid format S1E{y}M{z}", record_offset
                ) from None
            if payload_len != packed_byte_length(n, fmt):
                raise CorruptCheckpointError(
                    f"payload length {payload_len} inconsistent with {n} x {fmt}",
                    record_offset,
                )
            payload = PackedBuffer(r.read(payload_len, "payload"), n, fmt)
            storage = Quantized(fmt, payload, TransformParams(scale, bias))
        elif storage_code == 0:
            raw = r.read(4 * n, "values")
            storage = FullPrecision(np.frombuffer(raw, dtype="<f4").astype(np.float32))
        else:
            raise CorruptCheckpointError(
                f"unknown storage code {storage_code}", record_offset
            )
        try:
            store.add(VariableRecord(name, tuple(shape), kind, storage))
        except InvalidInputError:
            raise CorruptCheckpointError(
                f"duplicate variable {name!r}", record_offset
            ) from None
    return store
