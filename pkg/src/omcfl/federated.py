"""Federated rounds: distribute a selectively-compressed model, train clients
through the compressed store, aggregate, and account bytes.

Client work is a pure function of (server params, shard, config, round,
client), so rounds may execute clients sequentially or in a thread pool with
bitwise-identical results; aggregation always consumes updates in ascending
client order with float64 accumulation.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .data import Dataset
from .errors import (
    DivergedClientError,
    InvalidConfigError,
    InvalidInputError,
    RoundFailedError,
    SkippedClient,
)
from .nn import ModelParams, ModelSpec, forward, loss_and_grads, _log_softmax
from .policy import CounterRng, PolicyConfig, derive_key, select_variables
from .store import (
    FullPrecision,
    ParamStore,
    VariableRecord,
    compress_variable,
    decompress_variable,
    save_store,
)

__all__ = [
    "FLConfig",
    "ClientUpdate",
    "RoundMetrics",
    "ServerState",
    "build_client_store",
    "params_from_store",
    "client_train",
    "aggregate",
    "evaluate",
    "run_round",
    "run_experiment",
]

_PARTITION_MODES = ("iid", "by_label")


@dataclass(frozen=True)
class FLConfig:
    policy: PolicyConfig
    learning_rate: float
    total_rounds: int
    clients_per_round: int = 128
    local_steps: int = 1
    batch_size: int = 16
    eval_every: int = 1
    partition: str = "iid"
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.clients_per_round < 1 or self.local_steps < 1 or self.batch_size < 1:
            raise InvalidConfigError("clients_per_round, local_steps, batch_size >= 1")
        if self.learning_rate < 0 or self.total_rounds < 0:
            raise InvalidConfigError("learning_rate and total_rounds must be >= 0")
        if self.eval_every < 1 or self.workers < 1:
            raise InvalidConfigError("eval_every and workers must be >= 1")
        if self.partition not in _PARTITION_MODES:
            raise InvalidConfigError(f"partition must be one of {_PARTITION_MODES}")


@dataclass(frozen=True)
class ClientUpdate:
    client_index: int
    store: ParamStore
    upload_bytes: int
    download_bytes: int
    peak_transient_bytes: int


@dataclass(frozen=True)
class RoundMetrics:
    round_index: int
    eval_loss: float
    eval_acc: float
    bytes_down: int
    bytes_up: int
    param_mem_bytes: float  # mean compressed store size over participating clients
    peak_transient_bytes: int
    seconds: float


@dataclass
class ServerState:
    params: ModelParams
    shards: list[Dataset]
    eval_set: Dataset


def build_client_store(
    params: ModelParams, selection: frozenset[str], policy: PolicyConfig
) -> ParamStore:
    """Compress the selected variables; keep the rest full-precision."""
    store = ParamStore()
    for name, kind in params.variables():
        values = params.values[name]
        if name in selection:
            store.add(
                compress_variable(
                    name, values.shape, kind, values, policy.format, policy.use_pvt
                )
            )
        else:
            store.add(
                VariableRecord(
                    name,
                    values.shape,
                    kind,
                    FullPrecision(values.reshape(-1).copy()),
                )
            )
    return store


def params_from_store(store: ParamStore, spec: ModelSpec) -> ModelParams:
    """Read every variable one at a time through an accounted access window."""
    params = ModelParams(spec)
    for record in store.records():
        with store.decompressed(record.name) as values:
            params.add(record.name, record.kind, values)
    return params


def client_train(
    server_params: ModelParams,
    shard: Dataset,
    cfg: FLConfig,
    round_index: int,
    client_index: int,
) -> ClientUpdate:
    """One client's local training with decompress-on-demand parameter access."""
    if len(shard) == 0:
        raise SkippedClient(f"client {client_index} has no data")
    selection = select_variables(
        server_params.variables(), cfg.policy, round_index, client_index
    )
    store = build_client_store(server_params, selection, cfg.policy)
    download_bytes = store.parameter_memory_bytes()

    lr = cfg.learning_rate
    for step in range(cfg.local_steps):
        offset = ((round_index - 1) * cfg.local_steps + step) * cfg.batch_size
        batch = shard.batch(offset % len(shard), cfg.batch_size)
        params = params_from_store(store, server_params.spec)
        loss, grads = loss_and_grads(params, batch)
        if not math.isfinite(loss):
            raise DivergedClientError(round_index, client_index)
        for name in params.names():
            grad = grads[name]
            store.update(
                name,
                lambda v, g=grad: v - lr * g,
                cfg.policy.format,
                cfg.policy.use_pvt,
            )

    return ClientUpdate(
        client_index,
        store,
        store.parameter_memory_bytes(),
        download_bytes,
        store.peak_transient_bytes,
    )


def aggregate(updates: Sequence[ClientUpdate], spec: ModelSpec) -> ModelParams:
    """Unweighted mean of the decompressed client models, float64 accumulation
    in ascending client order, rounded to float32 at the end."""
    if not updates:
        raise InvalidInputError("aggregate needs at least one update")
    ordered = sorted(updates, key=lambda u: u.client_index)
    reference = ordered[0].store.records()
    ref_sig = [(r.name, r.shape, r.kind) for r in reference]
    for update in ordered[1:]:
        sig = [(r.name, r.shape, r.kind) for r in update.store.records()]
        if sig != ref_sig:
            raise InvalidInputError(
                f"client {update.client_index} variables do not match"
            )

    params = ModelParams(spec)
    sums: dict[str, np.ndarray] = {
        r.name: np.zeros(r.shape, dtype=np.float64) for r in reference
    }
    for update in ordered:
        for record in update.store.records():
            sums[record.name] += decompress_variable(record).astype(np.float64)
    scale = 1.0 / len(ordered)
    for record in reference:
        params.add(
            record.name, record.kind, (sums[record.name] * scale).astype(np.float32)
        )
    return params


def evaluate(
    params: ModelParams, eval_set: Dataset, batch_size: int = 512
) -> tuple[float, float]:
    """Mean softmax cross-entropy and top-1 accuracy over the whole set."""
    n = len(eval_set)
    if n == 0:
        raise InvalidInputError("evaluate needs a nonempty dataset")
    total_nll = 0.0
    correct = 0
    for start in range(0, n, batch_size):
        chunk = eval_set.subset(np.arange(start, min(start + batch_size, n)))
        logits, _ = forward(params, chunk.features)
        logp = _log_softmax(logits)
        total_nll += float(-logp[np.arange(len(chunk)), chunk.labels].sum())
        correct += int((logits.argmax(axis=1) == chunk.labels).sum())
    return total_nll / n, correct / n


def _pick_participants(cfg: FLConfig, population: int, round_index: int) -> list[int]:
    if population <= cfg.clients_per_round:
        return list(range(population))
    rng = CounterRng(derive_key(cfg.seed, "clients", round_index))
    return sorted(rng.sample_without_replacement(population, cfg.clients_per_round))


def run_round(
    state: ServerState, cfg: FLConfig, round_index: int
) -> tuple[ServerState, RoundMetrics]:
    """Train participating clients, aggregate, evaluate if scheduled."""
    start_time = time.perf_counter()
    participants = _pick_participants(cfg, len(state.shards), round_index)

    def run_client(client_index: int) -> ClientUpdate | None:
        try:
            return client_train(
                state.params, state.shards[client_index], cfg, round_index, client_index
            )
        except (SkippedClient, DivergedClientError):
            return None

    if cfg.workers == 1:
        results = [run_client(c) for c in participants]
    else:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(run_client, participants))

    updates = [u for u in results if u is not None]
    if not updates:
        raise RoundFailedError(f"round {round_index}: no usable client updates")

    new_params = aggregate(updates, state.params.spec)
    if round_index % cfg.eval_every == 0:
        eval_loss, eval_acc = evaluate(new_params, state.eval_set)
    else:
        eval_loss, eval_acc = float("nan"), float("nan")

    metrics = RoundMetrics(
        round_index=round_index,
        eval_loss=eval_loss,
        eval_acc=eval_acc,
        bytes_down=sum(u.download_bytes for u in updates),
        bytes_up=sum(u.upload_bytes for u in updates),
        param_mem_bytes=sum(u.upload_bytes for u in updates) / len(updates),
        peak_transient_bytes=max(u.peak_transient_bytes for u in updates),
        seconds=time.perf_counter() - start_time,
    )
    return replace(state, params=new_params), metrics


def full_precision_store(params: ModelParams) -> ParamStore:
    store = ParamStore()
    for name, kind in params.variables():
        values = params.values[name]
        store.add(
            VariableRecord(
                name, values.shape, kind, FullPrecision(values.reshape(-1).copy())
            )
        )
    return store


def run_experiment(
    state: ServerState,
    cfg: FLConfig,
    metrics_sink: Callable[[RoundMetrics], None] | None = None,
    checkpoint_path=None,
) -> tuple[list[RoundMetrics], ServerState]:
    """Round 0 is a pre-training evaluation of the initial server model; rounds
    1..total_rounds each train, aggregate, and report."""
    series: list[RoundMetrics] = []

    def emit(m: RoundMetrics) -> None:
        series.append(m)
        if metrics_sink is not None:
            metrics_sink(m)

    t0 = time.perf_counter()
    loss0, acc0 = evaluate(state.params, state.eval_set)
    emit(RoundMetrics(0, loss0, acc0, 0, 0, 0.0, 0, time.perf_counter() - t0))

    for round_index in range(1, cfg.total_rounds + 1):
        state, metrics = run_round(state, cfg, round_index)
        emit(metrics)

    if checkpoint_path is not None:
        save_store(full_precision_store(state.params), checkpoint_path)
    return series, state
