"""Federated-learning simulation with on-demand reduced-precision parameter storage."""

from .accounting import InventoryItem, memory_ratio, model_inventory
from .data import (
    Dataset,
    load_csv,
    partition_by_label,
    partition_iid,
    save_csv,
    synth_clusters,
)
from .errors import (
    CorruptBufferError,
    CorruptCheckpointError,
    DivergedClientError,
    InvalidConfigError,
    InvalidInputError,
    MissingVariableError,
    OmcError,
    RoundFailedError,
    SkippedClient,
)
from .federated import (
    ClientUpdate,
    FLConfig,
    RoundMetrics,
    ServerState,
    aggregate,
    client_train,
    evaluate,
    run_experiment,
    run_round,
)
from .minifloat import (
    FP32,
    FloatFormat,
    PackedBuffer,
    decode,
    encode,
    pack,
    packed_byte_length,
    quantize,
    unpack,
)
from .nn import ModelParams, ModelSpec, forward, init_params, loss_and_grads, sgd_step
from .policy import (
    PolicyConfig,
    VariableKind,
    eligible_variables,
    select_variables,
)
from .store import (
    ParamStore,
    TransformParams,
    VariableRecord,
    apply_transform,
    compress_variable,
    decompress_variable,
    fit_transform,
    load_store,
    parameter_memory_bytes,
    save_store,
    update_variable,
    with_decompressed,
)

__version__ = "0.1.0"
