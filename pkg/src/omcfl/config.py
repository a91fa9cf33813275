"""Flat `section.key = value` experiment configuration with a strict schema.

Lines are `key = value` with `#` comments; booleans are true/false; formats
are "S1EyMz" strings. Unknown keys are errors. The fully-resolved config can
be rendered back to text (the run echoes it into the output directory), and
re-parsing that echo yields the identical resolved configuration.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .data import Dataset, partition_by_label, partition_iid, synth_clusters
from .errors import InvalidConfigError
from .federated import FLConfig, ServerState
from .minifloat import FloatFormat
from .nn import ModelSpec, init_params
from .policy import PolicyConfig, derive_key

__all__ = [
    "DataConfig",
    "ExperimentConfig",
    "parse_config_text",
    "parse_config_file",
    "apply_overrides",
    "resolve_config",
    "render_config",
    "load_experiment",
    "build_state",
    "DEFAULTS",
]


def _parse_bool(text: str) -> bool:
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    raise ValueError(f"expected true or false, got {text!r}")


def _parse_int_list(text: str) -> tuple[int, ...]:
    return tuple(int(part) for part in text.split(","))


def _render(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class _Key:
    parse: Callable[[str], object]
    default: object  # None means "derived during resolution"
    choices: tuple | None = None


_SCHEMA: dict[str, _Key] = {
    "model.layers": _Key(_parse_int_list, (8, 32, 4)),
    "model.activation": _Key(str, "relu", ("relu", "tanh")),
    "model.layernorm": _Key(_parse_bool, True),
    "model.layernorm_eps": _Key(float, 1e-5),
    "data.classes": _Key(int, 4),
    "data.dim": _Key(int, 8),
    "data.samples": _Key(int, 4096),
    "data.spread": _Key(float, 0.25),
    "data.eval_samples": _Key(int, 1024),
    "data.partition": _Key(str, "iid", ("iid", "by_label")),
    "data.clients": _Key(int, 16),
    "data.labels_per_client": _Key(int, 2),
    "fl.clients_per_round": _Key(int, 16),
    "fl.local_steps": _Key(int, 1),
    "fl.batch_size": _Key(int, 16),
    "fl.learning_rate": _Key(float, 0.1),
    "fl.rounds": _Key(int, 50),
    "fl.eval_every": _Key(int, 1),
    "fl.workers": _Key(int, 1),
    "policy.format": _Key(FloatFormat.parse, FloatFormat(3, 7)),
    "policy.fraction": _Key(float, 0.9),
    "policy.weights_only": _Key(_parse_bool, True),
    "policy.pvt": _Key(_parse_bool, True),
    "policy.selection_seed": _Key(int, None),  # defaults to run.seed
    "run.seed": _Key(int, 0),
    "run.label": _Key(str, "run"),
}


@dataclass(frozen=True)
class DataConfig:
    num_classes: int
    dim: int
    samples: int
    spread: float
    eval_samples: int
    partition: str
    num_clients: int
    labels_per_client: int


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelSpec
    data: DataConfig
    fl: FLConfig
    seed: int
    label: str
    resolved: dict  # full key -> typed value mapping, echo-able


def parse_config_text(text: str) -> dict[str, str]:
    """Raw key -> value strings; later assignments win."""
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise InvalidConfigError(f"line {lineno}: expected key = value")
        key, value = (part.strip() for part in stripped.split("=", 1))
        if key not in _SCHEMA:
            raise InvalidConfigError(f"line {lineno}: unknown key {key!r}")
        raw[key] = value
    return raw


def parse_config_file(path) -> dict[str, str]:
    return parse_config_text(Path(path).read_text())


def apply_overrides(raw: dict[str, str], overrides: list[str]) -> dict[str, str]:
    """Apply `key=value` strings on top of the raw mapping."""
    out = dict(raw)
    for item in overrides:
        if "=" not in item:
            raise InvalidConfigError(f"override must be key=value, got {item!r}")
        key, value = (part.strip() for part in item.split("=", 1))
        if key not in _SCHEMA:
            raise InvalidConfigError(f"unknown key {key!r}")
        out[key] = value
    return out


def resolve_config(raw: dict[str, str]) -> dict:
    """Typed values for every schema key, defaults filled, choices enforced."""
    resolved: dict = {}
    for key, spec in _SCHEMA.items():
        if key in raw:
            try:
                value = spec.parse(raw[key])
            except (ValueError, TypeError) as exc:
                raise InvalidConfigError(f"{key}: {exc}") from None
        else:
            value = spec.default
        if spec.choices is not None and value not in spec.choices:
            raise InvalidConfigError(
                f"{key}: {value!r} not in {list(spec.choices)}"
            )
        resolved[key] = value
    if resolved["policy.selection_seed"] is None:
        resolved["policy.selection_seed"] = resolved["run.seed"]
    return resolved


def render_config(resolved: dict) -> str:
    lines = [f"{key} = {_render(resolved[key])}" for key in sorted(resolved)]
    return "\n".join(lines) + "\n"


def experiment_from_resolved(resolved: dict) -> ExperimentConfig:
    model = ModelSpec(
        layer_widths=resolved["model.layers"],
        activation=resolved["model.activation"],
        use_layernorm=resolved["model.layernorm"],
        layernorm_eps=resolved["model.layernorm_eps"],
    )
    policy = PolicyConfig(
        format=resolved["policy.format"],
        quantize_fraction=resolved["policy.fraction"],
        weights_only=resolved["policy.weights_only"],
        use_pvt=resolved["policy.pvt"],
        selection_seed=resolved["policy.selection_seed"],
    )
    fl = FLConfig(
        policy=policy,
        learning_rate=resolved["fl.learning_rate"],
        total_rounds=resolved["fl.rounds"],
        clients_per_round=resolved["fl.clients_per_round"],
        local_steps=resolved["fl.local_steps"],
        batch_size=resolved["fl.batch_size"],
        eval_every=resolved["fl.eval_every"],
        partition=resolved["data.partition"],
        seed=resolved["run.seed"],
        workers=resolved["fl.workers"],
    )
    data = DataConfig(
        num_classes=resolved["data.classes"],
        dim=resolved["data.dim"],
        samples=resolved["data.samples"],
        spread=resolved["data.spread"],
        eval_samples=resolved["data.eval_samples"],
        partition=resolved["data.partition"],
        num_clients=resolved["data.clients"],
        labels_per_client=resolved["data.labels_per_client"],
    )
    if model.layer_widths[0] != data.dim:
        raise InvalidConfigError(
            f"model input width {model.layer_widths[0]} != data.dim {data.dim}"
        )
    if model.layer_widths[-1] != data.num_classes:
        raise InvalidConfigError(
            f"model output width {model.layer_widths[-1]} != data.classes "
            f"{data.num_classes}"
        )
    return ExperimentConfig(
        model=model,
        data=data,
        fl=fl,
        seed=resolved["run.seed"],
        label=resolved["run.label"],
        resolved=resolved,
    )


def load_experiment(
    path=None, overrides: list[str] | None = None
) -> ExperimentConfig:
    raw = parse_config_file(path) if path is not None else {}
    raw = apply_overrides(raw, overrides or [])
    return experiment_from_resolved(resolve_config(raw))


def build_state(cfg: ExperimentConfig) -> ServerState:
    """Materialize dataset, shards, eval set, and initial model from the config."""
    d = cfg.data
    train = synth_clusters(
        d.num_classes, d.dim, d.samples, d.spread, derive_key(cfg.seed, "data")
    )
    eval_set = synth_clusters(
        d.num_classes, d.dim, d.eval_samples, d.spread, derive_key(cfg.seed, "eval")
    )
    if d.partition == "iid":
        shards = partition_iid(train, d.num_clients, derive_key(cfg.seed, "part"))
    else:
        shards = partition_by_label(
            train, d.num_clients, d.labels_per_client, derive_key(cfg.seed, "part")
        )
    params = init_params(cfg.model, derive_key(cfg.seed, "init"))
    return ServerState(params=params, shards=shards, eval_set=eval_set)
