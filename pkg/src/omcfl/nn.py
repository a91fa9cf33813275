"""Small dense classifier with explicitly tagged variable kinds and manual backprop.

Layers: affine -> optional layer normalization (with learned gain/offset) ->
activation, repeated per hidden width, then a final affine producing logits.
Loss is mean softmax cross-entropy. Everything is plain numpy; computations
run in the dtype of the parameter arrays, so a float64 copy of a model gives
a float64 shadow path (used by the finite-difference gradient checks).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .policy import VariableKind

__all__ = [
    "ModelSpec",
    "ModelParams",
    "init_params",
    "forward",
    "loss_and_grads",
    "sgd_step",
]

_ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class ModelSpec:
    """Widths are (input, hidden..., output); at least one hidden layer."""

    layer_widths: tuple[int, ...]
    activation: str = "relu"
    use_layernorm: bool = True
    layernorm_eps: float = 1e-5

    def __post_init__(self):
        if len(self.layer_widths) < 3:
            raise InvalidInputError("need input, >=1 hidden, and output widths")
        if min(self.layer_widths) < 1:
            raise InvalidInputError("all widths must be >= 1")
        if self.activation not in _ACTIVATIONS:
            raise InvalidInputError(f"activation must be one of {_ACTIVATIONS}")

    @property
    def hidden_count(self) -> int:
        return len(self.layer_widths) - 2


@dataclass
class ModelParams:
    """Ordered named tensors, each tagged with a VariableKind."""

    spec: ModelSpec
    values: dict[str, np.ndarray] = field(default_factory=dict)
    kinds: dict[str, VariableKind] = field(default_factory=dict)

    def add(self, name: str, kind: VariableKind, value: np.ndarray) -> None:
        if name in self.values:
            raise InvalidInputError(f"duplicate parameter {name!r}")
        self.values[name] = value
        self.kinds[name] = kind

    def names(self) -> list[str]:
        return list(self.values)

    def variables(self) -> list[tuple[str, VariableKind]]:
        return [(name, self.kinds[name]) for name in self.values]

    def copy(self) -> "ModelParams":
        out = ModelParams(self.spec)
        for name, kind in self.variables():
            out.add(name, kind, self.values[name].copy())
        return out

    def astype(self, dtype) -> "ModelParams":
        out = ModelParams(self.spec)
        for name, kind in self.variables():
            out.add(name, kind, self.values[name].astype(dtype))
        return out

    def total_elements(self) -> int:
        return sum(v.size for v in self.values.values())


def init_params(spec: ModelSpec, seed: int) -> ModelParams:
    """Uniform(+-sqrt(6/(fan_in+fan_out))) weights, zero biases, unit gains."""
    rng = np.random.default_rng(seed)
    params = ModelParams(spec)
    widths = spec.layer_widths
    for i in range(spec.hidden_count):
        fan_in, fan_out = widths[i], widths[i + 1]
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        params.add(
            f"h{i}.w",
            VariableKind.WEIGHT_MATRIX,
            rng.uniform(-limit, limit, (fan_in, fan_out)).astype(np.float32),
        )
        params.add(f"h{i}.b", VariableKind.BIAS_VECTOR, np.zeros(fan_out, np.float32))
        if spec.use_layernorm:
            params.add(
                f"h{i}.ln_g", VariableKind.NORM_SCALE, np.ones(fan_out, np.float32)
            )
            params.add(
                f"h{i}.ln_b", VariableKind.NORM_BIAS, np.zeros(fan_out, np.float32)
            )
    fan_in, fan_out = widths[-2], widths[-1]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    params.add(
        "out.w",
        VariableKind.WEIGHT_MATRIX,
        rng.uniform(-limit, limit, (fan_in, fan_out)).astype(np.float32),
    )
    params.add("out.b", VariableKind.BIAS_VECTOR, np.zeros(fan_out, np.float32))
    return params


def _check_features(params: ModelParams, features: np.ndarray) -> np.ndarray:
    x = np.asarray(features)
    if x.ndim != 2 or x.shape[1] != params.spec.layer_widths[0]:
        raise InvalidInputError(
            f"features must be (n, {params.spec.layer_widths[0]}), got {x.shape}"
        )
    if x.shape[0] == 0:
        raise InvalidInputError("batch must be nonempty")
    return x


def forward(params: ModelParams, features) -> tuple[np.ndarray, list[dict]]:
    """Logits plus the per-layer activation cache used by backprop."""
    spec = params.spec
    x = _check_features(params, features)
    caches = []
    for i in range(spec.hidden_count):
        w, b = params.values[f"h{i}.w"], params.values[f"h{i}.b"]
        z = x @ w + b
        cache = {"x": x, "z": z}
        if spec.use_layernorm:
            mu = z.mean(axis=1, keepdims=True)
            centered = z - mu
            var = np.mean(centered * centered, axis=1, keepdims=True)
            inv = 1.0 / np.sqrt(var + spec.layernorm_eps)
            xhat = centered * inv
            h = xhat * params.values[f"h{i}.ln_g"] + params.values[f"h{i}.ln_b"]
            cache.update(xhat=xhat, inv=inv)
        else:
            h = z
        a = np.maximum(h, 0) if spec.activation == "relu" else np.tanh(h)
        cache.update(h=h, a=a)
        caches.append(cache)
        x = a
    logits = x @ params.values["out.w"] + params.values["out.b"]
    return logits, caches


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def loss_and_grads(params: ModelParams, batch) -> tuple[float, dict[str, np.ndarray]]:
    """Mean softmax cross-entropy and gradients for every parameter tensor."""
    spec = params.spec
    labels = np.asarray(batch.labels)
    logits, caches = forward(params, batch.features)
    if labels.shape[0] != logits.shape[0]:
        raise InvalidInputError("labels length must match batch size")

    n = logits.shape[0]
    logp = _log_softmax(logits)
    loss = float(-logp[np.arange(n), labels].mean())

    grads: dict[str, np.ndarray] = {}
    dlogits = np.exp(logp)
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n

    a_last = caches[-1]["a"]
    grads["out.w"] = a_last.T @ dlogits
    grads["out.b"] = dlogits.sum(axis=0)
    da = dlogits @ params.values["out.w"].T

    for i in reversed(range(spec.hidden_count)):
        cache = caches[i]
        if spec.activation == "relu":
            dh = da * (cache["h"] > 0)
        else:
            dh = da * (1.0 - cache["a"] * cache["a"])
        if spec.use_layernorm:
            xhat, inv = cache["xhat"], cache["inv"]
            grads[f"h{i}.ln_g"] = (dh * xhat).sum(axis=0)
            grads[f"h{i}.ln_b"] = dh.sum(axis=0)
            dxhat = dh * params.values[f"h{i}.ln_g"]
            dz = inv * (
                dxhat
                - dxhat.mean(axis=1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
            )
        else:
            dz = dh
        grads[f"h{i}.w"] = cache["x"].T @ dz
        grads[f"h{i}.b"] = dz.sum(axis=0)
        da = dz @ params.values[f"h{i}.w"].T

    ordered = {name: grads[name] for name in params.names()}
    return loss, ordered


def sgd_step(params: ModelParams, grads: dict[str, np.ndarray], lr: float) -> ModelParams:
    """p <- p - lr * g elementwise; lr may be zero (no-op step)."""
    if lr < 0:
        raise InvalidInputError(f"learning rate must be >= 0, got {lr}")
    if set(grads) != set(params.values):
        raise InvalidInputError("gradient names do not match parameter names")
    out = ModelParams(params.spec)
    for name, kind in params.variables():
        if grads[name].shape != params.values[name].shape:
            raise InvalidInputError(f"gradient shape mismatch for {name!r}")
        out.add(name, kind, params.values[name] - lr * grads[name])
    return out
