import math

import numpy as np
import pytest

from omcfl.data import synth_clusters
from omcfl.errors import InvalidInputError
from omcfl.nn import (
    ModelParams,
    ModelSpec,
    forward,
    init_params,
    loss_and_grads,
    sgd_step,
)
from omcfl.policy import VariableKind

from reference import finite_difference_grads, generic_point, relative_error

SPEC = ModelSpec((4, 6, 3), activation="tanh", use_layernorm=True)


def small_batch(spec, seed=0, size=8):
    return synth_clusters(spec.layer_widths[-1], spec.layer_widths[0],
                          size, 0.5, seed)


class TestSpecValidation:
    def test_needs_hidden_layer(self):
        with pytest.raises(InvalidInputError):
            ModelSpec((4, 3))

    def test_widths_positive(self):
        with pytest.raises(InvalidInputError):
            ModelSpec((4, 0, 3))

    def test_activation_checked(self):
        with pytest.raises(InvalidInputError):
            ModelSpec((4, 6, 3), activation="gelu")


class TestInit:
    def test_deterministic(self):
        a = init_params(SPEC, 7)
        b = init_params(SPEC, 7)
        for name in a.names():
            assert np.array_equal(a.values[name], b.values[name])

    def test_seeds_differ(self):
        a = init_params(SPEC, 7)
        b = init_params(SPEC, 8)
        assert not np.array_equal(a.values["h0.w"], b.values["h0.w"])

    def test_layernorm_gains_are_one(self):
        params = init_params(SPEC, 0)
        assert np.all(params.values["h0.ln_g"] == 1.0)
        assert np.all(params.values["h0.ln_b"] == 0.0)

    def test_kinds_assigned(self):
        params = init_params(SPEC, 0)
        kinds = dict(params.variables())
        assert kinds["h0.w"] is VariableKind.WEIGHT_MATRIX
        assert kinds["h0.b"] is VariableKind.BIAS_VECTOR
        assert kinds["h0.ln_g"] is VariableKind.NORM_SCALE
        assert kinds["h0.ln_b"] is VariableKind.NORM_BIAS
        assert kinds["out.w"] is VariableKind.WEIGHT_MATRIX

    def test_weight_init_bound(self):
        params = init_params(ModelSpec((100, 50, 10), use_layernorm=False), 3)
        limit = math.sqrt(6.0 / 150)
        w = params.values["h0.w"]
        assert np.all(np.abs(w) <= limit)
        assert w.dtype == np.float32


class TestForwardLoss:
    def test_uniform_logits_loss_is_log_k(self):
        params = init_params(SPEC, 0)
        for name in params.names():
            params.values[name] = np.zeros_like(params.values[name])
        params.values["h0.ln_g"] = np.ones_like(params.values["h0.ln_g"])
        batch = small_batch(SPEC, size=32)
        loss, _ = loss_and_grads(params, batch)
        assert loss == pytest.approx(math.log(3), rel=1e-6)

    def test_feature_width_checked(self):
        params = init_params(SPEC, 0)
        with pytest.raises(InvalidInputError):
            forward(params, np.zeros((4, 9), np.float32))

    def test_empty_batch_rejected(self):
        params = init_params(SPEC, 0)
        with pytest.raises(InvalidInputError):
            forward(params, np.zeros((0, 4), np.float32))

    def test_dead_relu_unit_has_zero_grads(self):
        spec = ModelSpec((4, 6, 3), activation="relu", use_layernorm=False)
        params = init_params(spec, 1)
        params.values["h0.b"] = np.full(6, -100.0, np.float32)  # unit 0..5 all dead
        batch = small_batch(spec, size=16)
        _, grads = loss_and_grads(params, batch)
        assert np.all(grads["h0.w"] == 0)  # relu derivative is zero everywhere
        assert np.all(grads["out.w"] == 0)  # its input activations are zero

    def test_layernorm_normalizes_rows(self):
        spec = ModelSpec((4, 32, 3), activation="relu", use_layernorm=True)
        params = init_params(spec, 5)
        batch = small_batch(spec, size=16)
        _, caches = forward(params, batch.features)
        xhat = caches[0]["xhat"]
        assert np.max(np.abs(xhat.mean(axis=1))) < 1e-5
        assert np.max(np.abs(xhat.var(axis=1) - 1.0)) < 1e-2  # eps shifts variance

    def test_forward_is_pure(self):
        params = init_params(SPEC, 3)
        batch = small_batch(SPEC)
        a, _ = forward(params, batch.features)
        b, _ = forward(params, batch.features)
        assert np.array_equal(a, b)


class TestGradients:
    @pytest.mark.parametrize("activation", ["relu", "tanh"])
    @pytest.mark.parametrize("use_ln", [False, True])
    def test_matches_finite_differences(self, activation, use_ln):
        spec = ModelSpec((3, 5, 4, 3), activation=activation, use_layernorm=use_ln)
        params = generic_point(init_params(spec, 11).astype(np.float64), seed=12)
        batch = small_batch(spec, seed=2, size=6)
        batch = type(batch)(batch.features.astype(np.float64), batch.labels, 3)
        _, analytic = loss_and_grads(params, batch)
        numeric = finite_difference_grads(params, batch)
        for name in params.names():
            err = relative_error(analytic[name], numeric[name])
            assert err < 1e-3, (name, err)


class TestSgdStep:
    def test_zero_lr_is_identity(self):
        params = init_params(SPEC, 0)
        batch = small_batch(SPEC)
        _, grads = loss_and_grads(params, batch)
        after = sgd_step(params, grads, 0.0)
        for name in params.names():
            assert np.array_equal(after.values[name], params.values[name])

    def test_scalar_case(self):
        spec = ModelSpec((1, 1, 1), use_layernorm=False)
        params = init_params(spec, 0)
        params.values["h0.w"] = np.array([[1.0]], np.float32)
        grads = {name: np.zeros_like(v) for name, v in params.values.items()}
        grads["h0.w"] = np.array([[2.0]], np.float32)
        after = sgd_step(params, grads, 0.1)
        assert after.values["h0.w"][0, 0] == np.float32(1.0) - 0.1 * np.float32(2.0)

    def test_loss_decreases_after_small_step(self):
        params = init_params(SPEC, 4)
        batch = small_batch(SPEC, seed=6, size=32)
        loss_before, grads = loss_and_grads(params, batch)
        loss_after, _ = loss_and_grads(sgd_step(params, grads, 0.05), batch)
        assert loss_after < loss_before

    def test_name_mismatch_rejected(self):
        params = init_params(SPEC, 0)
        with pytest.raises(InvalidInputError):
            sgd_step(params, {"bogus": np.zeros(1)}, 0.1)

    def test_negative_lr_rejected(self):
        params = init_params(SPEC, 0)
        batch = small_batch(SPEC)
        _, grads = loss_and_grads(params, batch)
        with pytest.raises(InvalidInputError):
            sgd_step(params, grads, -0.1)
