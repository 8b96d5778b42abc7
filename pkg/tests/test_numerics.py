"""Tape, network evaluation and optimizer unit tests."""

import numpy as np
import pytest

from latentalign.errors import ConfigError, NumericError
from latentalign.numerics import (
    AdamState,
    LayerSpec,
    ParamStore,
    Var,
    adam_step,
    compute_gradient,
    forward_mlp,
    init_mlp_params,
    scaled_shifted_sigmoid,
    tape,
)

from helpers import assert_grads_close, finite_difference_grads, straightline_mlp


def _mlp_store(spec, rng, prefix="mlp"):
    store = ParamStore()
    init_mlp_params(store, spec, prefix, rng)
    return store


class TestForwardMlp:
    def test_zero_weights_identity_activation_returns_last_bias(self):
        spec = [LayerSpec(3, 4, "tanh"), LayerSpec(4, 2, "identity")]
        store = ParamStore()
        store.add("mlp.w0", np.zeros((4, 3)))
        store.add("mlp.b0", np.array([0.3, -0.1, 0.0, 2.0]))
        store.add("mlp.w1", np.zeros((2, 4)))
        store.add("mlp.b1", np.array([1.5, -2.5]))
        out = forward_mlp(spec, store, np.array([9.0, -3.0, 7.0]))
        np.testing.assert_array_equal(out, [1.5, -2.5])

    def test_identity_weight_tanh_at_zero(self):
        spec = [LayerSpec(2, 2, "tanh")]
        store = ParamStore()
        store.add("mlp.w0", np.eye(2))
        store.add("mlp.b0", np.zeros(2))
        out = forward_mlp(spec, store, np.zeros(2))
        np.testing.assert_array_equal(out, [0.0, 0.0])

    def test_matches_straightline_evaluation(self):
        rng = np.random.default_rng(7)
        spec = [LayerSpec(5, 8, "tanh"), LayerSpec(8, 6, "scaled_shifted_sigmoid"),
                LayerSpec(6, 3, "identity")]
        store = _mlp_store(spec, rng)
        x = rng.normal(size=5)
        expected = straightline_mlp(
            [(store[f"mlp.w{i}"], store[f"mlp.b{i}"], spec[i].activation)
             for i in range(3)], x)
        out = forward_mlp(spec, store, x)
        np.testing.assert_allclose(out, expected, atol=1e-12, rtol=0)

    def test_identity_net_equals_affine_product(self):
        rng = np.random.default_rng(11)
        spec = [LayerSpec(4, 4, "identity"), LayerSpec(4, 4, "identity")]
        store = _mlp_store(spec, rng)
        x = rng.normal(size=4)
        w0, b0 = store["mlp.w0"], store["mlp.b0"]
        w1, b1 = store["mlp.w1"], store["mlp.b1"]
        expected = w1 @ (w0 @ x + b0) + b1
        np.testing.assert_allclose(forward_mlp(spec, store, x), expected,
                                   atol=1e-12, rtol=0)

    def test_shape_mismatch_names_layer(self):
        spec = [LayerSpec(3, 2, "tanh")]
        store = ParamStore()
        store.add("mlp.w0", np.zeros((2, 3)))
        store.add("mlp.b0", np.zeros(2))
        with pytest.raises(ConfigError, match="mlp.0"):
            forward_mlp(spec, store, np.zeros(5))

    def test_deterministic_bitwise(self):
        rng = np.random.default_rng(3)
        spec = [LayerSpec(6, 6, "tanh"), LayerSpec(6, 2, "identity")]
        store = _mlp_store(spec, rng)
        x = rng.normal(size=6)
        a = forward_mlp(spec, store, x)
        b = forward_mlp(spec, store, x)
        assert a.tobytes() == b.tobytes()


class TestScaledShiftedSigmoid:
    def test_zero(self):
        assert scaled_shifted_sigmoid(0.0) == 0.0

    def test_saturation_below_quarter(self):
        # strict bound holds as long as sigmoid(x) < 1 is representable
        # (x <= ~36.7 in float64); past that the value rounds to exactly 0.25
        assert scaled_shifted_sigmoid(36.0) < 0.25
        assert scaled_shifted_sigmoid(-36.0) > -0.25
        assert scaled_shifted_sigmoid(50.0) <= 0.25
        assert scaled_shifted_sigmoid(-50.0) >= -0.25

    def test_closed_form_at_one(self):
        # 0.5*(1/(1+e^-1) - 0.5), evaluated with 50-digit arithmetic
        expected = 0.11552928931500243
        assert scaled_shifted_sigmoid(1.0) == pytest.approx(expected, abs=1e-15)


class TestComputeGradient:
    def test_square(self):
        store = ParamStore()
        store.add("x", np.array([3.0]))
        grads = compute_gradient(lambda p: tape.vsum(tape.square(p["x"])), store)
        np.testing.assert_allclose(grads["x"], [6.0])

    def test_product(self):
        store = ParamStore()
        store.add("x", np.array([2.0]))
        store.add("y", np.array([5.0]))
        grads = compute_gradient(lambda p: tape.vsum(p["x"] * p["y"]), store)
        np.testing.assert_allclose(grads["x"], [5.0])
        np.testing.assert_allclose(grads["y"], [2.0])

    def test_untouched_group_gets_zero(self):
        store = ParamStore()
        store.add("x", np.array([2.0]))
        store.add("unused", np.array([1.0, 1.0]))
        grads = compute_gradient(lambda p: tape.vsum(tape.square(p["x"])), store)
        np.testing.assert_array_equal(grads["unused"], [0.0, 0.0])

    def test_nonfinite_intermediate_names_primitive(self):
        store = ParamStore()
        store.add("x", np.array([1000.0]))
        with np.errstate(over="ignore"), pytest.raises(NumericError, match="exp"):
            compute_gradient(lambda p: tape.vsum(tape.exp(p["x"])), store)

    @pytest.mark.parametrize("seed", range(20))
    def test_random_composites_match_finite_differences(self, seed):
        """Every primitive family exercised against central differences."""
        rng = np.random.default_rng(1000 + seed)
        store = ParamStore()
        store.add("w", rng.normal(size=(3, 4)) * 0.5)
        store.add("b", rng.normal(size=3) * 0.5)
        store.add("v", rng.uniform(0.5, 1.5, size=4))
        x = rng.normal(size=(2, 4))

        def graph(p):
            h = tape.tanh((Var(x) @ tape.transpose(p["w"])) + p["b"])
            s = tape.sigmoid(h)
            q = tape.square(s) + tape.exp(h * 0.3)
            r = tape.log(tape.clip(q, 1e-3, 50.0) + 1.0)
            z = tape.absolute(r - 0.4) + q / (tape.vsum(tape.square(p["v"])) + 1.0)
            return tape.vsum(z) + tape.vsum(tape.variance(h, axis=0))

        def loss_value(params):
            h = np.tanh(x @ params["w"].T + params["b"])
            s = 1.0 / (1.0 + np.exp(-h))
            q = s ** 2 + np.exp(h * 0.3)
            r = np.log(np.clip(q, 1e-3, 50.0) + 1.0)
            z = np.abs(r - 0.4) + q / (np.sum(params["v"] ** 2) + 1.0)
            return float(np.sum(z) + np.sum(np.var(h, axis=0, ddof=1)))

        grads = compute_gradient(graph, store)
        fd = finite_difference_grads(loss_value, store)
        assert_grads_close(grads, fd)


class TestAdam:
    def _scalar_setup(self):
        params = ParamStore()
        params.add("p", np.array([1.0]))
        state = AdamState.for_params(params, lr=0.001)
        return params, state

    def test_zero_gradient_is_fixed_point(self):
        params, state = self._scalar_setup()
        grads = params.zeros_like()
        adam_step(state, params, grads)
        np.testing.assert_array_equal(params["p"], [1.0])
        np.testing.assert_array_equal(state.m["p"], [0.0])
        np.testing.assert_array_equal(state.v["p"], [0.0])
        assert state.step_count == 1

    def test_first_step_magnitude(self):
        # t=1: m_hat = g, v_hat = g^2, so the update is lr * 1/(1+eps)
        params, state = self._scalar_setup()
        grads = params.zeros_like()
        grads["p"] = np.array([1.0])
        adam_step(state, params, grads)
        assert params["p"][0] == pytest.approx(1.0 - 0.001, abs=1e-9)

    def test_two_identical_steps_similar_magnitude(self):
        # moment recursion keeps m_hat = g, v_hat = g^2 for constant gradients
        params, state = self._scalar_setup()
        grads = params.zeros_like()
        grads["p"] = np.array([1.0])
        adam_step(state, params, grads)
        first = 1.0 - params["p"][0]
        before = params["p"][0]
        adam_step(state, params, grads)
        second = before - params["p"][0]
        assert abs(second - first) / first < 0.01

    def test_nonfinite_gradient_raises(self):
        params, state = self._scalar_setup()
        grads = params.zeros_like()
        grads["p"] = np.array([np.nan])
        with pytest.raises(NumericError, match="adam_step"):
            adam_step(state, params, grads)


class TestParamStore:
    def test_iteration_order_is_insertion_order(self):
        store = ParamStore()
        for name in ("zeta", "alpha", "mid"):
            store.add(name, np.zeros(1))
        assert store.names() == ["zeta", "alpha", "mid"]

    def test_duplicate_name_rejected(self):
        store = ParamStore()
        store.add("a", np.zeros(2))
        with pytest.raises(ConfigError):
            store.add("a", np.zeros(2))

    def test_shape_change_rejected(self):
        store = ParamStore()
        store.add("a", np.zeros(2))
        with pytest.raises(ConfigError):
            store["a"] = np.zeros(3)
