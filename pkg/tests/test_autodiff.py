"""
Tests del motor de diferenciación automática: gradientes de cada kernel
contra diferencias finitas, causalidad de la convolución y LSTM con zoneout.

Ejecutar: pytest tests/test_autodiff.py -v
"""
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import autodiff as ad
from autodiff import LstmWeights, Tape, Tensor, backward, constant, gradient_check, relative_error
from errors import ShapeError, ValidationError

SEEDS = [0, 1, 2]
TOLERANCE = 1e-4


# =============================================================================
# Helpers
# =============================================================================

def param(rng, *shape, name=None):
    return Tensor(rng.normal(size=shape), requires_grad=True, name=name)


def projected(out: Tensor, rng) -> Tensor:
    """Reduce una salida a escalar con una proyección aleatoria fija."""
    weights = constant(rng.normal(size=out.shape), dtype=np.float64)
    return ad.sum_all(ad.mul(out, weights))


def check(build, rng_seed):
    """build(rng) → (loss_fn, params); verifica gradientes en float64."""
    rng = np.random.default_rng(rng_seed)
    loss_fn, params = build(rng)
    report = gradient_check(loss_fn, params, eps=1e-6)
    assert report.checked > 0
    assert report.passed(TOLERANCE), f"{report.worst}: {report.max_rel_error:.2e}"


def unary(op):
    def build(rng):
        x = param(rng, 4, 3)
        return (lambda: projected(op(x), np.random.default_rng(8))), {"x": x}
    return build


# =============================================================================
# Gradientes de cada kernel
# =============================================================================

class TestElementwiseGradients:
    """Gradientes de operaciones elemento a elemento y activaciones"""

    @pytest.mark.parametrize("seed", SEEDS)
    @pytest.mark.parametrize("op", [ad.relu, ad.leaky_relu, ad.tanh, ad.sigmoid, ad.softmax,
                                    ad.transpose, lambda x: ad.scale(x, -2.5)])
    def test_unary(self, op, seed):
        check(unary(op), seed)

    @pytest.mark.parametrize("seed", SEEDS)
    def test_binary(self, seed):
        def build(rng):
            a, b = param(rng, 3, 4), param(rng, 3, 4)
            bias = param(rng, 4)
            proj = constant(rng.normal(size=(3, 4)), dtype=np.float64)

            def loss():
                out = ad.add(ad.sub(ad.mul(a, b), ad.mix(a, b, 0.3)), bias)
                return ad.sum_all(ad.mul(out, proj))
            return loss, {"a": a, "b": b, "bias": bias}
        check(build, seed)

    @pytest.mark.parametrize("seed", SEEDS)
    def test_mean_and_reshape(self, seed):
        def build(rng):
            x = param(rng, 2, 6)
            return (lambda: ad.mean(ad.tanh(ad.reshape(x, (3, 4))))), {"x": x}
        check(build, seed)


class TestLinearGradients:
    """Gradientes de matmul, linear, embedding y forma"""

    @pytest.mark.parametrize("seed", SEEDS)
    def test_linear(self, seed):
        def build(rng):
            x, w, b = param(rng, 5, 3), param(rng, 3, 4), param(rng, 4)
            return (lambda: projected(ad.linear(x, w, b), np.random.default_rng(9))), \
                {"x": x, "w": w, "b": b}
        check(build, seed)

    @pytest.mark.parametrize("seed", SEEDS)
    def test_matmul_concat_slices(self, seed):
        def build(rng):
            a, b, c = param(rng, 3, 2), param(rng, 3, 3), param(rng, 5, 4)

            def loss():
                joined = ad.concat([a, b], axis=1)
                prod = ad.matmul(joined, ad.slice_rows(c, 0, 5))
                return projected(ad.slice_cols(prod, 1, 3), np.random.default_rng(4))
            return loss, {"a": a, "b": b, "c": c}
        check(build, seed)

    @pytest.mark.parametrize("seed", SEEDS)
    def test_embedding(self, seed):
        def build(rng):
            table = param(rng, 6, 3)
            ids = np.array([0, 2, 2, 5])
            return (lambda: projected(ad.embedding(ids, table), np.random.default_rng(1))), \
                {"table": table}
        check(build, seed)


class TestConvGradients:
    """Gradientes de convoluciones y batch norm"""

    @pytest.mark.parametrize("seed", SEEDS)
    @pytest.mark.parametrize("padding,dilation", [("same", 1), ("same", 2), ("causal", 1), ("causal", 4)])
    def test_conv1d(self, seed, padding, dilation):
        def build(rng):
            x, w, b = param(rng, 7, 3), param(rng, 3, 3, 2), param(rng, 2)
            return (lambda: projected(ad.conv1d(x, w, b, dilation=dilation, padding=padding),
                                      np.random.default_rng(2))), {"x": x, "w": w, "b": b}
        check(build, seed)

    @pytest.mark.parametrize("seed", SEEDS)
    def test_conv_transpose1d(self, seed):
        def build(rng):
            x, w, b = param(rng, 4, 3), param(rng, 6, 3, 2), param(rng, 2)
            return (lambda: projected(ad.conv_transpose1d(x, w, b, stride=3), np.random.default_rng(3))), \
                {"x": x, "w": w, "b": b}
        check(build, seed)

    @pytest.mark.parametrize("seed", SEEDS)
    @pytest.mark.parametrize("training", [True, False])
    def test_batchnorm(self, seed, training):
        def build(rng):
            x, gamma, beta = param(rng, 6, 3), param(rng, 3), param(rng, 3)
            running_mean, running_var = np.zeros(3), np.ones(3)
            return (lambda: projected(ad.batchnorm1d(x, gamma, beta, running_mean, running_var, training),
                                      np.random.default_rng(5))), {"x": x, "gamma": gamma, "beta": beta}
        check(build, seed)


class TestLossGradients:
    """Gradientes de las pérdidas"""

    @pytest.mark.parametrize("seed", SEEDS)
    def test_mse(self, seed):
        def build(rng):
            x = param(rng, 4, 3)
            target = rng.normal(size=(4, 3))
            return (lambda: ad.mse(x, target)), {"x": x}
        check(build, seed)

    @pytest.mark.parametrize("seed", SEEDS)
    def test_bce_with_logits(self, seed):
        def build(rng):
            x = param(rng, 5)
            targets = np.array([0.0, 1.0, 1.0, 0.0, 1.0])
            return (lambda: ad.bce_with_logits(x, targets)), {"x": x}
        check(build, seed)


class TestLstmGradients:
    """Gradientes de la celda LSTM"""

    @pytest.mark.parametrize("seed", SEEDS)
    @pytest.mark.parametrize("zoneout", [0.0, 0.1])
    def test_lstm_cell_inference(self, seed, zoneout):
        def build(rng):
            x, h, c = param(rng, 1, 3), param(rng, 1, 2), param(rng, 1, 2)
            kernel, bias = param(rng, 5, 8), param(rng, 8)
            weights = LstmWeights(kernel, bias)

            def loss():
                h1, c1 = ad.lstm_cell(x, h, c, weights, zoneout_p=zoneout)
                h2, c2 = ad.lstm_cell(x, h1, c1, weights, zoneout_p=zoneout)
                return projected(ad.concat([h2, c2], axis=1), np.random.default_rng(6))
            return loss, {"x": x, "h": h, "c": c, "kernel": kernel, "bias": bias}
        check(build, seed)

    @pytest.mark.parametrize("seed", SEEDS)
    def test_lstm_cell_training_zoneout(self, seed):
        def build(rng):
            x, h, c = param(rng, 1, 3), param(rng, 1, 2), param(rng, 1, 2)
            kernel, bias = param(rng, 5, 8), param(rng, 8)

            def loss():
                h1, c1 = ad.lstm_cell(x, h, c, LstmWeights(kernel, bias), zoneout_p=0.5,
                                      training=True, rng=np.random.default_rng(11))
                return projected(ad.concat([h1, c1], axis=1), np.random.default_rng(6))
            return loss, {"x": x, "kernel": kernel, "bias": bias}
        check(build, seed)


# =============================================================================
# Semántica
# =============================================================================

class TestSemantics:
    """Tests de comportamiento del motor"""

    def test_softmax_rows_sum_to_one(self):
        x = constant(np.random.default_rng(0).normal(size=(4, 7)) * 30, dtype=np.float64)
        assert np.allclose(ad.softmax(x).data.sum(axis=1), 1.0)

    def test_integer_data_cast_to_float(self):
        assert Tensor(np.arange(3)).dtype == np.float32

    def test_backward_accumulates(self):
        w = Tensor(np.array([2.0]), requires_grad=True)
        for _ in range(2):
            with Tape():
                loss = ad.sum_all(ad.mul(w, w))
            backward(loss)
        assert w.grad[0] == pytest.approx(8.0)

    def test_backward_requires_grad(self):
        with pytest.raises(ValidationError):
            backward(constant(np.array(1.0)))

    def test_backward_non_scalar(self):
        w = Tensor(np.ones(3), requires_grad=True)
        with Tape():
            out = ad.scale(w, 2.0)
        with pytest.raises(ShapeError):
            backward(out)

    def test_no_tape_records_nothing(self):
        w = Tensor(np.ones(3), requires_grad=True)
        out = ad.scale(w, 2.0)
        assert out.is_leaf

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            ad.matmul(constant(np.ones((2, 3))), constant(np.ones((2, 3))))

    def test_dropout_identity_outside_training(self):
        x = constant(np.ones((3, 3)))
        assert ad.dropout(x, 0.5, None, training=False) is x

    def test_dropout_invalid_p(self):
        with pytest.raises(ValidationError):
            ad.dropout(constant(np.ones(2)), 1.0, np.random.default_rng(0), training=True)

    def test_dropout_deterministic_with_seed(self):
        x = constant(np.ones((8, 8)))
        a = ad.dropout(x, 0.5, np.random.default_rng(3), training=True).data
        b = ad.dropout(x, 0.5, np.random.default_rng(3), training=True).data
        assert np.array_equal(a, b)
        assert set(np.unique(a)) <= {0.0, 2.0}

    def test_causal_conv_ignores_future(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(10, 2))
        w = constant(rng.normal(size=(3, 2, 2)), dtype=np.float64)
        base = ad.conv1d(constant(x, dtype=np.float64), w, dilation=2, padding="causal").data
        x[6] += 100.0
        moved = ad.conv1d(constant(x, dtype=np.float64), w, dilation=2, padding="causal").data
        assert np.array_equal(base[:6], moved[:6])
        assert not np.allclose(base[6:], moved[6:])

    def test_conv_transpose_identity_repeats_rows(self):
        factor = 3
        kernel = np.zeros((2 * factor, 2, 2))
        kernel[:factor] = np.eye(2)
        x = np.array([[1.0, 2.0], [3.0, 4.0]])
        out = ad.conv_transpose1d(constant(x, dtype=np.float64), constant(kernel, dtype=np.float64),
                                  None, stride=factor).data
        assert np.array_equal(out, np.repeat(x, factor, axis=0))

    def test_batchnorm_updates_running_stats(self):
        running_mean, running_var = np.zeros(2), np.ones(2)
        x = constant(np.array([[1.0, 2.0], [3.0, 6.0]]), dtype=np.float64)
        ones, zeros = constant(np.ones(2), dtype=np.float64), constant(np.zeros(2), dtype=np.float64)
        ad.batchnorm1d(x, ones, zeros, running_mean, running_var, training=True, momentum=0.5)
        assert np.allclose(running_mean, [1.0, 2.0])

    def test_zoneout_p1_keeps_state(self):
        rng = np.random.default_rng(0)
        h = constant(rng.normal(size=(1, 2)), dtype=np.float64)
        c = constant(rng.normal(size=(1, 2)), dtype=np.float64)
        weights = LstmWeights(constant(rng.normal(size=(5, 8)), dtype=np.float64),
                              constant(np.zeros(8), dtype=np.float64))
        h1, c1 = ad.lstm_cell(constant(np.ones((1, 3)), dtype=np.float64), h, c, weights,
                              zoneout_p=1.0, training=True, rng=np.random.default_rng(1))
        assert np.array_equal(h1.data, h.data)
        assert np.array_equal(c1.data, c.data)

    def test_relative_error_floor(self):
        assert relative_error(0.0, 1e-6) == pytest.approx(1e-3)
