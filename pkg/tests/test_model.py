import numpy as np
import pytest

from oracles import central_diff, max_rel_error, norm_rel_error
from sarslide.nn import (
    AdamState, Conv3x3, Dense, Dropout, Flatten, LayerSpec, MaxPool2x2, Model, ReLU, Softmax,
    adam_step, build_reference_model,
)


def shrunken_model(seed=0, dtype=np.float64):
    layers = [Conv3x3(2), ReLU, MaxPool2x2, Dropout(0.25), Flatten, Dense(4), ReLU, Dense(2), Softmax]
    return Model(layers, (8, 8, 1), seed).astype(dtype)


def network_gradcheck(model, x, y, dropout_seed=5, h=1e-3):
    """Analytic vs central-difference gradients for every parameter.

    The same dropout mask is drawn for every evaluation by reseeding."""
    _, grads = model.backward(x, y, rng=np.random.default_rng(dropout_seed))
    f = lambda: model.loss(x, y, training=True, rng=np.random.default_rng(dropout_seed))
    return [(g, central_diff(f, p, h)) for g, p in zip(grads, model.parameters())]


class TestReferenceModel:
    def test_shape_trace(self):
        m = build_reference_model(0)
        trace = [s for s, l in zip(m.shapes[1:], m.layers) if l.kind not in ("relu", "dropout", "softmax")]
        assert trace == [(32, 32, 16), (16, 16, 16), (16, 16, 32), (8, 8, 32), (8, 8, 64), (4, 4, 64),
                         (1024,), (128,), (2,)]

    @pytest.mark.parametrize("n", [1, 3])
    def test_output_shape_any_batch(self, n):
        m = build_reference_model(1)
        x = np.random.default_rng(0).random((n, 32, 32, 3), dtype=np.float32)
        p = m.forward(x)
        assert p.shape == (n, 2) and p.dtype == np.float32
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)

    def test_same_seed_same_parameters(self):
        a, b = build_reference_model(42), build_reference_model(42)
        assert all(x.tobytes() == y.tobytes() for x, y in zip(a.parameters(), b.parameters()))
        c = build_reference_model(43)
        assert a.parameters()[0].tobytes() != c.parameters()[0].tobytes()

    def test_he_uniform_bounds_and_zero_bias(self):
        m = build_reference_model(0)
        w, b = m.params[0]["w"], m.params[0]["b"]
        assert np.abs(w).max() <= np.sqrt(6.0 / 27) and not b.any()

    def test_ends_with_dense2_softmax(self):
        with pytest.raises(ValueError):
            Model([Flatten, Dense(3), Softmax], (4, 4, 1))
        with pytest.raises(ValueError):
            Model([Flatten, Dense(2)], (4, 4, 1))

    def test_layer_type_check(self):
        with pytest.raises(ValueError):
            Model([Conv3x3(2), MaxPool2x2, Dense(2), Softmax], (5, 5, 1))
        with pytest.raises(ValueError):
            LayerSpec("conv5x5", 3)

    def test_wrong_input_shape(self):
        with pytest.raises(ValueError):
            build_reference_model(0).forward(np.zeros((1, 25, 25, 3), np.float32))

    def test_infer_is_deterministic(self):
        m = build_reference_model(3)
        x = np.random.default_rng(1).random((4, 32, 32, 3), dtype=np.float32)
        assert m.forward(x).tobytes() == m.forward(x).tobytes()

    def test_batching_is_invisible(self):
        m = build_reference_model(3)
        x = np.random.default_rng(2).random((9, 32, 32, 3), dtype=np.float32)
        full = m.forward(x)
        for i in range(9):
            assert m.forward(x[i:i + 1]).tobytes() == full[i:i + 1].tobytes()


class TestNetworkGradients:
    def test_shrunken_network_float64(self):
        rng = np.random.default_rng(0)
        m = shrunken_model(seed=1)
        x = rng.standard_normal((2, 8, 8, 1))
        for analytic, numeric in network_gradcheck(m, x, np.array([0, 1])):
            assert max_rel_error(analytic, numeric) < 1e-3
            assert np.max(np.abs(analytic - numeric)) < 1e-4

    def test_shrunken_network_float32(self):
        rng = np.random.default_rng(0)
        m = shrunken_model(seed=1, dtype=np.float32)
        x = rng.standard_normal((2, 8, 8, 1)).astype(np.float32)
        for analytic, numeric in network_gradcheck(m, x, np.array([0, 1])):
            assert norm_rel_error(analytic, numeric) < 1e-2

    def test_training_step_reduces_loss(self):
        rng = np.random.default_rng(0)
        m = shrunken_model(seed=2, dtype=np.float32)
        x = rng.standard_normal((8, 8, 8, 1)).astype(np.float32)
        y = np.arange(8) % 2
        before = m.loss(x, y)
        state = AdamState(lr=1e-2)
        for i in range(20):
            _, g = m.backward(x, y, rng=np.random.default_rng(i))
            adam_step(m.parameters(), g, state)
        assert m.loss(x, y) < before


def test_perfect_onehot_loss_is_zero_within_clamp():
    from sarslide.nn import scc_loss
    probs = np.eye(2)[[0, 1, 1, 0]]
    loss, _ = scc_loss(probs, np.array([0, 1, 1, 0]))
    assert 0.0 <= loss <= 1e-7
