import math

import numpy as np
import pytest

from src.errors import DataError, SchemaMismatchError
from src.fault_injection import BiasType
from src.gru_net import (
    GATES,
    JUMP_CODE,
    NOISE_CODE,
    Adam,
    GruLayerWeights,
    GruModel,
    StreamingPredictor,
    TrainConfig,
    clip_gradients,
    forward,
    gru_cell,
    load_model,
    loss_and_grads,
    predict_stream,
    save_model,
    softmax,
    train,
    write_training_log,
)


def random_layer(rng, hidden, input_dim, scale=0.5):
    cols = hidden + input_dim
    return GruLayerWeights(
        W_r=rng.normal(0, scale, (hidden, cols)),
        W_z=rng.normal(0, scale, (hidden, cols)),
        W_h=rng.normal(0, scale, (hidden, cols)),
        b_r=rng.normal(0, scale, hidden),
        b_z=rng.normal(0, scale, hidden),
        b_h=rng.normal(0, scale, hidden),
    )


def tiny_model(seed=0, input_dim=3, window=4, hidden=(3, 2)):
    rng = np.random.default_rng(seed)
    model = GruModel.initialize(input_dim, window, hidden, rng=rng)
    for name, value in model.params.items():
        model.params[name] = rng.normal(0, 0.5, value.shape)
    return model


def biased_model(favored_class, window=3, input_dim=2):
    """A model whose head always favors one class"""
    model = GruModel.initialize(input_dim, window, (4, 3), rng=np.random.default_rng(1))
    model.params["head.W"][:] = 0.0
    model.params["head.b"][:] = [5.0, -5.0] if favored_class == 0 else [-5.0, 5.0]
    return model


def scalar_cell(x, h_prev, w):
    def sig(a):
        return 1.0 / (1.0 + math.exp(-a))

    hidden = len(h_prev)
    c = list(h_prev) + list(x)
    r = [sig(sum(w.W_r[i][j] * c[j] for j in range(len(c))) + w.b_r[i]) for i in range(hidden)]
    z = [sig(sum(w.W_z[i][j] * c[j] for j in range(len(c))) + w.b_z[i]) for i in range(hidden)]
    c_reset = [r[i] * h_prev[i] for i in range(hidden)] + list(x)
    h_tilde = [math.tanh(sum(w.W_h[i][j] * c_reset[j] for j in range(len(c))) + w.b_h[i]) for i in range(hidden)]
    return [z[i] * h_prev[i] + (1.0 - z[i]) * h_tilde[i] for i in range(hidden)]


def scalar_forward(model, window):
    sequence = [list(row) for row in window]
    for layer in model.layers():
        h = [0.0] * layer.hidden
        outputs = []
        for x in sequence:
            h = scalar_cell(x, h, layer)
            outputs.append(h)
        sequence = outputs
    top = sequence[-1]
    W, b = model.params["head.W"], model.params["head.b"]
    logits = [sum(W[k][j] * top[j] for j in range(len(top))) + b[k] for k in range(model.classes)]
    peak = max(logits)
    exps = [math.exp(v - peak) for v in logits]
    return [e / sum(exps) for e in exps]


class TestGruCell:
    def test_zero_fixed_point(self):
        w = GruLayerWeights(*(np.zeros((3, 5)),) * 3, *(np.zeros(3),) * 3)
        np.testing.assert_array_equal(gru_cell(np.ones(2), np.zeros(3), w), 0.0)

    def test_saturated_update_gate_retains_state(self, rng):
        w = random_layer(rng, 3, 2)
        w.b_z[:] = 50.0
        h_prev = np.array([0.3, -0.7, 0.1])
        np.testing.assert_allclose(gru_cell(rng.normal(size=2), h_prev, w), h_prev, atol=1e-12)

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            w = random_layer(rng, 3, 2)
            x, h_prev = rng.normal(size=2), np.tanh(rng.normal(size=3))
            np.testing.assert_allclose(gru_cell(x, h_prev, w), scalar_cell(x, h_prev, w), rtol=0, atol=1e-12)

    def test_dimension_mismatch(self, rng):
        with pytest.raises(ValueError):
            gru_cell(np.zeros(3), np.zeros(3), random_layer(rng, 3, 2))

    def test_hidden_state_bounded(self):
        rng = np.random.default_rng(4)
        w = random_layer(rng, 8, 5, scale=1.0)
        h = np.zeros((10_000, 8))
        for _ in range(5):
            h = gru_cell(rng.normal(size=(10_000, 5)), h, w)
            assert np.all(np.abs(h) < 1.0)


class TestForward:
    def test_zero_head_is_uniform(self, rng):
        model = tiny_model()
        model.params["head.W"][:] = 0.0
        model.params["head.b"][:] = 0.0
        np.testing.assert_array_equal(forward(model, rng.normal(size=(4, 3))), [0.5, 0.5])

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(5)
        model = tiny_model(seed=5)
        for _ in range(20):
            window = rng.normal(size=(4, 3))
            np.testing.assert_allclose(forward(model, window), scalar_forward(model, window), rtol=0, atol=1e-12)

    def test_batch_equals_single(self, rng):
        model = tiny_model()
        X = rng.normal(size=(6, 4, 3))
        batch = forward(model, X)
        for i in range(6):
            np.testing.assert_allclose(batch[i], forward(model, X[i]), rtol=0, atol=1e-15)

    def test_wrong_window(self, rng):
        with pytest.raises(ValueError):
            forward(tiny_model(), rng.normal(size=(5, 3)))

    def test_deterministic(self, rng):
        model = tiny_model()
        window = rng.normal(size=(4, 3))
        np.testing.assert_array_equal(forward(model, window), forward(model, window))


class TestSoftmax:
    def test_sums_to_one_and_positive(self):
        logits = np.random.default_rng(6).normal(0, 10, size=(10_000, 2))
        probs = softmax(logits)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(probs > 0)

    def test_shift_invariance(self):
        rng = np.random.default_rng(7)
        logits = rng.normal(0, 3, size=(10_000, 2))
        shifts = rng.uniform(-50, 50, size=(10_000, 1))
        np.testing.assert_allclose(softmax(logits + shifts), softmax(logits), rtol=0, atol=1e-12)


class TestLossAndGrads:
    def test_uniform_prediction_costs_ln2(self, rng):
        model = tiny_model()
        model.params["head.W"][:] = 0.0
        model.params["head.b"][:] = 0.0
        loss, _ = loss_and_grads(model, rng.normal(size=(8, 4, 3)), rng.integers(0, 2, 8))
        assert loss == pytest.approx(math.log(2), rel=1e-12)

    def test_confident_correct_prediction_costs_nothing(self, rng):
        model = tiny_model()
        model.params["head.W"][:] = 0.0
        model.params["head.b"][:] = [-40.0, 40.0]
        loss, _ = loss_and_grads(model, rng.normal(size=(4, 4, 3)), np.ones(4, dtype=int))
        assert loss < 1e-30

    def test_label_out_of_range(self, rng):
        with pytest.raises(ValueError):
            loss_and_grads(tiny_model(), rng.normal(size=(2, 4, 3)), np.array([0, 2]))

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(8)
        model = tiny_model(seed=8)
        X = rng.normal(size=(5, 4, 3))
        y = np.array([0, 1, 1, 0, 1])
        weights = np.array([1.0, 2.5])
        _, grads = loss_and_grads(model, X, y, weights)
        assert set(grads) == set(model.params)

        step = 1e-5
        for name, value in model.params.items():
            numeric = np.zeros_like(value)
            for index in np.ndindex(value.shape):
                original = value[index]
                value[index] = original + step
                plus, _ = loss_and_grads(model, X, y, weights)
                value[index] = original - step
                minus, _ = loss_and_grads(model, X, y, weights)
                value[index] = original
                numeric[index] = (plus - minus) / (2 * step)
            error = np.linalg.norm(grads[name] - numeric) / max(
                np.linalg.norm(grads[name]) + np.linalg.norm(numeric), 1e-12
            )
            assert error < 1e-4, name


def test_clip_gradients_scales_to_norm():
    grads = {"a": np.array([3.0, 0.0]), "b": np.array([[4.0]])}
    assert clip_gradients(grads, 1.0) == 5.0
    np.testing.assert_allclose(grads["a"], [0.6, 0.0])
    np.testing.assert_allclose(grads["b"], [[0.8]])


def test_adam_moves_against_gradient():
    params = {"w": np.array([1.0, -1.0])}
    Adam(learning_rate=0.1).step(params, {"w": np.array([2.0, -2.0])})
    np.testing.assert_allclose(params["w"], [0.9, -0.9], atol=1e-6)


def separable_set(rng, count=600):
    """Anomaly exactly when the last frame's distance feature exceeds 3"""
    X = rng.normal(0.0, 1.0, size=(count, 4, 3))
    y = rng.random(count) < 0.3
    X[:, -1, 1] = np.where(y, rng.uniform(3.5, 6.0, count), rng.uniform(0.0, 2.5, count))
    return X, y.astype(int)


class TestTrain:
    def test_learns_separable_stream(self, rng):
        X, y = separable_set(rng)
        config = TrainConfig(learning_rate=0.01, epochs=10, batch_size=16, hidden=(8, 4), seed=1, patience=10)
        model = train(X, y, config)
        accuracy = (forward(model, X).argmax(axis=1) == y).mean()
        assert accuracy >= 0.99
        assert model.metadata["epochs_run"] <= 10

    def test_same_seed_same_weights(self, rng):
        X, y = separable_set(rng, 100)
        config = TrainConfig(epochs=2, batch_size=16, hidden=(4, 3), seed=9)
        first, second = train(X, y, config), train(X, y, config)
        for name in first.params:
            np.testing.assert_array_equal(first.params[name], second.params[name])

    def test_single_class_rejected(self, rng):
        with pytest.raises(DataError):
            train(rng.normal(size=(10, 4, 3)), np.zeros(10, dtype=int), TrainConfig(epochs=1))

    def test_early_stop_keeps_best_epoch(self, rng, tmp_path):
        X, y = separable_set(rng, 200)
        X_val, y_val = separable_set(rng, 100)
        config = TrainConfig(learning_rate=0.05, epochs=30, batch_size=32, hidden=(4, 3), patience=2)
        model = train(X, y, config, X_val, y_val)
        history = model.metadata["history"]
        best = min(history, key=lambda r: r["val_loss"])
        assert model.metadata["best_epoch"] == best["epoch"]
        assert len(history) <= 30

        write_training_log(model, tmp_path / "log.csv")
        header = (tmp_path / "log.csv").read_text().splitlines()[0]
        assert header == "epoch,train_loss,val_loss,val_f1_anomaly,val_f1_normal"


class TestModelFile:
    def test_round_trip_is_exact(self, tmp_path):
        model = tiny_model()
        model.metadata = {"seed": 3, "history": [{"epoch": 1, "train_loss": 0.5}]}
        save_model(model, tmp_path / "model.npz")
        loaded = load_model(tmp_path / "model.npz")
        assert set(loaded.params) == set(model.params)
        for name in model.params:
            np.testing.assert_array_equal(loaded.params[name], model.params[name])
        assert loaded.window == model.window
        assert loaded.schema_hash == model.schema_hash
        assert loaded.metadata == model.metadata

    def test_rejects_foreign_archive(self, tmp_path):
        np.savez(tmp_path / "other.npz", weights=np.zeros(3))
        with pytest.raises(DataError):
            load_model(tmp_path / "other.npz")


class TestPredictStream:
    def test_quiet_detector_never_calls_classifier(self, rng):
        batch = predict_stream(biased_model(0), biased_model(1), rng.normal(size=(12, 2)))
        assert not batch.detect.any()
        assert batch.bias_calls == 0
        assert (batch.bias == 0).all()

    def test_every_full_window_is_classified(self, rng):
        batch = predict_stream(biased_model(1), biased_model(0), rng.normal(size=(12, 2)))
        assert batch.bias_calls == 12 - 3 + 1
        assert not batch.detect[:2].any()
        assert batch.detect[2:].all()
        assert (batch.bias[2:] == NOISE_CODE).all()

    def test_matches_composed_oracle(self, rng):
        detector = GruModel.initialize(2, 3, (4, 3), rng=np.random.default_rng(2))
        detector.params["head.b"][:] = [0.0, 0.1]
        classifier = GruModel.initialize(2, 3, (4, 3), rng=np.random.default_rng(3))
        frames = rng.normal(size=(30, 2))
        batch = predict_stream(detector, classifier, frames)
        for step in range(2, 30):
            window = frames[step - 2:step + 1]
            flagged = forward(detector, window).argmax() == 1
            assert batch.detect[step] == flagged
            if flagged:
                expected = NOISE_CODE if forward(classifier, window).argmax() == 0 else JUMP_CODE
                assert batch.bias[step] == expected
            else:
                assert batch.bias[step] == 0

    def test_schema_mismatch(self, rng):
        with pytest.raises(SchemaMismatchError):
            predict_stream(biased_model(1, window=3), biased_model(0, window=4), rng.normal(size=(8, 2)))

    def test_streaming_predictor_agrees(self, rng):
        detector = GruModel.initialize(2, 3, (4, 3), rng=np.random.default_rng(2))
        detector.params["head.b"][:] = [0.0, 0.1]
        classifier = GruModel.initialize(2, 3, (4, 3), rng=np.random.default_rng(3))
        frames = rng.normal(size=(25, 2))
        batch = predict_stream(detector, classifier, frames)
        predictor = StreamingPredictor(detector, classifier)
        for step, frame in enumerate(frames):
            out = predictor.push(frame)
            assert out.detect == batch.detect[step]
            expected = BiasType.NONE if not out.detect else (
                BiasType.NOISE if batch.bias[step] == NOISE_CODE else BiasType.JUMP
            )
            assert out.bias_type is expected

    @pytest.mark.parametrize("window,hidden", [(1, (3,)), (4, (5, 3)), (10, (32, 16))])
    def test_streaming_probabilities_match_forward(self, rng, window, hidden):
        detector = tiny_model(seed=window, input_dim=6, window=window, hidden=hidden)
        frames = rng.normal(size=(window + 40, 6))
        predictor = StreamingPredictor(detector)

        for step, frame in enumerate(frames):
            out = predictor.push(frame)
            if step < window - 1:
                assert out.probs == (1.0, 0.0)
                continue
            expected = forward(detector, frames[step - window + 1:step + 1])
            np.testing.assert_allclose(out.probs, expected, rtol=0, atol=1e-12)
            assert out.detect == (expected.argmax() == 1)

    def test_streaming_reset_forgets_history(self, rng):
        detector = GruModel.initialize(2, 3, (4,), rng=np.random.default_rng(7))
        frames = rng.normal(size=(9, 2))
        predictor = StreamingPredictor(detector)
        first = [predictor.push(frame).probs for frame in frames]
        predictor.reset()
        second = [predictor.push(frame).probs for frame in frames]
        assert first == second

    def test_streaming_rejects_wrong_frame_width(self, rng):
        predictor = StreamingPredictor(biased_model(1))
        with pytest.raises(ValueError):
            predictor.push(np.zeros(3))


def test_gate_names_cover_layer():
    assert set(GATES) == {"W_r", "W_z", "W_h", "b_r", "b_z", "b_h"}
