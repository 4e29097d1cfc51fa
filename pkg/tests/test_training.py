"""Training loop: Adam arithmetic, staging, early stopping, restore."""

import numpy as np
import pytest
from scipy.special import expit

from lamopt import nn, training


def smooth_family(seed, n_samples, n_cells):
    """Densities that vary smoothly with the two load parameters."""
    rng = np.random.default_rng(seed)
    eta = np.column_stack(
        [rng.uniform(0, 2.3, n_samples), rng.uniform(0, 59, n_samples)]
    )
    centres = rng.uniform(0, 1, (n_cells, 2))
    unit = np.column_stack([eta[:, 0] / 2.3, eta[:, 1] / 59.0])
    theta = expit(6.0 * (unit @ centres.T - 0.5))
    return eta, theta


class TestAdam:
    def test_matches_reference_updates(self):
        # two hand-stepped moment updates on a single weight matrix
        layer = nn.DenseLayer(np.array([[1.0, -2.0]]), np.array([0.5, 0.0]), "identity")
        adam = training.Adam(learning_rate=0.1)
        g1 = (np.array([[0.3, -0.1]]), np.array([0.2, 0.0]))
        g2 = (np.array([[-0.2, 0.4]]), np.array([0.1, -0.3]))

        w = np.array([[1.0, -2.0]])
        b = np.array([0.5, 0.0])
        m_w = np.zeros_like(w)
        v_w = np.zeros_like(w)
        m_b = np.zeros_like(b)
        v_b = np.zeros_like(b)
        for t, (gw, gb) in enumerate([g1, g2], start=1):
            m_w = 0.9 * m_w + 0.1 * gw
            v_w = 0.999 * v_w + 0.001 * gw**2
            m_b = 0.9 * m_b + 0.1 * gb
            v_b = 0.999 * v_b + 0.001 * gb**2
            w = w - 0.1 * (m_w / (1 - 0.9**t)) / (
                np.sqrt(v_w / (1 - 0.999**t)) + 1e-8
            )
            b = b - 0.1 * (m_b / (1 - 0.9**t)) / (
                np.sqrt(v_b / (1 - 0.999**t)) + 1e-8
            )

        for gw, gb in (g1, g2):
            adam.update([layer], {id(layer): [gw, gb]})
        np.testing.assert_allclose(layer.weights, w, rtol=1e-14)
        np.testing.assert_allclose(layer.biases, b, rtol=1e-14)

    def test_zero_gradient_keeps_parameters(self):
        layer = nn.DenseLayer(np.array([[2.0]]), np.array([1.0]), "identity")
        adam = training.Adam(learning_rate=0.5)
        adam.update([layer], {id(layer): [np.zeros((1, 1)), np.zeros(1)]})
        np.testing.assert_array_equal(layer.weights, [[2.0]])
        np.testing.assert_array_equal(layer.biases, [1.0])


class TestTrainModel:
    def test_memorises_smooth_targets(self):
        eta, theta = smooth_family(42, 12, 24)
        model = nn.build_model("ffd", 24, seed=7)
        config = training.TrainConfig(
            epochs=4000, seed=7, early_stop_patience=4000
        )
        records = training.train_model(model, eta, theta, [10, 11], config)
        pred = nn.predict_theta(model, eta[:10])
        l_eta = np.mean(np.sum((pred - theta[:10]) ** 2, axis=1) / 24)
        assert l_eta < 1e-3
        assert records[-1].train_loss < records[0].train_loss

    def test_deterministic_given_seed(self):
        eta, theta = smooth_family(1, 10, 12)
        runs = []
        for _ in range(2):
            model = nn.build_model("effd", 12, seed=3)
            config = training.TrainConfig(epochs=40, seed=3, early_stop_patience=40)
            records = training.train_model(model, eta, theta, [8, 9], config)
            runs.append((model, records))
        a, b = runs
        assert [r.val_loss for r in a[1]] == [r.val_loss for r in b[1]]
        for name, layers in a[0].blocks().items():
            for la, lb in zip(layers, b[0].blocks()[name]):
                np.testing.assert_array_equal(la.weights, lb.weights)

    def test_stage_two_freezes_reconstruction_pair(self):
        eta, theta = smooth_family(2, 10, 12)
        model = nn.build_model("saeffd", 12, seed=4)
        config = training.TrainConfig(epochs=30, seed=4, early_stop_patience=30)
        records = []
        training._run_stage(
            model, 1, (None, theta[:8], None, theta[8:], None, None), config, records
        )
        frozen = [
            layer.weights.copy()
            for name in ("encoder", "decoder")
            for layer in model.blocks()[name]
        ]
        ff_before = [layer.weights.copy() for layer in model.ff]
        training._run_stage(
            model, 2, (eta[:8], theta[:8], eta[8:], theta[8:], None, None),
            config, records,
        )
        after = [
            layer.weights
            for name in ("encoder", "decoder")
            for layer in model.blocks()[name]
        ]
        for w_before, w_after in zip(frozen, after):
            np.testing.assert_array_equal(w_before, w_after)
        assert any(
            not np.array_equal(w, layer.weights)
            for w, layer in zip(ff_before, model.ff)
        )

    def test_staged_history_labels_stages(self):
        eta, theta = smooth_family(3, 10, 12)
        model = nn.build_model("saeff", 12, seed=5)
        config = training.TrainConfig(epochs=5, seed=5, early_stop_patience=5)
        records = training.train_model(model, eta, theta, [8, 9], config)
        stages = sorted({r.stage for r in records})
        assert stages == [1, 2]
        assert sum(r.stage == 1 for r in records) == 5
        assert sum(r.stage == 2 for r in records) == 5

    def test_early_stopping_halts(self):
        eta, theta = smooth_family(4, 10, 12)
        model = nn.build_model("ae", 12, seed=6)
        # a vanishing step cannot improve, so patience bounds the epochs
        config = training.TrainConfig(
            epochs=500,
            learning_rate=1e-15,
            early_stop_tol=0.5,
            early_stop_patience=3,
            seed=6,
        )
        records = training.train_model(model, eta, theta, [8, 9], config)
        assert len(records) == 4

    def test_restores_best_validation_parameters(self):
        eta, theta = smooth_family(5, 12, 16)
        model = nn.build_model("ffd", 16, seed=8)
        config = training.TrainConfig(
            epochs=60, seed=8, early_stop_tol=0.0, early_stop_patience=60
        )
        records = training.train_model(model, eta, theta, [10, 11], config)
        final_val = training._evaluate(
            model, eta[10:], theta[10:], config.settings, None, None
        )
        assert final_val == pytest.approx(min(r.val_loss for r in records), abs=1e-15)

    def test_divergence_raises(self):
        eta, theta = smooth_family(6, 10, 12)
        model = nn.build_model("ffd", 12, seed=9)
        model.ff[0].weights[0, 0] = np.nan
        config = training.TrainConfig(epochs=3, seed=9)
        with pytest.raises(training.TrainingDivergedError):
            training.train_model(model, eta, theta, [8, 9], config)

    def test_validation_split_validated(self):
        eta, theta = smooth_family(7, 10, 12)
        model = nn.build_model("ae", 12, seed=10)
        with pytest.raises(ValueError):
            training.train_model(model, eta, theta, [])
        with pytest.raises(ValueError):
            training.train_model(model, eta, theta, list(range(10)))
        with pytest.raises(ValueError):
            training.train_model(model, eta[:5], theta, [1])

    def test_config_validated(self):
        with pytest.raises(ValueError):
            training.TrainConfig(epochs=0)
        with pytest.raises(ValueError):
            training.TrainConfig(learning_rate=0.0)
        with pytest.raises(ValueError):
            training.TrainConfig(early_stop_patience=0)

    def test_sparsity_grows_with_l1_weight(self):
        # same seed, same data: a heavier sparsity term never yields
        # fewer near-zero parameters
        eta, theta = smooth_family(9, 12, 16)
        counts = []
        for omega_r in (1e-4, 1e-1):
            model = nn.build_model("ffd", 16, seed=12)
            config = training.TrainConfig(
                epochs=800,
                seed=12,
                early_stop_patience=800,
                settings=nn.LossSettings(omega_r=omega_r),
            )
            training.train_model(model, eta, theta, [10, 11], config)
            small = sum(
                int(np.sum(np.abs(layer.weights) < 1e-4))
                + int(np.sum(np.abs(layer.biases) < 1e-4))
                for layers in model.blocks().values()
                for layer in layers
            )
            counts.append(small)
        assert counts[1] >= counts[0]

    def test_batches_cover_remainder(self):
        # seven training rows with batch size three: 3 + 3 + 1
        eta, theta = smooth_family(8, 9, 12)
        model = nn.build_model("ae", 12, seed=11)
        config = training.TrainConfig(
            epochs=30, batch_size=3, seed=11, early_stop_patience=30
        )
        records = training.train_model(model, eta, theta, [7, 8], config)
        assert len(records) == 30
        assert all(np.isfinite(r.train_loss) for r in records)
