import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spoofguard import ae


def sig(x):
    return 1.0 / (1.0 + math.exp(-x))


def zero_model(dims):
    return ae.AeModel(dims, [np.zeros(s) for s in dims.shapes])


def central_differences(m, batch, cfg, h=1e-5):
    theta = m.to_vector()
    out = np.empty_like(theta)
    for k in range(len(theta)):
        e = np.zeros_like(theta)
        e[k] = h
        up = ae.loss(m.with_vector(theta + e), batch, cfg).total
        down = ae.loss(m.with_vector(theta - e), batch, cfg).total
        out[k] = (up - down) / (2 * h)
    return out


def relative_error(a, b, floor=1e-6):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


class TestInit:
    def test_deterministic(self):
        dims = ae.AeDims(64, 4, 4, 4)
        a, b = ae.init_model(dims, 5), ae.init_model(dims, 5)
        assert a.to_vector().tobytes() == b.to_vector().tobytes()

    def test_seed_matters(self):
        dims = ae.AeDims(64, 4, 4, 4)
        assert not np.array_equal(ae.init_model(dims, 1).to_vector(), ae.init_model(dims, 2).to_vector())

    def test_shapes_and_ranges(self):
        dims = ae.AeDims(64, 4, 4, 4)
        m = ae.init_model(dims, 0)
        assert m.enc_weights.shape == (4, 64)
        assert m.out_weights.shape == (64, 4)
        assert [w.shape for w, _, _ in m.dec_hidden] == [(4, 4), (4, 4)]
        assert np.all(np.abs(m.enc_weights) <= math.sqrt(6 / 68))
        for b in (m.enc_bias, m.out_bias):
            assert not b.any()

    def test_zero_layer(self):
        with pytest.raises(ValueError):
            ae.AeDims(16, 0, 4, 4)


class TestEncodeDecode:
    def test_zero_weights_give_half(self):
        m = zero_model(ae.AeDims(8, 3, 2, 2))
        np.testing.assert_array_equal(ae.encode(m, np.random.default_rng(0).uniform(size=8)), 0.5)

    def test_large_bias(self):
        m = zero_model(ae.AeDims(8, 3, 2, 2))
        m.params[1][1] = 10.0
        z = ae.encode(m, np.ones(8))
        assert z[1] == pytest.approx(sig(10.0), rel=1e-15)
        assert z[1] == pytest.approx(0.99995, abs=1e-5)

    def test_zero_input_isolates_bias(self):
        m = ae.init_model(ae.AeDims(8, 3, 2, 2), 1)
        m.params[1][:] = [-1.0, 0.0, 2.0]
        np.testing.assert_allclose(ae.encode(m, np.zeros(8)), [sig(-1), 0.5, sig(2)], rtol=1e-15)

    def test_decode_output_bias(self):
        m = zero_model(ae.AeDims(5, 2, 3, 3))
        m.params[7][:] = 0.3
        np.testing.assert_array_equal(ae.decode(m, np.array([0.1, 0.9])), 0.3)

    def test_decode_zero_out_weights(self):
        m = ae.init_model(ae.AeDims(5, 2, 3, 3), 4)
        m.params[6][:] = 0.0
        m.params[7][:] = np.arange(5.0)
        np.testing.assert_array_equal(ae.decode(m, np.array([0.7, 0.2])), np.arange(5.0))

    def test_tiny_chain(self):
        dims = ae.AeDims(1, 1, 1, 1)
        m = ae.AeModel(dims, [np.ones(s) if len(s) == 2 else np.zeros(s) for s in dims.shapes])
        assert ae.decode(m, np.array([0.5]))[0] == pytest.approx(sig(sig(0.5)), rel=1e-15)

    def test_dimension_mismatch(self):
        m = ae.init_model(ae.AeDims(8, 3, 2, 2), 0)
        with pytest.raises(ValueError):
            ae.encode(m, np.zeros(7))
        with pytest.raises(ValueError):
            ae.decode(m, np.zeros(4))

    @settings(deadline=None)
    @given(st.integers(0, 1000))
    def test_encoder_in_open_unit_interval(self, seed):
        rng = np.random.default_rng(seed)
        m = ae.init_model(ae.AeDims(16, 4, 3, 3), seed)
        z = ae.encode(m, rng.uniform(0, 1, (10, 16)))
        assert np.all((z > 0) & (z < 1))

    def test_batch_matches_single(self):
        rng = np.random.default_rng(0)
        m = ae.init_model(ae.AeDims(16, 4, 3, 3), 0)
        x = rng.uniform(size=(3, 16))
        np.testing.assert_allclose(ae.reconstruct(m, x)[1], ae.reconstruct(m, x[1]))


class TestLoss:
    def setup_method(self):
        self.cfg0 = ae.TrainConfig(sparsity_weight=0.0, l2_weight=0.0)

    def _offset_model(self, d, offset, x):
        m = zero_model(ae.AeDims(d, 2, 2, 2))
        m.params[7][:] = x + offset
        return m

    def test_perfect_reconstruction(self):
        x = np.linspace(0, 1, 6)
        m = self._offset_model(6, 0.0, x)
        parts = ae.loss(m, np.vstack([x, x]), self.cfg0)
        assert parts.total == 0.0 and parts.mse == 0.0

    def test_constant_offset(self):
        x = np.linspace(0, 0.5, 6)
        m = self._offset_model(6, 0.1, x)
        assert ae.loss(m, x[None, :], self.cfg0).mse == pytest.approx(0.01, rel=1e-12)
        assert ae.reconstruction_mse(m, x) == pytest.approx(0.01, rel=1e-12)

    def test_half_offset(self):
        x = np.zeros(4)
        m = self._offset_model(4, 0.5, x)
        assert ae.reconstruction_mse(m, x) == pytest.approx(0.25, rel=1e-15)

    def test_kl_zero_at_target(self):
        # encoder output is sigmoid(b1); pick b1 so every unit sits exactly at rho
        cfg = ae.TrainConfig(sparsity_target=0.25)
        m = zero_model(ae.AeDims(4, 3, 2, 2))
        m.params[1][:] = math.log(0.25 / 0.75)
        assert ae.loss(m, np.zeros((2, 4)), cfg).sparsity_penalty == pytest.approx(0.0, abs=1e-15)

    def test_l2_excludes_biases(self):
        m = zero_model(ae.AeDims(3, 2, 2, 2))
        m.params[0][0, 0] = 2.0
        m.params[1][:] = 100.0
        assert ae.loss(m, np.zeros((1, 3)), ae.TrainConfig()).l2_penalty == pytest.approx(2.0)

    def test_recomposition(self):
        rng = np.random.default_rng(2)
        cfg = ae.TrainConfig(sparsity_weight=0.7, l2_weight=0.03, sparsity_target=0.2)
        m = ae.init_model(ae.AeDims(20, 4, 5, 3), 2)
        p = ae.loss(m, rng.uniform(size=(6, 20)), cfg)
        assert p.total == pytest.approx(p.mse + 0.7 * p.sparsity_penalty + 0.03 * p.l2_penalty, abs=1e-12)
        assert min(p.mse, p.sparsity_penalty, p.l2_penalty) >= 0

    def test_singleton_batch_consistency(self):
        rng = np.random.default_rng(3)
        m = ae.init_model(ae.AeDims(12, 4, 3, 3), 3)
        x = rng.uniform(size=12)
        assert ae.loss(m, x[None, :], self.cfg0).mse == pytest.approx(ae.reconstruction_mse(m, x), rel=1e-14)

    def test_empty_batch(self):
        m = ae.init_model(ae.AeDims(4, 2, 2, 2), 0)
        with pytest.raises(ValueError):
            ae.loss(m, np.empty((0, 4)), self.cfg0)


class TestGradient:
    @pytest.mark.parametrize("act", ["sigmoid", "tanh", "linear"])
    def test_finite_differences(self, act):
        rng = np.random.default_rng(11)
        dims = ae.AeDims(16, 4, 3, 5, act, act)
        m = ae.init_model(dims, 11)
        m = m.with_vector(m.to_vector() + rng.normal(0, 0.3, dims.n_params))
        batch = rng.uniform(size=(4, 16))
        cfg = ae.TrainConfig(sparsity_target=0.1)
        rel = relative_error(ae.gradient(m, batch, cfg), central_differences(m, batch, cfg))
        assert rel.max() <= 1e-5

    def test_stationary_mse_block(self):
        dims = ae.AeDims(6, 2, 2, 2)
        m = zero_model(dims)
        m.params[7][:] = 0.4
        cfg = ae.TrainConfig(sparsity_weight=0.0, l2_weight=0.0)
        g = ae.gradient(m, np.full((3, 6), 0.4), cfg)
        np.testing.assert_array_equal(g, 0.0)

    def test_l2_block_scales_linearly(self):
        dims = ae.AeDims(6, 2, 2, 2)
        m = ae.init_model(dims, 0)
        x = np.random.default_rng(0).uniform(size=(3, 6))
        base = ae.gradient(m, x, ae.TrainConfig(l2_weight=0.0))
        g1 = ae.gradient(m, x, ae.TrainConfig(l2_weight=0.01)) - base
        g2 = ae.gradient(m, x, ae.TrainConfig(l2_weight=0.02)) - base
        np.testing.assert_allclose(g2, 2 * g1, rtol=1e-9, atol=1e-15)
        np.testing.assert_allclose(g1, 0.01 * np.concatenate(
            [(p if p.ndim == 2 else 0 * p).reshape(-1) for p in m.params]), rtol=1e-9, atol=1e-15)


class TestTrain:
    def test_single_image_reconstruction_improves(self):
        rng = np.random.default_rng(0)
        x = np.tile(rng.uniform(size=36), (50, 1))
        res = ae.fit(x, ae.TrainConfig(epochs=60, latent=4, hidden=(4, 4)))
        assert res.loss.mse < 0.1 * res.initial_loss.mse

    def test_zero_epochs_returns_init(self):
        x = np.random.default_rng(0).uniform(size=(3, 9))
        cfg = ae.TrainConfig(epochs=0, latent=2, hidden=(2, 2), seed=4)
        m = ae.train(x, cfg)
        assert np.array_equal(m.to_vector(), ae.init_model(cfg.dims_for(9), 4).to_vector())

    def test_deterministic(self):
        x = np.random.default_rng(1).uniform(size=(10, 25))
        cfg = ae.TrainConfig(epochs=20, latent=4, hidden=(4, 4), seed=9)
        a, b = ae.fit(x, cfg), ae.fit(x, cfg)
        assert a.loss.total == b.loss.total
        assert a.model.to_vector().tobytes() == b.model.to_vector().tobytes()

    def test_best_history_non_increasing(self):
        x = np.random.default_rng(2).uniform(size=(12, 25))
        res = ae.fit(x, ae.TrainConfig(epochs=30, latent=4, hidden=(4, 4)))
        assert all(b <= a for a, b in zip(res.best_history, res.best_history[1:]))
        assert res.loss.total == pytest.approx(res.best_history[-1], rel=1e-12)

    def test_needs_two_images(self):
        with pytest.raises(ValueError):
            ae.fit(np.zeros((1, 4)), ae.TrainConfig())

    def test_non_finite_start_aborts(self):
        x = np.full((3, 4), np.nan)
        with pytest.raises(ae.TrainingError, match="iteration 0"):
            ae.fit(x, ae.TrainConfig(epochs=5, latent=2, hidden=(2, 2)))


class TestPersistence:
    def test_roundtrip_bit_identical(self):
        m = ae.init_model(ae.AeDims(30, 4, 3, 2, "tanh", "sigmoid"), 3, ae.TrainConfig(latent=4, hidden=(3, 2), seed=3))
        back = ae.load_model(ae.save_model(m))
        assert back.dims == m.dims
        assert back.config == m.config
        assert back.to_vector().tobytes() == m.to_vector().tobytes()

    def test_header(self):
        data = ae.save_model(ae.init_model(ae.AeDims(4, 2, 2, 2), 0))
        assert data[:4] == b"AEMD"
        assert int.from_bytes(data[4:8], "little") == ae.FORMAT_VERSION

    @pytest.mark.parametrize("pos", [0, 5, 12, -1, -20])
    def test_corruption_detected(self, pos):
        data = bytearray(ae.save_model(ae.init_model(ae.AeDims(4, 2, 2, 2), 0)))
        data[pos] ^= 0xFF
        with pytest.raises(ae.ModelFormatError):
            ae.load_model(bytes(data))

    def test_truncated(self):
        data = ae.save_model(ae.init_model(ae.AeDims(4, 2, 2, 2), 0))
        for cut in (0, 3, 20, len(data) - 1):
            with pytest.raises(ae.ModelFormatError):
                ae.load_model(data[:cut])

    def test_default_model_size(self):
        m = ae.init_model(ae.AeDims(224 * 224), 0)
        size = len(ae.save_model(m))
        assert 5e6 < size < 5e7  # megabytes, same order as the reported 13 MB
