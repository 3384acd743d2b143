"""Value contracts for batchnorm, LSTM recurrence, and the Adam update."""

import numpy as np
import pytest

from gldnet.layers import BatchNormState, LstmLayerParams, lstm_forward
from gldnet.optim import AdamState, adam_step, clip_grad_norm
from gldnet.tensor import NumericError, Tensor, batchnorm2d


class TestBatchNorm:
    def test_train_mode_normalizes(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.normal(size=(8, 3, 6, 6)) * 2.0 + 1.5)
        gamma = Tensor(np.ones(3))
        beta = Tensor(np.zeros(3))
        out = batchnorm2d(x, gamma, beta, BatchNormState.create(3, np.float64), training=True)
        per_ch = out.data.transpose(1, 0, 2, 3).reshape(3, -1)
        assert np.abs(per_ch.mean(axis=1)).max() <= 1e-6
        assert np.abs(per_ch.var(axis=1) - 1.0).max() <= 1e-5

    def test_eval_identity_with_unit_stats(self):
        rng = np.random.default_rng(1)
        x = Tensor(rng.normal(size=(2, 3, 4, 4)))
        state = BatchNormState.create(3, np.float64)
        out = batchnorm2d(x, Tensor(np.ones(3)), Tensor(np.zeros(3)), state, training=False)
        assert np.allclose(out.data, x.data, rtol=1e-4, atol=1e-6)

    def test_constant_channel_maps_to_beta(self):
        x = Tensor(np.full((4, 2, 3, 3), 7.0))
        beta = Tensor(np.array([0.5, -1.0]))
        out = batchnorm2d(x, Tensor(np.ones(2)), beta, BatchNormState.create(2, np.float64),
                          training=True)
        assert np.allclose(out.data[:, 0], 0.5, atol=1e-9)
        assert np.allclose(out.data[:, 1], -1.0, atol=1e-9)

    def test_running_stats_update_and_eval_use(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(16, 2, 8, 8)) * 3.0 + 2.0
        state = BatchNormState.create(2, np.float64)
        batchnorm2d(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), state, training=True)
        # momentum 0.9: one step moves 10% toward the batch statistics
        batch_mean = x.mean(axis=(0, 2, 3))
        assert np.allclose(state.running_mean, 0.1 * batch_mean, atol=1e-12)


class TestLstm:
    def test_zero_weights_zero_output(self):
        layer = LstmLayerParams.create(np.random.default_rng(0), 3, 4)
        for _, p in layer.named_parameters():
            p.data[...] = 0.0
        x = Tensor(np.random.default_rng(1).normal(size=(6, 3)))
        out = lstm_forward(x, [layer])
        assert np.array_equal(out.data, np.zeros((6, 4)))

    def test_single_step_hand_evaluation(self):
        # force input gate to 1 and check h1 = sigmoid(o_pre) * tanh(candidate)
        rng = np.random.default_rng(2)
        layer = LstmLayerParams.create(rng, 2, 3)
        H = 3
        layer.bias.data[...] = 0.0
        layer.bias.data[0 * H : 1 * H] = 500.0  # input gate -> exactly 1 in float64
        x = np.array([[0.3, -0.7]])
        out = lstm_forward(Tensor(x), [layer])
        pre = x @ layer.w_x.data + layer.bias.data  # h0 = 0, so no recurrent term
        cand = np.tanh(pre[0, 2 * H : 3 * H])
        o = 1.0 / (1.0 + np.exp(-pre[0, 3 * H : 4 * H]))
        assert np.allclose(out.data[0], o * np.tanh(cand), atol=1e-12)

    def test_output_shape_and_stacking(self):
        rng = np.random.default_rng(3)
        layers = [LstmLayerParams.create(rng, 5, 7), LstmLayerParams.create(rng, 7, 7)]
        out = lstm_forward(Tensor(rng.normal(size=(9, 5))), layers)
        assert out.shape == (9, 7)

    def test_batched_matches_loop(self):
        rng = np.random.default_rng(4)
        layer = LstmLayerParams.create(rng, 3, 4)
        xs = rng.normal(size=(2, 5, 3))
        batched = lstm_forward(Tensor(xs), [layer])
        for i in range(2):
            single = lstm_forward(Tensor(xs[i]), [layer])
            assert np.allclose(batched.data[i], single.data, atol=1e-12)


class TestAdam:
    def make_param(self, val):
        p = Tensor(np.array(val), requires_grad=True)
        return p

    def test_zero_gradient_keeps_params(self):
        p = self.make_param([1.0, -2.0])
        p.grad = np.zeros(2)
        state = AdamState(lr=1e-3)
        adam_step([("p", p)], state)
        assert np.array_equal(p.data, [1.0, -2.0])
        assert state.step == 1

    def test_first_step_magnitude_is_lr_sign(self):
        p = self.make_param([0.5, -0.5, 2.0])
        g = np.array([0.3, -0.7, 1e-3])
        p.grad = g.copy()
        state = AdamState(lr=2e-4)
        adam_step([("p", p)], state)
        # bias correction at t=1 makes m_hat/sqrt(v_hat) ~= sign(g)
        delta = p.data - np.array([0.5, -0.5, 2.0])
        assert np.allclose(delta, -state.lr * np.sign(g), rtol=1e-3)

    def test_constant_gradient_monotone(self):
        p = self.make_param([1.0])
        state = AdamState(lr=1e-2)
        vals = [p.data.copy()]
        for _ in range(20):
            p.grad = np.array([0.25])
            adam_step([("p", p)], state)
            vals.append(p.data.copy())
        diffs = np.diff(np.concatenate(vals))
        assert (diffs < 0).all()
        assert state.step == 20

    def test_nan_gradient_names_parameter(self):
        p = self.make_param([1.0])
        p.grad = np.array([np.nan])
        with pytest.raises(NumericError, match="enc.alpha"):
            adam_step([("enc.alpha", p)], AdamState())

    def test_clip_grad_norm(self):
        p = self.make_param([3.0, 4.0])
        p.grad = np.array([3.0, 4.0])
        norm = clip_grad_norm([("p", p)], max_norm=1.0)
        assert norm == pytest.approx(5.0)
        assert np.allclose(np.linalg.norm(p.grad), 1.0)
