"""GLD block behavior against independent dense/nested-loop oracles."""

import numpy as np
import pytest

from gldnet.gld import (
    BlockVariant,
    GldBlockParams,
    GldOptions,
    gated_feature,
    gld_block_forward,
    global_dependency,
    local_attention,
    local_dependency,
)
from gldnet.layers import conv_block
from gldnet.tensor import Tensor, grad_check_params


# ---------------------------------------------------------------------------
# oracles (independent, intentionally naive)
# ---------------------------------------------------------------------------

def attention_oracle(queries, targets, scale):
    """Row attention map: out[j, i] = softmax_i <q_i, t_j>, via python loops."""
    c, d = queries.shape
    out = np.zeros((c, c))
    for j in range(c):
        logits = np.array([float(np.dot(queries[i], targets[j])) for i in range(c)])
        if scale:
            logits = logits / np.sqrt(d)
        e = np.exp(logits - logits.max())
        out[j] = e / e.sum()
    return out


def conv_loops(x, w, b, stride, padding):
    ci, t, f = x.shape
    co, _, kt, kf = w.shape
    st, sf = stride
    pt, pf = padding
    xp = np.pad(x, ((0, 0), (pt, pt), (pf, pf)))
    to = (t + 2 * pt - kt) // st + 1
    fo = (f + 2 * pf - kf) // sf + 1
    y = np.zeros((co, to, fo))
    for o in range(co):
        for i in range(ci):
            for tt in range(to):
                for ff in range(fo):
                    for a in range(kt):
                        for bb in range(kf):
                            y[o, tt, ff] += w[o, i, a, bb] * xp[i, tt * st + a, ff * sf + bb]
        y[o] += b[o]
    return y


def deconv_loops(x, w, b, stride, padding, output_padding=(0, 0)):
    ci, t, f = x.shape
    _, co, kt, kf = w.shape
    st, sf = stride
    pt, pf = padding
    to = (t - 1) * st - 2 * pt + kt + output_padding[0]
    fo = (f - 1) * sf - 2 * pf + kf + output_padding[1]
    acc = np.zeros((co, (t - 1) * st + kt + output_padding[0], (f - 1) * sf + kf + output_padding[1]))
    for i in range(ci):
        for o in range(co):
            for tt in range(t):
                for ff in range(f):
                    for a in range(kt):
                        for bb in range(kf):
                            acc[o, tt * st + a, ff * sf + bb] += w[i, o, a, bb] * x[i, tt, ff]
    y = acc[:, pt : pt + to, pf : pf + fo]
    return y + b[:, None, None]


def conv_block_oracle(x, blk):
    """conv -> train-mode batchnorm -> elu, all by formula (single item)."""
    if blk.transposed:
        y = deconv_loops(x, blk.weight.data, blk.bias.data, blk.stride, blk.padding,
                         blk.output_padding)
    else:
        y = conv_loops(x, blk.weight.data, blk.bias.data, blk.stride, blk.padding)
    mean = y.mean(axis=(1, 2), keepdims=True)
    var = y.var(axis=(1, 2), keepdims=True)
    yh = (y - mean) / np.sqrt(var + blk.bn.eps)
    yh = yh * blk.gamma.data[:, None, None] + blk.beta.data[:, None, None]
    return np.where(yh > 0, yh, np.expm1(yh))


def rand_input(seed, c=4, t=8, f=8):
    return Tensor(np.random.default_rng(seed).normal(size=(c, t, f)))


@pytest.fixture
def params():
    return GldBlockParams.create(np.random.default_rng(42), 4, 4)


class TestGlobalDependency:
    def test_zero_gain_zeroes_output(self, params):
        out, attn, _, _ = global_dependency(rand_input(0), params)
        assert np.array_equal(out.data, np.zeros_like(out.data))

    def test_identical_channels_uniform_rows(self):
        # zero conv weights collapse every channel of K and V to a constant,
        # so all descriptors coincide and each attention row is uniform
        p = GldBlockParams.create(np.random.default_rng(1), 4, 4)
        for blk in (p.to_keys, p.to_values):
            blk.weight.data[...] = 0.0
        out, attn, _, values = global_dependency(rand_input(2), p)
        assert np.allclose(attn.data, 0.25, atol=1e-12)
        assert np.array_equal(out.data, np.zeros_like(out.data))  # gain still 0

    @pytest.mark.parametrize("scale", [True, False])
    def test_matches_dense_oracle(self, scale):
        p = GldBlockParams.create(np.random.default_rng(3), 2, 2)
        p.global_gain.data[...] = 1.0
        opts = GldOptions(scale_logits=scale)
        x = rand_input(4, c=2, t=3, f=4)
        out, attn, keys, values = global_dependency(x, p, opts)
        k = keys.data.reshape(2, -1)
        v = values.data.reshape(2, -1)
        want_attn = attention_oracle(k, v, scale)
        assert np.allclose(attn.data, want_attn, atol=1e-12)
        assert np.allclose(out.data.reshape(2, -1), want_attn @ v, atol=1e-12)

    def test_row_sums(self, params):
        for seed in range(20):
            _, attn, _, _ = global_dependency(rand_input(seed), params)
            assert np.abs(attn.data.sum(axis=-1) - 1.0).max() <= 1e-6

    def test_collapsed_aggregation_returns_scaled_values(self):
        p = GldBlockParams.create(np.random.default_rng(5), 3, 3)
        p.global_gain.data[...] = 0.5
        out, _, _, values = global_dependency(rand_input(6, c=3), p,
                                              GldOptions(collapsed_aggregation=True))
        assert np.allclose(out.data, 0.5 * values.data, atol=1e-12)


class TestLocalAttention:
    def test_zero_mask_block_gives_half(self, params):
        params.att_mask.weight.data[...] = 0.0
        params.att_mask.bias.data[...] = 0.0
        x = rand_input(7)
        keys = conv_block(x, params.to_keys, training=True)
        local = conv_block(x, params.to_local, training=True)
        _, mask = local_attention(local, keys, params)
        assert np.allclose(mask.data, 0.5, atol=1e-12)

    def test_mask_strictly_inside_unit_interval(self, params):
        for seed in range(5):
            x = rand_input(seed)
            keys = conv_block(x, params.to_keys, training=True)
            local = conv_block(x, params.to_local, training=True)
            _, mask = local_attention(local, keys, params)
            assert ((mask.data > 0) & (mask.data < 1)).all()

    def test_matches_nested_loop_oracle(self):
        p = GldBlockParams.create(np.random.default_rng(8), 2, 2)
        x = np.random.default_rng(9).normal(size=(2, 3, 4))
        keys = conv_block(Tensor(x), p.to_keys, training=True)
        local = conv_block(Tensor(x), p.to_local, training=True)
        proj, mask = local_attention(local, keys, p)
        a = conv_block_oracle(local.data, p.att_local)
        bb = conv_block_oracle(keys.data, p.att_keys)
        want_proj = 1.0 / (1.0 + np.exp(-(a + bb)))
        want_mask = 1.0 / (1.0 + np.exp(-conv_block_oracle(want_proj, p.att_mask)))
        assert np.allclose(proj.data, want_proj, atol=1e-10)
        assert np.allclose(mask.data, want_mask, atol=1e-10)


class TestGatedFeature:
    def setup_method(self):
        rng = np.random.default_rng(10)
        self.local = Tensor(rng.normal(size=(3, 4, 4)))
        self.proj = Tensor(rng.uniform(0.1, 0.9, size=(3, 4, 4)))

    def test_mask_of_one(self):
        ones = Tensor(np.ones((3, 4, 4)))
        sp = gated_feature(self.local, self.proj, ones, BlockVariant.SPEECH)
        ib = gated_feature(self.local, self.proj, ones, BlockVariant.INTERFERENCE)
        assert np.array_equal(sp.data, self.proj.data)
        assert np.array_equal(ib.data, np.zeros_like(ib.data))

    def test_mask_of_zero(self):
        zeros = Tensor(np.zeros((3, 4, 4)))
        sp = gated_feature(self.local, self.proj, zeros, BlockVariant.SPEECH)
        ib = gated_feature(self.local, self.proj, zeros, BlockVariant.INTERFERENCE)
        assert np.array_equal(sp.data, np.zeros_like(sp.data))
        assert np.array_equal(ib.data, self.local.data)

    def test_complementarity(self):
        mask = Tensor(np.random.default_rng(11).uniform(size=(3, 4, 4)))
        sp = gated_feature(self.local, self.proj, mask, BlockVariant.SPEECH)
        ib = gated_feature(self.proj, self.proj, mask, BlockVariant.INTERFERENCE)
        assert np.allclose(sp.data + ib.data, self.proj.data, atol=1e-12)

    def test_symmetric_switch_masks_local_feature(self):
        mask = Tensor(np.random.default_rng(12).uniform(size=(3, 4, 4)))
        sp = gated_feature(self.local, self.proj, mask, BlockVariant.SPEECH,
                           GldOptions(gate_on_projection=False))
        assert np.allclose(sp.data, mask.data * self.local.data, atol=1e-12)


class TestLocalDependency:
    def test_zero_gain(self, params):
        rng = np.random.default_rng(13)
        out, _ = local_dependency(Tensor(rng.normal(size=(4, 8, 8))),
                                  Tensor(rng.normal(size=(4, 8, 8))), params)
        assert np.array_equal(out.data, np.zeros_like(out.data))

    def test_zero_global_feature_uniform_map(self, params):
        params.local_gain.data[...] = 1.0
        gated = Tensor(np.random.default_rng(14).normal(size=(4, 8, 8)))
        out, attn = local_dependency(gated, Tensor(np.zeros((4, 8, 8))), params)
        assert np.allclose(attn.data, 0.25, atol=1e-12)
        assert np.array_equal(out.data, np.zeros_like(out.data))

    def test_matches_dense_oracle(self):
        p = GldBlockParams.create(np.random.default_rng(15), 2, 2)
        p.local_gain.data[...] = 1.0
        rng = np.random.default_rng(16)
        gated = rng.normal(size=(2, 3, 4))
        glob = rng.normal(size=(2, 3, 4))
        out, attn = local_dependency(Tensor(gated), Tensor(glob), p)
        want_attn = attention_oracle(gated.reshape(2, -1), glob.reshape(2, -1), True)
        assert np.allclose(attn.data, want_attn, atol=1e-12)
        assert np.allclose(out.data.reshape(2, -1), want_attn @ glob.reshape(2, -1), atol=1e-12)

    def test_row_sums(self, params):
        rng = np.random.default_rng(17)
        for _ in range(20):
            _, attn = local_dependency(Tensor(rng.normal(size=(4, 8, 8))),
                                       Tensor(rng.normal(size=(4, 8, 8))), params)
            assert np.abs(attn.data.sum(axis=-1) - 1.0).max() <= 1e-6


class TestBlockForward:
    def test_fresh_params_reduce_to_out_block_path(self, params):
        x = rand_input(18)
        got = gld_block_forward(x, params, BlockVariant.SPEECH)
        want = conv_block(Tensor(np.zeros((4, 8, 8))), params.out_block, training=True)
        assert np.array_equal(got.data, want.data)

    def test_zero_init_degeneracy_pre_deconv(self, params):
        for seed in range(10):
            tr = gld_block_forward(rand_input(seed), params, BlockVariant.SPEECH, trace=True)
            assert np.array_equal(tr.aggregated.data, np.zeros((4, 8, 8)))

    def test_output_shape(self):
        p = GldBlockParams.create(np.random.default_rng(19), 4, 6)
        out = gld_block_forward(rand_input(20), p, BlockVariant.INTERFERENCE)
        assert out.shape == (6, 8, 8)

    def test_deterministic(self):
        a = GldBlockParams.create(np.random.default_rng(21), 4, 4)
        b = GldBlockParams.create(np.random.default_rng(21), 4, 4)
        x = rand_input(22)
        ya = gld_block_forward(x, a, BlockVariant.SPEECH)
        yb = gld_block_forward(x, b, BlockVariant.SPEECH)
        assert np.array_equal(ya.data, yb.data)

    @pytest.mark.parametrize("variant", list(BlockVariant))
    def test_gradients_flow_to_every_parameter(self, variant):
        rng = np.random.default_rng(23)
        p = GldBlockParams.create(rng, 3, 3)
        p.global_gain.data[...] = rng.normal() * 0.3
        p.local_gain.data[...] = rng.normal() * 0.3
        x = Tensor(rng.normal(size=(3, 4, 4)))
        out = gld_block_forward(x, p, variant)
        (out * out).sum().backward()
        for name, t in p.named_parameters():
            assert t.grad is not None, name

    def test_composed_gradcheck_small(self):
        rng = np.random.default_rng(24)
        p = GldBlockParams.create(rng, 2, 2)
        p.global_gain.data[...] = 0.4
        p.local_gain.data[...] = -0.3
        x = Tensor(rng.normal(size=(2, 3, 3)))

        def loss():
            y = gld_block_forward(x, p, BlockVariant.SPEECH)
            return (y * y).sum()

        reports = grad_check_params(loss, p.named_parameters(), h=1e-5, tol=1e-4)
        worst = max(reports.values(), key=lambda r: r.max_rel_error)
        assert all(r.passed for r in reports.values()), worst
