"""Convolution and transposed convolution against brute-force oracles."""

import numpy as np
import pytest

from gldnet.tensor import DimensionError, Tensor, conv2d, deconv2d


def conv2d_loops(x, w, b, stride, padding):
    """Nested-loop cross-correlation oracle; intentionally naive."""
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


class TestConv2dForward:
    def test_1x1_identity(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.normal(size=(1, 4, 5)))
        w = Tensor(np.ones((1, 1, 1, 1)))
        b = Tensor(np.zeros(1))
        out = conv2d(x, w, b, stride=(1, 1), padding=(0, 0))
        assert np.array_equal(out.data, x.data)

    def test_all_ones_counts(self):
        x = Tensor(np.ones((1, 3, 3)))
        w = Tensor(np.ones((1, 1, 3, 3)))
        b = Tensor(np.zeros(1))
        out = conv2d(x, w, b, padding=(0, 0))
        assert out.shape == (1, 1, 1)
        assert out.data[0, 0, 0] == 9.0

    @pytest.mark.parametrize("stride,padding", [((1, 2), (1, 1)), ((1, 1), (0, 0)), ((2, 2), (1, 1))])
    def test_matches_loop_oracle(self, stride, padding):
        rng = np.random.default_rng(11)
        x = rng.normal(size=(1, 4, 4))
        w = rng.normal(size=(2, 1, 3, 3))
        b = rng.normal(size=2)
        got = conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, padding=padding)
        want = conv2d_loops(x, w, b, stride, padding)
        assert got.shape == want.shape
        assert np.allclose(got.data, want, atol=1e-12)

    def test_expected_shape_stride_1_2(self):
        x = Tensor(np.zeros((1, 4, 4)))
        out = conv2d(x, Tensor(np.zeros((1, 1, 3, 3))), Tensor(np.zeros(1)), stride=(1, 2), padding=(1, 1))
        assert out.shape == (1, 4, 2)

    def test_kernel_too_large(self):
        with pytest.raises(DimensionError):
            conv2d(Tensor(np.zeros((1, 2, 2))), Tensor(np.zeros((1, 1, 5, 5))), Tensor(np.zeros(1)),
                   padding=(0, 0))

    def test_batched_matches_per_item(self):
        rng = np.random.default_rng(5)
        xs = rng.normal(size=(3, 2, 5, 6))
        w = Tensor(rng.normal(size=(4, 2, 3, 3)))
        b = Tensor(rng.normal(size=4))
        batched = conv2d(Tensor(xs), w, b, stride=(1, 2), padding=(1, 1))
        for i in range(3):
            single = conv2d(Tensor(xs[i]), w, b, stride=(1, 2), padding=(1, 1))
            assert np.allclose(batched.data[i], single.data, atol=1e-12)


class TestDeconv2d:
    def test_unit_kernel_identity(self):
        rng = np.random.default_rng(1)
        x = Tensor(rng.normal(size=(1, 4, 5)))
        w = Tensor(np.ones((1, 1, 1, 1)))
        out = deconv2d(x, w, stride=(1, 1), padding=(0, 0))
        assert np.array_equal(out.data, x.data)

    @pytest.mark.parametrize("seed", range(4))
    @pytest.mark.parametrize("stride,padding", [((1, 1), (1, 1)), ((1, 2), (1, 1)), ((2, 2), (0, 0))])
    def test_adjoint_identity(self, seed, stride, padding):
        # <conv(x), y> == <x, deconv(y)> with a shared weight and zero biases
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(1, 2, 5, 6))
        w = rng.normal(size=(3, 2, 3, 3))
        cy = conv2d(Tensor(x), Tensor(w), stride=stride, padding=padding)
        y = rng.normal(size=cy.shape)
        opT = x.shape[2] - ((cy.shape[2] - 1) * stride[0] - 2 * padding[0] + 3)
        opF = x.shape[3] - ((cy.shape[3] - 1) * stride[1] - 2 * padding[1] + 3)
        back = deconv2d(Tensor(y), Tensor(w), stride=stride, padding=padding,
                        output_padding=(opT, opF))
        assert back.shape == x.shape
        lhs = float((cy.data * y).sum())
        rhs = float((x * back.data).sum())
        assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))

    def test_inverts_stride_1_2_shape(self):
        x = Tensor(np.zeros((1, 4, 2)))
        w = Tensor(np.zeros((1, 1, 3, 3)))
        out = deconv2d(x, w, stride=(1, 2), padding=(1, 1), output_padding=(0, 1))
        assert out.shape == (1, 4, 4)

    def test_bad_output_padding(self):
        with pytest.raises(DimensionError):
            deconv2d(Tensor(np.zeros((1, 4, 4))), Tensor(np.zeros((1, 1, 3, 3))),
                     stride=(1, 2), padding=(1, 1), output_padding=(0, 2))

    def test_doubling_geometry_for_decoder(self):
        # the decoder relies on stride (1,2), k=3, p=1, op=(0,1) doubling F exactly
        for f in (2, 4, 8, 64, 128):
            x = Tensor(np.zeros((1, 3, f)))
            out = deconv2d(x, Tensor(np.zeros((1, 1, 3, 3))), stride=(1, 2), padding=(1, 1),
                           output_padding=(0, 1))
            assert out.shape == (1, 3, 2 * f)
