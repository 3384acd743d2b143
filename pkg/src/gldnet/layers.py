"""Learnable building blocks: conv/deconv blocks, LSTM stacks, linear maps.

Parameter records are plain dataclasses of Tensors plus non-learnable
batchnorm running buffers. Every record yields its learnable tensors via
``named_parameters`` and its buffers via ``named_buffers`` so optimizers
and checkpoints can walk a model uniformly.

Weight init is centered uniform with scale 1/sqrt(fan_in); biases start at
zero, batchnorm affine at (1, 0).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, batchnorm2d, concat, conv2d, deconv2d, elu, matmul, sigmoid, tanh


def uniform_init(rng, shape, fan_in, dtype):
    scale = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-scale, scale, size=shape).astype(dtype), requires_grad=True)


def zeros_param(shape, dtype):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


@dataclass
class BatchNormState:
    """Running statistics; updated in train mode, consumed in eval mode."""

    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.9
    eps: float = 1e-5

    @staticmethod
    def create(channels, dtype):
        return BatchNormState(
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
        )


@dataclass
class ConvBlockParams:
    """conv2d -> batchnorm2d -> ELU, the standard 2-D convolution block."""

    weight: Tensor
    bias: Tensor
    gamma: Tensor
    beta: Tensor
    bn: BatchNormState
    stride: tuple = (1, 1)
    padding: tuple = (1, 1)
    transposed: bool = False
    output_padding: tuple = (0, 0)

    @staticmethod
    def create(rng, c_in, c_out, kernel=(3, 3), stride=(1, 1), padding=(1, 1), dtype=np.float64,
               transposed=False, output_padding=(0, 0)):
        kT, kF = kernel
        if transposed:
            wshape, fan_in = (c_in, c_out, kT, kF), c_in * kT * kF
        else:
            wshape, fan_in = (c_out, c_in, kT, kF), c_in * kT * kF
        return ConvBlockParams(
            weight=uniform_init(rng, wshape, fan_in, dtype),
            bias=zeros_param(c_out, dtype),
            gamma=Tensor(np.ones(c_out, dtype=dtype), requires_grad=True),
            beta=zeros_param(c_out, dtype),
            bn=BatchNormState.create(c_out, dtype),
            stride=tuple(stride),
            padding=tuple(padding),
            transposed=transposed,
            output_padding=tuple(output_padding),
        )

    def named_parameters(self, prefix=""):
        yield prefix + "weight", self.weight
        yield prefix + "bias", self.bias
        yield prefix + "gamma", self.gamma
        yield prefix + "beta", self.beta

    def named_buffers(self, prefix=""):
        yield prefix + "running_mean", self.bn.running_mean
        yield prefix + "running_var", self.bn.running_var


def conv_block(x, p: ConvBlockParams, training: bool):
    if p.transposed:
        y = deconv2d(x, p.weight, p.bias, stride=p.stride, padding=p.padding,
                     output_padding=p.output_padding)
    else:
        y = conv2d(x, p.weight, p.bias, stride=p.stride, padding=p.padding)
    y = batchnorm2d(y, p.gamma, p.beta, p.bn, training)
    return elu(y)


@dataclass
class PlainConvParams:
    """Bare strided conv2d (no norm, no activation); closes each encoder layer."""

    weight: Tensor
    bias: Tensor
    stride: tuple
    padding: tuple

    @staticmethod
    def create(rng, c_in, c_out, kernel=(3, 3), stride=(1, 1), padding=(1, 1), dtype=np.float64):
        kT, kF = kernel
        return PlainConvParams(
            weight=uniform_init(rng, (c_out, c_in, kT, kF), c_in * kT * kF, dtype),
            bias=zeros_param(c_out, dtype),
            stride=tuple(stride),
            padding=tuple(padding),
        )

    def named_parameters(self, prefix=""):
        yield prefix + "weight", self.weight
        yield prefix + "bias", self.bias

    def named_buffers(self, prefix=""):
        return iter(())

    def __call__(self, x):
        return conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


@dataclass
class LinearParams:
    weight: Tensor  # (d_in, d_out)
    bias: Tensor

    @staticmethod
    def create(rng, d_in, d_out, dtype=np.float64):
        return LinearParams(
            weight=uniform_init(rng, (d_in, d_out), d_in, dtype),
            bias=zeros_param(d_out, dtype),
        )

    def named_parameters(self, prefix=""):
        yield prefix + "weight", self.weight
        yield prefix + "bias", self.bias

    def named_buffers(self, prefix=""):
        return iter(())


def linear(x, p: LinearParams):
    return matmul(x, p.weight) + p.bias


@dataclass
class LstmLayerParams:
    """One LSTM layer; gate order along the 4H axis is (input, forget, cell, output)."""

    w_x: Tensor  # (D, 4H)
    w_h: Tensor  # (H, 4H)
    bias: Tensor  # (4H,)

    @staticmethod
    def create(rng, d_in, hidden, dtype=np.float64):
        return LstmLayerParams(
            w_x=uniform_init(rng, (d_in, 4 * hidden), d_in, dtype),
            w_h=uniform_init(rng, (hidden, 4 * hidden), hidden, dtype),
            bias=zeros_param(4 * hidden, dtype),
        )

    @property
    def hidden(self):
        return self.w_h.shape[0]

    def named_parameters(self, prefix=""):
        yield prefix + "w_x", self.w_x
        yield prefix + "w_h", self.w_h
        yield prefix + "bias", self.bias

    def named_buffers(self, prefix=""):
        return iter(())


def lstm_forward(x, layers):
    """Stacked LSTM over (T, D) or (B, T, D); returns the top layer's hiddens.

    Hidden and cell states start at zero. The whole recurrence is built
    from primitive ops, so backward-through-time falls out of the graph.
    """
    if not layers:
        raise ValueError("lstm_forward needs at least one layer")
    lifted = x.ndim == 2
    seq = x.reshape((1,) + x.shape) if lifted else x
    B, T, _ = seq.shape
    for layer in layers:
        if seq.shape[-1] != layer.w_x.shape[0]:
            raise ValueError(
                f"lstm input dim {seq.shape[-1]} does not match weights {layer.w_x.shape}"
            )
        H = layer.hidden
        # project all timesteps at once; the recurrence then only touches (B, 4H)
        pre = matmul(seq.reshape(B * T, seq.shape[-1]), layer.w_x) + layer.bias
        pre = pre.reshape(B, T, 4 * H)
        h = Tensor(np.zeros((B, H), dtype=x.dtype))
        c = Tensor(np.zeros((B, H), dtype=x.dtype))
        outs = []
        for t in range(T):
            gates = pre[:, t, :] + matmul(h, layer.w_h)
            i = sigmoid(gates[:, 0 * H : 1 * H])
            f = sigmoid(gates[:, 1 * H : 2 * H])
            g = tanh(gates[:, 2 * H : 3 * H])
            o = sigmoid(gates[:, 3 * H : 4 * H])
            c = f * c + i * g
            h = o * tanh(c)
            outs.append(h.reshape(B, 1, H))
        seq = concat(outs, axis=1)
    return seq.reshape(T, layers[-1].hidden) if lifted else seq
