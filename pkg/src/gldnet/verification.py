"""Gradient verification suites: per-op, composed block, sampled network.

Everything here runs in 64-bit with central differences (h = 1e-5) and
reports the max relative error per component so a regression names the
operation that broke.
"""

from __future__ import annotations

import numpy as np

from .gld import BlockVariant, GldBlockParams, gld_block_forward
from .layers import BatchNormState, LstmLayerParams, lstm_forward
from .network import ModelConfig, build_model, gldnet_forward
from .tensor import (
    Tensor,
    batchnorm2d,
    concat,
    conv2d,
    deconv2d,
    elu,
    grad_check,
    grad_check_params,
    matmul,
    overlap_add_decode,
    sigmoid,
    softmax,
    tanh,
)
from .trainer import mse_loss


def op_suite(seed=0, h=1e-5):
    """Max relative FD error for each primitive op kind, in isolation."""
    rng = np.random.default_rng(seed)
    t = lambda *shape: Tensor(rng.normal(size=shape), requires_grad=True)
    const = lambda *shape: Tensor(rng.normal(size=shape))
    results = {}

    def check(name, f, x):
        results[name] = grad_check(f, x, h=h).max_rel_error

    other = const(3, 4)
    check("add_mul", lambda v: ((v + other) * (v - 0.5)).sum(), t(3, 4))
    check("pow", lambda v: ((v * v + 1.0) ** 0.5).sum(), t(3, 4))
    b = const(4, 2)
    check("matmul", lambda v: (matmul(v, b) ** 2.0).sum(), t(3, 4))
    w = const(3, 5)
    check("softmax", lambda v: (softmax(v, axis=1) * w).sum(), t(3, 5))
    check("sigmoid", lambda v: sigmoid(v).sum(), t(10))
    check("tanh", lambda v: tanh(v).sum(), t(10))
    check("elu", lambda v: (elu(v) * 2.0).sum(), t(10))
    check("reduce_reshape", lambda v: (v.mean(axis=(0, 2), keepdims=True) * v).sum(), t(2, 3, 4))
    other2 = const(2, 3)
    check("concat_slice", lambda v: (concat([v, other2], axis=0)[1:4] ** 2.0).sum(), t(2, 3))

    cw, cb = t(3, 2, 3, 3), t(3)
    cx = const(2, 5, 6)
    check("conv2d", lambda v: (conv2d(cx, v, cb, stride=(1, 2), padding=(1, 1)) ** 2.0).sum(), cw)
    dw = t(2, 3, 3, 3)
    dx = const(2, 4, 3)
    check("deconv2d", lambda v: (deconv2d(dx, v, stride=(1, 2), padding=(1, 1),
                                          output_padding=(0, 1)) ** 2.0).sum(), dw)
    gamma, beta = t(3), t(3)
    bx = const(2, 3, 4, 4)

    def bn_loss(_):
        state = BatchNormState.create(3, np.float64)
        return (batchnorm2d(bx, gamma, beta, state, training=True) ** 2.0).sum()

    results["batchnorm_gamma"] = grad_check(bn_loss, gamma, h=h).max_rel_error
    results["batchnorm_beta"] = grad_check(bn_loss, beta, h=h).max_rel_error

    layer = LstmLayerParams.create(rng, 3, 4)
    lx = const(5, 3)
    for name, p in layer.named_parameters():
        results[f"lstm_{name}"] = grad_check(
            lambda _: (lstm_forward(lx, [layer]) ** 2.0).sum(), p, h=h
        ).max_rel_error

    frames, kernel = const(3, 5), t(5, 8)
    check("overlap_add", lambda v: (overlap_add_decode(frames, v, hop=4) ** 2.0).sum(), kernel)
    return results


def gld_block_suite(seed=0, c=4, t=8, f=8, h=1e-5, sample=None):
    """FD sweep of one composed GLD block; gains randomized.

    ``sample`` limits checked coordinates per tensor (None sweeps all).
    """
    rng = np.random.default_rng(seed)
    params = GldBlockParams.create(rng, c, c)
    params.global_gain.data[...] = rng.normal() * 0.5
    params.local_gain.data[...] = rng.normal() * 0.5
    x = Tensor(rng.normal(size=(c, t, f)))
    sq = np.random.default_rng(seed + 1).normal(size=(c, t, f))

    def loss():
        y = gld_block_forward(x, params, BlockVariant.SPEECH)
        return (y * Tensor(sq)).sum()

    reports = grad_check_params(loss, params.named_parameters(), h=h, sample=sample, rng=rng)
    return {name: r.max_rel_error for name, r in reports.items()}


def network_sampled_suite(seed=0, coords_per_tensor=2, tensors_per_group=None,
                          frames=4, h=1e-5, cfg=None):
    """FD spot checks across the network's parameter groups.

    Samples ``coords_per_tensor`` coordinates from (a subset of) each
    top-level group's tensors; every group is always represented. Returns
    group -> max relative error.
    """
    if cfg is None:
        cfg = ModelConfig.tiny()
    model = build_model(cfg, seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed + 1000)
    n = (frames - 1) * cfg.stft.hop + cfg.stft.win_len
    noisy = rng.normal(size=n) * 0.3
    clean = rng.normal(size=n) * 0.3

    def loss():
        return mse_loss(gldnet_forward(noisy, model, cfg, training=True), clean)

    by_group = {}
    for name, p in model.named_parameters():
        by_group.setdefault(name.split(".")[0], []).append((name, p))
    chosen = []
    for group, items in by_group.items():
        if tensors_per_group is not None and len(items) > tensors_per_group:
            idx = rng.choice(len(items), size=tensors_per_group, replace=False)
            items = [items[i] for i in idx]
        chosen.extend(items)
    reports = grad_check_params(loss, chosen, h=h, sample=coords_per_tensor, rng=rng)
    grouped = {}
    for name, rep in reports.items():
        group = name.split(".")[0]
        grouped[group] = max(grouped.get(group, 0.0), rep.max_rel_error)
    return grouped


def run_full_suite(seed=0, coords_per_tensor=2, tensors_per_group=3, block_sample=None,
                   cfg=None):
    """All three suites; returns (report dict, worst error)."""
    report = {}
    for name, err in op_suite(seed).items():
        report[f"op.{name}"] = err
    for name, err in gld_block_suite(seed, sample=block_sample).items():
        report[f"gld_block.{name}"] = err
    net = network_sampled_suite(seed, coords_per_tensor, tensors_per_group, cfg=cfg)
    for name, err in net.items():
        report[f"network.{name}"] = err
    worst = max(report.values())
    return report, worst
