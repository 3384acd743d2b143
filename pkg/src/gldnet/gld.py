"""Global-local dependency block.

Two chained attention stages over channel descriptors (each channel's
time-frequency map flattened to a vector), bridged by a learned sigmoid
mask that acts as a soft voice-activity detector:

  1. global stage: keys/values from two conv blocks; channel-by-channel
     softmax attention produces map X and a gain-scaled feature G.
  2. mask: projections of the local feature and the keys are summed,
     squashed, and mapped through a deconv block to a mask P in (0,1).
  3. local stage: the masked feature attends over G (map Y), scaled by a
     second gain, and a closing deconv block forms the output.

Both gains start at exactly zero, so a fresh block contributes nothing
beyond its closing block's bias/normalization path. The speech variant
masks the joint projection; the interference variant applies the
complementary mask to the local feature.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .layers import ConvBlockParams, conv_block, zeros_param
from .tensor import Tensor, matmul, mul, sigmoid, softmax, transpose


class BlockVariant(Enum):
    SPEECH = "speech"
    INTERFERENCE = "interference"


@dataclass
class GldOptions:
    """Behavior switches for the attention math.

    scale_logits: divide attention logits by sqrt(T*F) before softmax to
        avoid saturation at realistic descriptor lengths.
    collapsed_aggregation: aggregate each stage as gain * own-descriptor
        (the form the two stage definitions literally reduce to, since
        softmax rows sum to one) instead of the standard weighted sum of
        all descriptors.
    gate_on_projection: speech variant masks the joint projection (R * P);
        when False it masks the local feature instead (P * E), mirroring
        the interference variant.
    """

    scale_logits: bool = True
    collapsed_aggregation: bool = False
    gate_on_projection: bool = True


@dataclass
class GldBlockParams:
    to_keys: ConvBlockParams
    to_values: ConvBlockParams
    to_local: ConvBlockParams
    att_local: ConvBlockParams
    att_keys: ConvBlockParams
    att_mask: ConvBlockParams  # transposed
    out_block: ConvBlockParams  # transposed
    global_gain: Tensor  # scalar, zero-initialized
    local_gain: Tensor  # scalar, zero-initialized

    @staticmethod
    def create(rng, c_in, c_out, dtype=np.float64):
        mk = lambda ci, co, transposed=False: ConvBlockParams.create(
            rng, ci, co, dtype=dtype, transposed=transposed
        )
        return GldBlockParams(
            to_keys=mk(c_in, c_in),
            to_values=mk(c_in, c_in),
            to_local=mk(c_in, c_in),
            att_local=mk(c_in, c_in),
            att_keys=mk(c_in, c_in),
            att_mask=mk(c_in, c_in, transposed=True),
            out_block=mk(c_in, c_out, transposed=True),
            global_gain=zeros_param((), dtype),
            local_gain=zeros_param((), dtype),
        )

    def named_parameters(self, prefix=""):
        for sub, blk in (
            ("keys.", self.to_keys),
            ("values.", self.to_values),
            ("local.", self.to_local),
            ("att_local.", self.att_local),
            ("att_keys.", self.att_keys),
            ("att_mask.", self.att_mask),
            ("out.", self.out_block),
        ):
            yield from blk.named_parameters(prefix + sub)
        yield prefix + "global_gain", self.global_gain
        yield prefix + "local_gain", self.local_gain

    def named_buffers(self, prefix=""):
        for sub, blk in (
            ("keys.", self.to_keys),
            ("values.", self.to_values),
            ("local.", self.to_local),
            ("att_local.", self.att_local),
            ("att_keys.", self.att_keys),
            ("att_mask.", self.att_mask),
            ("out.", self.out_block),
        ):
            yield from blk.named_buffers(prefix + sub)


def _descriptors(x):
    """Flatten (B, C, T, F) to per-channel descriptors (B, C, T*F)."""
    b, c, t, f = x.shape
    return x.reshape(b, c, t * f)


def _attend(queries, targets, opts: GldOptions):
    """Row-normalized attention of targets over queries: out[j, i] ~ <q_i, t_j>."""
    logits = matmul(targets, transpose(queries, (0, 2, 1)))
    if opts.scale_logits:
        logits = logits * (1.0 / np.sqrt(queries.shape[-1]))
    return softmax(logits, axis=-1)


def _lift4(x):
    return (x.reshape((1,) + x.shape), True) if x.ndim == 3 else (x, False)


def global_dependency(x, p: GldBlockParams, opts=GldOptions(), training=True):
    """First attention stage.

    Returns (G, X, K, V): the gain-scaled global feature, the channel
    attention map with rows summing to one, and the key/value maps.
    """
    x4, lifted = _lift4(x)
    keys = conv_block(x4, p.to_keys, training)
    values = conv_block(x4, p.to_values, training)
    k_desc = _descriptors(keys)
    v_desc = _descriptors(values)
    attn = _attend(k_desc, v_desc, opts)
    if opts.collapsed_aggregation:
        out = mul(p.global_gain, values)
    else:
        out = mul(p.global_gain, matmul(attn, v_desc).reshape(values.shape))
    if lifted:
        out, keys, values = (t.reshape(t.shape[1:]) for t in (out, keys, values))
        attn = attn.reshape(attn.shape[1:])
    return out, attn, keys, values


def local_attention(local_feat, keys, p: GldBlockParams, training=True):
    """Soft voice-activity mask from the local feature and the keys.

    Returns (R, P): the squashed joint projection and the mask, both
    elementwise in (0, 1).
    """
    proj = sigmoid(conv_block(local_feat, p.att_local, training)
                   + conv_block(keys, p.att_keys, training))
    mask = sigmoid(conv_block(proj, p.att_mask, training))
    return proj, mask


def gated_feature(local_feat, proj, mask, variant: BlockVariant, opts=GldOptions()):
    """Apply the mask: speech keeps masked activity, interference its complement."""
    if variant is BlockVariant.INTERFERENCE:
        return (1.0 - mask) * local_feat
    if opts.gate_on_projection:
        return proj * mask
    return mask * local_feat


def local_dependency(gated, global_feat, p: GldBlockParams, opts=GldOptions()):
    """Second attention stage over the global feature.

    Returns (L, Y): the gain-scaled aggregate and its attention map.
    With both gains at zero this is exactly the zero tensor.
    """
    q4, lifted = _lift4(gated)
    g4, _ = _lift4(global_feat)
    q_desc = _descriptors(q4)
    g_desc = _descriptors(g4)
    attn = _attend(q_desc, g_desc, opts)
    if opts.collapsed_aggregation:
        out = mul(p.local_gain, g4)
    else:
        out = mul(p.local_gain, matmul(attn, g_desc).reshape(g4.shape))
    if lifted:
        out = out.reshape(out.shape[1:])
        attn = attn.reshape(attn.shape[1:])
    return out, attn


@dataclass
class GldBlockTrace:
    """Intermediates of one block evaluation, for verification."""

    keys: Tensor
    values: Tensor
    attn_global: Tensor
    global_feat: Tensor
    local_feat: Tensor
    proj: Tensor
    mask: Tensor
    gated: Tensor
    attn_local: Tensor
    aggregated: Tensor
    out: Tensor


def gld_block_forward(x, p: GldBlockParams, variant: BlockVariant,
                      opts=GldOptions(), training=True, trace=False):
    """Full block: both attention stages, the mask, and the closing deconv block."""
    global_feat, attn_g, keys, values = global_dependency(x, p, opts, training)
    local_feat = conv_block(x, p.to_local, training)
    proj, mask = local_attention(local_feat, keys, p, training)
    gated = gated_feature(local_feat, proj, mask, variant, opts)
    aggregated, attn_l = local_dependency(gated, global_feat, p, opts)
    out = conv_block(aggregated, p.out_block, training)
    if trace:
        return GldBlockTrace(keys, values, attn_g, global_feat, local_feat,
                             proj, mask, gated, attn_l, aggregated, out)
    return out
