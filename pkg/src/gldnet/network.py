"""The enhancement network: branch layers, U-Net encoder/decoder, LSTM bottleneck.

Each encoder layer extracts speech/noisy/interference branch features,
runs speech- and interference-variant GLD blocks, fuses each block output
with its branch feature, and gates a confidence feature (built from the
intermediate, speech, and noisy features) by the sigmoid of the summed
fusions. A strided conv closes the layer, halving the frequency extent.

The decoder mirrors the encoder with deconv blocks: each consumes the
concatenation of the current feature and the matching encoder layer
output, doubling the frequency extent back. Frame features from the final
1-channel map feed a learnable transposed-convolution waveform decoder.

The onesided spectrum's Nyquist bin is dropped at the input so the five
stride-2 halvings stay integral.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .gld import BlockVariant, GldBlockParams, GldOptions, gld_block_forward
from .layers import (
    ConvBlockParams,
    LinearParams,
    LstmLayerParams,
    PlainConvParams,
    conv_block,
    lstm_forward,
)
from .signal import LearnableDecoderParams, StftConfig, Waveform, stft
from .tensor import ContractError, DimensionError, Tensor, concat, matmul, sigmoid
from . import signal as _signal


@dataclass
class ModelConfig:
    """Frozen hyperparameters for one model build."""

    enc_channels: tuple = (16, 32, 64, 128, 256)
    dec_channels: tuple = (128, 64, 32, 16, 1)
    lstm_layers: int = 2
    lstm_hidden: int = 512
    f_bins: int = 256  # input bins after dropping Nyquist
    intermediate_blocks: int = 2
    enable_sb: bool = True
    enable_ib: bool = True
    ri_head: bool = False
    decoder_init: str = "random"  # "istft" needs the RI head's stacked features
    gld: GldOptions = field(default_factory=GldOptions)
    stft: StftConfig = field(default_factory=StftConfig)

    def __post_init__(self):
        if len(self.enc_channels) != len(self.dec_channels):
            raise ContractError("encoder and decoder channel schedules must have equal length")
        if self.f_bins % (2 ** len(self.enc_channels)) != 0:
            raise ContractError(
                f"f_bins={self.f_bins} must be divisible by 2^{len(self.enc_channels)}"
            )
        if self.f_bins != self.stft.bins - 1:
            raise ContractError(
                f"f_bins={self.f_bins} must equal the onesided bin count minus Nyquist "
                f"({self.stft.bins - 1})"
            )
        head = 2 if self.ri_head else 1
        if self.dec_channels[-1] != head:
            raise ContractError(
                f"decoder must end with {head} channel(s) for this head, got {self.dec_channels[-1]}"
            )

    @property
    def depth(self):
        return len(self.enc_channels)

    @staticmethod
    def full(**overrides):
        return ModelConfig(**overrides)

    @staticmethod
    def tiny(**overrides):
        defaults = dict(
            enc_channels=(4, 8, 8, 16, 16),
            dec_channels=(8, 8, 4, 4, 1),
            lstm_hidden=32,
            f_bins=64,
            stft=StftConfig.tiny(),
        )
        defaults.update(overrides)
        return ModelConfig(**defaults)

    def to_dict(self):
        d = asdict(self)
        d["enc_channels"] = list(self.enc_channels)
        d["dec_channels"] = list(self.dec_channels)
        return d

    @staticmethod
    def from_dict(d):
        d = dict(d)
        d["enc_channels"] = tuple(d["enc_channels"])
        d["dec_channels"] = tuple(d["dec_channels"])
        d["gld"] = GldOptions(**d["gld"])
        d["stft"] = StftConfig(**d["stft"])
        return ModelConfig(**d)


@dataclass
class GldLayerParams:
    """One encoder layer; branch groups are absent when their flag is off."""

    inter: list  # intermediate-feature conv blocks
    down: PlainConvParams
    sb_feat: ConvBlockParams | None = None
    nb_feat: ConvBlockParams | None = None
    ib_feat: ConvBlockParams | None = None
    sb_gld: GldBlockParams | None = None
    ib_gld: GldBlockParams | None = None
    fuse_sb: ConvBlockParams | None = None
    fuse_ib: ConvBlockParams | None = None
    confidence: ConvBlockParams | None = None

    @staticmethod
    def create(rng, c_in, c_out, cfg: ModelConfig, dtype=np.float64):
        inter = []
        ci = c_in
        for _ in range(cfg.intermediate_blocks):
            inter.append(ConvBlockParams.create(rng, ci, c_out, dtype=dtype))
            ci = c_out
        layer = GldLayerParams(
            inter=inter,
            down=PlainConvParams.create(rng, c_out, c_out, stride=(1, 2), dtype=dtype),
        )
        any_branch = cfg.enable_sb or cfg.enable_ib
        if cfg.enable_sb:
            layer.sb_feat = ConvBlockParams.create(rng, c_in, c_out, dtype=dtype)
            layer.sb_gld = GldBlockParams.create(rng, c_out, c_out, dtype=dtype)
            layer.fuse_sb = ConvBlockParams.create(rng, 2 * c_out, c_out, dtype=dtype)
        if cfg.enable_ib:
            layer.ib_feat = ConvBlockParams.create(rng, c_in, c_out, dtype=dtype)
            layer.ib_gld = GldBlockParams.create(rng, c_out, c_out, dtype=dtype)
            layer.fuse_ib = ConvBlockParams.create(rng, 2 * c_out, c_out, dtype=dtype)
        if any_branch:
            layer.nb_feat = ConvBlockParams.create(rng, c_in, c_out, dtype=dtype)
            conf_in = c_out * (2 + (1 if cfg.enable_sb else 0))
            layer.confidence = ConvBlockParams.create(rng, conf_in, c_out, dtype=dtype)
        return layer

    def _groups(self):
        groups = [("inter%d." % i, blk) for i, blk in enumerate(self.inter)]
        groups.append(("down.", self.down))
        for name, blk in (
            ("sb_feat.", self.sb_feat), ("nb_feat.", self.nb_feat), ("ib_feat.", self.ib_feat),
            ("sb_gld.", self.sb_gld), ("ib_gld.", self.ib_gld),
            ("fuse_sb.", self.fuse_sb), ("fuse_ib.", self.fuse_ib),
            ("confidence.", self.confidence),
        ):
            if blk is not None:
                groups.append((name, blk))
        return groups

    def named_parameters(self, prefix=""):
        for sub, blk in self._groups():
            yield from blk.named_parameters(prefix + sub)

    def named_buffers(self, prefix=""):
        for sub, blk in self._groups():
            yield from blk.named_buffers(prefix + sub)


def gld_layer_forward(x, p: GldLayerParams, cfg: ModelConfig, training=True, return_gate=False):
    """One encoder layer on (B, C, T, F); output is (B, C', T, F/2)."""
    inter = x
    for blk in p.inter:
        inter = conv_block(inter, blk, training)
    if p.confidence is None:
        out = p.down(inter)
        return (out, None) if return_gate else out
    gate_terms = []
    conf_feats = [inter]
    nb = conv_block(x, p.nb_feat, training)
    if p.sb_feat is not None:
        sb = conv_block(x, p.sb_feat, training)
        sb_global = gld_block_forward(sb, p.sb_gld, BlockVariant.SPEECH, cfg.gld, training)
        if sb.shape != sb_global.shape:
            raise DimensionError(
                f"speech branch features {sb.shape} and block output {sb_global.shape} differ"
            )
        gate_terms.append(conv_block(concat([sb, sb_global], axis=1), p.fuse_sb, training))
        conf_feats.append(sb)
    conf_feats.append(nb)
    if p.ib_feat is not None:
        ib = conv_block(x, p.ib_feat, training)
        ib_global = gld_block_forward(ib, p.ib_gld, BlockVariant.INTERFERENCE, cfg.gld, training)
        if ib.shape != ib_global.shape:
            raise DimensionError(
                f"interference branch features {ib.shape} and block output {ib_global.shape} differ"
            )
        gate_terms.append(conv_block(concat([ib, ib_global], axis=1), p.fuse_ib, training))
    gate = gate_terms[0]
    for term in gate_terms[1:]:
        gate = gate + term
    gate = sigmoid(gate)
    confidence = conv_block(concat(conf_feats, axis=1), p.confidence, training)
    out = p.down(confidence * gate)
    return (out, gate) if return_gate else out


@dataclass
class ModelParams:
    enc_layers: list
    lstm: list
    lstm_proj: LinearParams
    dec_blocks: list
    wave_decoder: LearnableDecoderParams

    @staticmethod
    def create(rng, cfg: ModelConfig, dtype=np.float64):
        enc_layers = []
        c_in = 2
        for c_out in cfg.enc_channels:
            enc_layers.append(GldLayerParams.create(rng, c_in, c_out, cfg, dtype))
            c_in = c_out
        bottleneck_dim = cfg.enc_channels[-1] * (cfg.f_bins >> cfg.depth)
        lstm = []
        d = bottleneck_dim
        for _ in range(cfg.lstm_layers):
            lstm.append(LstmLayerParams.create(rng, d, cfg.lstm_hidden, dtype))
            d = cfg.lstm_hidden
        lstm_proj = LinearParams.create(rng, cfg.lstm_hidden, bottleneck_dim, dtype)
        dec_blocks = []
        cur = cfg.enc_channels[-1]
        skips = list(reversed(cfg.enc_channels))
        for i, c_out in enumerate(cfg.dec_channels):
            dec_blocks.append(ConvBlockParams.create(
                rng, cur + skips[i], c_out, stride=(1, 2), padding=(1, 1), dtype=dtype,
                transposed=True, output_padding=(0, 1),
            ))
            cur = c_out
        head_dim = cfg.f_bins * (2 if cfg.ri_head else 1)
        wave_decoder = LearnableDecoderParams.random(rng, head_dim, cfg.stft, dtype)
        return ModelParams(enc_layers, lstm, lstm_proj, dec_blocks, wave_decoder)

    def named_parameters(self, prefix=""):
        for i, layer in enumerate(self.enc_layers):
            yield from layer.named_parameters(f"{prefix}enc{i}.")
        for i, layer in enumerate(self.lstm):
            yield from layer.named_parameters(f"{prefix}lstm{i}.")
        yield from self.lstm_proj.named_parameters(prefix + "lstm_proj.")
        for i, blk in enumerate(self.dec_blocks):
            yield from blk.named_parameters(f"{prefix}dec{i}.")
        yield from self.wave_decoder.named_parameters(prefix + "wave_decoder.")

    def named_buffers(self, prefix=""):
        for i, layer in enumerate(self.enc_layers):
            yield from layer.named_buffers(f"{prefix}enc{i}.")
        for i, blk in enumerate(self.dec_blocks):
            yield from blk.named_buffers(f"{prefix}dec{i}.")


def parameter_count(params) -> int:
    return sum(p.size for _, p in params.named_parameters())


def build_model(cfg: ModelConfig, seed=0, dtype=np.float64):
    return ModelParams.create(np.random.default_rng(seed), cfg, dtype)


def encoder_forward(features, params: ModelParams, cfg: ModelConfig, training=True):
    """Apply all encoder layers; returns (bottleneck_input, per-layer skip list)."""
    if features.shape[1] != 2:
        raise DimensionError(f"encoder expects 2 input channels (RI planes), got {features.shape}")
    skips = []
    x = features
    for layer in params.enc_layers:
        x = gld_layer_forward(x, layer, cfg, training)
        skips.append(x)
    return x, skips


def bottleneck_forward(x, params: ModelParams):
    """Two stacked LSTM layers over time, then a linear map back; shape-preserving."""
    b, c, t, f = x.shape
    seq = x.transpose(0, 2, 1, 3).reshape(b, t, c * f)
    hidden = lstm_forward(seq, params.lstm)
    flat = hidden.reshape(b * t, hidden.shape[-1])
    back = (matmul(flat, params.lstm_proj.weight) + params.lstm_proj.bias)
    return back.reshape(b, t, c, f).transpose(0, 2, 1, 3)


def decoder_forward(x, skips, params: ModelParams, cfg: ModelConfig, training=True):
    """Mirror the encoder: concat the matching skip, deconv block doubles F."""
    cur = x
    for i, blk in enumerate(params.dec_blocks):
        skip = skips[len(skips) - 1 - i]
        if skip.shape[0] != cur.shape[0] or skip.shape[2:] != cur.shape[2:]:
            raise DimensionError(
                f"decoder layer {i}: skip {skip.shape} does not align with {cur.shape}"
            )
        cur = conv_block(concat([cur, skip], axis=1), blk, training)
    return cur


def waveform_to_features(noisy, cfg: ModelConfig):
    """stft -> drop Nyquist -> (B, 2, T, F) array for the encoder."""
    if isinstance(noisy, Waveform):
        noisy = noisy.samples
    noisy = np.asarray(noisy, dtype=np.float64)
    batched = noisy.ndim == 2
    items = noisy if batched else noisy[None, :]
    feats = []
    for row in items:
        spec = stft(row, cfg.stft).values[:, : cfg.f_bins, :]  # (T, F, 2)
        feats.append(spec.transpose(2, 0, 1))
    return np.stack(feats), batched


def gldnet_forward(noisy, params: ModelParams, cfg: ModelConfig, training=False):
    """Full enhancement pass; output tensor has exactly the input's length."""
    if isinstance(noisy, Waveform):
        noisy = noisy.samples
    noisy = np.asarray(noisy, dtype=np.float64)
    n = noisy.shape[-1]
    feats, batched = waveform_to_features(noisy, cfg)
    x = Tensor(feats.astype(params.wave_decoder.kernel.dtype))
    x, skips = encoder_forward(x, params, cfg, training)
    x = bottleneck_forward(x, params)
    x = decoder_forward(x, skips, params, cfg, training)
    b, c, t, f = x.shape
    if cfg.ri_head:
        frames = x.transpose(0, 2, 1, 3).reshape(b, t, c * f)
    else:
        frames = x.reshape(b, t, f)
    wave = _signal.apply_learnable_decoder(frames, params.wave_decoder)
    wave = wave[:, :n]
    return wave if batched else wave.reshape(n)


def enhance(noisy: Waveform, params: ModelParams, cfg: ModelConfig) -> Waveform:
    """Inference wrapper: eval-mode forward returning a Waveform."""
    out = gldnet_forward(noisy, params, cfg, training=False)
    return Waveform(np.asarray(out.data, dtype=np.float64), noisy.sample_rate)
