"""Waveform I/O, STFT analysis/synthesis, and the learnable waveform decoder.

The analysis/synthesis pair uses a periodic Hann window at 50% overlap and
weighted overlap-add (synthesis window = analysis window, normalized by the
summed squared window), which reconstructs interior samples exactly. The
learnable decoder is a strided 1-D transposed convolution whose kernel can
be initialized to reproduce inverse STFT synthesis.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .tensor import ContractError, DimensionError, Tensor, overlap_add_decode


class FormatError(ValueError):
    """Unreadable or unsupported audio file structure."""


SAMPLE_RATE = 16000


@dataclass
class Waveform:
    """Mono sample sequence; samples nominally in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.sample_rate <= 0:
            raise ContractError(f"sample_rate must be positive, got {self.sample_rate}")

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self):
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class StftConfig:
    win_len: int = 512
    hop: int = 256
    fft_size: int = 512

    def __post_init__(self):
        if self.hop > self.win_len:
            raise ContractError("hop must not exceed win_len")
        if self.fft_size < self.win_len:
            raise ContractError("fft_size must be at least win_len")
        if self.win_len % self.hop != 0:
            raise ContractError("hop must divide win_len (required for overlap-add)")

    @property
    def bins(self):
        """Onesided bin count, Nyquist included."""
        return self.fft_size // 2 + 1

    @staticmethod
    def tiny():
        return StftConfig(win_len=128, hop=64, fft_size=128)


@dataclass
class RISpectrogram:
    """Time-frequency map of shape (T, bins, 2); plane 0 real, plane 1 imaginary."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3 or self.values.shape[2] != 2:
            raise DimensionError(f"expected (T, F, 2) layout, got {self.values.shape}")

    @property
    def frames(self):
        return self.values.shape[0]

    @property
    def bins(self):
        return self.values.shape[1]

    def to_complex(self):
        return self.values[:, :, 0] + 1j * self.values[:, :, 1]


def hann(n, periodic=True):
    """Hann window; the periodic variant overlap-adds to 1 at 50% overlap."""
    if n < 2:
        raise ContractError(f"hann window needs n >= 2, got {n}")
    denom = n if periodic else n - 1
    k = np.arange(n)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * k / denom))


def frame_count(n_samples, cfg: StftConfig):
    return 1 + int(np.ceil(max(n_samples - cfg.win_len, 0) / cfg.hop))


def stft(w, cfg: StftConfig = StftConfig()):
    """Windowed onesided DFT of successive frames; tail zero-padded to a whole frame."""
    x = w.samples if isinstance(w, Waveform) else np.asarray(w, dtype=np.float64)
    if len(x) < cfg.win_len:
        raise ContractError(f"input of {len(x)} samples is shorter than one {cfg.win_len} window")
    t = frame_count(len(x), cfg)
    padded = np.zeros((t - 1) * cfg.hop + cfg.win_len)
    padded[: len(x)] = x
    idx = np.arange(cfg.win_len)[None, :] + cfg.hop * np.arange(t)[:, None]
    frames = padded[idx] * hann(cfg.win_len)[None, :]
    spec = np.fft.rfft(frames, n=cfg.fft_size, axis=1)
    return RISpectrogram(np.stack([spec.real, spec.imag], axis=2))


def istft(s: RISpectrogram, cfg: StftConfig = StftConfig()):
    """Weighted overlap-add inverse; reconstructs stft input on interior samples."""
    if s.bins != cfg.bins:
        raise DimensionError(f"spectrogram has {s.bins} bins, config expects {cfg.bins}")
    frames = np.fft.irfft(s.to_complex(), n=cfg.fft_size, axis=1)[:, : cfg.win_len]
    win = hann(cfg.win_len)
    t = s.frames
    n = (t - 1) * cfg.hop + cfg.win_len
    num = np.zeros(n)
    den = np.zeros(n)
    win_sq = win * win
    for i in range(t):
        lo = i * cfg.hop
        num[lo : lo + cfg.win_len] += frames[i] * win
        den[lo : lo + cfg.win_len] += win_sq
    out = np.zeros(n)
    nz = den > 1e-12
    out[nz] = num[nz] / den[nz]
    return Waveform(out)


@dataclass
class LearnableDecoderParams:
    """1-D transposed convolution: frame features (T, D) -> waveform.

    Kernel shape is (D, kernel_len) with stride ``hop``; no bias. Kernel
    length and stride mirror the analysis window length and hop.
    """

    kernel: Tensor
    hop: int

    def __post_init__(self):
        if self.kernel.shape[1] % self.hop != 0:
            raise ContractError("hop must divide the decoder kernel length")

    @property
    def feature_dim(self):
        return self.kernel.shape[0]

    @property
    def kernel_len(self):
        return self.kernel.shape[1]

    @staticmethod
    def random(rng, feature_dim, cfg: StftConfig, dtype=np.float64):
        scale = 1.0 / np.sqrt(feature_dim)
        k = rng.uniform(-scale, scale, size=(feature_dim, cfg.win_len)).astype(dtype)
        return LearnableDecoderParams(Tensor(k, requires_grad=True), hop=cfg.hop)

    def named_parameters(self, prefix=""):
        yield prefix + "kernel", self.kernel

    def named_buffers(self, prefix=""):
        return iter(())


def init_decoder_as_istft(cfg: StftConfig = StftConfig()):
    """Decoder weights reproducing inverse-STFT synthesis for interior samples.

    Expects frame features of dimension D = 2 * bins, laid out as all real
    bin values followed by all imaginary bin values. The interior WOLA
    normalization is periodic with the hop, so it folds into the kernel.
    """
    K = cfg.fft_size
    bins = cfg.bins
    win = hann(cfg.win_len)
    k = np.arange(cfg.win_len)
    # interior overlap-add of the squared window repeats every hop samples
    den = np.zeros(cfg.hop)
    for off in range(0, cfg.win_len, cfg.hop):
        den += win[off : off + cfg.hop] ** 2
    norm = win / den[k % cfg.hop]
    f = np.arange(bins)[:, None]
    scale = np.where((f == 0) | (f == K // 2), 1.0, 2.0) / K
    phase = 2.0 * np.pi * f * k[None, :] / K
    real_basis = scale * np.cos(phase) * norm[None, :]
    imag_basis = -scale * np.sin(phase) * norm[None, :]
    kernel = np.concatenate([real_basis, imag_basis], axis=0)
    return LearnableDecoderParams(Tensor(kernel, requires_grad=True), hop=cfg.hop)


def spec_to_decoder_frames(s: RISpectrogram):
    """Stack real then imaginary planes into (T, 2*bins) decoder features."""
    return np.concatenate([s.values[:, :, 0], s.values[:, :, 1]], axis=1)


def apply_learnable_decoder(frames, p: LearnableDecoderParams):
    """Differentiable decode of (T, D) or (B, T, D) frames to a waveform tensor.

    Output length is (T - 1) * hop + kernel_len.
    """
    if not isinstance(frames, Tensor):
        frames = Tensor(frames)
    if frames.shape[-1] != p.feature_dim:
        raise DimensionError(
            f"frame feature dim {frames.shape[-1]} does not match decoder dim {p.feature_dim}"
        )
    return overlap_add_decode(frames, p.kernel, p.hop)


# ---------------------------------------------------------------------------
# WAV files (RIFF, PCM 16-bit or IEEE float 32-bit)
# ---------------------------------------------------------------------------

def read_wav(path):
    """Read a WAV file as a mono 16 kHz Waveform.

    Multi-channel input is downmixed by averaging; other sample rates are
    resampled by linear interpolation. Raises ``FormatError`` (naming the
    offending chunk) for anything that is not PCM16 or float32 RIFF/WAVE.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[:4] != b"RIFF" or blob[8:12] != b"WAVE":
        raise FormatError(f"{path}: missing RIFF/WAVE header")
    pos = 12
    fmt = None
    data = None
    while pos + 8 <= len(blob):
        cid = blob[pos : pos + 4]
        (size,) = struct.unpack("<I", blob[pos + 4 : pos + 8])
        body = blob[pos + 8 : pos + 8 + size]
        if len(body) < size:
            raise FormatError(f"{path}: truncated chunk {cid!r}")
        if cid == b"fmt ":
            if size < 16:
                raise FormatError(f"{path}: short 'fmt ' chunk")
            fmt = struct.unpack("<HHIIHH", body[:16])
        elif cid == b"data":
            data = body
        pos += 8 + size + (size & 1)
    if fmt is None or data is None:
        missing = "fmt " if fmt is None else "data"
        raise FormatError(f"{path}: missing {missing!r} chunk")
    codec, channels, rate, _, _, bits = fmt
    if codec == 1 and bits == 16:
        x = np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0
    elif codec == 3 and bits == 32:
        x = np.frombuffer(data, dtype="<f4").astype(np.float64)
    else:
        raise FormatError(f"{path}: unsupported codec {codec} / {bits}-bit in 'fmt ' chunk")
    if channels < 1:
        raise FormatError(f"{path}: 'fmt ' chunk declares zero channels")
    x = x[: (len(x) // channels) * channels].reshape(-1, channels).mean(axis=1)
    if rate != SAMPLE_RATE:
        n_out = int(round(len(x) * SAMPLE_RATE / rate))
        src_t = np.arange(len(x)) / rate
        dst_t = np.arange(n_out) / SAMPLE_RATE
        x = np.interp(dst_t, src_t, x)
    return Waveform(x, SAMPLE_RATE)


def write_wav(path, w: Waveform):
    """Write 16-bit PCM mono; samples are clipped to [-1, 1] before quantizing."""
    x = np.clip(w.samples, -1.0, 1.0)
    pcm = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2").tobytes()
    hdr = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(pcm), b"WAVE",
        b"fmt ", 16, 1, 1, w.sample_rate, w.sample_rate * 2, 2, 16,
        b"data", len(pcm),
    )
    with open(path, "wb") as fh:
        fh.write(hdr + pcm)
