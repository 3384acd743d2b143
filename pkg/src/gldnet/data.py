"""Noisy-mixture construction, dataset manifests, and synthetic toy signals.

Mixtures are exact: the noise is rescaled so the achieved SNR matches the
request to within floating-point roundoff, and when the mixture would
clip, mixture and clean target are peak-normalized by the same factor so
the training pair stays aligned. All randomness is seeded per item, so a
manifest fully determines every example.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .signal import SAMPLE_RATE, Waveform, read_wav
from .tensor import ContractError


TRAIN_SNRS_DB = (-5.0, -3.0, 0.0, 3.0, 5.0, 7.0, 10.0)
EVAL_SNRS_DB = (-5.0, 0.0, 5.0, 10.0)


def rms(x):
    return float(np.sqrt(np.mean(np.square(x))))


@dataclass(frozen=True)
class MixSpec:
    """One mixture recipe; ``seed`` fixes the noise crop offset."""

    clean_path: str
    noise_path: str
    snr_db: float
    seed: int

    def __post_init__(self):
        if not np.isfinite(self.snr_db):
            raise ContractError(f"snr_db must be finite, got {self.snr_db}")


@dataclass
class Manifest:
    entries: list
    split: str = "train"
    sample_rate: int = SAMPLE_RATE

    def __len__(self):
        return len(self.entries)


def mix_at_snr(clean: Waveform, noise: Waveform, snr_db: float):
    """Scale noise against clean for an exact SNR; returns (noisy, scaled_noise).

    The clean target, when the pair was jointly peak-normalized, is
    recoverable as noisy - scaled_noise. Raises ``ContractError`` on a
    silent clean signal.
    """
    c = clean.samples
    n = noise.samples
    if rms(c) == 0.0:
        raise ContractError("clean signal is silent; SNR is undefined")
    if len(n) < len(c):
        raise ContractError(f"noise ({len(n)}) shorter than clean ({len(c)}); crop first")
    n = n[: len(c)]
    gain = rms(c) / (rms(n) * 10.0 ** (snr_db / 20.0))
    scaled = gain * n
    noisy = c + scaled
    peak = np.max(np.abs(noisy))
    if peak > 1.0:
        noisy = noisy / peak
        scaled = scaled / peak
    return Waveform(noisy, clean.sample_rate), Waveform(scaled, clean.sample_rate)


def crop_noise(noise: Waveform, length: int, seed: int):
    """Seeded crop; noise shorter than needed is tiled with a seeded circular offset."""
    n = noise.samples
    rng = np.random.default_rng(seed)
    if len(n) < length:
        offset = int(rng.integers(0, len(n)))
        reps = int(np.ceil((length + offset) / len(n)))
        n = np.tile(n, reps)[offset : offset + length]
    else:
        offset = int(rng.integers(0, len(n) - length + 1))
        n = n[offset : offset + length]
    return Waveform(n, noise.sample_rate)


def make_pair(clean: Waveform, noise: Waveform, snr_db: float, seed: int):
    """Crop/tile noise, mix, and return the aligned (noisy, clean) pair."""
    noise = crop_noise(noise, len(clean), seed)
    noisy, scaled = mix_at_snr(clean, noise, snr_db)
    target = Waveform(noisy.samples - scaled.samples, clean.sample_rate)
    return noisy, target


def sample_batch(manifest: Manifest, batch: int, seed: int, crop_len: int = SAMPLE_RATE,
                 reader=read_wav):
    """Deterministic batch of fixed-length (noisy, clean) pairs.

    Crops are seeded and never exceed the source bounds; sources shorter
    than ``crop_len`` are zero-padded at the tail.
    """
    if not manifest.entries:
        raise ContractError("manifest is empty")
    rng = np.random.default_rng(seed)
    pairs = []
    for b in range(batch):
        spec = manifest.entries[int(rng.integers(0, len(manifest.entries)))]
        try:
            clean = reader(spec.clean_path)
            noise = reader(spec.noise_path)
        except OSError as e:
            raise IOError(f"cannot read manifest entry: {e}") from e
        c = _crop_clean(clean.samples, crop_len, rng)
        item_seed = int(rng.integers(0, 2 ** 31)) ^ spec.seed
        noisy, target = make_pair(Waveform(c), noise, spec.snr_db, item_seed)
        pairs.append((noisy, target))
    return pairs


def _crop_clean(c, crop_len, rng, attempts=16):
    """Seeded crop avoiding all-silent windows (SNR undefined there)."""
    if len(c) < crop_len:
        return np.concatenate([c, np.zeros(crop_len - len(c))])
    if len(c) == crop_len:
        return c
    for _ in range(attempts):
        off = int(rng.integers(0, len(c) - crop_len + 1))
        cand = c[off : off + crop_len]
        if rms(cand) > 0.0:
            return cand
    raise ContractError("could not find a non-silent crop; clean source looks silent")


# ---------------------------------------------------------------------------
# manifest files: clean_path<TAB>noise_path<TAB>snr_db<TAB>seed
# ---------------------------------------------------------------------------

def write_manifest(path, manifest: Manifest):
    with open(path, "w", encoding="utf-8") as fh:
        for e in manifest.entries:
            fh.write(f"{e.clean_path}\t{e.noise_path}\t{e.snr_db:g}\t{e.seed}\n")


def read_manifest(path, split="train"):
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ContractError(f"{path}:{lineno}: expected 4 tab-separated fields")
            entries.append(MixSpec(parts[0], parts[1], float(parts[2]), int(parts[3])))
    return Manifest(entries, split=split)


def validate_splits(manifests):
    """Reject any clean file appearing in more than one split."""
    seen = {}
    for m in manifests:
        for e in m.entries:
            prev = seen.get(e.clean_path)
            if prev is not None and prev != m.split:
                raise ContractError(
                    f"clean file {e.clean_path!r} appears in splits {prev!r} and {m.split!r}"
                )
            seen[e.clean_path] = m.split


# ---------------------------------------------------------------------------
# synthetic toy corpus (desk-scale substitute for real speech data)
# ---------------------------------------------------------------------------

def _activity_envelope(n, rng, sr):
    """Speech-like on/off envelope with smooth edges; >= 20% silence."""
    env = np.zeros(n)
    pos = 0
    while pos < n:
        on = int(rng.uniform(0.10, 0.30) * sr)
        off = int(rng.uniform(0.08, 0.20) * sr)
        env[pos : pos + on] = 1.0
        pos += on + off
    ramp = max(int(0.004 * sr), 1)
    kernel = np.ones(ramp) / ramp
    env = np.convolve(env, kernel, mode="same")
    if (env < 1e-6).mean() < 0.2:  # force enough silence for VAD-style metrics
        cut = int(0.2 * n)
        env[:cut] = 0.0
    return env


def synth_clean(kind, n, rng, sr=SAMPLE_RATE):
    t = np.arange(n) / sr
    parts = np.zeros(n)
    n_tones = int(rng.integers(2, 5))
    for _ in range(n_tones):
        f0 = rng.uniform(200.0, 2000.0)
        amp = rng.uniform(0.4, 1.0)
        phase = rng.uniform(0, 2 * np.pi)
        if kind == "chirp":
            f1 = f0 * rng.uniform(1.2, 2.0)
            inst = f0 + (f1 - f0) * t / t[-1]
            parts += amp * np.sin(2 * np.pi * np.cumsum(inst) / sr + phase)
        else:
            parts += amp * np.sin(2 * np.pi * f0 * t + phase)
    parts *= _activity_envelope(n, rng, sr)
    peak = np.max(np.abs(parts))
    if peak > 0:
        parts = 0.6 * parts / peak
    return Waveform(parts, sr)


def synth_noise(noise_kind, n, rng, sr=SAMPLE_RATE):
    if noise_kind == "hum":
        t = np.arange(n) / sr
        x = sum(rng.uniform(0.2, 1.0) * np.sin(2 * np.pi * 50.0 * k * t + rng.uniform(0, 2 * np.pi))
                for k in (1, 2, 3))
        x = x / np.max(np.abs(x))
    elif noise_kind == "white":
        x = rng.normal(size=n)
        x = x / np.max(np.abs(x))
    else:
        raise ContractError(f"unknown noise kind {noise_kind!r}")
    return Waveform(0.5 * x, sr)


def synth_toy_pair(kind="tones", noise_kind="white", snr_db=0.0, seed=0,
                   duration=1.0, sr=SAMPLE_RATE):
    """Seeded (noisy, clean) pair: enveloped sinusoids plus scaled noise."""
    rng = np.random.default_rng(seed)
    n = int(duration * sr)
    clean = synth_clean(kind, n, rng)
    noise = synth_noise(noise_kind, n, rng)
    noisy, scaled = mix_at_snr(clean, noise, snr_db)
    target = Waveform(noisy.samples - scaled.samples, sr)
    return noisy, target


def generate_toy_corpus(out_dir, counts=(12, 4, 8), snr_db=0.0, seed=0, duration=1.0,
                        kind="tones", noise_kind="white"):
    """Write a tiny seeded corpus of clean/noise WAVs plus split manifests.

    Splits get disjoint seed ranges (so clean material never overlaps) and
    one manifest file each: train.tsv, val.tsv, test.tsv under ``out_dir``.
    Returns {split: Manifest}.
    """
    import os

    from .signal import write_wav

    os.makedirs(out_dir, exist_ok=True)
    n = int(duration * SAMPLE_RATE)
    manifests = {}
    offset = 0
    for split, count in zip(("train", "val", "test"), counts):
        entries = []
        for i in range(count):
            item_seed = seed + 7919 * (offset + i)
            rng = np.random.default_rng(item_seed)
            clean = synth_clean(kind, n, rng)
            noise = synth_noise(noise_kind, n, rng)
            cp = os.path.join(out_dir, f"{split}_clean_{i:03d}.wav")
            np_path = os.path.join(out_dir, f"{split}_noise_{i:03d}.wav")
            write_wav(cp, clean)
            write_wav(np_path, noise)
            entries.append(MixSpec(cp, np_path, snr_db, seed=item_seed))
        manifests[split] = Manifest(entries, split=split)
        write_manifest(os.path.join(out_dir, f"{split}.tsv"), manifests[split])
        offset += count
    validate_splits(list(manifests.values()))
    return manifests
