"""Objective quality and intelligibility measures: SI-SDR, segSNR, STOI.

STOI follows the classic recipe: both signals resampled to 10 kHz, silent
reference frames removed with a 40 dB energy VAD, 512-point spectra of
256-sample Hann frames grouped into 15 one-third-octave bands from 150 Hz,
and band envelopes compared by normalized correlation over 384 ms
(30-frame) segments with -15 dB clipping. The reported score is the raw
correlation average (multiplied by 100 only in the aggregate table).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import resample_poly

from .signal import Waveform
from .tensor import ContractError


def _samples(x):
    return x.samples if isinstance(x, Waveform) else np.asarray(x, dtype=np.float64)


def si_sdr(reference, estimate):
    """Scale-invariant signal-to-distortion ratio in dB, capped at 100.

    The estimate is projected onto the reference; the ratio of projected
    to residual energy is invariant to positive rescaling of the estimate.
    """
    ref = _samples(reference)
    est = _samples(estimate)
    if ref.shape != est.shape:
        raise ContractError(f"length mismatch: {ref.shape} vs {est.shape}")
    ref_energy = float(np.dot(ref, ref))
    if ref_energy == 0.0:
        raise ContractError("reference is silent; SI-SDR is undefined")
    target = (np.dot(est, ref) / ref_energy) * ref
    residual = est - target
    num = float(np.dot(target, target))
    den = float(np.dot(residual, residual))
    if den <= num * 1e-10:
        return 100.0
    return min(10.0 * np.log10(num / den), 100.0)


def seg_snr(reference, estimate, frame=512, hop=256, floor_db=-10.0, ceil_db=35.0,
            vad_db=-40.0):
    """Mean clamped per-frame SNR over voiced reference frames.

    A frame is voiced when the reference frame energy exceeds ``vad_db``
    dBFS. Per-frame ratio is estimate energy over error energy, clamped to
    [floor_db, ceil_db]. Raises ``ContractError`` with silent input.
    """
    ref = _samples(reference)
    est = _samples(estimate)
    if ref.shape != est.shape:
        raise ContractError(f"length mismatch: {ref.shape} vs {est.shape}")
    tiny = np.finfo(np.float64).tiny
    vals = []
    for lo in range(0, len(ref) - frame + 1, hop):
        rf = ref[lo : lo + frame]
        ef = est[lo : lo + frame]
        if 10.0 * np.log10(np.mean(rf * rf) + tiny) <= vad_db:
            continue
        num = float(np.dot(ef, ef))
        den = float(np.dot(rf - ef, rf - ef))
        snr = 10.0 * (np.log10(num + tiny) - np.log10(den + tiny))
        vals.append(np.clip(snr, floor_db, ceil_db))
    if not vals:
        raise ContractError("no voiced frames in reference")
    return float(np.mean(vals))


# ---------------------------------------------------------------------------
# STOI
# ---------------------------------------------------------------------------

_STOI_FS = 10000
_STOI_FRAME = 256
_STOI_HOP = 128
_STOI_FFT = 512
_STOI_BANDS = 15
_STOI_MIN_FREQ = 150.0
_STOI_SEG = 30  # frames per 384 ms segment
_STOI_BETA_DB = -15.0
_STOI_VAD_DB = 40.0


def _stoi_window():
    return np.hanning(_STOI_FRAME + 2)[1:-1]


def _frame_signal(x, frame, hop, window):
    n = (len(x) - frame) // hop + 1
    idx = np.arange(frame)[None, :] + hop * np.arange(n)[:, None]
    return x[idx] * window[None, :]


def _remove_silent_frames(ref, est):
    win = _stoi_window()
    rf = _frame_signal(ref, _STOI_FRAME, _STOI_HOP, win)
    ef = _frame_signal(est, _STOI_FRAME, _STOI_HOP, win)
    energy = 20.0 * np.log10(np.linalg.norm(rf, axis=1) + np.finfo(np.float64).eps)
    keep = energy > energy.max() - _STOI_VAD_DB
    rf, ef = rf[keep], ef[keep]
    n_out = (len(rf) - 1) * _STOI_HOP + _STOI_FRAME
    r = np.zeros(n_out)
    e = np.zeros(n_out)
    for i in range(len(rf)):
        lo = i * _STOI_HOP
        r[lo : lo + _STOI_FRAME] += rf[i]
        e[lo : lo + _STOI_FRAME] += ef[i]
    return r, e


def _third_octave_matrix():
    """Boolean band-by-bin matrix for 15 one-third-octave bands from 150 Hz."""
    freqs = np.arange(_STOI_FFT // 2 + 1) * _STOI_FS / _STOI_FFT
    centers = _STOI_MIN_FREQ * 2.0 ** (np.arange(_STOI_BANDS) / 3.0)
    lo = centers / 2.0 ** (1.0 / 6.0)
    hi = centers * 2.0 ** (1.0 / 6.0)
    mat = np.zeros((_STOI_BANDS, len(freqs)))
    for j in range(_STOI_BANDS):
        mat[j, (freqs >= lo[j]) & (freqs < hi[j])] = 1.0
    return mat


def _band_envelopes(x):
    win = _stoi_window()
    frames = _frame_signal(x, _STOI_FRAME, _STOI_HOP, win)
    spec = np.fft.rfft(frames, n=_STOI_FFT, axis=1)
    power = np.abs(spec) ** 2
    return np.sqrt(power @ _third_octave_matrix().T)  # (frames, bands)


def stoi(reference, estimate, fs=16000):
    """Short-time objective intelligibility; approximately in [0, 1].

    Requires at least one second of audio so that VAD and segmentation
    leave enough frames.
    """
    ref = _samples(reference)
    est = _samples(estimate)
    if ref.shape != est.shape:
        raise ContractError(f"length mismatch: {ref.shape} vs {est.shape}")
    if len(ref) < fs:
        raise ContractError(f"stoi needs at least 1 s of audio, got {len(ref) / fs:.3f} s")
    if fs != _STOI_FS:
        g = np.gcd(fs, _STOI_FS)
        ref = resample_poly(ref, _STOI_FS // g, fs // g)
        est = resample_poly(est, _STOI_FS // g, fs // g)
    ref, est = _remove_silent_frames(ref, est)
    if len(ref) < _STOI_FRAME + _STOI_HOP * (_STOI_SEG - 1):
        raise ContractError("too little voiced audio after silence removal")
    x = _band_envelopes(ref)
    y = _band_envelopes(est)
    clip_gain = 10.0 ** (-_STOI_BETA_DB / 20.0)
    eps = np.finfo(np.float64).eps
    scores = []
    for m in range(_STOI_SEG, len(x) + 1):
        xs = x[m - _STOI_SEG : m]  # (seg, bands)
        ys = y[m - _STOI_SEG : m]
        alpha = np.linalg.norm(xs, axis=0) / (np.linalg.norm(ys, axis=0) + eps)
        ys_n = np.minimum(ys * alpha[None, :], (1.0 + clip_gain) * xs)
        xc = xs - xs.mean(axis=0, keepdims=True)
        yc = ys_n - ys_n.mean(axis=0, keepdims=True)
        denom = np.linalg.norm(xc, axis=0) * np.linalg.norm(yc, axis=0) + eps
        scores.append((xc * yc).sum(axis=0) / denom)
    return float(np.mean(scores))


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

@dataclass
class MetricReport:
    """Per-utterance records plus per-condition means; conditions in dB."""

    records: list = field(default_factory=list)  # (utterance, system, condition, metric, value)

    def add(self, utterance, system, condition_db, metric, value):
        self.records.append((utterance, system, float(condition_db), metric, float(value)))

    def mean(self, system, metric, condition_db=None):
        vals = [v for (_, s, c, m, v) in self.records
                if s == system and m == metric and (condition_db is None or c == condition_db)]
        return float(np.mean(vals)) if vals else None

    def systems(self):
        seen = []
        for _, s, _, _, _ in self.records:
            if s not in seen:
                seen.append(s)
        return seen

    def conditions(self):
        return sorted({c for (_, _, c, _, _) in self.records})

    def metrics(self):
        seen = []
        for _, _, _, m, _ in self.records:
            if m not in seen:
                seen.append(m)
        return seen

    def write(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for utt, system, cond, metric, value in self.records:
                fh.write(f"{utt}\t{system}\t{cond:g}\t{metric}\t{value:.6f}\n")


def format_table(report: MetricReport) -> str:
    """Aggregate table: one block per metric, SNR-condition columns plus Avg.

    STOI is shown in percent; other metrics in dB.
    """
    conds = report.conditions()
    lines = []
    for metric in report.metrics():
        scale = 100.0 if metric == "stoi" else 1.0
        title = "STOI (in %)" if metric == "stoi" else metric.replace("_", "-").upper() + " (dB)"
        lines.append(title)
        header = ["Test SNR"] + [f"{c:g}" for c in conds] + ["Avg."]
        rows = [header]
        for system in report.systems():
            row = [system]
            for c in conds:
                m = report.mean(system, metric, c)
                row.append("-" if m is None else f"{scale * m:.2f}")
            overall = report.mean(system, metric)
            row.append("-" if overall is None else f"{scale * overall:.2f}")
            rows.append(row)
        widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
        for r in rows:
            lines.append("  ".join(cell.rjust(w) for cell, w in zip(r, widths)))
        lines.append("")
    return "\n".join(lines)
