"""Synthetic cohort generator with a planted alpha-band class signal.

Each subject is 1/f (pink) noise on every channel.  High-label subjects get
an extra 8-12 Hz component of RMS ``class_effect`` on a fixed channel
subset.  Clip durations default to whole seconds chosen so that 4 s windows
at a 1 s stride give 65 ToM and 43 EM windows per subject.
"""
from __future__ import annotations

import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal

from .eeg_io import (EventClip, FormatError, Label, Recording, View, median_split, read_manifest,
                     read_recording, write_manifest, write_recording)
from .preprocess import PreprocessConfig, preprocess_recording, window_count

log = logging.getLogger(__name__)

CHANNELS_10_20 = (
    "Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8", "FC5", "FC1", "FC2", "FC6", "T7", "C3", "Cz", "C4", "T8",
    "TP9", "CP5", "CP1", "CP2", "CP6", "TP10", "P7", "P3", "Pz", "P4", "P8", "PO9", "O1", "Oz", "O2", "PO10",
)
ALPHA_BAND = (8.0, 12.0)
# 6 ToM clips: sum(T - 3) = 83 - 18 = 65; 8 EM clips: 67 - 24 = 43.
TOM_CLIP_SECONDS = (14, 13, 14, 14, 14, 14)
EM_CLIP_SECONDS = (8, 9, 8, 8, 9, 8, 8, 9)


@dataclass(frozen=True)
class SynthConfig:
    n_subjects: int = 57
    channels: int = 32
    sample_rate_hz: float = 1000.0
    tom_clip_seconds: tuple[float, ...] = TOM_CLIP_SECONDS
    em_clip_seconds: tuple[float, ...] = EM_CLIP_SECONDS
    gap_seconds: float = 1.0
    class_effect: float = 0.5
    noise_floor: float = 1.0
    alpha_channels: tuple[int, ...] = field(default=())
    rng_seed: int = 42

    def __post_init__(self):
        if self.n_subjects < 1 or self.channels < 1:
            raise ValueError("need at least one subject and one channel")
        if self.class_effect < 0 or self.noise_floor <= 0:
            raise ValueError("class_effect must be >= 0 and noise_floor > 0")
        if not self.tom_clip_seconds or not self.em_clip_seconds:
            raise ValueError("clip plan needs at least one ToM and one EM clip")
        for ch in self.alpha_channels:
            if not 0 <= ch < self.channels:
                raise ValueError(f"alpha channel {ch} out of range")

    def signal_channels(self) -> tuple[int, ...]:
        return self.alpha_channels or tuple(range(max(1, self.channels // 4)))

    def channel_names(self) -> list[str]:
        names = list(CHANNELS_10_20[:self.channels])
        names += [f"E{i + 1}" for i in range(len(names), self.channels)]
        return names

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tom_clip_seconds"] = list(self.tom_clip_seconds)
        d["em_clip_seconds"] = list(self.em_clip_seconds)
        d["alpha_channels"] = list(self.signal_channels())
        return d


def check_clip_plan(cfg: SynthConfig, pre: PreprocessConfig) -> dict[View, int]:
    """Windows per view after preprocessing; raises if a clip is too short."""
    counts = {View.TOM: 0, View.EM: 0}
    rate = pre.target_rate_hz
    w = int(round(pre.window_seconds * rate))
    s = int(round(pre.stride_seconds * rate))
    for view, plan in ((View.TOM, cfg.tom_clip_seconds), (View.EM, cfg.em_clip_seconds)):
        for sec in plan:
            n = int(np.floor(sec * rate))
            if n < w:
                raise ValueError(f"{view.value} clip of {sec} s is shorter than the {pre.window_seconds} s window")
            counts[view] += window_count(n, w, s)
    return counts


def pink_noise(rng: np.random.Generator, n_channels: int, n_samples: int) -> np.ndarray:
    """Unit-RMS 1/f noise per channel (spectral shaping of white noise)."""
    white = rng.standard_normal((n_channels, n_samples))
    spec = np.fft.rfft(white, axis=1)
    f = np.arange(spec.shape[1], dtype=np.float64)
    f[0] = 1.0
    spec /= np.sqrt(f)
    spec[:, 0] = 0.0
    out = np.fft.irfft(spec, n=n_samples, axis=1)
    return out / out.std(axis=1, keepdims=True)


def alpha_noise(rng: np.random.Generator, n_channels: int, n_samples: int, fs: float) -> np.ndarray:
    """Unit-RMS Gaussian noise confined to the alpha band."""
    white = rng.standard_normal((n_channels, n_samples))
    spec = np.fft.rfft(white, axis=1)
    freqs = np.fft.rfftfreq(n_samples, d=1.0 / fs)
    spec[:, (freqs < ALPHA_BAND[0]) | (freqs > ALPHA_BAND[1])] = 0.0
    out = np.fft.irfft(spec, n=n_samples, axis=1)
    return out / out.std(axis=1, keepdims=True)


def _clip_layout(cfg: SynthConfig) -> tuple[list[EventClip], int]:
    fs = cfg.sample_rate_hz
    tom = list(cfg.tom_clip_seconds)
    em = list(cfg.em_clip_seconds)
    order: list[tuple[View, float]] = []
    while tom or em:
        if tom:
            order.append((View.TOM, tom.pop(0)))
        if em:
            order.append((View.EM, em.pop(0)))
    clips = []
    cursor = int(round(cfg.gap_seconds * fs))
    for view, sec in order:
        n = int(round(sec * fs))
        clips.append(EventClip(view, cursor, cursor + n))
        cursor += n + int(round(cfg.gap_seconds * fs))
    return clips, cursor


def assign_classes(cfg: SynthConfig) -> tuple[list[Label], list[int]]:
    """Intended labels and willingness scores whose median split reproduces them."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.rng_seed, 0xC1A55]))
    n = cfg.n_subjects
    n_high = n // 2
    labels = [Label.LOW] * n
    for i in rng.permutation(n)[:n_high]:
        labels[i] = Label.HIGH
    low_choices = (1, 2) if n - n_high == n_high else (2,)
    scores = [int(rng.choice((3, 4))) if lab is Label.HIGH else int(rng.choice(low_choices)) for lab in labels]
    derived = median_split(scores)
    assert derived == labels, "score assignment must reproduce the intended classes"
    return labels, scores


def subject_id(index: int) -> str:
    return f"sub-{index + 1:03d}"


def generate_recording(cfg: SynthConfig, index: int, label: Label, score: int) -> Recording:
    clips, total = _clip_layout(cfg)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.rng_seed, index + 1]))
    data = cfg.noise_floor * pink_noise(rng, cfg.channels, total)
    alpha = alpha_noise(rng, cfg.channels, total, cfg.sample_rate_hz)
    if label is Label.HIGH and cfg.class_effect > 0:
        chans = list(cfg.signal_channels())
        data[chans] += cfg.class_effect * alpha[chans]
    return Recording(subject_id(index), cfg.sample_rate_hz, cfg.channel_names(), data, clips, score)


def generate(cfg: SynthConfig, out_dir: str | os.PathLike, threads: int = 1) -> list[str]:
    """Write the cohort (recordings + manifest) to ``out_dir``; returns subject ids."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    labels, scores = assign_classes(cfg)

    def one(i: int) -> str:
        rec = generate_recording(cfg, i, labels[i], scores[i])
        write_recording(rec, out / rec.subject_id)
        return rec.subject_id

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            ids = list(pool.map(one, range(cfg.n_subjects)))
    else:
        ids = [one(i) for i in range(cfg.n_subjects)]
    write_manifest(out, ids)
    return ids


# -- verification ----------------------------------------------------------------

def band_power(x: np.ndarray, fs: float, band=ALPHA_BAND) -> float:
    """Mean Welch power in ``band`` averaged over channels of a C x T window."""
    nper = min(x.shape[-1], int(fs * 2))
    f, pxx = signal.welch(x, fs=fs, nperseg=nper, axis=-1)
    sel = (f >= band[0]) & (f <= band[1])
    return float(pxx[..., sel].mean())


def threshold_auc(scores, labels) -> float:
    """AUC from an exhaustive threshold sweep (trapezoid over the ROC points)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    pos, neg = labels.sum(), (~labels).sum()
    if pos == 0 or neg == 0:
        return float("nan")
    thresholds = np.concatenate([[np.inf], np.unique(scores)[::-1], [-np.inf]])
    tpr = np.array([(scores[labels] >= t).sum() / pos for t in thresholds])
    fpr = np.array([(scores[~labels] >= t).sum() / neg for t in thresholds])
    return float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2))


def _raw_windows(rec: Recording, pre: PreprocessConfig) -> list[np.ndarray]:
    fs = rec.sample_rate_hz
    w = int(round(pre.window_seconds * fs))
    s = int(round(pre.stride_seconds * fs))
    out = []
    for clip in rec.clips:
        for k in range(window_count(clip.length, w, s)):
            start = clip.start_sample + k * s
            out.append(rec.data[:, start:start + w])
    return out


def separability(recordings: list[Recording], labels: list[Label], pre: PreprocessConfig,
                 stride_windows: int = 4) -> dict:
    """Alpha band-power AUC on raw and on preprocessed windows (every ``stride_windows``-th window)."""
    raw_scores, pre_scores, raw_labels, pre_labels = [], [], [], []
    for rec, lab in zip(recordings, labels):
        for win in _raw_windows(rec, pre)[::stride_windows]:
            raw_scores.append(band_power(win, rec.sample_rate_hz))
            raw_labels.append(int(lab))
        for s in preprocess_recording(rec, pre, lab)[::stride_windows]:
            pre_scores.append(band_power(s.data, pre.target_rate_hz))
            pre_labels.append(int(lab))
    return {"auc_raw": threshold_auc(raw_scores, raw_labels),
            "auc_preprocessed": threshold_auc(pre_scores, pre_labels)}


def classify_auc(auc: float) -> str:
    if np.isnan(auc):
        return "undefined"
    if auc > 0.95:
        return "separable"
    if abs(auc - 0.5) <= 0.15:
        return "chance"
    return "weak"


def verify(dataset: str | os.PathLike, pre: PreprocessConfig | None = None) -> dict:
    """Format, class balance, per-subject window counts and oracle separability."""
    pre = pre or PreprocessConfig()
    failures: list[str] = []
    recordings: list[Recording] = []
    try:
        ids = read_manifest(dataset)
    except FormatError as exc:
        return {"ok": False, "failures": [str(exc)], "checks": {}}
    for sid in ids:
        try:
            recordings.append(read_recording(Path(dataset, sid)))
        except (FormatError, ValueError, OSError) as exc:
            failures.append(f"format: {sid}: {exc}")
    checks: dict = {"subjects": len(ids), "readable": len(recordings)}
    if recordings:
        labels = median_split([r.willingness for r in recordings])
        n_high = sum(1 for lab in labels if lab is Label.HIGH)
        checks["class_balance"] = {"high": n_high, "low": len(labels) - n_high}
        if n_high == 0 or n_high == len(labels):
            failures.append("class balance: cohort has a single class")
        counts = {}
        for rec in recordings:
            k = int(round(rec.sample_rate_hz / pre.target_rate_hz))
            w = int(round(pre.window_seconds * pre.target_rate_hz))
            s = int(round(pre.stride_seconds * pre.target_rate_hz))
            per_view = {View.TOM.value: 0, View.EM.value: 0}
            for clip in rec.clips:
                per_view[clip.view.value] += window_count(clip.end_sample // k - clip.start_sample // k, w, s)
            counts[rec.subject_id] = per_view
            if min(per_view.values()) < 1:
                failures.append(f"sample counts: {rec.subject_id} has a view without windows")
        checks["sample_counts"] = counts
        if len({tuple(c.values()) for c in counts.values()}) > 1:
            failures.append("sample counts: subjects differ in windows per view")
        if 0 < n_high < len(labels):
            sep = separability(recordings, labels, pre)
            sep["status"] = classify_auc(sep["auc_preprocessed"])
            checks["separability"] = sep
    return {"ok": not failures, "failures": failures, "checks": checks}
