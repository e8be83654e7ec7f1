"""Signal chain: band-pass, decimation, common average reference, windowing."""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import signal

from .eeg_io import (PAYLOAD_DTYPE, EventClip, FormatError, Label, Recording, View, median_split,
                     read_manifest)

FILTER_ORDER = 4


@dataclass(frozen=True)
class PreprocessConfig:
    band_low_hz: float = 0.1
    band_high_hz: float = 75.0
    target_rate_hz: float = 200.0
    window_seconds: float = 4.0
    stride_seconds: float = 1.0

    def __post_init__(self):
        if not 0 < self.band_low_hz < self.band_high_hz:
            raise ValueError(f"need 0 < band_low < band_high, got {self.band_low_hz}, {self.band_high_hz}")
        if self.window_seconds <= 0 or self.stride_seconds <= 0:
            raise ValueError("window and stride must be positive")
        if self.target_rate_hz <= 0:
            raise ValueError("target rate must be positive")


@dataclass
class Sample:
    view: View
    subject_id: str
    data: np.ndarray
    label: Label
    clip_index: int = -1
    window_index: int = -1
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 2:
            raise ValueError(f"sample data must be C x W, got {self.data.shape}")
        if not np.isfinite(self.data).all():
            raise ValueError(f"non-finite values in sample of {self.subject_id}")


def _as_int_samples(seconds: float, rate: float, what: str) -> int:
    n = seconds * rate
    if abs(n - round(n)) > 1e-9:
        raise ValueError(f"{what} of {seconds} s is not a whole number of samples at {rate} Hz")
    return int(round(n))


def bandpass(rec: Recording, low_hz: float, high_hz: float) -> Recording:
    """Zero-phase Butterworth band-pass (forward-backward), per channel.

    Each channel's mean is removed first (the pass band excludes DC) and the
    signal is mirror-extended by up to three periods of ``low_hz``.  Odd
    extension would inject a step of twice the end value into the padding,
    and the slow high-pass section rings on it for seconds.
    """
    fs = rec.sample_rate_hz
    if not 0 < low_hz < high_hz < fs / 2:
        raise ValueError(f"band {low_hz}-{high_hz} Hz invalid at fs={fs} Hz")
    sos = signal.butter(FILTER_ORDER, [low_hz, high_hz], btype="bandpass", fs=fs, output="sos")
    data = rec.data.astype(np.float64)
    data = data - data.mean(axis=1, keepdims=True)
    padlen = min(rec.n_samples - 1, int(math.ceil(3 * fs / low_hz)))
    out = signal.sosfiltfilt(sos, data, axis=1, padtype="even", padlen=padlen)
    return rec.replace(data=out)


def decimate(rec: Recording, target_rate_hz: float) -> Recording:
    """Keep every k-th sample; the input must already be band-limited."""
    ratio = rec.sample_rate_hz / target_rate_hz
    k = int(round(ratio))
    if k < 1 or abs(ratio - k) > 1e-9:
        raise ValueError(f"{rec.sample_rate_hz} Hz is not an integer multiple of {target_rate_hz} Hz")
    if k == 1:
        return rec.replace()
    clips = [EventClip(c.view, c.start_sample // k, c.end_sample // k) for c in rec.clips]
    return rec.replace(data=rec.data[:, ::k], sample_rate_hz=rec.sample_rate_hz / k, clips=clips)


def common_average_reference(rec: Recording) -> Recording:
    if rec.n_channels < 2:
        raise ValueError("common average reference needs at least two channels")
    data = rec.data.astype(np.float64)
    return rec.replace(data=data - data.mean(axis=0, keepdims=True))


def window_count(n_samples: int, window: int, stride: int) -> int:
    """Number of windows: floor((T - W) / S) + 1, zero if T < W."""
    if n_samples < window:
        return 0
    return (n_samples - window) // stride + 1


def segment(rec: Recording, cfg: PreprocessConfig, label: Label | None = None) -> list[Sample]:
    """Cut every clip into C x W windows with stride S."""
    fs = rec.sample_rate_hz
    w = _as_int_samples(cfg.window_seconds, fs, "window")
    s = _as_int_samples(cfg.stride_seconds, fs, "stride")
    if label is None:
        label = Label.LOW
    samples = []
    for ci, clip in enumerate(rec.clips):
        if clip.length < w:
            raise ValueError(f"{rec.subject_id}: clip {ci} has {clip.length} samples, shorter than window {w}")
        for wi in range(window_count(clip.length, w, s)):
            start = clip.start_sample + wi * s
            samples.append(Sample(clip.view, rec.subject_id, rec.data[:, start:start + w], label, ci, wi))
    return samples


def preprocess_recording(rec: Recording, cfg: PreprocessConfig, label: Label | None = None) -> list[Sample]:
    rec = bandpass(rec, cfg.band_low_hz, cfg.band_high_hz)
    rec = decimate(rec, cfg.target_rate_hz)
    rec = common_average_reference(rec)
    return segment(rec, cfg, label)


def cohort_labels(recordings: Sequence[Recording]) -> dict[str, Label]:
    """Median split over the full cohort, keyed by subject id."""
    labels = median_split([r.willingness for r in recordings])
    return {r.subject_id: lab for r, lab in zip(recordings, labels)}


# -- sample files --------------------------------------------------------------

def write_samples(samples: Sequence[Sample], path: str | os.PathLike, sample_rate_hz: float,
                  channels: Sequence[str]) -> None:
    """Write one subject's samples as ``<path>.eeg`` (N x C x W float32) + ``<path>.json``."""
    if not samples:
        raise ValueError("no samples to write")
    subjects = {s.subject_id for s in samples}
    if len(subjects) != 1:
        raise ValueError(f"sample file must hold one subject, got {sorted(subjects)}")
    shape = samples[0].data.shape
    for s in samples:
        if s.data.shape != shape:
            raise ValueError("all samples in a file must share the C x W shape")
    base = Path(path)
    meta = {
        "kind": "samples",
        "subject_id": samples[0].subject_id,
        "sample_rate_hz": float(sample_rate_hz),
        "channels": list(channels),
        "n_samples": len(samples),
        "n_channels": shape[0],
        "window_samples": shape[1],
        "samples": [{"view": s.view.value, "label": s.label.name.lower(), "clip": s.clip_index,
                     "window": s.window_index, **s.meta} for s in samples],
    }
    base.parent.mkdir(parents=True, exist_ok=True)
    stacked = np.stack([s.data for s in samples]).astype(PAYLOAD_DTYPE)
    base.with_name(base.name + ".eeg").write_bytes(stacked.tobytes())
    base.with_name(base.name + ".json").write_text(json.dumps(meta, indent=1) + "\n", encoding="utf-8")


def read_samples(path: str | os.PathLike) -> list[Sample]:
    base = Path(path)
    sidecar = base.with_name(base.name + ".json")
    payload = base.with_name(base.name + ".eeg")
    if not sidecar.exists():
        raise FormatError(f"missing sidecar {sidecar}")
    meta = json.loads(sidecar.read_text(encoding="utf-8"))
    if meta.get("kind") != "samples":
        raise FormatError(f"{sidecar} is not a sample file")
    n, c, w = int(meta["n_samples"]), int(meta["n_channels"]), int(meta["window_samples"])
    raw = np.frombuffer(payload.read_bytes(), dtype=PAYLOAD_DTYPE)
    if raw.size != n * c * w:
        raise FormatError(f"{payload}: payload has {raw.size} floats, header declares {n} x {c} x {w}")
    data = raw.reshape(n, c, w)
    out = []
    for i, item in enumerate(meta["samples"]):
        extra = {k: v for k, v in item.items() if k not in ("view", "label", "clip", "window")}
        out.append(Sample(View.parse(item["view"]), meta["subject_id"], data[i],
                          Label[item["label"].upper()], int(item["clip"]), int(item["window"]), extra))
    return out


def read_sample_dataset(directory: str | os.PathLike) -> dict[str, list[Sample]]:
    return {sid: read_samples(Path(directory, sid)) for sid in read_manifest(directory)}


def sample_file_info(path: str | os.PathLike) -> dict:
    base = Path(path)
    return json.loads(base.with_name(base.name + ".json").read_text(encoding="utf-8"))
