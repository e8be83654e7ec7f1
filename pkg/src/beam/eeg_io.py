"""Recording data model, on-disk format and label derivation.

A recording on disk is a pair ``<name>.eeg`` (raw little-endian float32,
channel-major, C*T values) plus ``<name>.json`` (UTF-8 metadata).  A dataset
directory holds such pairs and a ``manifest`` file with one subject id per
line.
"""
from __future__ import annotations

import enum
import json
import logging
import os
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

PAYLOAD_DTYPE = np.dtype("<f4")
MANIFEST = "manifest"
WILLINGNESS_RANGE = (1, 2, 3, 4)


class FormatError(ValueError):
    """Malformed payload or sidecar."""


class View(str, enum.Enum):
    TOM = "ToM"
    EM = "EM"

    @classmethod
    def parse(cls, value: str) -> "View":
        for v in cls:
            if value == v.value or value.lower() == v.value.lower():
                return v
        raise FormatError(f"unknown view tag {value!r}")


class Label(enum.IntEnum):
    LOW = 0
    HIGH = 1


@dataclass(frozen=True)
class EventClip:
    view: View
    start_sample: int
    end_sample: int

    def __post_init__(self):
        if not isinstance(self.view, View):
            raise FormatError(f"clip view must be a View, got {self.view!r}")
        if self.start_sample >= self.end_sample:
            raise ValueError(f"clip start {self.start_sample} must be < end {self.end_sample}")

    @property
    def length(self) -> int:
        return self.end_sample - self.start_sample


@dataclass
class Recording:
    subject_id: str
    sample_rate_hz: float
    channels: list[str]
    data: np.ndarray
    clips: list[EventClip] = field(default_factory=list)
    willingness: int = 1

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        self.validate()

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    def validate(self) -> None:
        if self.data.ndim != 2:
            raise ValueError(f"data must be C x T, got shape {self.data.shape}")
        c, t = self.data.shape
        if c < 1 or t < 1:
            raise ValueError(f"recording needs C >= 1 and T >= 1, got {c} x {t}")
        if len(self.channels) != c:
            raise ValueError(f"{len(self.channels)} channel names for {c} data rows")
        if not self.sample_rate_hz > 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate_hz}")
        if self.willingness not in WILLINGNESS_RANGE:
            raise ValueError(f"willingness must be in 1..4, got {self.willingness}")
        for clip in self.clips:
            if clip.start_sample < 0 or clip.end_sample > t:
                raise ValueError(
                    f"clip [{clip.start_sample}, {clip.end_sample}) outside recording of {t} samples")

    def replace(self, **changes) -> "Recording":
        fields = dict(subject_id=self.subject_id, sample_rate_hz=self.sample_rate_hz,
                      channels=list(self.channels), data=self.data, clips=list(self.clips),
                      willingness=self.willingness)
        fields.update(changes)
        return Recording(**fields)


def _paths(path: str | os.PathLike) -> tuple[Path, Path]:
    p = Path(path)
    if p.suffix in (".eeg", ".json"):
        p = p.with_suffix("")
    return p.with_name(p.name + ".eeg"), p.with_name(p.name + ".json")


def write_recording(rec: Recording, path: str | os.PathLike) -> None:
    """Write ``rec`` as ``<path>.eeg`` + ``<path>.json``."""
    rec.validate()
    payload_path, sidecar_path = _paths(path)
    meta = {
        "subject_id": rec.subject_id,
        "sample_rate_hz": float(rec.sample_rate_hz),
        "n_channels": rec.n_channels,
        "n_samples": rec.n_samples,
        "channels": list(rec.channels),
        "clips": [{"view": c.view.value, "start_sample": int(c.start_sample),
                   "end_sample": int(c.end_sample)} for c in rec.clips],
        "willingness": int(rec.willingness),
    }
    payload_path.parent.mkdir(parents=True, exist_ok=True)
    payload_path.write_bytes(np.ascontiguousarray(rec.data, dtype=PAYLOAD_DTYPE).tobytes())
    sidecar_path.write_text(json.dumps(meta, indent=1) + "\n", encoding="utf-8")


def read_recording(path: str | os.PathLike) -> Recording:
    payload_path, sidecar_path = _paths(path)
    if not sidecar_path.exists():
        raise FormatError(f"missing sidecar {sidecar_path}")
    if not payload_path.exists():
        raise FormatError(f"missing payload {payload_path}")
    try:
        meta = json.loads(sidecar_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"bad sidecar {sidecar_path}: {exc}") from exc
    channels = list(meta["channels"])
    c = int(meta.get("n_channels", len(channels)))
    raw = np.frombuffer(payload_path.read_bytes(), dtype=PAYLOAD_DTYPE)
    t = int(meta["n_samples"]) if "n_samples" in meta else raw.size // max(c, 1)
    if raw.size != c * t:
        raise FormatError(f"{payload_path}: payload has {raw.size} floats, header declares {c} x {t}")
    clips = []
    for item in meta.get("clips", []):
        clips.append(EventClip(View.parse(item["view"]), int(item["start_sample"]), int(item["end_sample"])))
    try:
        return Recording(subject_id=str(meta["subject_id"]), sample_rate_hz=float(meta["sample_rate_hz"]),
                         channels=channels, data=raw.reshape(c, t).astype(np.float32), clips=clips,
                         willingness=int(meta["willingness"]))
    except ValueError as exc:
        raise FormatError(f"{sidecar_path}: {exc}") from exc


def median_split(scores: Sequence[int]) -> list[Label]:
    """Binarize willingness scores at the cohort median (score <= median is Low)."""
    if len(scores) == 0:
        raise ValueError("median_split needs at least one score")
    for s in scores:
        if s not in WILLINGNESS_RANGE:
            raise ValueError(f"score {s!r} outside 1..4")
    med = statistics.median(scores)
    labels = [Label.LOW if s <= med else Label.HIGH for s in scores]
    if len(set(labels)) == 1:
        log.warning("median split produced a single class (%s) for %d scores", labels[0].name, len(labels))
    return labels


def write_manifest(directory: str | os.PathLike, subject_ids: Iterable[str]) -> None:
    Path(directory, MANIFEST).write_text("".join(f"{s}\n" for s in subject_ids), encoding="utf-8")


def read_manifest(directory: str | os.PathLike) -> list[str]:
    path = Path(directory, MANIFEST)
    if not path.exists():
        raise FormatError(f"no manifest in {directory}")
    return [line.strip() for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]


def read_dataset(directory: str | os.PathLike) -> list[Recording]:
    return [read_recording(Path(directory, sid)) for sid in read_manifest(directory)]
