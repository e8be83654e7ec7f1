"""STFT-domain amplitude perturbation used to balance classes."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .preprocess import Sample


@dataclass(frozen=True)
class AugmentConfig:
    noise_mean: float = 0.0
    noise_std: float = 0.001
    stft_window: int = 256
    stft_hop: int = 128
    rng_seed: int = 0

    def __post_init__(self):
        if self.noise_std < 0:
            raise ValueError(f"noise_std must be >= 0, got {self.noise_std}")
        if self.stft_window < 2 or self.stft_hop < 1 or self.stft_window % self.stft_hop:
            raise ValueError(f"hop {self.stft_hop} must divide window {self.stft_window}")
        if not is_cola(hann(self.stft_window), self.stft_hop):
            raise ValueError(f"Hann window {self.stft_window} with hop {self.stft_hop} is not constant overlap-add")


def hann(n: int) -> np.ndarray:
    """Periodic Hann window (sums to a constant at hop n/2)."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def is_cola(window: np.ndarray, hop: int, tol: float = 1e-10) -> bool:
    n = window.size
    acc = np.zeros(n)
    for offset in range(0, n, hop):
        acc += np.roll(window, offset)
    return bool(np.ptp(acc) <= tol * np.abs(acc).max()) and acc.min() > 0


def _padding(length: int, window: int, hop: int) -> tuple[int, int]:
    left = window // 2
    total = length + 2 * left
    frames = max(1, -(-(total - window) // hop) + 1)
    right = (frames - 1) * hop + window - length - left
    return left, right


def stft(x: np.ndarray, window: int = 256, hop: int = 128) -> np.ndarray:
    """One-sided STFT, shape (frames, window // 2 + 1).

    The signal is zero-padded by ``window // 2`` on the left (and enough on
    the right to fill the last frame) so every input sample lies under the
    full overlap of frames.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"stft expects a 1-D signal, got shape {x.shape}")
    if x.size < window:
        raise ValueError(f"signal of {x.size} samples is shorter than one window ({window})")
    left, right = _padding(x.size, window, hop)
    padded = np.pad(x, (left, right))
    frames = np.lib.stride_tricks.sliding_window_view(padded, window)[::hop]
    return np.fft.rfft(frames * hann(window), axis=-1)


def istft(spec: np.ndarray, window: int = 256, hop: int = 128, length: int | None = None) -> np.ndarray:
    """Weighted overlap-add inverse of :func:`stft`.

    Output samples are divided by the summed analysis window, so the round
    trip is exact wherever frames overlap fully.  ``length`` trims the result
    back to the original signal length; without it the padded span between
    the first and last full-overlap sample is returned.
    """
    spec = np.asarray(spec)
    if spec.ndim != 2 or spec.shape[1] != window // 2 + 1:
        raise ValueError(f"spectrogram shape {spec.shape} does not match window {window}")
    n_frames = spec.shape[0]
    frames = np.fft.irfft(spec, n=window, axis=-1)
    total = (n_frames - 1) * hop + window
    out = np.zeros(total)
    wsum = np.zeros(total)
    w = hann(window)
    for i in range(n_frames):
        out[i * hop:i * hop + window] += frames[i]
        wsum[i * hop:i * hop + window] += w
    left = window // 2
    covered = np.where(wsum > 1e-8, wsum, 1.0)
    out = out / covered
    if length is None:
        length = total - 2 * left
    if left + length > total:
        raise ValueError(f"requested length {length} exceeds the {total - 2 * left} samples the frames cover")
    return out[left:left + length]


def perturb_channel(x: np.ndarray, rng: np.random.Generator, cfg: AugmentConfig) -> np.ndarray:
    spec = stft(x, cfg.stft_window, cfg.stft_hop)
    mag = np.abs(spec)
    phase = np.angle(spec)
    noise = rng.normal(cfg.noise_mean, cfg.noise_std, size=mag.shape) if cfg.noise_std > 0 else cfg.noise_mean
    mag = np.maximum(0.0, mag + noise)
    return istft(mag * np.exp(1j * phase), cfg.stft_window, cfg.stft_hop, length=x.size)


def sample_rng(cfg: AugmentConfig, index: int) -> np.random.Generator:
    """Independent stream per (seed, sample index)."""
    return np.random.default_rng(np.random.SeedSequence([int(cfg.rng_seed), int(index)]))


def augment_sample(s: Sample, cfg: AugmentConfig, index: int = 0) -> Sample:
    rng = sample_rng(cfg, index)
    data = np.stack([perturb_channel(ch.astype(np.float64), rng, cfg) for ch in s.data])
    meta = dict(s.meta)
    meta["augmented"] = int(index)
    return dataclasses.replace(s, data=data.astype(np.float32), meta=meta)


def balance(groups: Sequence[tuple[Sample, ...]], cfg: AugmentConfig) -> list[tuple[Sample, ...]]:
    """Augmented copies of minority-class groups, enough to equalize class counts.

    A group is a tuple of samples sharing one label (a single sample, or a
    ToM/EM pair).  Copy ``j`` perturbs minority group ``j mod n_minority``;
    member ``k`` of copy ``j`` uses stream index ``j * len(group) + k``.
    Returns only the new groups.
    """
    by_label: dict[int, list[tuple[Sample, ...]]] = {}
    for g in groups:
        by_label.setdefault(int(g[0].label), []).append(g)
    if len(by_label) < 2:
        return []
    counts = {lab: len(gs) for lab, gs in by_label.items()}
    minority = min(counts, key=lambda lab: (counts[lab], lab))
    deficit = max(counts.values()) - counts[minority]
    pool = by_label[minority]
    out = []
    for j in range(deficit):
        src = pool[j % len(pool)]
        out.append(tuple(augment_sample(s, cfg, j * len(src) + k) for k, s in enumerate(src)))
    return out
