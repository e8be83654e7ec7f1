"""Batch InfoNCE over L2-normalized representations."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import diffcore as dc

log = logging.getLogger(__name__)

DEFAULT_TAU = 0.1
_MASK = -1e9


@dataclass
class ContrastBatch:
    reps: dc.Tensor
    labels: np.ndarray
    positive_index: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels)
        self.positive_index = np.asarray(self.positive_index, dtype=np.int64)
        validate_positive_map(self.labels, self.positive_index)
        if self.reps.ndim != 2 or self.reps.shape[0] != len(self.labels):
            raise ValueError(f"reps shape {self.reps.shape} does not match {len(self.labels)} labels")


def validate_positive_map(labels: np.ndarray, positive_index: np.ndarray) -> None:
    b = len(labels)
    if b < 2:
        raise ValueError(f"contrastive batch needs B >= 2, got {b}")
    if positive_index.shape != (b,):
        raise ValueError(f"positive map has shape {positive_index.shape}, expected ({b},)")
    for i, j in enumerate(positive_index):
        if not 0 <= j < b or j == i:
            raise ValueError(f"invalid positive {j} for query {i}")
        if labels[j] != labels[i]:
            raise ValueError(f"positive {j} of query {i} has a different label")


def l2_normalize_batch(reps: dc.Tensor) -> dc.Tensor:
    """Row-wise unit norm; zero rows stay zero (logged)."""
    norms = np.linalg.norm(reps.values, axis=-1)
    if np.any(norms == 0):
        log.warning("l2 normalization hit %d zero vector(s); left as zero", int(np.sum(norms == 0)))
    return dc.l2_normalize(reps, axis=-1)


def info_nce(batch: ContrastBatch, tau: float = DEFAULT_TAU, exclude_self: bool = False) -> dc.Tensor:
    """Mean over queries of -log softmax_j(z_i . z_j / tau) at j = positive(i).

    The softmax denominator runs over every j in the batch, the query itself
    included, unless ``exclude_self``.
    """
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    z = batch.reps
    b = z.shape[0]
    logits = dc.scale(z @ dc.transpose(z, (1, 0)), 1.0 / tau)
    if exclude_self:
        logits = logits + np.eye(b, dtype=z.dtype) * z.dtype.type(_MASK)
    logp = dc.log_softmax(logits, axis=-1)
    onehot = np.zeros((b, b), dtype=z.dtype)
    onehot[np.arange(b), batch.positive_index] = 1
    picked = dc.sum_(logp * onehot, axis=-1)
    return -dc.mean(picked)


def build_positive_map(labels, rng: np.random.Generator) -> np.ndarray:
    """For each i, a uniformly drawn same-label index j != i."""
    labels = np.asarray(labels)
    out = np.empty(len(labels), dtype=np.int64)
    for lab in np.unique(labels):
        members = np.flatnonzero(labels == lab)
        if members.size < 2:
            raise ValueError(f"class {lab} has a single member in the batch; no positive available")
        for i in members:
            others = members[members != i]
            out[i] = others[rng.integers(others.size)]
    return out
