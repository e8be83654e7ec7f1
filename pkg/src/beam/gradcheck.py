"""Finite-difference verification of every differentiable primitive and loss."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import diffcore as dc
from .contrast import ContrastBatch, build_positive_map, info_nce
from .encoder import EncoderConfig, encode_batch, init_params
from .fusion import fuse, fusion_loss
from .trainer import cross_entropy

THRESHOLD = 1e-4
ENCODER_THRESHOLD = 1e-3
DEFAULT_POINTS = 25
STEP = 1e-4

TINY_ENCODER = EncoderConfig(patch_len=4, d_model=4, n_layers=1, n_heads=1, d_ff=8, max_channels=2, max_patches=2)


@dataclass(frozen=True)
class CheckResult:
    name: str
    max_error: float
    threshold: float
    points: int

    @property
    def passed(self) -> bool:
        return self.max_error < self.threshold

    def line(self) -> str:
        return (f"{'PASS' if self.passed else 'FAIL'} {self.name:<18} max_rel_err={self.max_error:.3e} "
                f"threshold={self.threshold:.0e} points={self.points}")


def _away_from_zero(x: np.ndarray, margin: float = 0.1) -> np.ndarray:
    return np.sign(x + (x == 0)) * (np.abs(x) + margin)


def _weighted(weights: np.ndarray, t: dc.Tensor) -> dc.Tensor:
    # Contract with fixed random weights so the whole Jacobian is exercised.
    return dc.sum_(t * weights)


Case = Callable[[np.random.Generator], tuple[Callable[..., dc.Tensor], list[np.ndarray]]]


def _unary(op, make=lambda rng, shape: rng.normal(size=shape)) -> Case:
    def case(rng):
        x = make(rng, (3, 4))
        w = rng.normal(size=(3, 4))
        return (lambda a: _weighted(w, op(a))), [x]
    return case


def _binary(op, make_b=lambda rng, shape: rng.normal(size=shape)) -> Case:
    def case(rng):
        a, b = rng.normal(size=(3, 4)), make_b(rng, (3, 4))
        w = rng.normal(size=(3, 4))
        return (lambda x, y: _weighted(w, op(x, y))), [a, b]
    return case


def _matmul(rng):
    a, b, w = rng.normal(size=(2, 3, 4)), rng.normal(size=(4, 5)), rng.normal(size=(2, 3, 5))
    return (lambda x, y: _weighted(w, x @ y)), [a, b]


def _dot(rng):
    a, b, w = rng.normal(size=(3, 4)), rng.normal(size=(3, 4)), rng.normal(size=3)
    return (lambda x, y: _weighted(w, dc.dot(x, y))), [a, b]


def _concat(rng):
    a, b, w = rng.normal(size=(3, 2)), rng.normal(size=(3, 4)), rng.normal(size=(3, 6))
    return (lambda x, y: _weighted(w, dc.concat([x, y], axis=-1))), [a, b]


def _slice(rng):
    a, w = rng.normal(size=(4, 5)), rng.normal(size=(2, 3))
    return (lambda x: _weighted(w, x[1:3, ::2])), [a]


def _reductions(rng):
    a, w = rng.normal(size=(3, 4)), rng.normal(size=4)
    return (lambda x: _weighted(w, dc.mean(x, axis=0)) + dc.sum_(x * x)), [a]


def _cosine(rng):
    a, b, w = rng.normal(size=(3, 4)), rng.normal(size=(3, 4)), rng.normal(size=3)
    return (lambda x, y: _weighted(w, dc.cosine_similarity(x, y))), [a, b]


def _fusion(rng):
    return (lambda x, y: fusion_loss(x, y)), [rng.normal(size=(4, 6)), rng.normal(size=(4, 6))]


def _fuse(rng):
    w = rng.normal(size=(4, 9))
    return (lambda x, y: _weighted(w, fuse(x, y))), [rng.normal(size=(4, 6)), rng.normal(size=(4, 6))]


def _info_nce(rng):
    labels = np.array([0, 0, 1, 1, 0, 1])
    pos = build_positive_map(labels, rng)
    reps = rng.normal(size=(6, 5))
    return (lambda z: info_nce(ContrastBatch(dc.l2_normalize(z), labels, pos), tau=0.5)), [reps]


def _cross_entropy(rng):
    labels = rng.integers(0, 2, size=5)
    return (lambda z: cross_entropy(z, labels)), [rng.normal(size=(5, 2))]


PRIMITIVES: dict[str, Case] = {
    "add": _binary(dc.add),
    "sub": _binary(dc.sub),
    "mul": _binary(dc.mul),
    "div": _binary(dc.div, lambda rng, s: _away_from_zero(rng.normal(size=s), 0.5)),
    "scale": _unary(lambda a: dc.scale(a, -1.7)),
    "exp": _unary(dc.exp),
    "log": _unary(dc.log, lambda rng, s: rng.uniform(0.2, 3.0, size=s)),
    "abs": _unary(dc.abs_, lambda rng, s: _away_from_zero(rng.normal(size=s))),
    "gelu": _unary(dc.gelu),
    "matmul": _matmul,
    "dot": _dot,
    "concat": _concat,
    "slice": _slice,
    "reshape": _unary(lambda a: dc.reshape(dc.transpose(a, (1, 0)), (3, 4))),
    "sum_mean": _reductions,
    "softmax": _unary(lambda a: dc.softmax(a, axis=-1)),
    "log_softmax": _unary(lambda a: dc.log_softmax(a, axis=0)),
    "layer_norm": _unary(dc.layer_norm),
    "l2_normalize": _unary(dc.l2_normalize),
    "cosine": _cosine,
    "fuse": _fuse,
}

LOSSES: dict[str, Case] = {
    "fusion_loss": _fusion,
    "info_nce": _info_nce,
    "cross_entropy": _cross_entropy,
}


def check_case(name: str, case: Case, points: int, seed: int, threshold: float = THRESHOLD,
               h: float = STEP) -> CheckResult:
    rng = np.random.default_rng(np.random.SeedSequence([seed, sum(map(ord, name))]))
    worst = 0.0
    for _ in range(points):
        fn, inputs = case(rng)
        worst = max(worst, dc.gradient_check(fn, inputs, h))
    return CheckResult(name, worst, threshold, points)


def check_encoder(seed: int = 0, cfg: EncoderConfig = TINY_ENCODER, h: float = STEP) -> CheckResult:
    """End-to-end check of a two-channel, two-patch encoder through a scalar head."""
    rng = np.random.default_rng(seed)
    params = init_params(cfg, rng, "encoder.", np.float64)
    names = sorted(params)
    x = rng.normal(size=(3, 2, 2 * cfg.patch_len))
    w = rng.normal(size=(3, cfg.d_model))

    def fn(*tensors):
        p = dict(zip(names, tensors))
        return _weighted(w, encode_batch(x, p, cfg, "encoder."))

    err = dc.gradient_check(fn, [params[n].values for n in names], h)
    return CheckResult("encoder", err, ENCODER_THRESHOLD, 1)


def run_suite(points: int = DEFAULT_POINTS, seed: int = 0, include_encoder: bool = True) -> list[CheckResult]:
    results = [check_case(n, c, points, seed) for n, c in PRIMITIVES.items()]
    results += [check_case(n, c, points, seed) for n, c in LOSSES.items()]
    if include_encoder:
        results.append(check_encoder(seed))
    return results


__all__ = ["CheckResult", "PRIMITIVES", "LOSSES", "TINY_ENCODER", "check_case", "check_encoder", "run_suite"]
