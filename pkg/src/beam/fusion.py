"""Shared/specific decomposition of per-view latents and the fusion loss.

A latent splits positionally: the first half is the shared (common) part,
the second half the view-specific part.  The loss pushes the common halves
of the two views together and the specific halves apart:

    |cos(sep_tom, sep_em)| / (cos(com_tom, com_em) + 1 + eps)

and the fused vector is (sep_tom, mean of the two com halves, sep_em).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

from . import diffcore as dc
from .encoder import Latent

DEFAULT_EPS = 1e-8


@dataclass
class Decomposition:
    com: dc.Tensor
    sep: dc.Tensor


def _values(z) -> dc.Tensor:
    return z.values if isinstance(z, Latent) else z


def decompose(z, projection: Mapping[str, dc.Tensor] | None = None) -> Decomposition:
    """Split ``z`` (..., d) into halves; with ``projection``, use learned maps instead.

    ``projection`` holds ``"com"`` and ``"sep"`` matrices of shape (d, d/2).
    """
    z = _values(z)
    d = z.shape[-1]
    if d % 2:
        raise ValueError(f"latent dimension must be even, got {d}")
    if projection is not None:
        zz = z if z.ndim > 1 else dc.reshape(z, (1, d))
        com, sep = zz @ projection["com"], zz @ projection["sep"]
        if z.ndim == 1:
            com, sep = dc.reshape(com, (d // 2,)), dc.reshape(sep, (d // 2,))
        return Decomposition(com, sep)
    half = d // 2
    return Decomposition(z[..., :half], z[..., half:])


def _check_pair(z_tom: dc.Tensor, z_em: dc.Tensor) -> None:
    if z_tom.shape != z_em.shape:
        raise ValueError(f"view latents differ in shape: {z_tom.shape} vs {z_em.shape}")


def similarities(z_tom, z_em, projection=None) -> tuple[dc.Tensor, dc.Tensor]:
    """(sim_com, sim_sep) cosine similarities, one per batch row."""
    z_tom, z_em = _values(z_tom), _values(z_em)
    _check_pair(z_tom, z_em)
    a, b = decompose(z_tom, projection), decompose(z_em, projection)
    return dc.cosine_similarity(a.com, b.com), dc.cosine_similarity(a.sep, b.sep)


def fusion_loss(z_tom, z_em, eps: float = DEFAULT_EPS, projection=None) -> dc.Tensor:
    """Scalar fusion loss, averaged over the batch when inputs are (B, d)."""
    sim_com, sim_sep = similarities(z_tom, z_em, projection)
    per_row = dc.div(dc.abs_(sim_sep), sim_com + (1.0 + eps))
    return dc.mean(per_row)


def fuse(z_tom, z_em, projection=None) -> dc.Tensor:
    """(..., d) x2 -> (..., 3d/2): specific ToM, averaged common, specific EM."""
    z_tom, z_em = _values(z_tom), _values(z_em)
    _check_pair(z_tom, z_em)
    a, b = decompose(z_tom, projection), decompose(z_em, projection)
    common = dc.scale(a.com + b.com, 0.5)
    return dc.concat([a.sep, common, b.sep], axis=-1)
