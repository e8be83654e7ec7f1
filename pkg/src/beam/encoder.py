"""Patch transformer encoder mapping a C x W sample to a d_model latent.

Each channel's window is cut into patches of ``patch_len`` samples.  A
token is the linear projection of one patch plus a learned embedding of its
channel index and of its patch (time) index.  Tokens go through pre-norm
transformer blocks and are mean-pooled.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Mapping

import numpy as np

from . import diffcore as dc
from .eeg_io import View
from .preprocess import Sample

Params = dict[str, dc.Tensor]


@dataclass(frozen=True)
class EncoderConfig:
    patch_len: int = 200
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 128
    max_channels: int = 32
    max_patches: int = 8

    def __post_init__(self):
        if self.d_model % 2:
            raise ValueError(f"d_model must be even for the com/sep split, got {self.d_model}")
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        for name in ("patch_len", "n_layers", "n_heads", "d_ff", "max_channels", "max_patches"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "EncoderConfig":
        return cls(**{k: int(v) for k, v in d.items()})


@dataclass
class Latent:
    values: dc.Tensor
    view: View

    def __post_init__(self):
        if self.values.ndim != 1:
            raise ValueError(f"latent must be a vector, got shape {self.values.shape}")


def parameter_count(cfg: EncoderConfig) -> int:
    d, f = cfg.d_model, cfg.d_ff
    embed = cfg.patch_len * d + d + cfg.max_channels * d + cfg.max_patches * d
    per_layer = 4 * d + 4 * d * d + 4 * d + 2 * d * f + f + d
    return embed + cfg.n_layers * per_layer


def _uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_params(cfg: EncoderConfig, rng: np.random.Generator, prefix: str = "encoder.",
                dtype=np.float32) -> Params:
    """Scaled-uniform weights, zero biases, unit layer-norm gains."""
    d, f = cfg.d_model, cfg.d_ff
    raw: dict[str, np.ndarray] = {
        "patch.weight": _uniform(rng, cfg.patch_len, d, (cfg.patch_len, d)),
        "patch.bias": np.zeros(d),
        "channel_embedding": _uniform(rng, cfg.max_channels, d, (cfg.max_channels, d)),
        "position_embedding": _uniform(rng, cfg.max_patches, d, (cfg.max_patches, d)),
    }
    for i in range(cfg.n_layers):
        p = f"layers.{i}."
        raw[p + "ln1.gain"] = np.ones(d)
        raw[p + "ln1.bias"] = np.zeros(d)
        for name in ("q", "k", "v", "o"):
            raw[p + f"attn.w{name}"] = _uniform(rng, d, d, (d, d))
            raw[p + f"attn.b{name}"] = np.zeros(d)
        raw[p + "ln2.gain"] = np.ones(d)
        raw[p + "ln2.bias"] = np.zeros(d)
        raw[p + "ff1.weight"] = _uniform(rng, d, f, (d, f))
        raw[p + "ff1.bias"] = np.zeros(f)
        raw[p + "ff2.weight"] = _uniform(rng, f, d, (f, d))
        raw[p + "ff2.bias"] = np.zeros(d)
    return {prefix + k: dc.Tensor(v.astype(dtype), requires_grad=True) for k, v in raw.items()}


def patchify(x: np.ndarray | dc.Tensor, params: Params, cfg: EncoderConfig, prefix: str = "encoder.") -> dc.Tensor:
    """(B, C, W) batch -> (B, C * W / patch_len, d_model) tokens."""
    xv = x.values if isinstance(x, dc.Tensor) else np.asarray(x)
    if xv.ndim == 2:
        xv = xv[None]
    b, c, w = xv.shape
    if w % cfg.patch_len:
        raise ValueError(f"window of {w} samples is not divisible by patch_len {cfg.patch_len}")
    n_patch = w // cfg.patch_len
    if c > cfg.max_channels or n_patch > cfg.max_patches:
        raise ValueError(f"{c} channels x {n_patch} patches exceeds encoder capacity "
                         f"({cfg.max_channels} x {cfg.max_patches})")
    dtype = params[prefix + "patch.weight"].dtype
    if isinstance(x, dc.Tensor):
        patches = dc.reshape(x if x.ndim == 3 else dc.reshape(x, (1, c, w)), (b, c, n_patch, cfg.patch_len))
    else:
        patches = dc.Tensor(xv.reshape(b, c, n_patch, cfg.patch_len).astype(dtype))
    tok = patches @ params[prefix + "patch.weight"] + params[prefix + "patch.bias"]
    chan = dc.reshape(params[prefix + "channel_embedding"][:c], (c, 1, cfg.d_model))
    pos = params[prefix + "position_embedding"][:n_patch]
    tok = tok + chan + pos
    return dc.reshape(tok, (b, c * n_patch, cfg.d_model))


def _affine_norm(h: dc.Tensor, params: Params, name: str) -> dc.Tensor:
    return dc.layer_norm(h) * params[name + ".gain"] + params[name + ".bias"]


def _attention(h: dc.Tensor, params: Params, p: str, cfg: EncoderConfig) -> dc.Tensor:
    b, n, d = h.shape
    heads, dh = cfg.n_heads, d // cfg.n_heads

    def split(t):
        return dc.transpose(dc.reshape(t, (b, n, heads, dh)), (0, 2, 1, 3))

    q = split(h @ params[p + "attn.wq"] + params[p + "attn.bq"])
    k = split(h @ params[p + "attn.wk"] + params[p + "attn.bk"])
    v = split(h @ params[p + "attn.wv"] + params[p + "attn.bv"])
    scores = dc.scale(q @ dc.transpose(k, (0, 1, 3, 2)), 1.0 / math.sqrt(dh))
    ctx = dc.softmax(scores, axis=-1) @ v
    ctx = dc.reshape(dc.transpose(ctx, (0, 2, 1, 3)), (b, n, d))
    return ctx @ params[p + "attn.wo"] + params[p + "attn.bo"]


def encode_batch(x, params: Params, cfg: EncoderConfig, prefix: str = "encoder.") -> dc.Tensor:
    """(B, C, W) -> (B, d_model) latents."""
    h = patchify(x, params, cfg, prefix)
    for i in range(cfg.n_layers):
        p = f"{prefix}layers.{i}."
        h = h + _attention(_affine_norm(h, params, p + "ln1"), params, p, cfg)
        f = _affine_norm(h, params, p + "ln2")
        f = dc.gelu(f @ params[p + "ff1.weight"] + params[p + "ff1.bias"])
        h = h + (f @ params[p + "ff2.weight"] + params[p + "ff2.bias"])
    return dc.mean(h, axis=1)


def encode(s: Sample, params: Params, cfg: EncoderConfig, prefix: str = "encoder.") -> Latent:
    z = encode_batch(s.data[None], params, cfg, prefix)
    return Latent(dc.reshape(z, (cfg.d_model,)), s.view)
