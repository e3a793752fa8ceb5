"""Contracting path: frame embedding, stride-2 temporal pyramid, and
deformable self-attention layers producing per-frame encoded features."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as td
from .tensor import Tensor
from .deform import (DeformAttnConfig, DeformAttnParams, FeaturePyramid,
                     init_deform_attn, ms_deform_attn)


@dataclass
class EncoderConfig:
    input_dim: int
    embed_dim: int = 64
    num_layers: int = 2
    num_levels: int = 2
    ffn_dim: int = 64
    num_heads: int = 8
    num_points: int = 4

    def __post_init__(self):
        if self.embed_dim <= 0 or self.num_layers < 1 or self.num_levels < 1:
            raise ValueError(f"invalid encoder config: {self}")


@dataclass
class EncodedSequence:
    frame_features: Tensor          # (T, d), level-0 output
    pyramid: FeaturePyramid


@dataclass
class TransformerLayerParams:
    attn: DeformAttnParams
    ln1_gamma: Tensor
    ln1_beta: Tensor
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor
    ln2_gamma: Tensor
    ln2_beta: Tensor

    def tensors(self, prefix: str) -> dict[str, Tensor]:
        out = {f"{prefix}.attn.{k}": v for k, v in self.attn.tensors().items()}
        out.update({
            f"{prefix}.ln1_gamma": self.ln1_gamma,
            f"{prefix}.ln1_beta": self.ln1_beta,
            f"{prefix}.ffn_w1": self.ffn_w1,
            f"{prefix}.ffn_b1": self.ffn_b1,
            f"{prefix}.ffn_w2": self.ffn_w2,
            f"{prefix}.ffn_b2": self.ffn_b2,
            f"{prefix}.ln2_gamma": self.ln2_gamma,
            f"{prefix}.ln2_beta": self.ln2_beta,
        })
        return out


def init_transformer_layer(embed_dim: int, ffn_dim: int,
                           attn_cfg: DeformAttnConfig,
                           rng: np.random.Generator) -> TransformerLayerParams:
    d = embed_dim
    return TransformerLayerParams(
        attn=init_deform_attn(attn_cfg, rng),
        ln1_gamma=Tensor(np.ones(d), requires_grad=True),
        ln1_beta=td.zeros((d,)),
        ffn_w1=td.kaiming_uniform(rng, (d, ffn_dim), d),
        ffn_b1=td.zeros((ffn_dim,)),
        ffn_w2=td.kaiming_uniform(rng, (ffn_dim, d), ffn_dim),
        ffn_b2=td.zeros((d,)),
        ln2_gamma=Tensor(np.ones(d), requires_grad=True),
        ln2_beta=td.zeros((d,)),
    )


def transformer_sublayers(x: Tensor, attn_out: Tensor,
                          p: TransformerLayerParams) -> Tensor:
    """Post-norm residual wiring shared by encoder and decoder layers."""
    h = td.layer_norm(x + attn_out, p.ln1_gamma, p.ln1_beta)
    ffn = td.relu(h @ p.ffn_w1 + p.ffn_b1) @ p.ffn_w2 + p.ffn_b2
    return td.layer_norm(h + ffn, p.ln2_gamma, p.ln2_beta)


@dataclass
class EncoderParams:
    cfg: EncoderConfig
    embed_w: Tensor                 # (D_in, d)
    embed_b: Tensor
    conv_w: list[Tensor]            # per downsampling conv, (3, d, d)
    conv_b: list[Tensor]
    layers: list[TransformerLayerParams]

    def tensors(self) -> dict[str, Tensor]:
        out = {"encoder.embed_w": self.embed_w, "encoder.embed_b": self.embed_b}
        for i, (w, b) in enumerate(zip(self.conv_w, self.conv_b)):
            out[f"encoder.conv{i}_w"] = w
            out[f"encoder.conv{i}_b"] = b
        for i, layer in enumerate(self.layers):
            out.update(layer.tensors(f"encoder.layer{i}"))
        return out


def init_encoder(cfg: EncoderConfig, rng: np.random.Generator) -> EncoderParams:
    d = cfg.embed_dim
    attn_cfg = DeformAttnConfig(embed_dim=d, num_heads=cfg.num_heads,
                                num_levels=cfg.num_levels,
                                num_points=cfg.num_points)
    return EncoderParams(
        cfg=cfg,
        embed_w=td.kaiming_uniform(rng, (cfg.input_dim, d), cfg.input_dim),
        embed_b=td.zeros((d,)),
        conv_w=[td.kaiming_uniform(rng, (3, d, d), 3 * d)
                for _ in range(cfg.num_levels - 1)],
        conv_b=[td.zeros((d,)) for _ in range(cfg.num_levels - 1)],
        layers=[init_transformer_layer(d, cfg.ffn_dim, attn_cfg, rng)
                for _ in range(cfg.num_layers)],
    )


def positional_encoding(t_len: int, d: int) -> np.ndarray:
    """Fixed sinusoidal position code: even channels sin, odd channels cos."""
    pos = np.arange(t_len, dtype=np.float64)[:, None]
    i = np.arange(d // 2 + d % 2, dtype=np.float64)
    freq = np.power(10000.0, -2.0 * i / d)
    angles = pos * freq[None, :]
    pe = np.zeros((t_len, d))
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles[:, : d // 2])
    return pe


def embed_frames(features, params: EncoderParams) -> Tensor:
    """Project D_in features to d and add the sinusoidal position code."""
    x = td.tensor(features)
    if x.ndim != 2 or x.shape[1] != params.cfg.input_dim:
        raise td.ShapeError(
            f"expected (T, {params.cfg.input_dim}) features, got {x.shape}")
    projected = x @ params.embed_w + params.embed_b
    return projected + positional_encoding(x.shape[0], params.cfg.embed_dim)


def build_pyramid(frames: Tensor, params: EncoderParams) -> FeaturePyramid:
    """Level 0 is the input; each further level is a stride-2 conv (kernel 3,
    zero padding 1), so lengths follow T_l = ceil(T_{l-1} / 2)."""
    levels = [frames]
    for w, b in zip(params.conv_w, params.conv_b):
        levels.append(td.conv1d(levels[-1], w, b, stride=2, padding=1))
    return FeaturePyramid(levels=levels)


def grid_references(lengths: list[int]) -> np.ndarray:
    """Normalized self-reference per pyramid position, concatenated level by
    level.  A length-1 level sits at reference 0."""
    refs = []
    for t_len in lengths:
        if t_len == 1:
            refs.append(np.zeros(1))
        else:
            refs.append(np.arange(t_len, dtype=np.float64) / (t_len - 1))
    return np.concatenate(refs)


def encode(features, params: EncoderParams) -> EncodedSequence:
    """Run the full contracting path on (T, D_in) per-frame features."""
    cfg = params.cfg
    frames = embed_frames(features, params)
    pyramid = build_pyramid(frames, params)
    lengths = pyramid.lengths
    refs = grid_references(lengths)

    x = td.concat(pyramid.levels, axis=0)
    for layer in params.layers:
        cur_pyr = FeaturePyramid(levels=_split_levels(x, lengths))
        attn = ms_deform_attn(x, refs, cur_pyr, layer.attn)
        x = transformer_sublayers(x, attn, layer)

    out_levels = _split_levels(x, lengths)
    return EncodedSequence(frame_features=out_levels[0],
                           pyramid=FeaturePyramid(levels=out_levels))


def _split_levels(stacked: Tensor, lengths: list[int]) -> list[Tensor]:
    levels = []
    offset = 0
    for t_len in lengths:
        levels.append(stacked[offset:offset + t_len])
        offset += t_len
    return levels
