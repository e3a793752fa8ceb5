"""Expanding path: C learnable stage queries refined by deformable
cross-attention over the encoder pyramid."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as td
from .tensor import Tensor
from .deform import DeformAttnConfig, ms_deform_attn
from .encoder import (EncodedSequence, TransformerLayerParams,
                      init_transformer_layer, transformer_sublayers)


@dataclass
class DecoderConfig:
    num_stages: int
    embed_dim: int = 64
    num_layers: int = 2
    num_levels: int = 2
    ffn_dim: int = 64
    num_heads: int = 8
    num_points: int = 4


@dataclass
class DecoderParams:
    cfg: DecoderConfig
    query_content: Tensor           # (C, d)
    query_pos: Tensor               # (C, d)
    ref_w: Tensor                   # (d, 1), reference predictor
    ref_b: Tensor
    layers: list[TransformerLayerParams]

    def tensors(self) -> dict[str, Tensor]:
        out = {
            "decoder.query_content": self.query_content,
            "decoder.query_pos": self.query_pos,
            "decoder.ref_w": self.ref_w,
            "decoder.ref_b": self.ref_b,
        }
        for i, layer in enumerate(self.layers):
            out.update(layer.tensors(f"decoder.layer{i}"))
        return out


def init_decoder(cfg: DecoderConfig, rng: np.random.Generator) -> DecoderParams:
    d = cfg.embed_dim
    attn_cfg = DeformAttnConfig(embed_dim=d, num_heads=cfg.num_heads,
                                num_levels=cfg.num_levels,
                                num_points=cfg.num_points)
    return DecoderParams(
        cfg=cfg,
        query_content=Tensor(rng.standard_normal((cfg.num_stages, d)),
                             requires_grad=True),
        query_pos=Tensor(rng.standard_normal((cfg.num_stages, d)),
                         requires_grad=True),
        ref_w=td.kaiming_uniform(rng, (d, 1), d),
        ref_b=td.zeros((1,)),
        layers=[init_transformer_layer(d, cfg.ffn_dim, attn_cfg, rng)
                for _ in range(cfg.num_layers)],
    )


def decode(encoded: EncodedSequence, params: DecoderParams) -> Tensor:
    """Refine the stage queries into per-stage features, shape (C, d).

    Per layer: the query positional embedding is added to the content, a
    reference point in (0, 1) is predicted from that sum via sigmoid, and
    deformable cross-attention over the encoder pyramid feeds the usual
    residual/norm/FFN stack.  Row c of the output always comes from query c,
    so the map is equivariant in the query index.
    """
    cfg = params.cfg
    if params.query_content.shape[0] != cfg.num_stages:
        raise td.ShapeError(
            f"{params.query_content.shape[0]} queries but config expects "
            f"{cfg.num_stages} stages")
    x = params.query_content
    for layer in params.layers:
        q_in = x + params.query_pos
        refs = td.reshape(td.sigmoid(q_in @ params.ref_w + params.ref_b),
                          (cfg.num_stages,))
        attn = ms_deform_attn(q_in, refs, encoded.pyramid, layer.attn)
        x = transformer_sublayers(x, attn, layer)
    return x
