"""Full model: encoder, stage-query decoder, and the three output heads,
with parameter bookkeeping for the optimizer and checkpointing."""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import tensor as td
from .tensor import Tensor
from .encoder import EncoderConfig, EncoderParams, encode, init_encoder
from .decoder import DecoderConfig, DecoderParams, decode, init_decoder
from .heads import (FramePrediction, HeadParams, SegmentPrediction,
                    classification_head, collaboration_head, init_heads,
                    segmentation_head)
from .monotonic import decode_argmax, decode_from_segments, dp_monotonic


@dataclass
class ModelConfig:
    input_dim: int = 32
    embed_dim: int = 64
    ffn_dim: int = 64
    num_enc_layers: int = 2
    num_dec_layers: int = 2
    num_levels: int = 2
    num_heads: int = 8
    num_points: int = 4
    num_stages: int = 4
    alpha: float = 0.1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class ModelOutput:
    encoded: Tensor                 # (T, d)
    stage_features: Tensor          # (C, d)
    cls: FramePrediction
    seg: SegmentPrediction
    col: FramePrediction


DECODE_MODES = ("collab-argmax", "segments", "collab-dp", "cls-argmax")


class StageFormer:
    """Encoder-decoder deformable transformer with collaborative heads."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        c = config
        self.encoder: EncoderParams = init_encoder(EncoderConfig(
            input_dim=c.input_dim, embed_dim=c.embed_dim,
            num_layers=c.num_enc_layers, num_levels=c.num_levels,
            ffn_dim=c.ffn_dim, num_heads=c.num_heads,
            num_points=c.num_points), rng)
        self.decoder: DecoderParams = init_decoder(DecoderConfig(
            num_stages=c.num_stages, embed_dim=c.embed_dim,
            num_layers=c.num_dec_layers, num_levels=c.num_levels,
            ffn_dim=c.ffn_dim, num_heads=c.num_heads,
            num_points=c.num_points), rng)
        self.heads: HeadParams = init_heads(c.embed_dim, c.num_stages,
                                            c.alpha, rng)

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        out.update(self.encoder.tensors())
        out.update(self.decoder.tensors())
        out.update(self.heads.tensors())
        return out

    def zero_grad(self) -> None:
        for t in self.parameters().values():
            t.zero_grad()

    def forward(self, features) -> ModelOutput:
        """Run one (T, D_in) sequence through all paths and heads."""
        enc = encode(features, self.encoder)
        f_dec = decode(enc, self.decoder)
        cls = classification_head(enc.frame_features, self.heads)
        seg = segmentation_head(f_dec, self.heads)
        col = collaboration_head(enc.frame_features, f_dec, seg, self.heads)
        return ModelOutput(encoded=enc.frame_features, stage_features=f_dec,
                           cls=cls, seg=seg, col=col)

    def predict_labels(self, out: ModelOutput,
                       mode: str = "collab-argmax") -> np.ndarray:
        """Final label sequence under the configured decoding mode."""
        t_len = out.encoded.shape[0]
        if mode == "collab-argmax":
            return decode_argmax(out.col.probs)
        if mode == "cls-argmax":
            return decode_argmax(out.cls.probs)
        if mode == "segments":
            return decode_from_segments(out.seg, t_len).labels
        if mode == "collab-dp":
            logp = np.log(np.maximum(out.col.probs.data, 1e-300))
            return dp_monotonic(logp).labels
        raise ValueError(f"unknown decode mode '{mode}', "
                         f"expected one of {DECODE_MODES}")

    # -- parameter state for checkpointing ------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.parameters().items()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = set(params) ^ set(arrays)
        if missing:
            raise KeyError(f"parameter name mismatch: {sorted(missing)}")
        for k, t in params.items():
            if t.data.shape != arrays[k].shape:
                raise td.ShapeError(
                    f"param {k}: shape {arrays[k].shape} != {t.data.shape}")
            t.data = arrays[k].astype(np.float64).copy()
