"""Multi-scale deformable attention over 1-D temporal feature pyramids.

Each query predicts, from its own content vector, K sampling offsets and
K raw weights per head per pyramid level.  Weights are softmax-normalized
jointly over the L*K slots of a head, sampled features are gathered by
linear interpolation (zero-padded outside the level), weight-summed per
head, concatenated, and passed through an output projection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as td
from .tensor import Tensor


@dataclass
class FeaturePyramid:
    """List of per-level feature maps, level l shaped (T_l, d)."""

    levels: list[Tensor]

    @property
    def lengths(self) -> list[int]:
        return [lv.shape[0] for lv in self.levels]

    @property
    def embed_dim(self) -> int:
        return self.levels[0].shape[1]

    def __post_init__(self):
        if not self.levels:
            raise ValueError("pyramid needs at least one level")
        d = self.levels[0].shape[1]
        for lv in self.levels:
            if lv.shape[1] != d:
                raise td.ShapeError(
                    f"pyramid levels disagree on embed dim: {self.lengths}")


@dataclass
class DeformAttnConfig:
    embed_dim: int
    num_heads: int = 8
    num_levels: int = 2
    num_points: int = 4

    def __post_init__(self):
        if self.embed_dim % self.num_heads != 0:
            raise ValueError(
                f"embed_dim {self.embed_dim} not divisible by "
                f"num_heads {self.num_heads}")


@dataclass
class DeformAttnParams:
    """Learnable parameters of one deformable attention block."""

    cfg: DeformAttnConfig
    w_value: Tensor
    b_value: Tensor
    w_output: Tensor
    b_output: Tensor
    w_offset: Tensor
    b_offset: Tensor
    w_weight: Tensor
    b_weight: Tensor

    def tensors(self) -> dict[str, Tensor]:
        return {
            "w_value": self.w_value, "b_value": self.b_value,
            "w_output": self.w_output, "b_output": self.b_output,
            "w_offset": self.w_offset, "b_offset": self.b_offset,
            "w_weight": self.w_weight, "b_weight": self.b_weight,
        }


def init_deform_attn(cfg: DeformAttnConfig,
                     rng: np.random.Generator) -> DeformAttnParams:
    """Value/output projections get fan-in uniform init; offset and weight
    predictors start at zero so attention begins at the reference point
    with uniform weights."""
    d = cfg.embed_dim
    slots = cfg.num_heads * cfg.num_levels * cfg.num_points
    return DeformAttnParams(
        cfg=cfg,
        w_value=td.kaiming_uniform(rng, (d, d), d),
        b_value=td.zeros((d,)),
        w_output=td.kaiming_uniform(rng, (d, d), d),
        b_output=td.zeros((d,)),
        w_offset=td.zeros((d, slots)),
        b_offset=td.zeros((slots,)),
        w_weight=td.zeros((d, slots)),
        b_weight=td.zeros((slots,)),
    )


def sampling_locations(reference, offsets: Tensor,
                       pyramid_lengths: list[int]) -> Tensor:
    """Absolute sampling positions per level, in cells of that level.

    reference: (N,) normalized points in [0, 1], a plain array or a Tensor
    (Tensor references keep the position gradient alive, as the decoder's
    predicted references need); offsets: (N, H, L, K) in cell units.
    Position = ref * (T_l - 1) + offset; no clamping (the gather zero-pads
    out-of-range positions).
    """
    ref = td.tensor(reference)
    if ref.data.min() < 0.0 or ref.data.max() > 1.0:
        raise ValueError("reference points must lie in [0, 1]")
    scale = np.array([t - 1 for t in pyramid_lengths], dtype=np.float64)
    base = td.reshape(ref, (-1, 1, 1, 1)) * scale[None, None, :, None]
    return offsets + base


def ms_deform_attn(queries: Tensor, references: np.ndarray,
                   pyramid: FeaturePyramid,
                   params: DeformAttnParams) -> Tensor:
    """Deformable attention for N_q queries against a feature pyramid.

    queries: (N_q, d); references: (N_q,) in [0, 1].  Returns (N_q, d),
    differentiable w.r.t. queries, pyramid features, and all parameters.
    """
    cfg = params.cfg
    n_q, d = queries.shape
    heads, levels, points = cfg.num_heads, cfg.num_levels, cfg.num_points
    d_head = d // heads
    if len(pyramid.levels) != levels:
        raise td.ShapeError(
            f"pyramid has {len(pyramid.levels)} levels, config expects {levels}")

    raw_off = queries @ params.w_offset + params.b_offset
    offsets = td.reshape(raw_off, (n_q, heads, levels, points))
    raw_w = queries @ params.w_weight + params.b_weight
    attn = td.softmax(td.reshape(raw_w, (n_q, heads, levels * points)), axis=-1)
    attn = td.reshape(attn, (n_q, heads, levels, points))

    positions = sampling_locations(references, offsets, pyramid.lengths)

    out_heads = None
    for l, level in enumerate(pyramid.levels):
        vals = td.reshape(level @ params.w_value + params.b_value,
                          (level.shape[0], heads, d_head))
        pos_l = positions[:, :, l, :]                      # (N_q, H, K)
        sampled = td.deform_gather(vals, pos_l)            # (N_q, H, K, d_head)
        weighted = td.reshape(attn[:, :, l, :], (n_q, heads, points, 1)) * sampled
        contrib = weighted.sum(axis=2)                     # (N_q, H, d_head)
        out_heads = contrib if out_heads is None else out_heads + contrib

    merged = td.reshape(out_heads, (n_q, d))
    return merged @ params.w_output + params.b_output
