"""Collaborative output heads: per-frame classification, per-stage
segmentation (widths and centers on the unit interval), and the
collaboration refinement combining both paths.

Frame indices are normalized to t_i = (i + 0.5) / T throughout so that
distances to segment centers are measured on [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as td
from .tensor import Tensor


@dataclass
class FramePrediction:
    """Per-frame stage distribution; rows of ``probs`` are simplexes.

    ``scores`` holds the pre-softmax values (used by the losses and by
    DP decoding, which wants log-domain inputs)."""
    probs: Tensor                   # (T, C)
    scores: Tensor                  # (T, C)


@dataclass
class SegmentPrediction:
    widths: Tensor                  # (C,), simplex
    centers: Tensor                 # (C,), strictly increasing in (0, 1)


@dataclass
class HeadParams:
    num_stages: int
    alpha: float
    cls_w1: Tensor                  # classification FFN d -> d -> C
    cls_b1: Tensor
    cls_w2: Tensor
    cls_b2: Tensor
    seg_w1: Tensor                  # segmentation FFN d -> d -> 1
    seg_b1: Tensor
    seg_w2: Tensor
    seg_b2: Tensor
    col_wq: Tensor                  # collaboration projections (d, d)
    col_wk: Tensor

    def tensors(self) -> dict[str, Tensor]:
        return {
            "heads.cls_w1": self.cls_w1, "heads.cls_b1": self.cls_b1,
            "heads.cls_w2": self.cls_w2, "heads.cls_b2": self.cls_b2,
            "heads.seg_w1": self.seg_w1, "heads.seg_b1": self.seg_b1,
            "heads.seg_w2": self.seg_w2, "heads.seg_b2": self.seg_b2,
            "heads.col_wq": self.col_wq, "heads.col_wk": self.col_wk,
        }


def init_heads(embed_dim: int, num_stages: int, alpha: float,
               rng: np.random.Generator) -> HeadParams:
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    d = embed_dim
    return HeadParams(
        num_stages=num_stages,
        alpha=alpha,
        cls_w1=td.kaiming_uniform(rng, (d, d), d),
        cls_b1=td.zeros((d,)),
        cls_w2=td.kaiming_uniform(rng, (d, num_stages), d),
        cls_b2=td.zeros((num_stages,)),
        seg_w1=td.kaiming_uniform(rng, (d, d), d),
        seg_b1=td.zeros((d,)),
        seg_w2=td.kaiming_uniform(rng, (d, 1), d),
        seg_b2=td.zeros((1,)),
        col_wq=td.kaiming_uniform(rng, (d, d), d),
        col_wk=td.kaiming_uniform(rng, (d, d), d),
    )


def classification_head(frame_features: Tensor,
                        params: HeadParams) -> FramePrediction:
    """Two-layer FFN then row softmax over stages: (T, d) -> (T, C)."""
    h = td.relu(frame_features @ params.cls_w1 + params.cls_b1)
    scores = h @ params.cls_w2 + params.cls_b2
    return FramePrediction(probs=td.softmax(scores, axis=-1), scores=scores)


def segmentation_head(stage_features: Tensor,
                      params: HeadParams) -> SegmentPrediction:
    """Widths are a softmax over one scalar per stage; centers follow
    center_c = cumsum(widths)_c - widths_c / 2.

    By construction the widths are a strictly positive simplex and the
    centers are strictly increasing, so the induced labeling is monotone
    for every parameter setting.  A renormalized 1e-12 floor keeps the
    strict positivity even when extreme logits underflow the softmax.
    """
    h = td.relu(stage_features @ params.seg_w1 + params.seg_b1)
    logits = td.reshape(h @ params.seg_w2 + params.seg_b2, (-1,))
    floor = 1e-12
    num_stages = logits.shape[0]
    widths = (td.softmax(logits, axis=-1) + floor) * \
        (1.0 / (1.0 + num_stages * floor))
    centers = td.cumsum(widths) - widths * 0.5
    return SegmentPrediction(widths=widths, centers=centers)


def frame_times(num_frames: int) -> np.ndarray:
    """Normalized frame midpoints (i + 0.5) / T."""
    return (np.arange(num_frames, dtype=np.float64) + 0.5) / num_frames


def position_weights(seg: SegmentPrediction, num_frames: int,
                     alpha: float) -> Tensor:
    """(width_c + a) / (|center_c - t_i| + a) for every frame/stage pair.

    All weights are positive; for a fixed stage the weight peaks at the
    frame nearest its predicted center.
    """
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    t = frame_times(num_frames)[:, None]                    # (T, 1)
    dist = td.absolute(td.reshape(seg.centers, (1, -1)) - t)
    num = td.reshape(seg.widths, (1, -1)) + alpha
    return td.div(num, dist + alpha)


def collaboration_head(frame_features: Tensor, stage_features: Tensor,
                       seg: SegmentPrediction, params: HeadParams,
                       alpha: float | None = None) -> FramePrediction:
    """Scaled dot-product scores between frames and stages, modulated
    elementwise by the position weights, then row softmax."""
    if alpha is None:
        alpha = params.alpha
    d = frame_features.shape[1]
    q = frame_features @ params.col_wq
    k = stage_features @ params.col_wk
    w_attn = (q @ td.transpose(k)) * (1.0 / np.sqrt(d))     # (T, C)
    w_pos = position_weights(seg, frame_features.shape[0], alpha)
    scores = w_pos * w_attn
    return FramePrediction(probs=td.softmax(scores, axis=-1), scores=scores)
