"""stageformer: a deformable-transformer encoder-decoder for classifying
monotone non-decreasing stage labels over feature sequences, built on a
from-scratch float64 reverse-mode autodiff core.

Public surface:

- :mod:`stageformer.tensor` — autodiff primitives and gradient checking
- :mod:`stageformer.deform` — 1-D multi-scale deformable attention
- :mod:`stageformer.encoder` / :mod:`stageformer.decoder` — the two paths
- :mod:`stageformer.heads` — classification / segmentation / collaboration
- :mod:`stageformer.losses` — losses, segment targets, metrics
- :mod:`stageformer.monotonic` — monotone decoders incl. the DP baseline
- :mod:`stageformer.data` — synthetic data generation and dataset I/O
- :mod:`stageformer.model` / :mod:`stageformer.training` — full model,
  Adam + warmup/cosine schedule, checkpoints
- :mod:`stageformer.cli` — command-line interface
"""

from .model import ModelConfig, StageFormer
from .training import TrainConfig, train, evaluate

__all__ = ["ModelConfig", "StageFormer", "TrainConfig", "train", "evaluate"]

__version__ = "0.1.0"
