"""Synthetic monotone-stage sequence generation and dataset file I/O.

A generated sequence draws per-stage widths from a floored Dirichlet,
partitions T frames accordingly, and emits per-frame features as a stage
prototype vector plus Gaussian noise.  Frames near stage boundaries blend
the two adjacent prototypes (the hard "transitional" frames), with the
frame's own stage always keeping the majority share of the blend.

File format: JSON Lines, one record per sequence with fields
``id``, ``C``, ``labels`` and ``features`` (row-major list of T rows).
Python's repr-based float serialization makes the round trip bit-exact.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .losses import check_monotone


@dataclass
class StageSequence:
    id: str
    features: np.ndarray            # (T, D_in)
    labels: np.ndarray | None       # (T,) ints, monotone, or None
    num_stages: int

    @property
    def num_frames(self) -> int:
        return self.features.shape[0]


@dataclass
class GenSpec:
    num_sequences: int = 200
    t_range: tuple[int, int] = (60, 120)
    num_stages: int = 4
    input_dim: int = 32
    noise_std: float = 0.3
    transition_blend_frames: int = 2
    min_stage_fraction: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.noise_std < 0:
            raise ValueError(f"noise_std must be >= 0, got {self.noise_std}")
        if self.min_stage_fraction * self.num_stages > 1.0:
            raise ValueError(
                f"min_stage_fraction {self.min_stage_fraction} infeasible "
                f"for {self.num_stages} stages")
        if self.t_range[0] < self.num_stages or self.t_range[0] > self.t_range[1]:
            raise ValueError(f"bad t_range {self.t_range}")


def mouse_preset(**overrides) -> GenSpec:
    """Eight-stage regime mirroring the larger class count."""
    kw = dict(num_stages=8, min_stage_fraction=0.02)
    kw.update(overrides)
    return GenSpec(**kw)


def stage_prototypes(spec: GenSpec) -> np.ndarray:
    """Per-stage feature prototypes, drawn once per generation seed."""
    rng = np.random.default_rng([spec.seed, 1])
    return rng.standard_normal((spec.num_stages, spec.input_dim))


def _stage_counts(widths: np.ndarray, t_len: int) -> np.ndarray:
    """Largest-remainder apportionment of t_len frames to width fractions."""
    raw = widths * t_len
    counts = np.floor(raw).astype(np.int64)
    short = t_len - counts.sum()
    order = np.argsort(-(raw - counts))
    counts[order[:short]] += 1
    return counts


def _blend_weight(dist: int, blend: int) -> float:
    """Own-prototype share for a frame ``dist`` frames from a boundary.

    Stays strictly above 0.5 so the frame's own stage remains the nearest
    prototype even at the boundary."""
    return 0.5 + 0.5 * (dist + 1) / (blend + 1)


def generate(spec: GenSpec) -> list[StageSequence]:
    """Generate ``spec.num_sequences`` reproducible synthetic sequences."""
    protos = stage_prototypes(spec)
    sequences = []
    for idx in range(spec.num_sequences):
        rng = np.random.default_rng([spec.seed, 0, idx])
        t_len = int(rng.integers(spec.t_range[0], spec.t_range[1] + 1))
        widths = rng.dirichlet(np.ones(spec.num_stages))
        widths = np.maximum(widths, spec.min_stage_fraction)
        widths = widths / widths.sum()
        counts = _stage_counts(widths, t_len)
        labels = np.repeat(np.arange(spec.num_stages), counts)

        base = protos[labels].copy()
        blend = spec.transition_blend_frames
        if blend > 0:
            bounds = np.cumsum(counts)[:-1]     # first frame of each next stage
            for b, right_stage in zip(bounds, range(1, spec.num_stages)):
                left_stage = labels[b - 1] if b > 0 else right_stage - 1
                for j in range(blend):
                    lam = _blend_weight(j, blend)
                    i = b - 1 - j               # left side, stays left_stage
                    if i >= 0 and labels[i] == left_stage:
                        base[i] = lam * protos[left_stage] + (1 - lam) * protos[right_stage]
                    i = b + j                   # right side, stays right_stage
                    if i < t_len and labels[i] == right_stage:
                        base[i] = lam * protos[right_stage] + (1 - lam) * protos[left_stage]

        features = base + spec.noise_std * rng.standard_normal(base.shape)
        sequences.append(StageSequence(
            id=f"seq-{spec.seed}-{idx:04d}",
            features=features,
            labels=labels,
            num_stages=spec.num_stages,
        ))
    return sequences


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------

class DatasetFormatError(ValueError):
    pass


def write_dataset(path, sequences: list[StageSequence]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for seq in sequences:
            rec = {
                "id": seq.id,
                "C": seq.num_stages,
                "labels": None if seq.labels is None else
                          [int(x) for x in seq.labels],
                "features": [[float(v) for v in row] for row in seq.features],
            }
            fh.write(json.dumps(rec) + "\n")


def read_dataset(path) -> list[StageSequence]:
    sequences = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                features = np.array(rec["features"], dtype=np.float64)
                if features.ndim != 2:
                    raise ValueError("features must be a T x D matrix")
                labels = rec["labels"]
                if labels is not None:
                    labels = np.asarray(labels, dtype=np.int64)
                    if labels.size != features.shape[0]:
                        raise ValueError(
                            f"{labels.size} labels for {features.shape[0]} frames")
                    check_monotone(labels)
                seq = StageSequence(id=str(rec["id"]), features=features,
                                    labels=labels, num_stages=int(rec["C"]))
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as e:
                raise DatasetFormatError(
                    f"{path}: bad record at line {lineno}: {e}") from e
            sequences.append(seq)
    return sequences


# ---------------------------------------------------------------------------
# Splitting
# ---------------------------------------------------------------------------

def _split_key(seed: int, seq_id: str) -> str:
    return hashlib.sha256(f"{seed}:{seq_id}".encode()).hexdigest()


def split_dataset(sequences: list[StageSequence], seed: int,
                  fractions=(0.8, 0.1, 0.1)) -> dict[str, list[StageSequence]]:
    """80/10/10 split by sequence, a pure function of (seed, ids).

    Sequences are ordered by a salted hash of their id, then cut at the
    fraction boundaries, so membership never depends on list order.
    """
    ordered = sorted(sequences, key=lambda s: _split_key(seed, s.id))
    n = len(ordered)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    return {
        "train": ordered[:n_train],
        "val": ordered[n_train:n_train + n_val],
        "test": ordered[n_train + n_val:],
    }
