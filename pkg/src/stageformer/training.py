"""Training harness: warmup+cosine schedule, Adam with decoupled weight
decay, the train/eval loops, checkpoint I/O, and the full-model gradient
check."""

from __future__ import annotations

import json
import math
import os
import struct
import zlib
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import tensor as td
from .data import StageSequence
from .losses import (LossToggles, MetricsReport, compute_metrics,
                     segment_targets, total_loss)
from .model import ModelConfig, StageFormer

CHECKPOINT_MAGIC = b"SFCK"
CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------------------
# Learning-rate schedule
# ---------------------------------------------------------------------------

@dataclass
class Schedule:
    peak_lr: float
    warmup_steps: int
    total_steps: int

    def __post_init__(self):
        if not 0 < self.warmup_steps < self.total_steps:
            raise ValueError(
                f"need 0 < warmup_steps < total_steps, got "
                f"{self.warmup_steps}/{self.total_steps}")


def lr_at(step: int, schedule: Schedule) -> float:
    """Linear 0 -> peak over the warmup steps, then cosine decay to exactly
    0 at ``total_steps``."""
    if step < schedule.warmup_steps:
        return schedule.peak_lr * step / schedule.warmup_steps
    progress = (step - schedule.warmup_steps) / (
        schedule.total_steps - schedule.warmup_steps)
    return schedule.peak_lr * (1.0 + math.cos(math.pi * progress)) / 2.0


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

class Adam:
    """Adam with decoupled weight decay (decay is applied directly to the
    weights, outside the moment estimates)."""

    def __init__(self, params: dict[str, td.Tensor], beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8,
                 weight_decay: float = 1e-4):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for k, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            mhat = self.m[k] / (1 - b1 ** self.t)
            vhat = self.v[k] / (1 - b2 ** self.t)
            p.data = p.data - lr * self.weight_decay * p.data
            p.data = p.data - lr * mhat / (np.sqrt(vhat) + self.eps)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {f"m.{k}": v for k, v in self.m.items()}
        out.update({f"v.{k}": v for k, v in self.v.items()})
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], t: int) -> None:
        self.t = t
        for k in self.m:
            self.m[k] = arrays[f"m.{k}"].copy()
            self.v[k] = arrays[f"v.{k}"].copy()


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train_path: str = ""
    val_path: str = ""
    checkpoint_path: str = "model.ckpt"
    epochs: int = 60
    warmup_epochs: int = 6
    batch_size: int = 8
    peak_lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 1e-4
    loss_cls: bool = True
    loss_seg: bool = True
    loss_col: bool = True
    loss_mean: bool = True
    decode_mode: str = "collab-argmax"
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0 < self.warmup_epochs < self.epochs:
            raise ValueError(
                f"need 0 < warmup_epochs < epochs, got "
                f"{self.warmup_epochs}/{self.epochs}")

    def toggles(self) -> LossToggles:
        return LossToggles(cls=self.loss_cls, seg=self.loss_seg,
                           col=self.loss_col)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "model" in d and isinstance(d["model"], dict):
            d["model"] = ModelConfig.from_dict(d["model"])
        cfg = cls(**d)
        env_seed = os.environ.get("STAGEFORMER_SEED")
        if env_seed is not None:
            cfg.seed = int(env_seed)
        return cfg


def ablation_grid() -> dict[str, dict[str, object]]:
    """The four head combinations, with a matching decode mode each."""
    return {
        "cls": dict(loss_cls=True, loss_seg=False, loss_col=False,
                    decode_mode="cls-argmax"),
        "seg": dict(loss_cls=False, loss_seg=True, loss_col=False,
                    decode_mode="segments"),
        "cls+seg": dict(loss_cls=True, loss_seg=True, loss_col=False,
                        decode_mode="cls-argmax"),
        "all": dict(loss_cls=True, loss_seg=True, loss_col=True,
                    decode_mode="collab-argmax"),
    }


# ---------------------------------------------------------------------------
# Loss over one sequence, evaluation
# ---------------------------------------------------------------------------

def sequence_loss(model: StageFormer, seq: StageSequence,
                  toggles: LossToggles, mean: bool = True):
    out = model.forward(seq.features)
    target = segment_targets(seq.labels, model.config.num_stages)
    return total_loss(out.cls, out.seg, out.col, seq.labels, target,
                      toggles, mean)


def evaluate(model: StageFormer, sequences: list[StageSequence],
             decode_mode: str = "collab-argmax"
             ) -> tuple[MetricsReport, list[dict]]:
    """Metrics over all frames of all sequences plus a per-frame table."""
    if not sequences:
        raise ValueError("evaluate called on an empty dataset")
    all_pred, all_true, rows = [], [], []
    for seq in sequences:
        td.reset_tape()
        out = model.forward(seq.features)
        pred = model.predict_labels(out, decode_mode)
        all_pred.append(pred)
        if seq.labels is not None:
            all_true.append(seq.labels)
        for i, p in enumerate(pred):
            rows.append({
                "id": seq.id, "frame": i, "predicted": int(p),
                "true": int(seq.labels[i]) if seq.labels is not None else None,
            })
    if not all_true:
        raise ValueError("evaluate needs labeled sequences")
    report = compute_metrics(np.concatenate(all_pred),
                             np.concatenate(all_true),
                             model.config.num_stages)
    td.reset_tape()
    return report, rows


# ---------------------------------------------------------------------------
# Checkpointing
# ---------------------------------------------------------------------------

def save_checkpoint(path, model: StageFormer, optimizer: Adam | None,
                    config: TrainConfig, epoch: int,
                    rng_state: dict | None = None) -> None:
    """Versioned binary: magic, version byte, JSON header, raw f64 buffers.

    Writes via a temp file and rename so a crash never leaves a torn file.
    """
    arrays = dict(model.state_arrays())
    if optimizer is not None:
        arrays.update(optimizer.state_arrays())
    names = sorted(arrays)
    header = {
        "config": config.to_dict(),
        "epoch": epoch,
        "opt_t": optimizer.t if optimizer is not None else None,
        "rng_state": rng_state,
        "arrays": [[k, list(arrays[k].shape)] for k in names],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(bytes([CHECKPOINT_VERSION]))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for k in names:
            fh.write(np.ascontiguousarray(arrays[k], dtype="<f8").tobytes())
    os.replace(tmp, path)


def load_checkpoint(path) -> dict:
    """Read a checkpoint into {config, epoch, model, optimizer state, rng}."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint (magic {magic!r})")
        version = fh.read(1)[0]
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported format version {version}")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode())
        arrays = {}
        for name, shape in header["arrays"]:
            n = int(np.prod(shape)) if shape else 1
            buf = fh.read(8 * n)
            arrays[name] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()

    config = TrainConfig.from_dict(header["config"])
    model = StageFormer(config.model, seed=config.seed)
    model.load_state_arrays(
        {k: v for k, v in arrays.items()
         if not k.startswith(("m.", "v."))})
    return {
        "config": config,
        "epoch": header["epoch"],
        "model": model,
        "opt_arrays": {k: v for k, v in arrays.items()
                       if k.startswith(("m.", "v."))},
        "opt_t": header["opt_t"],
        "rng_state": header["rng_state"],
    }


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    model: StageFormer
    best_val: MetricsReport
    best_epoch: int
    history: list[dict]


class DivergenceError(RuntimeError):
    pass


def train(config: TrainConfig, train_seqs: list[StageSequence],
          val_seqs: list[StageSequence], verbose: bool = False) -> TrainResult:
    """Mini-batch training loop; gradients of a batch are accumulated by
    summing per-sequence losses on one tape, which is exactly equivalent to
    masked padded batching and cannot leak padding into attention or loss.

    Deterministic given the config seed.  Keeps the best-validation model
    and saves it to ``config.checkpoint_path``.
    """
    model = StageFormer(config.model, seed=config.seed)
    opt = Adam(model.parameters(), config.beta1, config.beta2,
               config.adam_eps, config.weight_decay)
    steps_per_epoch = max(1, math.ceil(len(train_seqs) / config.batch_size))
    schedule = Schedule(peak_lr=config.peak_lr,
                        warmup_steps=config.warmup_epochs * steps_per_epoch,
                        total_steps=config.epochs * steps_per_epoch)
    toggles = config.toggles()
    rng = np.random.default_rng([config.seed, 7])

    best_val: MetricsReport | None = None
    best_epoch = -1
    best_arrays: dict | None = None
    history: list[dict] = []
    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(train_seqs))
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = [train_seqs[i] for i in order[start:start + config.batch_size]]
            td.reset_tape()
            model.zero_grad()
            loss = None
            for seq in batch:
                try:
                    l, _ = sequence_loss(model, seq, toggles, config.loss_mean)
                except td.NonFiniteError as e:
                    raise DivergenceError(
                        f"non-finite loss at epoch {epoch}, step {step}: {e}"
                    ) from e
                loss = l if loss is None else loss + l
            loss = loss * (1.0 / len(batch))
            if not np.isfinite(loss.item()):
                raise DivergenceError(
                    f"divergence at epoch {epoch}, step {step}")
            loss.backward()
            opt.step(lr_at(step, schedule))
            epoch_loss += loss.item()
            step += 1

        val_report, _ = evaluate(model, val_seqs, config.decode_mode)
        history.append({
            "epoch": epoch,
            "train_loss": epoch_loss / steps_per_epoch,
            "val_accuracy": val_report.global_accuracy,
            "val_avg_precision": val_report.avg_precision,
            "val_avg_recall": val_report.avg_recall,
            "lr": lr_at(step - 1, schedule),
        })
        if verbose:
            h = history[-1]
            print(f"epoch {epoch:3d}  loss {h['train_loss']:.4f}  "
                  f"val acc {h['val_accuracy']:.4f}")
        if best_val is None or val_report.global_accuracy > best_val.global_accuracy:
            best_val = val_report
            best_epoch = epoch
            best_arrays = {k: v.copy() for k, v in model.state_arrays().items()}

    model.load_state_arrays(best_arrays)
    save_checkpoint(config.checkpoint_path, model, opt, config,
                    epoch=best_epoch,
                    rng_state=rng.bit_generator.state)
    return TrainResult(model=model, best_val=best_val, best_epoch=best_epoch,
                       history=history)


# ---------------------------------------------------------------------------
# Full-model gradient check
# ---------------------------------------------------------------------------

def full_model_grad_check(config: ModelConfig | None = None,
                          num_frames: int = 6, seed: int = 0,
                          eps: float = 1e-5, tol: float = 1e-4,
                          max_entries_per_group: int | None = None
                          ) -> dict[str, float]:
    """Compare total-loss gradients with central finite differences for
    every parameter group of a tiny model.  Returns per-group max relative
    error; raises nothing (callers inspect against ``tol``)."""
    if config is None:
        config = ModelConfig(input_dim=5, embed_dim=8, ffn_dim=8,
                             num_enc_layers=2, num_dec_layers=2,
                             num_levels=2, num_heads=2, num_points=2,
                             num_stages=3)
    rng = np.random.default_rng(seed)
    model = StageFormer(config, seed=seed)
    # Start from slightly perturbed parameters so zero-initialized offset
    # and weight predictors are probed away from symmetric points.
    for p in model.parameters().values():
        p.data = p.data + 0.05 * rng.standard_normal(p.data.shape)
    features = rng.standard_normal((num_frames, config.input_dim))
    labels = np.sort(rng.integers(0, config.num_stages, size=num_frames))
    toggles = LossToggles()
    seq = StageSequence(id="gradcheck", features=features, labels=labels,
                        num_stages=config.num_stages)

    def loss_value() -> float:
        td.reset_tape()
        l, _ = sequence_loss(model, seq, toggles)
        return l.item()

    td.reset_tape()
    model.zero_grad()
    loss, _ = sequence_loss(model, seq, toggles)
    loss.backward()
    grads = {k: p.grad.copy() for k, p in model.parameters().items()}

    errors: dict[str, float] = {}
    for name, p in model.parameters().items():
        flat = p.data.ravel()
        idxs = range(flat.size)
        if max_entries_per_group is not None and flat.size > max_entries_per_group:
            idxs = np.random.default_rng([seed, zlib.crc32(name.encode())]).choice(
                flat.size, size=max_entries_per_group, replace=False)
        worst = 0.0
        ga = grads[name].ravel()
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + eps
            hi = loss_value()
            flat[i] = orig - eps
            lo = loss_value()
            flat[i] = orig
            fd = (hi - lo) / (2 * eps)
            denom = max(abs(ga[i]), abs(fd), 1e-3)
            worst = max(worst, abs(ga[i] - fd) / denom)
        errors[name] = float(worst)
    td.reset_tape()
    return errors
