"""Monotone label decoding: segment-boundary assignment, plain argmax, and
the dynamic-programming monotone decoder used as a post-processing baseline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .heads import SegmentPrediction, frame_times
from .tensor import Tensor


@dataclass
class MonotoneLabeling:
    labels: np.ndarray              # (T,) ints, non-decreasing
    score: float | None = None      # summed log-prob when produced by DP


def _widths_array(seg) -> np.ndarray:
    if isinstance(seg, SegmentPrediction):
        return np.asarray(seg.widths.data, dtype=np.float64)
    return np.asarray(seg, dtype=np.float64)


def decode_from_segments(seg, num_frames: int) -> MonotoneLabeling:
    """Assign each frame to the segment its normalized midpoint falls in.

    Boundaries are the cumulative widths; frame i takes the smallest stage
    c with (i + 0.5) / T < cumsum(widths)_c.  Zero-width stages are simply
    skipped over, so the output is monotone for any width simplex.
    """
    widths = _widths_array(seg)
    bounds = np.cumsum(widths)
    t = frame_times(num_frames)
    # searchsorted over right-open boundaries; clip guards the last frame
    # against cumulative rounding (bounds[-1] may be 1 - eps).
    labels = np.searchsorted(bounds, t, side="right")
    labels = np.clip(labels, 0, widths.size - 1)
    return MonotoneLabeling(labels=labels.astype(np.int64))


def decode_argmax(probs) -> np.ndarray:
    """Row-wise argmax (lowest index wins ties); possibly non-monotone."""
    p = probs.data if isinstance(probs, Tensor) else np.asarray(probs)
    return np.argmax(p, axis=-1).astype(np.int64)


def dp_monotonic(log_probs) -> MonotoneLabeling:
    """Best monotone non-decreasing labeling under summed per-frame scores.

    best[i][c] = log_probs[i][c] + max_{c' <= c} best[i-1][c'], computed
    with a running max; ties are broken toward the smaller stage during
    backtracking, making the output deterministic.
    """
    lp = log_probs.data if isinstance(log_probs, Tensor) else np.asarray(
        log_probs, dtype=np.float64)
    if not np.all(np.isfinite(lp)):
        raise ValueError("dp_monotonic requires finite scores")
    t_len, c_len = lp.shape
    best = np.empty((t_len, c_len))
    # parent[i][c]: stage chosen at frame i-1 when frame i sits at stage c
    parent = np.zeros((t_len, c_len), dtype=np.int64)
    best[0] = lp[0]
    for i in range(1, t_len):
        run_val = best[i - 1][0]
        run_arg = 0
        for c in range(c_len):
            if best[i - 1][c] > run_val:    # strict: ties keep smaller stage
                run_val = best[i - 1][c]
                run_arg = c
            best[i][c] = lp[i][c] + run_val
            parent[i][c] = run_arg

    last = int(np.argmax(best[t_len - 1]))   # np.argmax ties -> smallest
    labels = np.empty(t_len, dtype=np.int64)
    labels[t_len - 1] = last
    for i in range(t_len - 1, 0, -1):
        last = parent[i][last]
        labels[i - 1] = last
    return MonotoneLabeling(labels=labels, score=float(best[t_len - 1].max()))


def enumerate_monotone(t_len: int, c_len: int):
    """Yield every monotone non-decreasing labeling (test oracle helper)."""
    def rec(i, lo, prefix):
        if i == t_len:
            yield tuple(prefix)
            return
        for c in range(lo, c_len):
            prefix.append(c)
            yield from rec(i + 1, c, prefix)
            prefix.pop()
    yield from rec(0, 0, [])
