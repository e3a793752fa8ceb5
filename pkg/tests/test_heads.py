"""Output heads: worked examples, a scalar-loop oracle for the
collaboration scores, and by-construction invariants property-tested over
random parameters."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stageformer import tensor as td
from stageformer.tensor import Tensor
from stageformer.heads import (classification_head, collaboration_head,
                               frame_times, init_heads, position_weights,
                               segmentation_head, SegmentPrediction)
from stageformer.monotonic import decode_from_segments


@pytest.fixture(autouse=True)
def fresh_tape():
    td.reset_tape()
    yield
    td.reset_tape()


def heads(seed=0, d=8, stages=4, alpha=0.1):
    return init_heads(d, stages, alpha, np.random.default_rng(seed))


class TestClassificationHead:
    def test_zero_ffn_gives_uniform_rows(self):
        p = heads()
        for t in [p.cls_w1, p.cls_b1, p.cls_w2, p.cls_b2]:
            t.data[...] = 0.0
        pred = classification_head(Tensor(np.random.default_rng(0)
                                          .standard_normal((5, 8))), p)
        np.testing.assert_allclose(pred.probs.data, 0.25, atol=1e-12)

    def test_rows_are_simplexes(self):
        pred = classification_head(
            Tensor(np.random.default_rng(1).standard_normal((7, 8))), heads(1))
        np.testing.assert_allclose(pred.probs.data.sum(axis=1), 1.0,
                                   atol=1e-9)

    def test_single_frame(self):
        pred = classification_head(Tensor(np.ones((1, 8))), heads(2))
        assert pred.probs.shape == (1, 4)


class TestSegmentationHead:
    def test_uniform_widths_centers(self):
        seg = SegmentPrediction(widths=Tensor([0.25] * 4),
                                centers=td.cumsum(Tensor([0.25] * 4))
                                - Tensor([0.25] * 4) * 0.5)
        np.testing.assert_allclose(seg.centers.data,
                                   [0.125, 0.375, 0.625, 0.875])

    def test_cumsum_center_arithmetic(self):
        p = heads(3)
        f = Tensor(np.random.default_rng(3).standard_normal((4, 8)))
        seg = segmentation_head(f, p)
        w = seg.widths.data
        np.testing.assert_allclose(seg.centers.data,
                                   np.cumsum(w) - w / 2, atol=1e-12)
        # worked example
        np.testing.assert_allclose(
            np.cumsum([0.1, 0.2, 0.3, 0.4]) - np.array([0.1, 0.2, 0.3, 0.4]) / 2,
            [0.05, 0.2, 0.45, 0.8])

    def test_zero_ffn_gives_uniform_widths(self):
        p = heads(4)
        for t in [p.seg_w1, p.seg_b1, p.seg_w2, p.seg_b2]:
            t.data[...] = 0.0
        seg = segmentation_head(Tensor(np.ones((4, 8))), p)
        np.testing.assert_allclose(seg.widths.data, 0.25, atol=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(seed=st.integers(0, 10_000), stages=st.integers(2, 8))
    def test_invariants_for_all_parameters(self, seed, stages):
        """Simplex widths and strictly increasing centers hold for any
        parameter setting, by construction."""
        td.reset_tape()
        rng = np.random.default_rng(seed)
        p = heads(seed, stages=stages)
        f = Tensor(rng.standard_normal((stages, 8)) * rng.uniform(0.1, 10))
        seg = segmentation_head(f, p)
        w, c = seg.widths.data, seg.centers.data
        assert np.all(w > 0)
        assert abs(w.sum() - 1.0) < 1e-6
        assert np.all(np.diff(c) > 0)
        np.testing.assert_allclose(np.diff(c), (w[:-1] + w[1:]) / 2,
                                   atol=1e-12)
        labels = decode_from_segments(seg, 17).labels
        assert np.all(np.diff(labels) >= 0)


class TestPositionWeights:
    def test_zero_distance_weight(self):
        seg = SegmentPrediction(widths=Tensor([0.5, 0.5]),
                                centers=Tensor([0.25, 0.75]))
        w = position_weights(seg, 2, alpha=0.1)
        # frame 0 midpoint is exactly at center 0
        assert w.data[0, 0] == pytest.approx((0.5 + 0.1) / 0.1)

    def test_direct_substitution(self):
        seg = SegmentPrediction(widths=Tensor([0.5, 0.5]),
                                centers=Tensor([0.25, 0.75]))
        w = position_weights(seg, 2, alpha=0.1)
        # t_0 = 0.25: distances 0 and 0.5
        np.testing.assert_allclose(w.data[0], [6.0, 1.0], atol=1e-12)

    def test_peak_at_nearest_frame(self):
        seg = SegmentPrediction(widths=Tensor([0.3, 0.3, 0.4]),
                                centers=Tensor([0.15, 0.45, 0.8]))
        w = position_weights(seg, 20, alpha=0.1).data
        t = frame_times(20)
        for c, center in enumerate(seg.centers.data):
            assert np.argmax(w[:, c]) == np.argmin(np.abs(t - center))

    def test_all_positive(self):
        p = heads(5)
        seg = segmentation_head(Tensor(np.random.default_rng(5)
                                       .standard_normal((4, 8))), p)
        assert np.all(position_weights(seg, 13, 0.1).data > 0)

    def test_alpha_must_be_positive(self):
        seg = SegmentPrediction(widths=Tensor([1.0]), centers=Tensor([0.5]))
        with pytest.raises(ValueError):
            position_weights(seg, 3, alpha=0.0)
        with pytest.raises(ValueError):
            init_heads(8, 4, -1.0, np.random.default_rng(0))


def naive_collaboration_scores(E, F_dec, widths, centers, wq, wk, alpha):
    """Scalar-loop evaluation of the modulated cross-attention scores."""
    t_len, d = E.shape
    c_len = F_dec.shape[0]
    scores = np.zeros((t_len, c_len))
    for i in range(t_len):
        t_i = (i + 0.5) / t_len
        for c in range(c_len):
            attn = float((E[i] @ wq) @ (F_dec[c] @ wk)) / np.sqrt(d)
            pos = (widths[c] + alpha) / (abs(centers[c] - t_i) + alpha)
            scores[i, c] = pos * attn
    return scores


class TestCollaborationHead:
    def test_matches_scalar_loop_oracle(self):
        rng = np.random.default_rng(7)
        p = heads(7)
        E = rng.standard_normal((6, 8))
        F = rng.standard_normal((4, 8))
        seg = segmentation_head(Tensor(F), p)
        pred = collaboration_head(Tensor(E), Tensor(F), seg, p)
        expect = naive_collaboration_scores(
            E, F, seg.widths.data, seg.centers.data,
            p.col_wq.data, p.col_wk.data, p.alpha)
        np.testing.assert_allclose(pred.scores.data, expect, atol=1e-10)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(8)
        p = heads(8)
        seg = segmentation_head(Tensor(rng.standard_normal((4, 8))), p)
        pred = collaboration_head(Tensor(rng.standard_normal((9, 8))),
                                  Tensor(rng.standard_normal((4, 8))), seg, p)
        np.testing.assert_allclose(pred.probs.data.sum(axis=1), 1.0,
                                   atol=1e-6)

    def test_unit_attention_reduces_to_position_weights(self):
        """Force the projections so the dot-product scores are identically
        one: the softmax argmax per frame is then the stage with the
        largest position weight."""
        p = heads(9)
        d = 8
        E = np.ones((6, d))
        F = np.ones((4, d))
        # wq/wk chosen so (E wq)(F wk)^T / sqrt(d) == 1 exactly
        p.col_wq.data = np.zeros((d, d))
        p.col_wq.data[0, 0] = 1.0
        p.col_wk.data = np.zeros((d, d))
        p.col_wk.data[0, 0] = np.sqrt(d) / d
        seg = segmentation_head(Tensor(np.random.default_rng(9)
                                       .standard_normal((4, 8))), p)
        pred = collaboration_head(Tensor(E), Tensor(F), seg, p)
        w_pos = position_weights(seg, 6, p.alpha).data
        np.testing.assert_array_equal(np.argmax(pred.probs.data, axis=1),
                                      np.argmax(w_pos, axis=1))

    def test_softmax_preserves_argmax_of_modulated_scores(self):
        rng = np.random.default_rng(10)
        p = heads(10)
        seg = segmentation_head(Tensor(rng.standard_normal((4, 8))), p)
        pred = collaboration_head(Tensor(rng.standard_normal((12, 8))),
                                  Tensor(rng.standard_normal((4, 8))), seg, p)
        np.testing.assert_array_equal(np.argmax(pred.probs.data, axis=1),
                                      np.argmax(pred.scores.data, axis=1))
