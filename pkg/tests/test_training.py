"""Schedule, optimizer, checkpoint format, and the training loop."""

import math

import numpy as np
import pytest

from stageformer import tensor as td
from stageformer.tensor import Tensor
from stageformer.data import GenSpec, generate, split_dataset
from stageformer.model import ModelConfig, StageFormer
from stageformer.training import (Adam, DivergenceError, Schedule, TrainConfig,
                                  ablation_grid, evaluate, full_model_grad_check,
                                  load_checkpoint, lr_at, save_checkpoint,
                                  train)


@pytest.fixture(autouse=True)
def fresh_tape():
    td.reset_tape()
    yield
    td.reset_tape()


def tiny_model_config():
    return ModelConfig(input_dim=4, embed_dim=8, ffn_dim=8, num_enc_layers=1,
                       num_dec_layers=1, num_levels=2, num_heads=2,
                       num_points=2, num_stages=3)


def tiny_dataset(n=12, seed=3):
    spec = GenSpec(num_sequences=n, t_range=(12, 18), num_stages=3,
                   input_dim=4, noise_std=0.1, seed=seed)
    return generate(spec)


class TestSchedule:
    def test_exact_anchor_points(self):
        s = Schedule(peak_lr=2e-3, warmup_steps=10, total_steps=100)
        assert lr_at(0, s) == 0.0
        assert lr_at(5, s) == pytest.approx(1e-3, abs=1e-12)   # warmup midpoint
        assert lr_at(10, s) == pytest.approx(2e-3, abs=1e-12)  # warmup end
        assert lr_at(100, s) == pytest.approx(0.0, abs=1e-12)  # final step

    def test_warmup_is_linear(self):
        s = Schedule(peak_lr=1.0, warmup_steps=8, total_steps=20)
        for step in range(8):
            assert lr_at(step, s) == pytest.approx(step / 8)

    def test_cosine_halfway_point(self):
        s = Schedule(peak_lr=1.0, warmup_steps=10, total_steps=30)
        assert lr_at(20, s) == pytest.approx(0.5)

    def test_monotone_decay_after_warmup(self):
        s = Schedule(peak_lr=1.0, warmup_steps=5, total_steps=50)
        lrs = [lr_at(t, s) for t in range(5, 51)]
        assert all(a >= b for a, b in zip(lrs, lrs[1:]))

    def test_invalid_ranges_rejected(self):
        with pytest.raises(ValueError):
            Schedule(peak_lr=1.0, warmup_steps=0, total_steps=10)
        with pytest.raises(ValueError):
            Schedule(peak_lr=1.0, warmup_steps=10, total_steps=10)


class TestAdam:
    def test_descends_a_quadratic(self):
        x = Tensor(np.array([5.0, -3.0]), requires_grad=True)
        opt = Adam({"x": x}, weight_decay=0.0)
        for _ in range(300):
            td.reset_tape()
            x.zero_grad()
            (x * x).sum().backward()
            opt.step(lr=0.05)
        assert np.all(np.abs(x.data) < 1e-2)

    def test_decoupled_weight_decay_shrinks_without_gradient(self):
        x = Tensor(np.array([2.0]), requires_grad=True)
        x.zero_grad()
        opt = Adam({"x": x}, weight_decay=0.1)
        opt.step(lr=1.0)
        # zero grad: only the decay term moves the weight
        assert x.data[0] == pytest.approx(2.0 * (1 - 0.1))

    def test_state_round_trip(self):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        opt = Adam({"x": x})
        x.grad = np.array([0.5, -0.5])
        opt.step(lr=0.01)
        saved = {k: v.copy() for k, v in opt.state_arrays().items()}
        opt2 = Adam({"x": x})
        opt2.load_state_arrays(saved, t=opt.t)
        assert opt2.t == 1
        np.testing.assert_array_equal(opt2.m["x"], opt.m["x"])
        np.testing.assert_array_equal(opt2.v["x"], opt.v["x"])


class TestTrainConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)
        with pytest.raises(ValueError):
            TrainConfig(epochs=5, warmup_epochs=5)

    def test_env_seed_override(self, monkeypatch):
        monkeypatch.setenv("STAGEFORMER_SEED", "99")
        cfg = TrainConfig.from_dict({"seed": 1})
        assert cfg.seed == 99
        monkeypatch.delenv("STAGEFORMER_SEED")
        assert TrainConfig.from_dict({"seed": 1}).seed == 1

    def test_dict_round_trip(self):
        cfg = TrainConfig(epochs=10, warmup_epochs=2, peak_lr=5e-4)
        back = TrainConfig.from_dict(cfg.to_dict())
        assert back == cfg

    def test_ablation_grid_rows(self):
        grid = ablation_grid()
        assert set(grid) == {"cls", "seg", "cls+seg", "all"}
        assert grid["cls"]["decode_mode"] == "cls-argmax"
        assert grid["all"]["loss_col"] is True
        assert grid["seg"]["loss_cls"] is False


class TestCheckpoint:
    def make_model(self, seed=0):
        return StageFormer(tiny_model_config(), seed=seed)

    def test_round_trip_bit_exact(self, tmp_path):
        model = self.make_model(seed=2)
        opt = Adam(model.parameters())
        cfg = TrainConfig(model=tiny_model_config(), epochs=4,
                          warmup_epochs=1, seed=2,
                          checkpoint_path=str(tmp_path / "a.ckpt"))
        save_checkpoint(cfg.checkpoint_path, model, opt, cfg, epoch=3)
        loaded = load_checkpoint(cfg.checkpoint_path)
        assert loaded["epoch"] == 3 and loaded["opt_t"] == 0
        for k, v in model.state_arrays().items():
            np.testing.assert_array_equal(loaded["model"].state_arrays()[k], v)

    def test_resave_is_byte_identical(self, tmp_path):
        model = self.make_model(seed=4)
        cfg = TrainConfig(model=tiny_model_config(), epochs=4,
                          warmup_epochs=1, seed=4)
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(p1, model, None, cfg, epoch=0)
        loaded = load_checkpoint(p1)
        save_checkpoint(p2, loaded["model"], None, loaded["config"], epoch=0)
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic_rejected(self, tmp_path):
        p = tmp_path / "junk.ckpt"
        p.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(ValueError, match="magic"):
            load_checkpoint(p)

    def test_unknown_version_rejected(self, tmp_path):
        model = self.make_model()
        cfg = TrainConfig(model=tiny_model_config(), epochs=4, warmup_epochs=1)
        p = tmp_path / "v.ckpt"
        save_checkpoint(p, model, None, cfg, epoch=0)
        raw = bytearray(p.read_bytes())
        raw[4] = 200
        p.write_bytes(bytes(raw))
        with pytest.raises(ValueError, match="version"):
            load_checkpoint(p)

    def test_loaded_model_same_forward(self, tmp_path):
        model = self.make_model(seed=6)
        cfg = TrainConfig(model=tiny_model_config(), epochs=4,
                          warmup_epochs=1, seed=6)
        p = tmp_path / "m.ckpt"
        save_checkpoint(p, model, None, cfg, epoch=0)
        x = np.random.default_rng(0).standard_normal((9, 4))
        a = model.forward(x).cls.probs.data.copy()
        td.reset_tape()
        b = load_checkpoint(p)["model"].forward(x).cls.probs.data.copy()
        assert np.array_equal(a, b)


class TestTrainLoop:
    def run_once(self, tmp_path, tag, **overrides):
        seqs = tiny_dataset()
        parts = split_dataset(seqs, seed=0, fractions=(0.7, 0.3, 0.0))
        kw = dict(model=tiny_model_config(), epochs=3, warmup_epochs=1,
                  batch_size=4, peak_lr=1e-3, seed=11,
                  checkpoint_path=str(tmp_path / f"{tag}.ckpt"))
        kw.update(overrides)
        cfg = TrainConfig(**kw)
        return train(cfg, parts["train"], parts["val"]), cfg

    def test_deterministic_given_seed(self, tmp_path):
        r1, _ = self.run_once(tmp_path, "a")
        r2, _ = self.run_once(tmp_path, "b")
        for k, v in r1.model.state_arrays().items():
            np.testing.assert_array_equal(r2.model.state_arrays()[k], v)
        assert [h["train_loss"] for h in r1.history] == \
            [h["train_loss"] for h in r2.history]

    def test_history_and_checkpoint(self, tmp_path):
        result, cfg = self.run_once(tmp_path, "c")
        assert len(result.history) == 3
        assert 0 <= result.best_epoch < 3
        loaded = load_checkpoint(cfg.checkpoint_path)
        for k, v in result.model.state_arrays().items():
            np.testing.assert_array_equal(loaded["model"].state_arrays()[k], v)

    def test_loss_decreases(self, tmp_path):
        result, _ = self.run_once(tmp_path, "d", epochs=6, warmup_epochs=1)
        assert result.history[-1]["train_loss"] < result.history[0]["train_loss"]

    def test_divergence_raises(self, tmp_path):
        seqs = tiny_dataset()
        parts = split_dataset(seqs, seed=0, fractions=(0.7, 0.3, 0.0))
        # a non-finite input guarantees a non-finite forward pass
        parts["train"][0].features[3, 1] = np.inf
        cfg = TrainConfig(model=tiny_model_config(), epochs=3,
                          warmup_epochs=1, batch_size=4, seed=11,
                          checkpoint_path=str(tmp_path / "e.ckpt"))
        with pytest.raises(DivergenceError):
            train(cfg, parts["train"], parts["val"])

    def test_evaluate_empty_rejected(self):
        model = StageFormer(tiny_model_config(), seed=0)
        with pytest.raises(ValueError):
            evaluate(model, [])

    def test_evaluate_rows_cover_all_frames(self):
        model = StageFormer(tiny_model_config(), seed=0)
        seqs = tiny_dataset(n=3)
        report, rows = evaluate(model, seqs)
        assert len(rows) == sum(s.num_frames for s in seqs)
        assert 0.0 <= report.global_accuracy <= 1.0


class TestFullModelGradCheck:
    def test_tiny_model_within_tolerance(self):
        errors = full_model_grad_check(num_frames=4, seed=1,
                                       max_entries_per_group=4)
        worst = max(errors.values())
        assert worst <= 1e-4, f"worst relative error {worst}"
        # every parameter group was probed
        model = StageFormer(ModelConfig(input_dim=5, embed_dim=8, ffn_dim=8,
                                        num_enc_layers=2, num_dec_layers=2,
                                        num_levels=2, num_heads=2,
                                        num_points=2, num_stages=3), seed=1)
        assert set(errors) == set(model.parameters())
