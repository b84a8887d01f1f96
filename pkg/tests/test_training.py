"""Optimizer arithmetic and the seeded, resumable training loop."""

import json

import numpy as np
import pytest

from sonoshadow.autodiff import Tensor
from sonoshadow.losses import LossWeights
from sonoshadow.network import ArchConfig, forward, init_params, load_checkpoint
from sonoshadow.rng import substream
from sonoshadow.shadows import ShadowConfig
from sonoshadow.training import (
    LOG_HEADER,
    FitResult,
    TrainConfig,
    TrainingDiverged,
    fit,
    train_step,
)
from sonoshadow.losses import loss_total


def snapshot(params):
    return {name: t.data.copy() for name, t in params.named_parameters()}


def assert_params_equal(params, saved):
    for name, t in params.named_parameters():
        np.testing.assert_array_equal(t.data, saved[name], err_msg=name)


def make_batch(rng, n=4, size=16):
    clean = Tensor(rng.uniform(0.1, 0.9, size=(n, 1, size, size)).astype(np.float32))
    masks = np.ones((n, 1, size, size), dtype=np.float32)
    masks[:, :, 4:10, 5:12] = 0.4
    return clean, Tensor(masks)


def zero_velocities(params):
    return {name: np.zeros_like(t.data) for name, t in params.named_parameters()}


class TestTrainConfig:
    def test_validation(self):
        ok = dict(corpus="c", out_dir="o")
        with pytest.raises(ValueError, match="epochs"):
            TrainConfig(**ok, epochs=-1)
        with pytest.raises(ValueError, match="batch_size"):
            TrainConfig(**ok, batch_size=0)
        with pytest.raises(ValueError, match="lr"):
            TrainConfig(**ok, lr=-0.1)
        with pytest.raises(ValueError, match="momentum"):
            TrainConfig(**ok, momentum=1.0)
        with pytest.raises(ValueError, match="checkpoint_every"):
            TrainConfig(**ok, checkpoint_every=-1)
        with pytest.raises(ValueError, match="inject_prob"):
            TrainConfig(**ok, inject_prob=1.5)

    def test_dict_round_trip(self):
        cfg = TrainConfig(
            corpus="corpus",
            out_dir="run",
            epochs=3,
            weights=LossWeights(shadow=5.0),
            shadows=ShadowConfig(count=(2, 2)),
            arch=ArchConfig(input_size=(16, 16), enc_channels=(8, 16)),
        )
        assert TrainConfig.from_dict(cfg.to_dict()) == cfg

    def test_round_trip_keeps_nones(self):
        cfg = TrainConfig(corpus="c", out_dir="o")
        again = TrainConfig.from_dict(cfg.to_dict())
        assert again.shadows is None and again.arch is None

    def test_rejects_unknown_keys(self):
        with pytest.raises(ValueError, match="decay"):
            TrainConfig.from_dict({"corpus": "c", "out_dir": "o", "decay": 0.1})


class TestTrainStep:
    def test_zero_lr_freezes_parameters(self, small_arch, rng):
        params = init_params(small_arch, rng)
        before = snapshot(params)
        clean, masks = make_batch(rng)
        train_step(params, zero_velocities(params), clean, masks, LossWeights(),
                   lr=0.0, momentum=0.9)
        assert_params_equal(params, before)

    def test_zero_weights_freeze_parameters(self, small_arch, rng):
        params = init_params(small_arch, rng)
        before = snapshot(params)
        clean, masks = make_batch(rng)
        weights = LossWeights(ae=0.0, shadow=0.0, sreg=0.0, content=0.0)
        train_step(params, zero_velocities(params), clean, masks, weights,
                   lr=0.05, momentum=0.9)
        assert_params_equal(params, before)

    def test_matches_hand_rolled_momentum_update(self, small_arch, rng):
        # replay the documented rule v <- mu v - lr g; p <- p + v by hand
        lr, mu = 0.05, 0.9
        params = init_params(small_arch, np.random.default_rng(0))
        mirror = init_params(small_arch, np.random.default_rng(0))
        velocities = zero_velocities(params)
        hand_v = zero_velocities(mirror)
        clean, masks = make_batch(rng)
        for _ in range(3):
            train_step(params, velocities, clean, masks, LossWeights(), lr, mu)

            noisy = Tensor(clean.data * masks.data)
            out = forward(mirror, noisy)
            total, _ = loss_total(out.recon, out.shadow, out.content, noisy, masks,
                                  LossWeights())
            mirror.zero_grad()
            total.backward()
            for name, p in mirror.named_parameters():
                v = hand_v[name]
                v *= mu
                v -= lr * p.grad
                p.data += v
            assert_params_equal(params, snapshot(mirror))

    def test_velocity_carries_between_steps(self, small_arch, rng):
        # with momentum, two steps on one batch move farther than two
        # independent first steps would
        params = init_params(small_arch, np.random.default_rng(0))
        velocities = zero_velocities(params)
        clean, masks = make_batch(rng)
        train_step(params, velocities, clean, masks, LossWeights(), 0.01, 0.9)
        assert any(np.abs(v).max() > 0 for v in velocities.values())

    def test_raises_on_non_finite_loss(self, small_arch, rng):
        params = init_params(small_arch, rng)
        params.encoder[0].weight.data[:] = np.nan
        clean, masks = make_batch(rng)
        with pytest.raises(TrainingDiverged, match="step 7"):
            train_step(params, zero_velocities(params), clean, masks, LossWeights(),
                       0.05, 0.9, step=7)

    def test_loss_falls_on_a_fixed_batch(self, small_arch, rng):
        params = init_params(small_arch, np.random.default_rng(1))
        velocities = zero_velocities(params)
        clean, masks = make_batch(rng, n=4)
        first = train_step(params, velocities, clean, masks, LossWeights(), 0.05, 0.9)
        last = None
        for _ in range(199):
            last = train_step(params, velocities, clean, masks, LossWeights(), 0.05, 0.9)
        assert last.total < first.total
        assert last.shadow < first.shadow


class TestFit:
    @staticmethod
    def config(corpus, out_dir, **overrides):
        base = dict(
            corpus=str(corpus),
            out_dir=str(out_dir),
            epochs=2,
            batch_size=8,
            seed=3,
            arch=ArchConfig(input_size=(16, 16), enc_channels=(8, 16)),
        )
        base.update(overrides)
        return TrainConfig(**base)

    def test_zero_epochs_saves_the_initial_model(self, make_corpus, tmp_path):
        corpus = make_corpus()
        cfg = self.config(corpus, tmp_path / "run", epochs=0)
        result = fit(cfg)
        assert isinstance(result, FitResult)
        assert result.steps == 0
        assert result.log_path.read_text() == LOG_HEADER + "\n"
        loaded, _, meta = load_checkpoint(result.checkpoint_path)
        want = init_params(cfg.arch, substream(cfg.seed, "init"))
        assert_params_equal(loaded, snapshot(want))
        assert meta["step"] == 0

    def test_log_shape(self, make_corpus, tmp_path):
        # 12 images / batch 8 -> 2 steps per epoch, 3 epochs -> 6 rows
        result = fit(self.config(make_corpus(), tmp_path / "run", epochs=3))
        lines = result.log_path.read_text().splitlines()
        assert lines[0] == LOG_HEADER
        assert len(lines) == 1 + 6
        rows = [line.split(",") for line in lines[1:]]
        assert [int(r[0]) for r in rows] == [1, 2, 3, 4, 5, 6]
        assert [int(r[1]) for r in rows] == [0, 0, 1, 1, 2, 2]
        for row in rows:
            values = [float(v) for v in row[2:]]
            assert len(values) == 5 and all(np.isfinite(values))

    def test_reruns_are_byte_identical(self, make_corpus, tmp_path):
        corpus = make_corpus()
        a = fit(self.config(corpus, tmp_path / "a"))
        b = fit(self.config(corpus, tmp_path / "b"))
        assert a.log_path.read_bytes() == b.log_path.read_bytes()
        assert a.checkpoint_path.read_bytes() == b.checkpoint_path.read_bytes()

    def test_longer_runs_share_a_prefix(self, make_corpus, tmp_path):
        corpus = make_corpus()
        short = fit(self.config(corpus, tmp_path / "short", epochs=1))
        long = fit(self.config(corpus, tmp_path / "long", epochs=3))
        short_log = short.log_path.read_text()
        assert long.log_path.read_text().startswith(short_log)

    def test_resume_is_bit_exact(self, make_corpus, tmp_path):
        corpus = make_corpus()
        straight = fit(self.config(corpus, tmp_path / "straight", epochs=2))
        half = fit(self.config(corpus, tmp_path / "half", epochs=1))
        resumed = fit(
            self.config(corpus, tmp_path / "resumed", epochs=2),
            resume_from=half.checkpoint_path,
        )
        assert resumed.checkpoint_path.read_bytes() == straight.checkpoint_path.read_bytes()
        # the resumed log holds only the second epoch, matching the tail
        straight_lines = straight.log_path.read_text().splitlines()
        resumed_lines = resumed.log_path.read_text().splitlines()
        assert resumed_lines == straight_lines[3:]

    def test_resume_rejects_mismatched_architecture(self, make_corpus, tmp_path):
        corpus = make_corpus()
        half = fit(self.config(corpus, tmp_path / "half", epochs=1))
        other = self.config(
            corpus, tmp_path / "other",
            arch=ArchConfig(input_size=(16, 16), enc_channels=(4, 8)),
        )
        with pytest.raises(ValueError, match="architecture"):
            fit(other, resume_from=half.checkpoint_path)

    def test_periodic_checkpoints(self, make_corpus, tmp_path):
        out = tmp_path / "run"
        fit(self.config(make_corpus(), out, epochs=2, checkpoint_every=1))
        found = sorted(p.name for p in (out / "checkpoints").iterdir())
        # total is 4 steps; the final state lands in model.ckpt instead
        assert found == ["step_000001.ckpt", "step_000002.ckpt", "step_000003.ckpt"]
        mid, _, meta = load_checkpoint(out / "checkpoints" / "step_000002.ckpt")
        assert meta["step"] == 2

    def test_config_echo(self, make_corpus, tmp_path):
        out = tmp_path / "run"
        cfg = self.config(make_corpus(), out, epochs=1)
        fit(cfg)
        echoed = json.loads((out / "train_config.json").read_text())
        assert echoed == cfg.to_dict()

    def test_missing_out_dir_parent(self, make_corpus):
        corpus = make_corpus()
        cfg = self.config(corpus, corpus.parent / "no" / "such" / "dir", epochs=1)
        with pytest.raises(FileNotFoundError):
            fit(cfg)

    def test_inject_prob_zero_means_no_shadow_signal(self, make_corpus, tmp_path):
        result = fit(self.config(make_corpus(), tmp_path / "run", epochs=1,
                                 inject_prob=0.0))
        rows = result.log_path.read_text().splitlines()[1:]
        shadow_column = [float(r.split(",")[3]) for r in rows]
        assert shadow_column == [0.0, 0.0]
