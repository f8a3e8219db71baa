"""Tests for the fitting loop and its maintenance steps."""

import math
from types import SimpleNamespace

import pytest
import torch

from conftest import build_model, random_scene
from screwsplat.config import DTYPE, FitConfig, InitConfig, LossConfig
from screwsplat.errors import EmptyObservationsError, InvalidConfigError, NonFiniteLossError
from screwsplat.gradients import LossTerms
from screwsplat.models import Observation, ScrewAxis
from screwsplat.renderer import render_model
from screwsplat.splat_model import canonicalize, load_model
from screwsplat.trainer import (
    fit,
    group_by_config,
    is_opacity_reset,
    is_periodic_reset,
    make_optimizer,
    new_state,
    opacity_reset,
    periodic_reset,
    position_lr,
    prune_transparent,
    select_screws,
    sweep_parsimony,
    train_step,
)

Z_HINGE = ScrewAxis.revolute_through((0, 0, 1), (0, 0, 0))
X_SLIDE = ScrewAxis.prismatic_along((1, 0, 0))
SMALL_LOSS = LossConfig(ssim_window=5)


def blank_batch(cam, configs=(0, 1)):
    return [Observation(k, cam, torch.full((8, 8, 3), 0.3, dtype=DTYPE)) for k in configs]


def selection_model():
    """Screw 0 has low confidence, screw 1 barely moves, screw 2 is a healthy slider."""
    return build_model(
        [[0.5, 0, 0], [1, 0, 0], [0, 0.5, 0], [0, 0, 0.5]],
        [Z_HINGE, Z_HINGE, X_SLIDE],
        gammas=[0.05, 0.9, 0.9],
        thetas=[[0.0, 0.0, 0.0], [0.4, 0.05, 0.2]],
        part_probs=[[0, 1, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1], [1, 0, 0, 0]],
        scale=0.2,
    )


class TestOptimizer:
    def test_groups(self):
        model, _, _ = random_scene(0)
        opt = make_optimizer(model, FitConfig())
        names = [g["name"] for g in opt.param_groups]
        assert names == [
            "positions", "quaternions", "log_scales", "opacity_logits", "colors",
            "part_logits", "raw_axes", "confidence_logits", "thetas",
        ]
        assert opt.defaults["betas"] == (0.9, 0.999)
        assert opt.defaults["eps"] == 1e-15

    def test_position_lr_schedule(self):
        cfg = FitConfig()
        assert position_lr(0, cfg) == pytest.approx(cfg.lr_position)
        assert position_lr(cfg.iterations, cfg) == pytest.approx(cfg.lr_position_final)
        middle = math.sqrt(cfg.lr_position * cfg.lr_position_final)
        assert position_lr(cfg.iterations // 2, cfg) == pytest.approx(middle)


class TestSchedule:
    def test_default_selection_iteration(self):
        assert FitConfig().selection_iteration == 24000

    def test_resets_never_coincide(self):
        cfg = FitConfig()
        for it in range(1, cfg.iterations + 1):
            assert not (is_periodic_reset(it, cfg) and is_opacity_reset(it, cfg))

    def test_shared_multiple_runs_periodic_reset(self):
        cfg = FitConfig()
        assert is_periodic_reset(15000, cfg)
        assert not is_opacity_reset(15000, cfg)

    def test_last_periodic_reset(self):
        cfg = FitConfig()
        periodic = [it for it in range(1, cfg.iterations + 1) if is_periodic_reset(it, cfg)]
        assert periodic[0] == 2500
        assert periodic[-1] == 20000

    def test_no_resets_during_fine_tuning(self):
        cfg = FitConfig()
        assert is_opacity_reset(21000, cfg)
        for it in range(cfg.selection_iteration, cfg.iterations + 1):
            assert not is_opacity_reset(it, cfg)
            assert not is_periodic_reset(it, cfg)

    def test_synchronous_intervals_rejected(self):
        with pytest.raises(InvalidConfigError):
            FitConfig.build(reset_interval=3000, opacity_reset_interval=1500)

    def test_desk_preset(self):
        cfg = FitConfig.desk()
        assert cfg.iterations == 3000
        assert cfg.selection_iteration == 2400


class TestMaintenance:
    def test_opacity_reset_clamps(self, cam8):
        model = build_model([[0, 0, 0], [0.1, 0, 0]], opacity=0.5)
        with torch.no_grad():
            model.opacity_logits[1] = math.log(0.02 / 0.98)
        opacity_reset(model, 0.05)
        assert torch.allclose(model.opacities, torch.tensor([0.05, 0.02], dtype=DTYPE))

    def test_prune_transparent_keeps_optimizer_aligned(self, cam8):
        model = build_model([[0, 0, 0], [0.1, 0, 0], [0, 0.1, 0]], [Z_HINGE], thetas=[[0.0], [0.1]], scale=0.3)
        with torch.no_grad():
            model.opacity_logits[1] = math.log(0.003 / 0.997)
        state = new_state(model, FitConfig())
        train_step(model, state, blank_batch(cam8), SMALL_LOSS)
        assert prune_transparent(model, state, 0.005) == 1
        assert model.n_gaussians == 2
        exp_avg = state.optimizer.state[model.positions]["exp_avg"]
        assert exp_avg.shape == (2, 3)
        train_step(model, state, blank_batch(cam8), SMALL_LOSS)

    def test_prune_nothing(self):
        model = build_model([[0, 0, 0]], opacity=0.5)
        assert prune_transparent(model, None) == 0
        assert model.n_gaussians == 1

    def test_periodic_reset(self, cam8):
        model, batch, cfg = random_scene(0)
        state = new_state(model, FitConfig())
        train_step(model, state, batch, cfg)
        m = periodic_reset(model, state, 0.9)
        assert m in (0, 1)
        assert torch.allclose(model.thetas[m], torch.zeros(2, dtype=DTYPE))
        assert torch.allclose(model.confidences, torch.full((2,), 0.9, dtype=DTYPE))
        assert int(torch.count_nonzero(model.part_logits)) == 0
        assert int(torch.count_nonzero(state.optimizer.state[model.thetas]["exp_avg"])) == 0

    def test_canonicalize_preserves_renders(self, laptop, laptop_views):
        cam = laptop_views[0].camera
        with torch.no_grad():
            before = [render_model(laptop.model, k, cam) for k in range(2)]
            canonicalize(laptop.model, 1)
            after = [render_model(laptop.model, k, cam) for k in range(2)]
        assert float(laptop.model.thetas[1, 0]) == 0.0
        for a, b in zip(before, after):
            assert torch.allclose(a, b, atol=1e-9)


class TestSelectScrews:
    def test_both_criteria(self):
        model = selection_model()
        result = select_screws(model, FitConfig())
        assert result.low_confidence == [0]
        assert result.short_interval == [1]
        assert result.removed == [0, 1]
        assert result.removed_gaussians == 1
        assert model.n_screws == 1
        assert model.is_revolute.tolist() == [False]
        assert model.n_gaussians == 3
        assert model.part_assignment().tolist() == [0, 1, 0]
        # the barely moving Gaussian is re-based at one of its observed angles
        x, y = model.positions[0, :2].tolist()
        candidates = [(1.0, 0.0), (math.cos(0.05), math.sin(0.05))]
        assert any(abs(x - cx) < 1e-12 and abs(y - cy) < 1e-12 for cx, cy in candidates)

    def test_nothing_to_remove(self):
        model = build_model([[0, 0, 0]], [Z_HINGE, X_SLIDE], thetas=[[0.0, 0.0], [0.5, 0.2]])
        result = select_screws(model, FitConfig())
        assert result.removed == []
        assert model.n_screws == 2

    def test_prismatic_interval_threshold(self):
        model = build_model([[0, 0, 0]], [X_SLIDE], thetas=[[0.0], [0.02]])
        assert select_screws(model, FitConfig()).short_interval == [0]

    def test_training_continues_after_selection(self, cam8):
        model = selection_model()
        state = new_state(model, FitConfig())
        train_step(model, state, blank_batch(cam8), SMALL_LOSS)
        select_screws(model, FitConfig(), state)
        record = train_step(model, state, blank_batch(cam8), SMALL_LOSS)
        assert record.active_screws == 1
        assert state.optimizer.state[model.thetas]["exp_avg"].shape == (2, 1)
        assert state.optimizer.state[model.part_logits]["exp_avg"].shape == (3, 2)


class TestTrainStep:
    def test_axes_stay_normalized(self):
        model, batch, cfg = random_scene(1)
        state = new_state(model, FitConfig())
        for _ in range(3):
            train_step(model, state, batch, cfg)
        assert float(torch.linalg.norm(model.raw_axes[0, :3])) == pytest.approx(1.0)
        assert float(torch.linalg.norm(model.raw_axes[1, 3:])) == pytest.approx(1.0)
        assert torch.allclose(torch.linalg.norm(model.quaternions, dim=-1), torch.ones(5, dtype=DTYPE))

    @pytest.mark.parametrize("seed", range(5))
    def test_step_stays_finite(self, seed):
        model, batch, cfg = random_scene(seed)
        state = new_state(model, FitConfig())
        record = train_step(model, state, batch, cfg)
        assert math.isfinite(record.total)
        assert all(torch.isfinite(p).all() for p in model.parameters())

    def test_loss_decreases(self):
        model, batch, cfg = random_scene(2)
        state = new_state(model, FitConfig())
        records = [train_step(model, state, batch, cfg) for _ in range(20)]
        assert records[-1].total < records[0].total
        assert state.iteration == 20
        assert len(state.history) == 20


class TestGroupByConfig:
    def test_groups(self, laptop_dataset):
        groups = group_by_config(laptop_dataset.observations)
        assert sorted(groups) == [0, 1]
        assert all(len(v) == 4 for v in groups.values())

    def test_empty(self):
        with pytest.raises(EmptyObservationsError):
            group_by_config([])

    def test_single_configuration(self, laptop_dataset):
        with pytest.raises(EmptyObservationsError):
            group_by_config([o for o in laptop_dataset.observations if o.config_index == 0])

    def test_too_few_cameras(self, laptop_dataset):
        with pytest.raises(EmptyObservationsError):
            group_by_config(laptop_dataset.observations[1:])

    def test_gap_in_indices(self, laptop_dataset):
        shifted = [Observation(o.config_index * 2, o.camera, o.image) for o in laptop_dataset.observations]
        with pytest.raises(EmptyObservationsError):
            group_by_config(shifted)


TINY_INIT = InitConfig(n_gaussians=50, n_revolute=1, n_prismatic=1)
TINY_FIT = FitConfig(iterations=10, reset_interval=4, opacity_reset_interval=6, log_interval=5, checkpoint_interval=5)


class TestFit:
    def test_tiny_run(self, laptop_dataset, tmp_path):
        log = tmp_path / "loss.csv"
        model = fit(laptop_dataset.observations, TINY_FIT, LossConfig(), TINY_INIT,
                    log_path=log, checkpoint_dir=tmp_path / "checkpoints")
        lines = log.read_text().splitlines()
        assert len(lines) == 11
        assert lines[0] == "iteration,total,render,parsimony,active_screws"
        assert (tmp_path / "checkpoints" / "checkpoint_000005.json").exists()
        assert (tmp_path / "checkpoints" / "checkpoint_000010.json").exists()
        assert model.n_configs == 2
        assert model.n_screws <= 2
        load_model(tmp_path / "checkpoints" / "checkpoint_000010.json")

    def test_deterministic(self, laptop_dataset):
        a = fit(laptop_dataset.observations, TINY_FIT, LossConfig(), TINY_INIT)
        b = fit(laptop_dataset.observations, TINY_FIT, LossConfig(), TINY_INIT)
        assert a.to_document().model_dump_json() == b.to_document().model_dump_json()

    def test_non_finite_loss_dumps_state(self, laptop_dataset, tmp_path, monkeypatch):
        nan = torch.tensor(float("nan"), dtype=DTYPE)
        monkeypatch.setattr("screwsplat.trainer.training_loss", lambda *a, **k: LossTerms(nan, nan, nan))
        with pytest.raises(NonFiniteLossError) as info:
            fit(laptop_dataset.observations, TINY_FIT, LossConfig(), TINY_INIT, dump_dir=tmp_path)
        assert info.value.dump_path is not None
        load_model(info.value.dump_path)


class TestSweepParsimony:
    def test_keeps_best_score(self, laptop_dataset, monkeypatch):
        def fake_fit(observations, cfg, loss_cfg, init_cfg):
            return SimpleNamespace(beta=loss_cfg.beta, n_screws=1)

        monkeypatch.setattr("screwsplat.trainer.fit", fake_fit)
        result = sweep_parsimony(
            laptop_dataset.observations, [0.001, 0.005, 0.01], score=lambda m: -abs(m.beta - 0.005)
        )
        assert result.best_beta == 0.005
        assert result.model.beta == 0.005
        assert set(result.scores) == {0.001, 0.005, 0.01}

    def test_needs_betas(self, laptop_dataset):
        with pytest.raises(ValueError):
            sweep_parsimony(laptop_dataset.observations, [])
